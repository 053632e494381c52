import numpy as np
import pytest

from hpmri.kinetics import AcquisitionDesign, ModelParams


@pytest.fixture
def default_params():
    return ModelParams()


@pytest.fixture
def default_design():
    return AcquisitionDesign.constant()


@pytest.fixture
def short_design():
    return AcquisitionDesign.constant(n_scans=6)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(1234)))
