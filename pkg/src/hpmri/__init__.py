"""Flip-angle schedule design and validation for hyperpolarized MRI.

The package simulates a two-compartment pyruvate/lactate signal model,
scores acquisition schedules by the mutual information between the total
signal and uncertain kinetic parameters, generates spatially resolved
synthetic data from a reaction-diffusion phantom, and validates designs by
recovering the exchange rate from noisy replicates.
"""

from .errors import (
    BandShortageError,
    ConfigError,
    HpmriError,
    InvalidArgumentError,
    InvalidSpecError,
    NumericalError,
    UnusableCellError,
)
from .kinetics import (
    AcquisitionDesign,
    MagnetizationState,
    ModelParams,
    SignalSeries,
    gamma_pdf,
    propagate_interval,
    reference_peak_signal,
    simulate_lf,
    system_matrix,
    total_signal,
    vif,
)
from .information import (
    MIEvaluator,
    MIResult,
    NoiseModel,
    PriorSpec,
    QuadratureGrid,
    conditional_entropy,
    evidence_entropy,
    gauss_hermite_3d,
    mutual_information,
    mutual_information_converged,
    optimize_constant_flip,
    optimize_varying_flip,
    sigma_from_snr,
)

__version__ = "0.1.0"

__all__ = [
    "AcquisitionDesign",
    "BandShortageError",
    "ConfigError",
    "HpmriError",
    "InvalidArgumentError",
    "InvalidSpecError",
    "MIEvaluator",
    "MIResult",
    "MagnetizationState",
    "ModelParams",
    "NoiseModel",
    "NumericalError",
    "PriorSpec",
    "QuadratureGrid",
    "SignalSeries",
    "UnusableCellError",
    "conditional_entropy",
    "evidence_entropy",
    "gamma_pdf",
    "gauss_hermite_3d",
    "mutual_information",
    "mutual_information_converged",
    "optimize_constant_flip",
    "optimize_varying_flip",
    "propagate_interval",
    "reference_peak_signal",
    "sigma_from_snr",
    "simulate_lf",
    "system_matrix",
    "total_signal",
    "vif",
]
