import dataclasses
import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from hpmri.errors import (
    BandShortageError,
    InvalidArgumentError,
    InvalidSpecError,
)
from hpmri.kinetics import AcquisitionDesign, ModelParams, gamma_pdf
from hpmri.phantom import (
    BAND_CELL_COUNTS,
    CellGrid,
    Cylinder,
    HFParams,
    HFSolver,
    PhantomSpec,
    PhantomState,
    apply_excitation,
    build_phantom,
    convergence_error,
    default_validation_spec,
    hf_step,
    run_hf,
    select_cells,
    vascular_pyruvate,
)

NO_DECAY = ModelParams(T1P=1e30, T1L=1e30, kPL=0.0, kLP=0.0)


def _uniform_grid(n=8, spacing=1.0):
    """Whole-domain vascular mask with full fractions."""
    spec = PhantomSpec(dims=(n, n, n), spacing=spacing, family="voxels",
                       voxels=tuple((i, j, k, 1.0)
                                    for i in range(n)
                                    for j in range(n)
                                    for k in range(n)))
    return build_phantom(spec)


class TestBuildPhantom:
    def test_single_voxel_column_counting(self):
        # a thin full-height cylinder centered in one voxel of a 16^3 grid
        spec = PhantomSpec(dims=(16, 16, 16), spacing=1.0, family="cylinders",
                           cylinders=(Cylinder("z", 8.5, 8.5, 0.2, 0.0, 16.0),))
        grid = build_phantom(spec)
        assert grid.vascular_mask.sum() == 16
        assert grid.vascular_voxel_fraction() == pytest.approx(1.0 / 256)

    def test_partial_volume_is_exact_for_interior_disk(self):
        spec = PhantomSpec(dims=(8, 8, 8), spacing=1.0, family="cylinders",
                           cylinders=(Cylinder("z", 4.5, 4.5, 0.3, 0.0, 8.0),))
        grid = build_phantom(spec)
        assert grid.vascular_fraction[4, 4, :] == pytest.approx(
            math.pi * 0.09, rel=1e-12)

    def test_thick_cylinder_volume(self):
        r = 3.0
        spec = PhantomSpec(dims=(32, 32, 32), spacing=1.0, family="cylinders",
                           cylinders=(Cylinder("z", 16.0, 16.0, r, 0.0, 32.0),))
        grid = build_phantom(spec)
        vol = grid.vascular_fraction.sum() * grid.voxel_volume
        assert vol == pytest.approx(math.pi * r * r * 32.0, rel=1e-3)

    def test_axis_extent(self):
        spec = PhantomSpec(dims=(8, 8, 8), spacing=1.0, family="cylinders",
                           cylinders=(Cylinder("z", 4.5, 4.5, 0.3, 2.0, 3.5),))
        grid = build_phantom(spec)
        col = grid.vascular_fraction[4, 4, :]
        assert col[2] == pytest.approx(math.pi * 0.09, rel=1e-12)
        assert col[3] == pytest.approx(0.5 * math.pi * 0.09, rel=1e-12)
        assert col[0] == 0.0 and col[4] == 0.0

    def test_random_family_density_zero_rejected(self):
        with pytest.raises(InvalidSpecError):
            build_phantom(PhantomSpec(dims=(8, 8, 8), family="random",
                                      density=0.0))

    def test_random_family_deterministic(self):
        spec = PhantomSpec(dims=(8, 8, 8), family="random", density=0.1,
                           seed=7)
        a = build_phantom(spec)
        b = build_phantom(spec)
        assert np.array_equal(a.vascular_mask, b.vascular_mask)

    def test_voxel_list_round_trip(self, tmp_path):
        spec = PhantomSpec(dims=(8, 8, 8), spacing=0.5, family="voxels",
                           voxels=((1, 2, 3, 0.125), (4, 5, 6, 1.0)))
        path = tmp_path / "phantom.txt"
        spec.to_file(path)
        back = PhantomSpec.from_file(path)
        assert back == spec
        grid_a = build_phantom(spec)
        grid_b = build_phantom(back)
        assert np.array_equal(grid_a.vascular_fraction, grid_b.vascular_fraction)

    def test_cylinder_spec_round_trip(self, tmp_path):
        spec = default_validation_spec()
        path = tmp_path / "phantom.txt"
        spec.to_file(path)
        assert PhantomSpec.from_file(path) == spec

    def test_invalid_voxels(self):
        with pytest.raises(InvalidSpecError):
            build_phantom(PhantomSpec(dims=(8, 8, 8), family="voxels",
                                      voxels=((9, 0, 0, 1.0),)))
        with pytest.raises(InvalidSpecError):
            build_phantom(PhantomSpec(dims=(8, 8, 8), family="voxels",
                                      voxels=()))


class TestHfStep:
    def test_zero_fields_stay_zero_without_source(self):
        grid = _uniform_grid(4)
        hf = HFParams(model=ModelParams(), LP=0.0, LL=0.0)
        state = PhantomState(np.zeros(grid.dims), np.zeros(grid.dims), 0.0)
        out = hf_step(state, grid, hf, 0.5)
        assert np.all(out.phiP == 0.0)
        assert np.all(out.phiL == 0.0)
        assert out.time == 0.5

    def test_uniform_implicit_decay_closed_form(self):
        grid = _uniform_grid(6)
        m = ModelParams(kPL=0.3)
        hf = HFParams(model=m, DP=7.3, LP=0.0, LL=0.0)
        phi0 = 0.8
        state = PhantomState(np.full(grid.dims, phi0), np.zeros(grid.dims), 0.0)
        dt = 0.25
        out = hf_step(state, grid, hf, dt)
        expect = phi0 / (1.0 + dt * (1.0 / m.T1P + m.kPL))
        assert np.allclose(out.phiP, expect, rtol=1e-9)

    def test_mass_conservation_pure_diffusion(self, rng):
        grid = _uniform_grid(8)
        hf = HFParams(model=NO_DECAY, DP=5.0, DL=2.0, LP=0.0, LL=0.0)
        phi = rng.random(grid.dims)
        state = PhantomState(phi.copy(), rng.random(grid.dims), 0.0)
        solver = HFSolver(grid, hf, 0.2)
        total_p = state.phiP.sum()
        total_l = state.phiL.sum()
        for _ in range(5):
            state = solver.step(state)
            assert abs(state.phiP.sum() - total_p) < 1e-8 * total_p
            assert abs(state.phiL.sum() - total_l) < 1e-8 * total_l

    def test_nonnegativity_with_source(self, rng):
        grid = build_phantom(PhantomSpec(dims=(8, 8, 8), family="random",
                                         density=0.2, seed=3))
        hf = HFParams()
        solver = HFSolver(grid, hf, 0.3)
        state = PhantomState(np.zeros(grid.dims), np.zeros(grid.dims), 0.0)
        for _ in range(30):
            state = solver.step(state)
        assert state.phiP.min() >= 0.0 - 1e-12
        assert state.phiL.min() >= 0.0 - 1e-12
        assert state.phiP.max() > 0.0

    def test_dt_must_be_positive(self):
        grid = _uniform_grid(4)
        with pytest.raises(InvalidArgumentError):
            HFSolver(grid, HFParams(), 0.0)


class TestExcitation:
    def test_zero_angle_identity(self, rng):
        state = PhantomState(rng.random((4, 4, 4)), rng.random((4, 4, 4)), 1.0)
        out = apply_excitation(state, 0.0, 0.0)
        assert np.array_equal(out.phiP, state.phiP)
        assert np.array_equal(out.phiL, state.phiL)

    def test_right_angle_erases(self, rng):
        state = PhantomState(rng.random((4, 4, 4)), rng.random((4, 4, 4)), 1.0)
        out = apply_excitation(state, 90.0, 90.0)
        assert np.allclose(out.phiP, 0.0, atol=1e-16)
        assert np.allclose(out.phiL, 0.0, atol=1e-16)

    def test_scalings_commute(self, rng):
        state = PhantomState(rng.random((4, 4, 4)), rng.random((4, 4, 4)), 1.0)
        a = apply_excitation(apply_excitation(state, 37.0, 0.0), 0.0, 64.0)
        b = apply_excitation(state, 37.0, 64.0)
        assert np.allclose(a.phiP, b.phiP, rtol=1e-15)
        assert np.allclose(a.phiL, b.phiL, rtol=1e-15)

    def test_angle_validation(self):
        state = PhantomState(np.zeros((2, 2, 2)), np.zeros((2, 2, 2)), 0.0)
        with pytest.raises(InvalidArgumentError):
            apply_excitation(state, 91.0, 0.0)


@pytest.fixture(scope="module")
def small_run():
    spec = default_validation_spec(dims=(16, 16, 16), spacing=2.0)
    grid = build_phantom(spec)
    design = AcquisitionDesign.constant(n_scans=8, theta_p_deg=35.0,
                                        theta_l_deg=28.0)
    return grid, run_hf(grid, HFParams(), design, dt=0.3), design


class TestRunHf:
    def test_zero_angles_zero_signals_fields_evolve(self):
        grid = build_phantom(default_validation_spec(dims=(16, 16, 16),
                                                     spacing=2.0))
        design = AcquisitionDesign.constant(n_scans=6, theta_p_deg=0.0,
                                            theta_l_deg=0.0)
        out = run_hf(grid, HFParams(), design, dt=0.5)
        assert np.all(out.s_p == 0.0)
        assert np.all(out.s_l == 0.0)
        assert out.q_p[:, -1].sum() > 0.0

    def test_no_source_all_zero(self):
        grid = build_phantom(default_validation_spec(dims=(16, 16, 16),
                                                     spacing=2.0))
        m = ModelParams(sigmaP=0.0)
        design = AcquisitionDesign.constant(n_scans=5, theta_p_deg=35.0,
                                            theta_l_deg=28.0)
        out = run_hf(grid, HFParams(model=m), design, dt=0.5)
        assert np.all(out.s_p == 0.0)
        assert np.all(out.s_l == 0.0)
        assert np.all(out.q_p == 0.0)

    def test_no_transport_isolated_cell_silent(self):
        # single-voxel vessel, no diffusion: signal only in the vessel's cell
        spec = PhantomSpec(dims=(16, 16, 16), spacing=1.0, family="voxels",
                           voxels=((0, 0, 0, 1.0),))
        grid = build_phantom(spec)
        hf = HFParams(DP=0.0, DL=0.0)
        design = AcquisitionDesign.constant(n_scans=6, theta_p_deg=35.0,
                                            theta_l_deg=28.0)
        out = run_hf(grid, hf, design, dt=0.5)
        interstitial = out.s_p - np.sin(math.radians(35.0)) * np.outer(
            out.peak_vascular / out.peak_vascular.max()
            if out.peak_vascular.max() else out.peak_vascular,
            np.zeros(design.n))
        assert out.s_p[0].max() > 0.0          # the vessel cell fires
        far = out.s_p[1:]                       # all other cells
        assert np.all(far == 0.0)
        assert np.all(out.s_l[1:] == 0.0)

    def test_dt_divisibility_enforced(self, small_run):
        grid, _, design = small_run
        with pytest.raises(InvalidArgumentError):
            run_hf(grid, HFParams(), design, dt=0.7)

    def test_dims_must_fit_cell_grid(self):
        spec = PhantomSpec(dims=(12, 12, 12), family="voxels",
                           voxels=((0, 0, 0, 1.0),))
        grid = build_phantom(spec)
        with pytest.raises(InvalidArgumentError):
            run_hf(grid, HFParams(),
                   AcquisitionDesign.constant(n_scans=3), dt=0.5)

    def test_vascular_signal_switch(self):
        grid = build_phantom(default_validation_spec(dims=(16, 16, 16),
                                                     spacing=2.0))
        design = AcquisitionDesign.constant(n_scans=5, theta_p_deg=35.0,
                                            theta_l_deg=28.0)
        with_v = run_hf(grid, HFParams(), design, dt=0.5,
                        include_vascular_signal=True)
        without = run_hf(grid, HFParams(), design, dt=0.5,
                         include_vascular_signal=False)
        assert np.all(with_v.s_p >= without.s_p - 1e-15)
        assert np.any(with_v.s_p > without.s_p)
        assert np.allclose(with_v.s_l, without.s_l)


class TestConvergenceError:
    def test_identical_runs_zero(self, small_run):
        _, run, _ = small_run
        e_p, e_l = convergence_error(run, run)
        assert np.all(e_p == 0.0)
        assert np.all(e_l == 0.0)

    def test_scalar_lookup(self, small_run):
        _, run, _ = small_run
        e_p, e_l = convergence_error(run, run, t=float(run.times[3]))
        assert e_p == 0.0 and e_l == 0.0
        with pytest.raises(InvalidArgumentError):
            convergence_error(run, run, t=1.234)

    def test_grid_mismatch_rejected(self, small_run):
        _, run, _ = small_run
        other = CellGrid(times=run.times, s_p=run.s_p, s_l=run.s_l,
                         q_p=run.q_p, q_l=run.q_l,
                         peak_vascular=run.peak_vascular,
                         cell_volume=run.cell_volume * 2.0, dt=run.dt)
        with pytest.raises(InvalidArgumentError):
            convergence_error(run, other)

    def test_dt_refinement_decreases_error(self):
        grid = build_phantom(default_validation_spec(dims=(16, 16, 16),
                                                     spacing=2.0))
        design = AcquisitionDesign.constant(n_scans=5, theta_p_deg=35.0,
                                            theta_l_deg=28.0)
        runs = {dt: run_hf(grid, HFParams(), design, dt=dt)
                for dt in (0.6, 0.3, 0.15, 0.075)}
        e_coarse, _ = convergence_error(runs[0.6], runs[0.075])
        e_mid, _ = convergence_error(runs[0.3], runs[0.075])
        e_fine, _ = convergence_error(runs[0.15], runs[0.075])
        # scans before bolus arrival see identically zero fields in all runs
        live = e_coarse > 0
        assert live[2:].all()
        assert np.all(e_mid[live] < e_coarse[live])
        assert np.all(e_fine[live] < e_mid[live])
        # first-order stepping: halving dt at least halves the gap to the
        # reference (ratio (dt1-dtref)/(dt2-dtref) = 2.33 for these steps)
        rate = np.log2(e_coarse[live] / e_mid[live])
        assert np.median(rate) > 0.9


class TestSelectCells:
    def _fake_cellgrid(self, peaks):
        n = len(peaks)
        z = np.zeros((n, 3))
        return CellGrid(times=np.array([0.0, 3.0, 6.0]), s_p=z, s_l=z,
                        q_p=z, q_l=z, peak_vascular=np.asarray(peaks),
                        cell_volume=8.0, dt=0.15)

    def test_band_counts(self):
        peaks = np.concatenate([
            np.linspace(0.15, 0.9, 10),      # top band
            np.linspace(0.015, 0.09, 14),    # second
            np.linspace(0.0015, 0.009, 6),   # third
            np.linspace(0.0002, 0.0009, 4),  # fourth
            np.zeros(6),
        ])
        cells = select_cells(self._fake_cellgrid(peaks))
        counts = [sum(1 for c in cells if c.band == b) for b in range(4)]
        assert counts == list(BAND_CELL_COUNTS)
        assert len(cells) == 25

    def test_largest_peaks_win_with_index_tie_break(self):
        peaks = np.zeros(40)
        peaks[:6] = 0.5
        peaks[6:10] = 0.9          # the four largest
        peaks[10:30] = 0.05
        peaks[30:36] = 0.005
        peaks[36:39] = 0.0005
        with pytest.raises(BandShortageError):
            select_cells(self._fake_cellgrid(peaks[:30]))  # bands 3/4 short
        cells = select_cells(self._fake_cellgrid(peaks))
        top = [c.index for c in cells if c.band == 0]
        assert top == [6, 7, 8, 9, 0, 1, 2]  # peak order, then lowest index

    def test_all_zero_vascular_raises_top_band_shortage(self):
        with pytest.raises(BandShortageError) as err:
            select_cells(self._fake_cellgrid(np.zeros(30)))
        assert err.value.band == (0.1, 1.0)

    def test_deterministic(self):
        peaks = np.concatenate([
            np.full(9, 0.3), np.full(15, 0.03), np.full(5, 0.003),
            np.full(3, 0.0003)])
        grid = self._fake_cellgrid(peaks)
        a = select_cells(grid)
        b = select_cells(grid)
        assert [(c.index, c.band) for c in a] == [(c.index, c.band) for c in b]


class TestUniformLimitMatchesKinetics:
    def test_whole_domain_vessel_reduces_to_scalar_ode(self):
        """Uniform fields follow the two-state kinetics with an LP pathway."""
        grid = _uniform_grid(4)
        m = ModelParams()
        hf = HFParams(model=m, DP=3.0, DL=3.0, LP=0.2, LL=0.0)
        design = AcquisitionDesign.constant(n_scans=6, theta_p_deg=35.0,
                                            theta_l_deg=28.0)

        def mean_series(dt):
            solver = HFSolver(grid, hf, dt)
            state = PhantomState(np.zeros(grid.dims), np.zeros(grid.dims), 0.0)
            means = []
            for k in range(design.n):
                means.append([state.phiP.mean(), state.phiL.mean()])
                if k < design.n - 1:
                    state = apply_excitation(state, 35.0, 28.0)
                    for _ in range(round(design.tr[k + 1] / dt)):
                        state = solver.step(state)
            return np.array(means)

        # Richardson extrapolation removes the first-order stepping error
        coarse = mean_series(0.02)
        fine = mean_series(0.01)
        extrap = 2.0 * fine - coarse

        def rhs(t, y):
            src = hf.LP * m.sigmaP * gamma_pdf(t - m.t0bar, m.alphaP, m.betaP)
            return [(-1.0 / m.T1P - m.kPL) * y[0] + src,
                    m.kPL * y[0] - y[1] / m.T1L]

        phi = np.zeros(2)
        oracle = []
        for k in range(design.n):
            oracle.append(phi.copy())
            if k < design.n - 1:
                phi = phi * np.array([math.cos(math.radians(35.0)),
                                      math.cos(math.radians(28.0))])
                sol = solve_ivp(rhs, (design.times[k], design.times[k + 1]),
                                phi, rtol=1e-11, atol=1e-14)
                phi = sol.y[:, -1]
        oracle = np.array(oracle)
        assert np.abs(extrap - oracle).max() < 1e-4

    def test_vascular_pyruvate_field(self):
        grid = _uniform_grid(4)
        m = ModelParams()
        t = 12.0
        field = vascular_pyruvate(grid, m, t)
        expect = m.sigmaP * gamma_pdf(t - m.t0bar, m.alphaP, m.betaP)
        assert np.allclose(field, expect)
        assert np.all(vascular_pyruvate(grid, m, 0.0) == 0.0)
