"""Reaction-diffusion digital phantom on a regular 3D grid.

Interstitial pyruvate and lactate diffuse and react on a voxel grid; the
vascular compartment is a prescribed gamma-shaped source supported on a
synthetic vessel geometry.  Time stepping is backward Euler with the two
species solved in sequence, each linear system by conjugate gradients.
Fields are aggregated onto a fixed 16^3 cell grid for convergence studies
and per-cell signal extraction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from .errors import (
    BandShortageError,
    InvalidArgumentError,
    InvalidSpecError,
    NumericalError,
)
from .kinetics import AcquisitionDesign, ModelParams, gamma_pdf

__all__ = [
    "HFParams",
    "Cylinder",
    "PhantomSpec",
    "PhantomGrid",
    "PhantomState",
    "CellGrid",
    "SelectedCell",
    "PEAK_BANDS",
    "BAND_CELL_COUNTS",
    "build_phantom",
    "vascular_pyruvate",
    "hf_step",
    "HFSolver",
    "apply_excitation",
    "run_hf",
    "convergence_error",
    "select_cells",
    "default_validation_spec",
]

N_CELLS_SIDE = 16

# Peak mean vascular pyruvate per cell, (low, high]; cells above the top
# band carry more vascular volume than any selected cell and are excluded.
PEAK_BANDS = ((0.1, 1.0), (0.01, 0.1), (0.001, 0.01), (0.0, 0.001))
BAND_CELL_COUNTS = (7, 12, 4, 2)

_CG_RTOL = 1e-10
_NONNEG_TOL = 1e-8
_SUBSAMPLE = 128  # transverse subsampling for partially covered voxels


@dataclass(frozen=True)
class HFParams:
    """Diffusivities and vessel permeabilities on top of the kinetic model."""

    model: ModelParams = field(default_factory=ModelParams)
    DP: float = 20.0
    DL: float = 20.0
    LP: float = 0.2
    LL: float = 0.2

    def __post_init__(self):
        if self.DP < 0 or self.DL < 0:
            raise InvalidArgumentError("diffusivities must be nonnegative")
        if self.LP < 0 or self.LL < 0:
            raise InvalidArgumentError("permeabilities must be nonnegative")


@dataclass(frozen=True)
class Cylinder:
    """Axis-aligned cylinder in physical coordinates.

    ``c1, c2`` are the center in the two transverse dimensions (the plane
    orthogonal to ``axis``); ``lo, hi`` bound the axial extent.
    """

    axis: str
    c1: float
    c2: float
    radius: float
    lo: float
    hi: float

    def __post_init__(self):
        if self.axis not in ("x", "y", "z"):
            raise InvalidArgumentError("cylinder axis must be x, y or z")
        if self.radius <= 0 or self.hi <= self.lo:
            raise InvalidArgumentError("cylinder needs radius > 0 and hi > lo")


@dataclass(frozen=True)
class PhantomSpec:
    """Recipe for a synthetic vascular geometry.

    families:
      cylinders -- axis-aligned cylinders with sub-voxel partial volume
      random    -- voxels drawn independently with probability ``density``
      voxels    -- explicit (i, j, k, fraction) list
    """

    dims: tuple[int, int, int] = (32, 32, 32)
    spacing: float = 1.0
    family: str = "cylinders"
    cylinders: tuple[Cylinder, ...] = ()
    density: float | None = None
    voxels: tuple[tuple[int, int, int, float], ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if len(self.dims) != 3 or any(d < 1 for d in self.dims):
            raise InvalidSpecError("dims must be three positive integers")
        if self.spacing <= 0:
            raise InvalidSpecError("spacing must be positive")
        if self.family not in ("cylinders", "random", "voxels"):
            raise InvalidSpecError(f"unknown mask family {self.family!r}")

    def to_file(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("[grid]\n")
            fh.write(f"dims = {self.dims[0]} {self.dims[1]} {self.dims[2]}\n")
            fh.write(f"spacing = {self.spacing!r}\n")
            fh.write(f"seed = {self.seed}\n")
            fh.write(f"\n[mask]\nfamily = {self.family}\n")
            if self.family == "cylinders":
                parts = [
                    f"{c.axis} {c.c1!r} {c.c2!r} {c.radius!r} {c.lo!r} {c.hi!r}"
                    for c in self.cylinders]
                fh.write("cylinders = " + "; ".join(parts) + "\n")
            elif self.family == "random":
                fh.write(f"density = {self.density!r}\n")
            else:
                fh.write("voxels = " + "; ".join(
                    f"{i} {j} {k} {f!r}" for i, j, k, f in self.voxels) + "\n")

    @classmethod
    def from_file(cls, path) -> "PhantomSpec":
        import configparser

        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        with open(path) as fh:
            cp.read_file(fh)
        grid = cp["grid"]
        mask = cp["mask"]
        dims = tuple(int(x) for x in grid["dims"].split())
        family = mask["family"].strip()
        kwargs = dict(dims=dims, spacing=float(grid["spacing"]),
                      seed=int(grid.get("seed", "0")), family=family)
        if family == "cylinders":
            cyls = []
            for part in mask["cylinders"].split(";"):
                ax, c1, c2, r, lo, hi = part.split()
                cyls.append(Cylinder(ax, float(c1), float(c2), float(r),
                                     float(lo), float(hi)))
            kwargs["cylinders"] = tuple(cyls)
        elif family == "random":
            kwargs["density"] = float(mask["density"])
        else:
            voxels = []
            for part in mask["voxels"].split(";"):
                i, j, k, f = part.split()
                voxels.append((int(i), int(j), int(k), float(f)))
            kwargs["voxels"] = tuple(voxels)
        return cls(**kwargs)


@dataclass
class PhantomGrid:
    """Voxel grid with the vascular geometry discretized onto it.

    ``vascular_fraction`` holds the fraction of each voxel's volume occupied
    by vessel (sub-voxel geometry is kept so that coarse cells can carry
    vascular content spanning several orders of magnitude).
    ``vascular_mask`` is its support.
    """

    dims: tuple[int, int, int]
    spacing: float
    vascular_fraction: np.ndarray
    vascular_mask: np.ndarray
    domain_mask: np.ndarray

    def __post_init__(self):
        if not self.domain_mask.any():
            raise InvalidSpecError("empty domain")
        if not self.vascular_mask.any():
            raise InvalidSpecError("empty vascular mask")
        if (self.vascular_mask & ~self.domain_mask).any():
            raise InvalidSpecError("vascular mask must lie inside the domain")

    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.dims))

    @property
    def voxel_volume(self) -> float:
        return self.spacing ** 3

    def vascular_volume_fraction(self) -> float:
        """Vessel volume over domain volume (sub-voxel geometry included)."""
        return float(self.vascular_fraction.sum() / self.domain_mask.sum())

    def vascular_voxel_fraction(self) -> float:
        """Fraction of domain voxels touched by vessel (boolean count)."""
        return float(self.vascular_mask.sum() / self.domain_mask.sum())


@dataclass
class PhantomState:
    """Interstitial fields at one instant; vascular fields are prescribed."""

    phiP: np.ndarray
    phiL: np.ndarray
    time: float

    def copy(self) -> "PhantomState":
        return PhantomState(self.phiP.copy(), self.phiL.copy(), self.time)


@dataclass
class SelectedCell:
    index: int
    band: int
    peak: float


@dataclass
class CellGrid:
    """Per-cell aggregates of one phantom run on the fixed 16^3 grid."""

    times: np.ndarray          # (n_scans,)
    s_p: np.ndarray            # (n_cells, n_scans) per-cell pyruvate signal
    s_l: np.ndarray            # (n_cells, n_scans)
    q_p: np.ndarray            # (n_cells, n_scans) total pyruvate volume
    q_l: np.ndarray            # (n_cells, n_scans)
    peak_vascular: np.ndarray  # (n_cells,) max_k mean vascular pyruvate
    cell_volume: float
    dt: float

    @property
    def n_cells(self) -> int:
        return self.s_p.shape[0]

    @property
    def n_scans(self) -> int:
        return len(self.times)

    def cell_series(self, index: int) -> np.ndarray:
        """N x 2 signal matrix of one cell."""
        return np.column_stack([self.s_p[index], self.s_l[index]])

    def to_csv(self, path, cells=None) -> None:
        idx = range(self.n_cells) if cells is None else cells
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cell", "k", "t", "sP", "sL", "peak_phiPV"])
            for i in idx:
                for k in range(self.n_scans):
                    w.writerow([i, k + 1, repr(float(self.times[k])),
                                repr(float(self.s_p[i, k])),
                                repr(float(self.s_l[i, k])),
                                repr(float(self.peak_vascular[i]))])


# ----------------------------------------------------------------------
# geometry
# ----------------------------------------------------------------------

def _disk_cover_fractions(nt1, nt2, h, c1, c2, radius):
    """Area fraction of each grid square covered by the disk.

    Squares fully covered, fully clear, or fully containing the disk are
    exact; squares cut by the rim are subsampled.
    """
    e1 = np.arange(nt1 + 1) * h
    e2 = np.arange(nt2 + 1) * h
    # nearest/farthest distance from the disk center to each square
    lo1 = np.maximum(np.maximum(e1[:-1] - c1, c1 - e1[1:]), 0.0)
    lo2 = np.maximum(np.maximum(e2[:-1] - c2, c2 - e2[1:]), 0.0)
    hi1 = np.maximum(np.abs(e1[:-1] - c1), np.abs(e1[1:] - c1))
    hi2 = np.maximum(np.abs(e2[:-1] - c2), np.abs(e2[1:] - c2))
    near = np.hypot(lo1[:, None], lo2[None, :])
    far = np.hypot(hi1[:, None], hi2[None, :])
    contains_disk = ((e1[:-1] <= c1 - radius) & (c1 + radius <= e1[1:]))[:, None] \
        & ((e2[:-1] <= c2 - radius) & (c2 + radius <= e2[1:]))[None, :]
    frac = np.zeros((nt1, nt2))
    frac[far <= radius] = 1.0
    frac[contains_disk] = math.pi * radius ** 2 / h ** 2
    rim = (near < radius) & (far > radius) & ~contains_disk
    s = (np.arange(_SUBSAMPLE) + 0.5) / _SUBSAMPLE * h
    for i, j in np.argwhere(rim):
        xs = e1[i] + s - c1
        ys = e2[j] + s - c2
        inside = (xs[:, None] ** 2 + ys[None, :] ** 2) <= radius ** 2
        frac[i, j] = inside.mean()
    return frac


def _axis_cover_fractions(n, h, lo, hi):
    """Overlap fraction of each [ih, (i+1)h) slab with the interval [lo, hi]."""
    e = np.arange(n + 1) * h
    cover = np.minimum(e[1:], hi) - np.maximum(e[:-1], lo)
    return np.clip(cover / h, 0.0, 1.0)


def _cylinder_fraction(dims, h, cyl: Cylinder) -> np.ndarray:
    axes = {"x": 0, "y": 1, "z": 2}
    a = axes[cyl.axis]
    t1, t2 = [d for d in range(3) if d != a]
    disk = _disk_cover_fractions(dims[t1], dims[t2], h, cyl.c1, cyl.c2,
                                 cyl.radius)
    axial = _axis_cover_fractions(dims[a], h, cyl.lo, cyl.hi)
    d3 = np.moveaxis(np.broadcast_to(
        disk[:, :, None], (dims[t1], dims[t2], dims[a])), (0, 1, 2),
        (t1, t2, a))
    shape_a = [1, 1, 1]
    shape_a[a] = dims[a]
    return d3 * axial.reshape(shape_a)


def build_phantom(spec: PhantomSpec) -> PhantomGrid:
    """Discretize a vascular geometry onto the voxel grid.

    Deterministic given the spec (the random family is keyed by its seed).
    """
    dims = spec.dims
    h = spec.spacing
    frac = np.zeros(dims)
    if spec.family == "cylinders":
        if not spec.cylinders:
            raise InvalidSpecError("cylinders family needs at least one cylinder")
        for cyl in spec.cylinders:
            frac = np.maximum(frac, _cylinder_fraction(dims, h, cyl))
    elif spec.family == "random":
        if spec.density is None or spec.density <= 0:
            raise InvalidSpecError("random family needs density > 0")
        rng = np.random.Generator(np.random.Philox(
            np.random.SeedSequence(spec.seed)))
        frac = (rng.random(dims) < spec.density).astype(float)
    else:
        if not spec.voxels:
            raise InvalidSpecError("voxels family needs a nonempty voxel list")
        for i, j, k, f in spec.voxels:
            if not (0 <= i < dims[0] and 0 <= j < dims[1] and 0 <= k < dims[2]):
                raise InvalidSpecError(f"voxel ({i},{j},{k}) outside the grid")
            if not (0 < f <= 1):
                raise InvalidSpecError("voxel fractions must lie in (0, 1]")
            frac[i, j, k] = f
    frac = np.clip(frac, 0.0, 1.0)
    domain = np.ones(dims, dtype=bool)
    return PhantomGrid(dims=dims, spacing=h, vascular_fraction=frac,
                       vascular_mask=frac > 0, domain_mask=domain)


def default_validation_spec(dims=(32, 32, 32), spacing: float = 1.0) -> PhantomSpec:
    """Synthetic vasculature used by the validation pipeline.

    Four thick vessels supply the bulk of the perfusion; four thin probe
    vessels, one per peak-vascular band, guarantee selectable cells across
    four orders of magnitude of vascular content.  The probe radii put the
    top-band cells just under the band ceiling, where the prescribed
    vascular spike distorts the kinetic fit most.
    """
    # geometry is defined on a 32-unit box and scaled to the physical side,
    # so every resolution discretizes the same vasculature
    side = dims[2] * spacing
    s = side / 32.0
    thick = [Cylinder("z", 6.0 * s, 6.0 * s, 3.8 * s, 0.0, side),
             Cylinder("z", 6.0 * s, 26.0 * s, 3.8 * s, 0.0, side),
             Cylinder("z", 26.0 * s, 6.0 * s, 3.8 * s, 0.0, side),
             Cylinder("z", 26.0 * s, 26.0 * s, 3.8 * s, 0.0, side)]
    probes = [Cylinder("z", 12.5 * s, 16.5 * s, 0.43 * s, 0.0, side),
              Cylinder("z", 16.5 * s, 12.5 * s, 0.10 * s, 0.0, side),
              Cylinder("z", 20.5 * s, 16.5 * s, 0.03 * s, 0.0, side),
              Cylinder("z", 16.5 * s, 20.5 * s, 0.008 * s, 0.0, side)]
    return PhantomSpec(dims=dims, spacing=spacing, family="cylinders",
                       cylinders=tuple(thick + probes))


def vascular_pyruvate(grid: PhantomGrid, model: ModelParams, t: float) -> np.ndarray:
    """Prescribed vascular pyruvate field at time t (volume-fraction units)."""
    amp = model.sigmaP * gamma_pdf(t - model.t0bar, model.alphaP, model.betaP)
    return grid.vascular_fraction * float(amp)


# ----------------------------------------------------------------------
# discrete operators and stepping
# ----------------------------------------------------------------------

def _neumann_laplacian(grid: PhantomGrid) -> sp.csr_matrix:
    """7-point Laplacian (1/h^2 scaling) with no-flux boundaries on the domain."""
    dims = grid.dims
    n = grid.n_voxels
    idx = np.arange(n).reshape(dims)
    active = grid.domain_mask
    rows, cols = [], []
    for axis in range(3):
        sl_lo = [slice(None)] * 3
        sl_hi = [slice(None)] * 3
        sl_lo[axis] = slice(0, -1)
        sl_hi[axis] = slice(1, None)
        a = idx[tuple(sl_lo)].reshape(-1)
        b = idx[tuple(sl_hi)].reshape(-1)
        ok = active[tuple(sl_lo)].reshape(-1) & active[tuple(sl_hi)].reshape(-1)
        rows.append(a[ok]); cols.append(b[ok])
        rows.append(b[ok]); cols.append(a[ok])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    data = np.ones(len(rows)) / grid.spacing ** 2
    lap = sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    diag = np.asarray(lap.sum(axis=1)).reshape(-1)
    lap = lap - sp.diags(diag)
    return lap.tocsr()


class HFSolver:
    """Backward-Euler stepper with preassembled implicit operators.

    Pyruvate is solved first, then lactate using the updated pyruvate.  Both
    linear systems are SPD and solved by conjugate gradients to a relative
    residual of 1e-10, warm-started from the previous field.
    """

    def __init__(self, grid: PhantomGrid, hf: HFParams, dt: float):
        if dt <= 0:
            raise InvalidArgumentError("dt must be positive")
        self.grid = grid
        self.hf = hf
        self.dt = dt
        m = hf.model
        lap = _neumann_laplacian(grid)
        n = grid.n_voxels
        eye = sp.identity(n, format="csr")
        # (1/dt + decay) I - D * lap, SPD since lap is negative semidefinite
        self._a_p = ((1.0 / dt + 1.0 / m.T1P + m.kPL) * eye
                     - hf.DP * lap).tocsr()
        self._a_l = ((1.0 / dt + 1.0 / m.T1L + m.kLP) * eye
                     - hf.DL * lap).tocsr()
        self._vasc = grid.vascular_fraction.reshape(-1)

    def _solve(self, a, b, x0, label):
        iters = 0

        def count(_):
            nonlocal iters
            iters += 1

        x, info = cg(a, b, x0=x0, rtol=_CG_RTOL, atol=0.0,
                     maxiter=20 * len(b), callback=count)
        if info != 0:
            raise NumericalError(
                f"CG failed for {label} after {iters} iterations (info={info})")
        return x

    def step(self, state: PhantomState) -> PhantomState:
        """One backward-Euler step; vascular source evaluated at the new time."""
        m = self.hf.model
        dt = self.dt
        t_new = state.time + dt
        amp = float(m.sigmaP * gamma_pdf(t_new - m.t0bar, m.alphaP, m.betaP))
        phi_p = state.phiP.reshape(-1)
        phi_l = state.phiL.reshape(-1)
        rhs_p = phi_p / dt + m.kLP * phi_l + self.hf.LP * amp * self._vasc
        new_p = self._solve(self._a_p, rhs_p, phi_p, "pyruvate")
        rhs_l = phi_l / dt + m.kPL * new_p
        new_l = self._solve(self._a_l, rhs_l, phi_l, "lactate")
        scale = max(float(np.abs(new_p).max()), float(np.abs(new_l).max()), 1.0)
        if new_p.min() < -_NONNEG_TOL * scale or new_l.min() < -_NONNEG_TOL * scale:
            raise NumericalError(
                f"negative field after step to t={t_new:.6g}: "
                f"min P={new_p.min():.3e}, min L={new_l.min():.3e}")
        return PhantomState(new_p.reshape(self.grid.dims),
                            new_l.reshape(self.grid.dims), t_new)


def hf_step(state: PhantomState, grid: PhantomGrid, hf: HFParams,
            dt: float) -> PhantomState:
    """Single backward-Euler step (assembles operators; use HFSolver in loops)."""
    return HFSolver(grid, hf, dt).step(state)


def apply_excitation(state: PhantomState, theta_p_deg: float,
                     theta_l_deg: float) -> PhantomState:
    """Instantaneous excitation loss: fields scale by cos(theta) pointwise."""
    if not (0 <= theta_p_deg <= 90 and 0 <= theta_l_deg <= 90):
        raise InvalidArgumentError("flip angles must lie in [0, 90] degrees")
    return PhantomState(math.cos(math.radians(theta_p_deg)) * state.phiP,
                        math.cos(math.radians(theta_l_deg)) * state.phiL,
                        state.time)


def _cell_sums(arr: np.ndarray, dims) -> np.ndarray:
    """Sum a fine-grid field over the 16^3 coarse cells (flattened order)."""
    mx, my, mz = (d // N_CELLS_SIDE for d in dims)
    r = arr.reshape(N_CELLS_SIDE, mx, N_CELLS_SIDE, my, N_CELLS_SIDE, mz)
    return r.sum(axis=(1, 3, 5)).reshape(-1)


def run_hf(grid: PhantomGrid, hf: HFParams, design: AcquisitionDesign,
           dt: float, include_vascular_signal: bool = True) -> CellGrid:
    """March the phantom through the acquisition and aggregate per cell.

    At each scan the per-cell signal is sin(theta) times the cell mean of
    the interstitial field plus (by default) the prescribed vascular field;
    afterwards the excitation loss is applied to the interstitial fields.
    ``dt`` must divide every repetition time.
    """
    for d in grid.dims:
        if d % N_CELLS_SIDE != 0:
            raise InvalidArgumentError(
                f"grid dims {grid.dims} must be multiples of {N_CELLS_SIDE}")
    for tr in design.tr[1:]:
        steps = tr / dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise InvalidArgumentError(
                f"dt={dt} does not divide repetition time {tr}")
    m = hf.model
    solver = HFSolver(grid, hf, dt)
    voxels_per_cell = grid.n_voxels // N_CELLS_SIDE ** 3
    cell_volume = voxels_per_cell * grid.voxel_volume
    n = design.n
    n_cells = N_CELLS_SIDE ** 3
    s_p = np.zeros((n_cells, n))
    s_l = np.zeros((n_cells, n))
    q_p = np.zeros((n_cells, n))
    q_l = np.zeros((n_cells, n))
    peak_vasc = np.zeros(n_cells)
    vasc_cell_sum = _cell_sums(grid.vascular_fraction, grid.dims)
    times = design.times
    state = PhantomState(np.zeros(grid.dims), np.zeros(grid.dims), 0.0)
    for k in range(n):
        amp = float(m.sigmaP * gamma_pdf(times[k] - m.t0bar, m.alphaP, m.betaP))
        mean_pv = vasc_cell_sum * amp / voxels_per_cell
        peak_vasc = np.maximum(peak_vasc, mean_pv)
        mean_p = _cell_sums(state.phiP, grid.dims) / voxels_per_cell
        mean_l = _cell_sums(state.phiL, grid.dims) / voxels_per_cell
        sp_cell = mean_p + (mean_pv if include_vascular_signal else 0.0)
        sl_cell = mean_l  # vascular lactate is identically zero
        s_p[:, k] = math.sin(math.radians(design.theta_p_deg[k])) * sp_cell
        s_l[:, k] = math.sin(math.radians(design.theta_l_deg[k])) * sl_cell
        q_p[:, k] = _cell_sums(state.phiP, grid.dims) * grid.voxel_volume
        q_l[:, k] = _cell_sums(state.phiL, grid.dims) * grid.voxel_volume
        if k < n - 1:
            state = apply_excitation(state, design.theta_p_deg[k],
                                     design.theta_l_deg[k])
            n_sub = round(design.tr[k + 1] / dt)
            for _ in range(n_sub):
                state = solver.step(state)
    return CellGrid(times=times, s_p=s_p, s_l=s_l, q_p=q_p, q_l=q_l,
                    peak_vascular=peak_vasc, cell_volume=cell_volume, dt=dt)


def convergence_error(run_a: CellGrid, run_b: CellGrid, t: float | None = None):
    """RMS cell-aggregate discrepancy, normalized by sqrt(cell volume).

    With ``t`` given, returns the (eP, eL) pair at the matching scan time;
    otherwise arrays over all scan times.
    """
    if run_a.q_p.shape != run_b.q_p.shape:
        raise InvalidArgumentError("runs aggregate different cell grids")
    if abs(run_a.cell_volume - run_b.cell_volume) > 1e-12 * run_a.cell_volume:
        raise InvalidArgumentError("runs use different cell volumes")
    if not np.allclose(run_a.times, run_b.times):
        raise InvalidArgumentError("runs use different scan times")
    norm = math.sqrt(run_a.cell_volume)
    e_p = np.sqrt(((run_a.q_p - run_b.q_p) ** 2).sum(axis=0)) / norm
    e_l = np.sqrt(((run_a.q_l - run_b.q_l) ** 2).sum(axis=0)) / norm
    if t is None:
        return e_p, e_l
    k = int(np.argmin(np.abs(run_a.times - t)))
    if abs(run_a.times[k] - t) > 1e-9 * max(1.0, abs(t)):
        raise InvalidArgumentError(f"t={t} is not a scan time")
    return float(e_p[k]), float(e_l[k])


def select_cells(cellgrid: CellGrid) -> list[SelectedCell]:
    """Pick 25 cells across the four peak-vascular bands (7/12/4/2).

    Within a band the cells with the largest peaks win; ties break toward
    the lowest linear cell index, so the selection is deterministic.
    """
    peaks = cellgrid.peak_vascular
    chosen: list[SelectedCell] = []
    for band_idx, ((lo, hi), count) in enumerate(zip(PEAK_BANDS,
                                                     BAND_CELL_COUNTS)):
        members = np.where((peaks > lo) & (peaks <= hi))[0]
        if len(members) < count:
            raise BandShortageError((lo, hi), count, len(members))
        order = np.lexsort((members, -peaks[members]))
        for i in order[:count]:
            idx = int(members[i])
            chosen.append(SelectedCell(index=idx, band=band_idx,
                                       peak=float(peaks[idx])))
    return chosen
