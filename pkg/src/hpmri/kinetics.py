"""Two-compartment hyperpolarized pyruvate/lactate signal model.

The longitudinal magnetization of the two metabolites evolves between scans
under T1 relaxation, pyruvate/lactate exchange, and a gamma-shaped vascular
input; each scan consumes sin(theta) of the magnetization and leaves
cos(theta) behind.  All angles on public interfaces are in degrees; trig is
done in radians internally.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm as _expm_pade
from scipy.special import gammaln

from .errors import InvalidArgumentError, NumericalError

__all__ = [
    "ModelParams",
    "AcquisitionDesign",
    "MagnetizationState",
    "SignalSeries",
    "gamma_pdf",
    "vif",
    "system_matrix",
    "expm_2x2",
    "interval_propagators",
    "propagate_interval",
    "simulate_lf",
    "total_signal",
    "reference_peak_signal",
]

# Eigendecomposition of the 2x2 system matrix is used for the homogeneous
# propagator; below this eigenvalue separation we fall back to
# scaling-and-squaring.
_EIG_DEGENERACY_TOL = 1e-12


@dataclass(frozen=True)
class ModelParams:
    """Tissue and kinetic constants of the two-compartment model.

    Attributes
    ----------
    T1P, T1L : float
        Longitudinal relaxation times of pyruvate and lactate (s).
    kPL, kLP : float
        Pyruvate-to-lactate and lactate-to-pyruvate exchange rates (1/s).
    kve : float
        Vascular-tissue exchange rate (1/s).
    nu_e : float
        Extravascular volume fraction, in (0, 1].
    t0bar : float
        Bolus arrival time (s).
    sigmaP, alphaP, betaP : float
        Amplitude, shape and scale (s) of the gamma-shaped vascular input.
    """

    T1P: float = 30.0
    T1L: float = 25.0
    kPL: float = 0.15
    kLP: float = 0.0
    kve: float = 0.05
    nu_e: float = 0.95
    t0bar: float = 4.0
    sigmaP: float = 100.0
    alphaP: float = 2.5
    betaP: float = 4.5

    def __post_init__(self):
        if not (self.T1P > 0 and self.T1L > 0):
            raise InvalidArgumentError("relaxation times must be positive")
        if self.kPL < 0 or self.kLP < 0 or self.kve < 0:
            raise InvalidArgumentError("exchange rates must be nonnegative")
        if not (0 < self.nu_e <= 1):
            raise InvalidArgumentError("nu_e must be in (0, 1]")
        if not (self.alphaP > 0 and self.betaP > 0):
            raise InvalidArgumentError("gamma shape/scale must be positive")
        if self.sigmaP < 0:
            raise InvalidArgumentError("sigmaP must be nonnegative")

    def uncertain(self) -> tuple[float, float, float]:
        """The (kPL, kve, t0bar) triple treated as uncertain in design work."""
        return (self.kPL, self.kve, self.t0bar)


@dataclass(frozen=True)
class AcquisitionDesign:
    """Scan schedule: repetition times and per-scan flip angles (degrees).

    ``tr[0]`` is always 0 (the first scan happens at t = 0); subsequent
    entries are the gaps between consecutive scans.
    """

    tr: tuple[float, ...]
    theta_p_deg: tuple[float, ...]
    theta_l_deg: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "tr", tuple(float(x) for x in self.tr))
        object.__setattr__(
            self, "theta_p_deg", tuple(float(x) for x in self.theta_p_deg)
        )
        object.__setattr__(
            self, "theta_l_deg", tuple(float(x) for x in self.theta_l_deg)
        )
        n = len(self.tr)
        if n < 1:
            raise InvalidArgumentError("design needs at least one scan")
        if len(self.theta_p_deg) != n or len(self.theta_l_deg) != n:
            raise InvalidArgumentError("tr and angle lists must have equal length")
        if self.tr[0] != 0.0:
            raise InvalidArgumentError("tr[0] must be 0")
        if any(t <= 0 for t in self.tr[1:]):
            raise InvalidArgumentError("tr[k] must be positive for k >= 2")
        for th in self.theta_p_deg + self.theta_l_deg:
            if not (0.0 <= th <= 90.0) or not math.isfinite(th):
                raise InvalidArgumentError("flip angles must lie in [0, 90] degrees")

    @classmethod
    def constant(cls, n_scans: int = 30, tr: float = 3.0,
                 theta_p_deg: float = 20.0, theta_l_deg: float = 30.0):
        """Constant-angle schedule with uniform repetition time."""
        if n_scans < 1:
            raise InvalidArgumentError("n_scans must be >= 1")
        trs = (0.0,) + (float(tr),) * (n_scans - 1)
        return cls(trs, (float(theta_p_deg),) * n_scans,
                   (float(theta_l_deg),) * n_scans)

    @property
    def n(self) -> int:
        return len(self.tr)

    @property
    def times(self) -> np.ndarray:
        """Scan times t_k = sum of repetition times up to k."""
        return np.cumsum(self.tr)

    def with_angles(self, theta_p_deg, theta_l_deg) -> "AcquisitionDesign":
        """Same timing, new angle schedule (scalars broadcast to all scans)."""
        tp = np.broadcast_to(theta_p_deg, (self.n,)).astype(float)
        tl = np.broadcast_to(theta_l_deg, (self.n,)).astype(float)
        return AcquisitionDesign(self.tr, tuple(tp), tuple(tl))


@dataclass(frozen=True)
class MagnetizationState:
    """Longitudinal magnetization pair (dimensionless)."""

    phiP: float
    phiL: float

    def __post_init__(self):
        if not (math.isfinite(self.phiP) and math.isfinite(self.phiL)):
            raise InvalidArgumentError("magnetization must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.phiP, self.phiL])


@dataclass
class SignalSeries:
    """Acquired pyruvate/lactate signals at the scan times."""

    times: np.ndarray
    s_p: np.ndarray
    s_l: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.s_p = np.asarray(self.s_p, dtype=float)
        self.s_l = np.asarray(self.s_l, dtype=float)
        if not (len(self.times) == len(self.s_p) == len(self.s_l)):
            raise InvalidArgumentError("signal columns must share one length")
        if not (np.isfinite(self.times).all() and np.isfinite(self.s_p).all()
                and np.isfinite(self.s_l).all()):
            raise InvalidArgumentError("signal entries must be finite")

    @property
    def n(self) -> int:
        return len(self.times)

    def matrix(self) -> np.ndarray:
        """N x 2 signal matrix with pyruvate in column 0."""
        return np.column_stack([self.s_p, self.s_l])

    def peak_pyruvate(self) -> float:
        return float(self.s_p.max())

    def peak_lactate(self) -> float:
        return float(self.s_l.max())

    def peak(self) -> float:
        """Largest signal over both channels; the noise reference scale."""
        return float(max(self.s_p.max(), self.s_l.max()))

    def total(self) -> float:
        """Grand sum over scans and channels (the scalar datum)."""
        return float(self.s_p.sum() + self.s_l.sum())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "sP", "sL"])
            for t, sp, sl in zip(self.times, self.s_p, self.s_l):
                w.writerow([repr(float(t)), repr(float(sp)), repr(float(sl))])

    @classmethod
    def from_csv(cls, path) -> "SignalSeries":
        rows = []
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            if header != ["t", "sP", "sL"]:
                raise InvalidArgumentError(f"unexpected signal CSV header: {header}")
            for row in r:
                rows.append([float(x) for x in row])
        arr = np.array(rows, dtype=float).reshape(-1, 3)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2])


def gamma_pdf(t, a: float, b: float):
    """Gamma probability density t^(a-1) exp(-t/b) / (b^a Gamma(a)).

    Zero for t < 0.  Accepts scalars or arrays in ``t``.
    """
    if not (math.isfinite(a) and math.isfinite(b)):
        raise InvalidArgumentError("gamma parameters must be finite")
    if a <= 0 or b <= 0:
        raise InvalidArgumentError("gamma shape and scale must be positive")
    t_arr = np.asarray(t, dtype=float)
    if not np.isfinite(t_arr).all():
        raise InvalidArgumentError("gamma argument must be finite")
    out = np.zeros_like(t_arr)
    pos = t_arr > 0
    tp = t_arr[pos]
    out[pos] = np.exp((a - 1) * np.log(tp) - tp / b - a * math.log(b) - gammaln(a))
    if t_arr.ndim == 0:
        return float(out)
    return out


def vif(t, params: ModelParams):
    """Vascular input: gamma bolus in the pyruvate slot, zero for lactate.

    Returns shape (..., 2) matching ``t``.
    """
    t_arr = np.asarray(t, dtype=float)
    v1 = params.sigmaP * gamma_pdf(t_arr - params.t0bar, params.alphaP, params.betaP)
    out = np.zeros(t_arr.shape + (2,))
    out[..., 0] = v1
    return out


def system_matrix(params: ModelParams) -> np.ndarray:
    """Relaxation/exchange generator of the two-state magnetization ODE."""
    return np.array([
        [-1.0 / params.T1P - params.kPL - params.kve / params.nu_e, params.kLP],
        [params.kPL, -1.0 / params.T1L - params.kLP],
    ])


def expm_2x2(a: np.ndarray, dt: float) -> np.ndarray:
    """exp(dt * a) for a real 2x2 matrix with real spectrum.

    Uses the eigendecomposition; falls back to scaling-and-squaring when the
    eigenvalues are within 1e-12 of each other.
    """
    a = np.asarray(a, dtype=float)
    lam, vec = np.linalg.eig(a)
    if np.iscomplexobj(lam) and abs(lam.imag).max() > 0:
        return _expm_pade(dt * a)
    lam, vec = lam.real, vec.real
    if abs(lam[0] - lam[1]) < _EIG_DEGENERACY_TOL:
        return _expm_pade(dt * a)
    return vec @ np.diag(np.exp(dt * lam)) @ np.linalg.inv(vec)


def _forced_response(params: ModelParams, times: np.ndarray,
                     rtol: float = 1e-10) -> np.ndarray:
    """Zero-state response w(t) of dw/dt = A w + (kve/nu_e) VIF(t) at ``times``.

    One adaptive high-order integration over the whole acquisition; the
    per-interval convolution follows by superposition.
    """
    times = np.asarray(times, dtype=float)
    if params.kve == 0.0 or params.sigmaP == 0.0 or len(times) == 1:
        return np.zeros((len(times), 2))
    a_mat = system_matrix(params)
    scale = params.kve / params.nu_e * params.sigmaP
    alpha, beta, t0 = params.alphaP, params.betaP, params.t0bar
    log_norm = alpha * math.log(beta) + gammaln(alpha)

    def rhs(t, y):
        u = t - t0
        if u <= 0:
            src = 0.0
        else:
            src = scale * math.exp((alpha - 1) * math.log(u) - u / beta - log_norm)
        return a_mat @ y + np.array([src, 0.0])

    sol = solve_ivp(rhs, (times[0], times[-1]), [0.0, 0.0], t_eval=times,
                    method="DOP853", rtol=rtol, atol=1e-13)
    if not sol.success:
        raise NumericalError(
            f"vascular forcing integration failed on [{times[0]}, {times[-1]}]: "
            f"{sol.message}")
    return sol.y.T


def interval_propagators(params: ModelParams, design: AcquisitionDesign):
    """Per-interval state maps: phi(t_{k+1}) = M_k (C_k phi(t_k)) + v_k.

    Returns
    -------
    ms : ndarray (n-1, 2, 2)
        Homogeneous propagators exp(TR_{k+1} A).
    vs : ndarray (n-1, 2)
        Convolution of the propagator with the vascular input over each
        interval, scaled by kve/nu_e.
    vif_p : ndarray (n,)
        Pyruvate vascular input evaluated at the scan times.
    """
    times = design.times
    a_mat = system_matrix(params)
    ms = np.empty((design.n - 1, 2, 2))
    cache: dict[float, np.ndarray] = {}
    for k, tr in enumerate(design.tr[1:]):
        if tr not in cache:
            cache[tr] = expm_2x2(a_mat, tr)
        ms[k] = cache[tr]
    w = _forced_response(params, times)
    vs = w[1:] - np.einsum("kij,kj->ki", ms, w[:-1])
    vif_p = vif(times, params)[:, 0]
    return ms, vs, vif_p


def propagate_interval(state: MagnetizationState, params: ModelParams,
                       design: AcquisitionDesign, k: int) -> MagnetizationState:
    """Advance the pre-excitation state at scan k to scan k+1.

    ``k`` is the zero-based scan index, 0 <= k < n-1.  The excitation loss
    cos(theta^k) is applied first, then relaxation/exchange and the vascular
    inflow over the interval.
    """
    if not (0 <= k < design.n - 1):
        raise InvalidArgumentError(f"scan index {k} out of range for n={design.n}")
    t0, t1 = design.times[k], design.times[k + 1]
    a_mat = system_matrix(params)
    m = expm_2x2(a_mat, design.tr[k + 1])
    try:
        w = _forced_response(params, np.array([t0, t1]))
    except NumericalError as exc:
        raise NumericalError(f"interval [{t0}, {t1}] (scan {k}): {exc}") from exc
    v = w[1] - m @ w[0]
    c = np.array([math.cos(math.radians(design.theta_p_deg[k])),
                  math.cos(math.radians(design.theta_l_deg[k]))])
    new = m @ (c * state.as_array()) + v
    return MagnetizationState(float(new[0]), float(new[1]))


def _signal_trajectory(ms, vs, vif_p, theta_p_rad, theta_l_rad, nu_e):
    """Shared trajectory loop: states and signals for one angle schedule."""
    n = len(vif_p)
    phi = np.zeros(2)
    states = np.zeros((n, 2))
    s_p = np.zeros(n)
    s_l = np.zeros(n)
    for k in range(n):
        states[k] = phi
        s_p[k] = math.sin(theta_p_rad[k]) * (nu_e * phi[0] + (1 - nu_e) * vif_p[k])
        s_l[k] = math.sin(theta_l_rad[k]) * (nu_e * phi[1])
        if k < n - 1:
            c = np.array([math.cos(theta_p_rad[k]), math.cos(theta_l_rad[k])])
            phi = ms[k] @ (c * phi) + vs[k]
    return states, s_p, s_l


def simulate_lf(params: ModelParams, design: AcquisitionDesign):
    """Simulate the acquisition; returns signals and pre-excitation states.

    The initial state at t = 0 is zero magnetization.  The measured signal at
    scan k is sin(theta^k) applied to the volume-weighted sum of tissue
    magnetization and vascular input.
    """
    ms, vs, vif_p = interval_propagators(params, design)
    tp = np.radians(design.theta_p_deg)
    tl = np.radians(design.theta_l_deg)
    states, s_p, s_l = _signal_trajectory(ms, vs, vif_p, tp, tl, params.nu_e)
    series = SignalSeries(design.times, s_p, s_l)
    mags = [MagnetizationState(float(p), float(l)) for p, l in states]
    return series, mags


def total_signal(params: ModelParams, design: AcquisitionDesign) -> float:
    """Grand sum of pyruvate and lactate signals over all scans."""
    series, _ = simulate_lf(params, design)
    return series.total()


def reference_peak_signal(params: ModelParams | None = None,
                          design: AcquisitionDesign | None = None) -> float:
    """Peak signal of a protocol, used as the noise reference scale.

    The maximum is taken over scans and both channels.  With the default
    model and schedule this evaluates to 0.6173.
    """
    params = params if params is not None else ModelParams()
    design = design if design is not None else AcquisitionDesign.constant()
    series, _ = simulate_lf(params, design)
    return series.peak()
