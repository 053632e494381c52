"""Mutual information between the total-signal datum and kinetic parameters.

With a Gaussian prior over (kPL, kve, t0bar) and additive Gaussian noise on
the scalar total signal, the evidence is approximated by a finite Gaussian
mixture whose means are forward-model evaluations at tensor-product
Gauss-Hermite nodes.  Mutual information is the mixture entropy minus the
(design-independent) noise entropy, and is maximized over flip-angle
schedules.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.optimize import minimize
from scipy.special import logsumexp

from .errors import InvalidArgumentError
from .kinetics import AcquisitionDesign, ModelParams, interval_propagators

__all__ = [
    "PriorSpec",
    "NoiseModel",
    "QuadratureGrid",
    "MIResult",
    "sigma_from_snr",
    "gauss_hermite_3d",
    "conditional_entropy",
    "MIEvaluator",
    "evidence_entropy",
    "mutual_information",
    "mutual_information_converged",
    "optimize_constant_flip",
    "optimize_varying_flip",
    "constant_design_grid",
]

_MAX_ORDER = 50


@dataclass(frozen=True)
class PriorSpec:
    """Independent Gaussian prior over (kPL [1/s], kve [1/s], t0bar [s])."""

    mean: tuple[float, float, float] = (0.15, 0.05, 4.0)
    std: tuple[float, float, float] = (0.03, 0.01, 1.3)

    def __post_init__(self):
        object.__setattr__(self, "mean", tuple(float(x) for x in self.mean))
        object.__setattr__(self, "std", tuple(float(x) for x in self.std))
        if len(self.mean) != 3 or len(self.std) != 3:
            raise InvalidArgumentError("prior mean/std must have 3 components")
        if any(s <= 0 for s in self.std):
            raise InvalidArgumentError("prior standard deviations must be positive")


@dataclass(frozen=True)
class NoiseModel:
    """Per-signal and total-signal noise levels derived from an SNR."""

    snr: float
    sigma_s: float
    sigma_z: float

    def __post_init__(self):
        if not (self.snr > 0 and self.sigma_s > 0 and self.sigma_z > 0):
            raise InvalidArgumentError("noise model entries must be positive")


def sigma_from_snr(snr: float, s_ref: float, n_scans: int) -> NoiseModel:
    """Noise model: sigma_s = s_ref/snr per signal, sigma_z = sigma_s*sqrt(2N)."""
    if not (snr > 0 and s_ref > 0):
        raise InvalidArgumentError("snr and s_ref must be positive")
    if n_scans < 1:
        raise InvalidArgumentError("n_scans must be >= 1")
    sigma_s = s_ref / snr
    return NoiseModel(snr=float(snr), sigma_s=sigma_s,
                      sigma_z=sigma_s * math.sqrt(2.0 * n_scans))


@dataclass(frozen=True)
class QuadratureGrid:
    """Tensor-product Gauss-Hermite rule mapped to the prior."""

    order: int
    nodes: np.ndarray     # (order**3, 3) points in parameter space
    weights: np.ndarray   # (order**3,) probabilities summing to 1

    @property
    def n_nodes(self) -> int:
        return len(self.weights)


@dataclass
class MIResult:
    """Mutual information of a design, with its entropy decomposition."""

    mi: float
    H_z: float
    H_z_given_P: float
    design: AcquisitionDesign
    order: int
    converged: bool = True


def _hermite_1d(order: int):
    """Physicists' Hermite nodes/weights normalized for a standard normal."""
    xi, wi = hermgauss(order)
    return xi, wi / math.sqrt(math.pi)


def gauss_hermite_3d(prior: PriorSpec, order: int) -> QuadratureGrid:
    """Tensor-product rule exact for polynomials of degree < 2*order per axis.

    Nodes are mean + sqrt(2)*std*xi per dimension with physicists' Hermite
    abscissae xi.
    """
    if order < 1:
        raise InvalidArgumentError("quadrature order must be >= 1")
    if order > _MAX_ORDER:
        raise InvalidArgumentError(f"quadrature order > {_MAX_ORDER} unsupported")
    xi, wi = _hermite_1d(order)
    axes = [np.array(prior.mean[d]) + math.sqrt(2.0) * prior.std[d] * xi
            for d in range(3)]
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([m.reshape(-1) for m in mesh], axis=1)
    wmesh = np.meshgrid(wi, wi, wi, indexing="ij")
    weights = wmesh[0].reshape(-1) * wmesh[1].reshape(-1) * wmesh[2].reshape(-1)
    return QuadratureGrid(order=order, nodes=nodes, weights=weights)


def conditional_entropy(noise: NoiseModel) -> float:
    """Entropy of the datum given the parameters: 0.5*ln(2*pi*e*sigma_z^2).

    Independent of the design.
    """
    return 0.5 * math.log(2.0 * math.pi * math.e * noise.sigma_z ** 2)


class MIEvaluator:
    """Caches per-node propagators so many designs can be scored cheaply.

    The quadrature nodes fix the forward model everywhere except the flip
    angles; scoring a design then costs one cheap 2-state recursion per node
    plus the mixture-entropy quadrature.
    """

    def __init__(self, params_known: ModelParams, prior: PriorSpec,
                 noise: NoiseModel, base_design: AcquisitionDesign,
                 order: int = 5):
        self.params_known = params_known
        self.prior = prior
        self.noise = noise
        self.base_design = base_design
        self.order = order
        self.grid = gauss_hermite_3d(prior, order)
        self.nu_e = params_known.nu_e
        n = base_design.n
        q = self.grid.n_nodes
        self._ms = np.empty((q, max(n - 1, 0), 2, 2))
        self._vs = np.empty((q, max(n - 1, 0), 2))
        self._vif = np.empty((q, n))
        for i, (kpl, kv, t0) in enumerate(self.grid.nodes):
            node_params = dataclasses.replace(
                params_known, kPL=float(kpl), kve=float(kv), t0bar=float(t0))
            ms, vs, vif_p = interval_propagators(node_params, base_design)
            self._ms[i], self._vs[i], self._vif[i] = ms, vs, vif_p
        self._xi, self._wi = _hermite_1d(order)
        self._log_w = np.log(self.grid.weights)

    # -- forward map -----------------------------------------------------

    def total_signals(self, theta_p_rad, theta_l_rad) -> np.ndarray:
        """Total signal at every quadrature node; batched over designs.

        ``theta_p_rad`` and ``theta_l_rad`` have shape (n,) or (B, n).
        Returns shape (q,) or (B, q) accordingly.
        """
        tp = np.atleast_2d(np.asarray(theta_p_rad, dtype=float))
        tl = np.atleast_2d(np.asarray(theta_l_rad, dtype=float))
        b = tp.shape[0]
        n = self.base_design.n
        q = self.grid.n_nodes
        sin_p, cos_p = np.sin(tp), np.cos(tp)
        sin_l, cos_l = np.sin(tl), np.cos(tl)
        phi = np.zeros((b, q, 2))
        g = np.zeros((b, q))
        for k in range(n):
            g += sin_p[:, k, None] * (self.nu_e * phi[:, :, 0]
                                      + (1 - self.nu_e) * self._vif[None, :, k])
            g += sin_l[:, k, None] * (self.nu_e * phi[:, :, 1])
            if k < n - 1:
                phi[:, :, 0] *= cos_p[:, k, None]
                phi[:, :, 1] *= cos_l[:, k, None]
                phi = np.einsum("qij,bqj->bqi", self._ms[:, k], phi)
                phi += self._vs[None, :, k]
        if np.ndim(theta_p_rad) == 1:
            return g[0]
        return g

    # -- mixture entropy ---------------------------------------------------

    def _log_mixture(self, z, g):
        """log p(z) for the Gaussian mixture with means g; broadcasts over z."""
        sig = self.noise.sigma_z
        d = (z[..., None] - g) / sig
        log_comp = -0.5 * d * d - math.log(sig * math.sqrt(2.0 * math.pi))
        return logsumexp(log_comp + self._log_w, axis=-1)

    def entropy(self, g: np.ndarray, chunk: int = 64) -> np.ndarray:
        """Evidence entropy H(z) for each row of mixture means ``g``.

        The outer integral is a per-component Gauss-Hermite rule of the same
        order as the prior rule.
        """
        g2 = np.atleast_2d(g)
        sig = self.noise.sigma_z
        w = self.grid.weights
        out = np.empty(g2.shape[0])
        for lo in range(0, g2.shape[0], chunk):
            gc = g2[lo:lo + chunk]                       # (c, q)
            z = gc[:, :, None] + math.sqrt(2.0) * sig * self._xi  # (c, q, m)
            lp = self._log_mixture(z, gc[:, None, None, :])       # (c, q, m)
            out[lo:lo + chunk] = -np.einsum("q,m,cqm->c", w, self._wi, lp)
        if np.ndim(g) == 1:
            return out[0]
        return out

    # -- scalar API --------------------------------------------------------

    def mi_of_angles(self, theta_p_deg, theta_l_deg) -> MIResult:
        """Mutual information of a schedule given in degrees."""
        design = self.base_design.with_angles(theta_p_deg, theta_l_deg)
        g = self.total_signals(np.radians(design.theta_p_deg),
                               np.radians(design.theta_l_deg))
        h_z = float(self.entropy(g))
        h_cond = conditional_entropy(self.noise)
        return MIResult(mi=h_z - h_cond, H_z=h_z, H_z_given_P=h_cond,
                        design=design, order=self.order)

    # -- gradient (forward-mode sensitivities) ------------------------------

    def mi_and_grad(self, theta_rad: np.ndarray):
        """MI and its gradient w.r.t. the 2n-vector (theta_p, theta_l) in rad.

        State sensitivities are propagated forward alongside the trajectory;
        the entropy gradient follows from differentiating the quadrature
        formula with respect to the mixture means.
        """
        n = self.base_design.n
        q = self.grid.n_nodes
        theta_rad = np.asarray(theta_rad, dtype=float)
        tp, tl = theta_rad[:n], theta_rad[n:]
        sin_p, cos_p = np.sin(tp), np.cos(tp)
        sin_l, cos_l = np.sin(tl), np.cos(tl)
        nu = self.nu_e

        phi = np.zeros((q, 2))
        sens = np.zeros((q, 2 * n, 2))   # d phi / d theta_j
        g = np.zeros(q)
        dg = np.zeros((q, 2 * n))
        for k in range(n):
            vas = (1 - nu) * self._vif[:, k]
            g += sin_p[k] * (nu * phi[:, 0] + vas) + sin_l[k] * nu * phi[:, 1]
            dg[:, k] += cos_p[k] * (nu * phi[:, 0] + vas)
            dg[:, n + k] += cos_l[k] * nu * phi[:, 1]
            dg += sin_p[k] * nu * sens[:, :, 0] + sin_l[k] * nu * sens[:, :, 1]
            if k < n - 1:
                # d/dtheta of the cos reset enters only the k-th column
                inj = np.zeros((q, 2 * n, 2))
                inj[:, k, 0] = -sin_p[k] * phi[:, 0]
                inj[:, n + k, 1] = -sin_l[k] * phi[:, 1]
                sens[:, :, 0] *= cos_p[k]
                sens[:, :, 1] *= cos_l[k]
                sens += inj
                sens = np.einsum("qij,qpj->qpi", self._ms[:, k], sens)
                phi = np.einsum("qij,qj->qi", self._ms[:, k],
                                np.array([cos_p[k], cos_l[k]]) * phi)
                phi += self._vs[:, k]

        sig = self.noise.sigma_z
        w = self.grid.weights
        z = g[:, None] + math.sqrt(2.0) * sig * self._xi       # (q, m)
        d = (z[:, :, None] - g) / sig                          # (q, m, l)
        log_comp = -0.5 * d * d - math.log(sig * math.sqrt(2.0 * math.pi))
        log_p = logsumexp(log_comp + self._log_w, axis=-1)     # (q, m)
        h_z = -float(np.einsum("q,m,qm->", w, self._wi, log_p))

        resp = np.exp(log_comp + self._log_w - log_p[:, :, None])  # r_l(z_qm)
        dlogp_dz = -np.einsum("qml,qml->qm", resp, d) / sig
        # dH/dg_m: the z-nodes of component m move with g_m, and every
        # evaluation of log p depends on all means.
        dh = -(w * np.einsum("m,qm->q", self._wi, dlogp_dz))
        dh -= np.einsum("q,m,qml->l", w, self._wi, resp * d) / sig
        grad = dh @ dg
        h_cond = conditional_entropy(self.noise)
        return h_z - h_cond, grad


def evidence_entropy(design: AcquisitionDesign, params_known: ModelParams,
                     prior: PriorSpec, noise: NoiseModel,
                     order: int = 5) -> float:
    """Entropy of the evidence p(z) under the quadrature mixture."""
    ev = MIEvaluator(params_known, prior, noise, design, order)
    g = ev.total_signals(np.radians(design.theta_p_deg),
                         np.radians(design.theta_l_deg))
    return float(ev.entropy(g))


def mutual_information(design: AcquisitionDesign, params_known: ModelParams,
                       prior: PriorSpec, noise: NoiseModel,
                       order: int = 5) -> MIResult:
    """I(design) = H(z) - H(z | parameters) at a fixed quadrature order."""
    ev = MIEvaluator(params_known, prior, noise, design, order)
    return ev.mi_of_angles(design.theta_p_deg, design.theta_l_deg)


def mutual_information_converged(design: AcquisitionDesign,
                                 params_known: ModelParams, prior: PriorSpec,
                                 noise: NoiseModel,
                                 orders=(3, 5, 7, 9),
                                 tol: float = 1e-4):
    """Increase the quadrature order until MI changes by less than ``tol``.

    Returns the result at the converged order and the (order, mi) history.
    """
    history = []
    prev = None
    result = None
    for order in orders:
        result = mutual_information(design, params_known, prior, noise, order)
        history.append((order, result.mi))
        if prev is not None and abs(result.mi - prev) < tol:
            return result, history
        prev = result.mi
    result.converged = False
    return result, history


def constant_design_grid(evaluator: MIEvaluator, step_deg: float = 1.0,
                         bounds_deg=(0.0, 90.0)):
    """MI on a regular grid of constant-angle schedules.

    Returns (angles_deg, mi_matrix) where mi_matrix[i, j] scores
    (theta_p=angles[i], theta_l=angles[j]).
    """
    lo, hi = bounds_deg
    angles = np.arange(lo, hi + 0.5 * step_deg, step_deg)
    n = evaluator.base_design.n
    pairs = np.array([(p, l) for p in angles for l in angles])
    mi = np.empty(len(pairs))
    h_cond = conditional_entropy(evaluator.noise)
    chunk = 256
    for i in range(0, len(pairs), chunk):
        blk = np.radians(pairs[i:i + chunk])
        tp = np.repeat(blk[:, :1], n, axis=1)
        tl = np.repeat(blk[:, 1:], n, axis=1)
        g = evaluator.total_signals(tp, tl)
        mi[i:i + chunk] = evaluator.entropy(g) - h_cond
    return angles, mi.reshape(len(angles), len(angles))


def _constant_objective(evaluator: MIEvaluator):
    n = evaluator.base_design.n

    def fun(x):
        theta = np.concatenate([np.full(n, x[0]), np.full(n, x[1])])
        mi, grad = evaluator.mi_and_grad(theta)
        return -mi, -np.array([grad[:n].sum(), grad[n:].sum()])

    return fun


def optimize_constant_flip(params_known: ModelParams, prior: PriorSpec,
                           noise: NoiseModel, base_design: AcquisitionDesign,
                           order: int = 5, bounds_deg=(0.0, 90.0),
                           coarse_points: int = 5,
                           evaluator: MIEvaluator | None = None) -> MIResult:
    """Best constant flip-angle pair by multi-start local ascent.

    A coarse grid seeds gradient-based refinements; the returned MI is never
    below the best coarse-grid value.
    """
    ev = evaluator or MIEvaluator(params_known, prior, noise, base_design, order)
    lo, hi = bounds_deg
    step = (hi - lo) / (coarse_points + 1)
    coarse = lo + step * np.arange(1, coarse_points + 1)
    h_cond = conditional_entropy(ev.noise)
    n = base_design.n
    starts = [(p, l) for p in coarse for l in coarse]
    seeds = []
    for p, l in starts:
        tp = np.full(n, math.radians(p))
        tl = np.full(n, math.radians(l))
        g = ev.total_signals(tp, tl)
        seeds.append((float(ev.entropy(g)) - h_cond, p, l))
    seeds.sort(reverse=True)
    best_grid = seeds[0][0]

    fun = _constant_objective(ev)
    rad_bounds = [(math.radians(lo), math.radians(hi))] * 2
    best = None
    all_ok = True
    for _, p, l in seeds[:3]:
        res = minimize(fun, x0=np.radians([p, l]), jac=True, method="L-BFGS-B",
                       bounds=rad_bounds, options={"maxiter": 200})
        all_ok = all_ok and bool(res.success)
        if best is None or -res.fun > -best.fun:
            best = res
    mi_best = -best.fun
    converged = all_ok and mi_best >= best_grid - 1e-12
    theta_p, theta_l = np.degrees(best.x)
    design = base_design.with_angles(theta_p, theta_l)
    result = ev.mi_of_angles(design.theta_p_deg, design.theta_l_deg)
    result.converged = converged
    return result


def optimize_varying_flip(params_known: ModelParams, prior: PriorSpec,
                          noise: NoiseModel, base_design: AcquisitionDesign,
                          order: int = 5, bounds_deg=(0.0, 90.0),
                          init: AcquisitionDesign | None = None,
                          n_random_starts: int = 3, seed: int = 0,
                          evaluator: MIEvaluator | None = None) -> MIResult:
    """Per-scan schedule optimization by projected quasi-Newton ascent.

    Starts from the constant-flip optimum (replicated over scans) plus random
    perturbations of it; the best local optimum is returned and is never
    below the initial point's MI.
    """
    ev = evaluator or MIEvaluator(params_known, prior, noise, base_design, order)
    n = base_design.n
    if init is None:
        const = optimize_constant_flip(params_known, prior, noise, base_design,
                                       order, bounds_deg, evaluator=ev)
        init = const.design
    x0 = np.radians(np.concatenate([init.theta_p_deg, init.theta_l_deg]))
    lo, hi = math.radians(bounds_deg[0]), math.radians(bounds_deg[1])
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    starts = [x0]
    for _ in range(n_random_starts):
        starts.append(np.clip(x0 + rng.normal(0.0, math.radians(10.0), 2 * n),
                              lo, hi))

    def fun(x):
        mi, grad = ev.mi_and_grad(x)
        return -mi, -grad

    mi_init, _ = ev.mi_and_grad(x0)
    best_x, best_mi, all_ok = x0, mi_init, True
    for s in starts:
        res = minimize(fun, x0=s, jac=True, method="L-BFGS-B",
                       bounds=[(lo, hi)] * (2 * n),
                       options={"maxiter": 600, "ftol": 1e-10, "gtol": 1e-7})
        all_ok = all_ok and bool(res.success)
        if -res.fun > best_mi:
            best_x, best_mi = res.x, -res.fun
    design = base_design.with_angles(np.degrees(best_x[:n]),
                                     np.degrees(best_x[n:]))
    result = ev.mi_of_angles(design.theta_p_deg, design.theta_l_deg)
    result.converged = all_ok and result.mi >= mi_init - 1e-8
    return result
