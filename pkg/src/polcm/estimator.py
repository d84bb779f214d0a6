"""Maximum-likelihood estimation of edge coefficients.

Two objectives are provided. ``TR`` keeps every variable at unit variance
by construction: covariances are built node by node from the coefficients
and the noise variances take up whatever is left, so only the coefficients
are free. ``LM`` frees the noise variances too and adds a quadratic penalty
pulling the latent variances to one.

All restarts are optimized together as one batch. Objectives are per
sample (the likelihood divided by K); reported likelihoods are rescaled.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .covariance import covariance_full, unit_variance_covariance
from .graph import PolcmGraph

logger = logging.getLogger(__name__)

BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8
MIN_STEP_MULT = 1e-12


class Method(str, enum.Enum):
    TR = "tr"
    LM = "lm"


class GradientBackend(str, enum.Enum):
    ANALYTIC = "analytic"
    FINITE_DIFFERENCE = "fd"


class InvalidIterate(ValueError):
    pass


class EstimationFailed(RuntimeError):
    def __init__(self, msg: str, diagnostics: list[dict]):
        super().__init__(msg)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class EstimatorConfig:
    method: Method = Method.TR
    restarts: int = 30
    learning_rate: float = 0.02
    max_iters: int = 5000
    grad_tol: float = 1e-7
    init_scale: float = 1.0
    # per-sample weight; the likelihood-scale weight is this times K
    lm_penalty_weight: float = 100.0
    gradient_backend: GradientBackend = GradientBackend.ANALYTIC
    seed: int = 0
    # TR: treat steps whose implied noise variances are not all positive as
    # infinite. Off by default: the covariance polynomial stays well defined
    # past that boundary and optimization can cross it (see README).
    reject_infeasible: bool = False

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "gradient_backend", GradientBackend(self.gradient_backend))
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.max_iters < 0 or self.grad_tol < 0 or self.init_scale < 0:
            raise ValueError("max_iters, grad_tol and init_scale must be non-negative")
        if self.method is Method.LM and self.lm_penalty_weight <= 0:
            raise ValueError("lm_penalty_weight must be positive")


@dataclass
class EstimateResult:
    f_hat: np.ndarray
    omega_hat: np.ndarray
    nll: float
    restart_index: int
    converged: bool
    iterations: int
    objective: float
    method: Method
    restarts: list[dict] = field(default_factory=list)

    def edge_list(self, g: PolcmGraph) -> list[list]:
        return [[g.names[a], g.names[b], float(self.f_hat[a, b])] for a, b in sorted(g.edges)]


# -- likelihood ---------------------------------------------------------------


def nll(sigma_model: np.ndarray, sigma_hat: np.ndarray, k: float) -> float:
    """(K/2) (tr(S^-1 Sigma_hat) + log det S); raises InvalidIterate if S is not PD."""
    try:
        chol = np.linalg.cholesky(sigma_model)
    except np.linalg.LinAlgError:
        raise InvalidIterate("model covariance is not positive definite") from None
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    tr = np.trace(np.linalg.solve(sigma_model, sigma_hat))
    return 0.5 * k * (tr + logdet)


def _batched_nll_terms(sig: np.ndarray, sigma_hat: np.ndarray, need_grad: bool):
    """Per-sample likelihood for a batch of covariances, plus dL/dSigma."""
    r = sig.shape[0]
    vals = np.full(r, np.inf)
    grads = np.zeros_like(sig) if need_grad else None
    try:
        chol = np.linalg.cholesky(sig)
        ok = np.ones(r, dtype=bool)
    except np.linalg.LinAlgError:
        chol = np.zeros_like(sig)
        ok = np.zeros(r, dtype=bool)
        for i in range(r):
            try:
                chol[i] = np.linalg.cholesky(sig[i])
                ok[i] = True
            except np.linalg.LinAlgError:
                pass
    if not ok.any():
        return vals, grads
    s = sig[ok]
    inv = np.linalg.inv(s)
    logdet = 2.0 * np.log(np.diagonal(chol[ok], axis1=1, axis2=2)).sum(axis=1)
    vals[ok] = 0.5 * (np.einsum("rij,ji->r", inv, sigma_hat) + logdet)
    if need_grad:
        g = 0.5 * (inv - inv @ sigma_hat @ inv)
        grads[ok] = (g + np.swapaxes(g, 1, 2)) / 2
    return vals, grads


# -- objectives ---------------------------------------------------------------


def central_difference(fun, p: np.ndarray) -> np.ndarray:
    """Central differences with h = 1e-6 max(1, |p|).

    ``fun`` maps a batch of points (rows) to a vector of values; all probes
    go through it in a single call.
    """
    p = np.atleast_2d(np.asarray(p, dtype=float))
    r, q = p.shape
    h = 1e-6 * np.maximum(1.0, np.abs(p))
    probes = np.repeat(p[:, None, :], 2 * q, axis=1)
    idx = np.arange(q)
    probes[:, idx, idx] += h[:, idx]
    probes[:, q + idx, idx] -= h[:, idx]
    vals = np.asarray(fun(probes.reshape(r * 2 * q, q))).reshape(r, 2 * q)
    return (vals[:, :q] - vals[:, q:]) / (2 * h)


class _Objective:
    """Shared bookkeeping: edge order, topological permutation, data."""

    def __init__(self, g: PolcmGraph, sigma_hat: np.ndarray, k: float):
        self.g = g
        self.k = float(k)
        self.sigma_hat = np.asarray(sigma_hat, dtype=float)
        n = g.num_observed
        if self.sigma_hat.shape != (n, n):
            raise ValueError(f"sample covariance must be {n}x{n}")
        self.edges = sorted(g.edges)
        self.perm = np.asarray(g.topological_order, dtype=int)
        pos = np.empty(g.num_nodes, dtype=int)
        pos[self.perm] = np.arange(g.num_nodes)
        self.pos = pos
        self.src = np.array([pos[a] for a, _ in self.edges], dtype=int)
        self.dst = np.array([pos[b] for _, b in self.edges], dtype=int)
        # observed nodes in permuted coordinates, ordered as in sigma_hat
        self.obs = pos[np.arange(g.num_latent, g.num_nodes)]
        self.num_edges = len(self.edges)

    @property
    def num_params(self) -> int:
        return self.num_edges

    def _fperm(self, w: np.ndarray) -> np.ndarray:
        d = self.g.num_nodes
        f = np.zeros((w.shape[0], d, d))
        f[:, self.src, self.dst] = w
        return f

    def weights(self, p: np.ndarray) -> np.ndarray:
        """Batch of weight matrices in the graph's own node order."""
        p = np.atleast_2d(p)
        d = self.g.num_nodes
        f = np.zeros((p.shape[0], d, d))
        f[:, [a for a, _ in self.edges], [b for _, b in self.edges]] = p[:, : self.num_edges]
        return f

    def value(self, p: np.ndarray) -> np.ndarray:
        return self.value_and_grad(p, need_grad=False)[0]

    def finite_difference_grad(self, p: np.ndarray) -> np.ndarray:
        return central_difference(self.value, p)


class TrekObjective(_Objective):
    """Unit-variance parameterization: free parameters are the edge weights."""

    def __init__(self, g, sigma_hat, k, reject_infeasible: bool = False):
        super().__init__(g, sigma_hat, k)
        self.reject_infeasible = reject_infeasible

    def _forward(self, p: np.ndarray):
        fp = self._fperm(p)
        r, d, _ = fp.shape
        s = np.broadcast_to(np.eye(d), (r, d, d)).copy()
        om = np.ones((r, d))
        for k in range(1, d):
            col = fp[:, :k, k]
            cov = np.einsum("rij,rj->ri", s[:, :k, :k], col)
            s[:, :k, k] = cov
            s[:, k, :k] = cov
            om[:, k] = 1.0 - np.einsum("ri,ri->r", col, cov)
        return fp, s, om

    def value_and_grad(self, p: np.ndarray, need_grad: bool = True):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        fp, s, om = self._forward(p)
        feasible = np.all(om > 0, axis=1) if self.reject_infeasible else np.ones(len(p), dtype=bool)
        sig = s[:, self.obs[:, None], self.obs[None, :]]
        vals, gsig = _batched_nll_terms(sig, self.sigma_hat, need_grad)
        vals[~feasible] = np.inf
        if not need_grad:
            return vals, None
        r, d, _ = s.shape
        gbar = np.zeros_like(s)
        gbar[:, self.obs[:, None], self.obs[None, :]] = gsig
        gf = np.zeros_like(s)
        for k in range(d - 1, 0, -1):
            a = gbar[:, :k, k] + gbar[:, k, :k]
            gf[:, :k, k] = np.einsum("rij,rj->ri", s[:, :k, :k], a)
            gbar[:, :k, :k] += a[:, :, None] * fp[:, None, :k, k]
        grad = gf[:, self.src, self.dst]
        grad[~np.isfinite(vals)] = 0.0
        return vals, grad

    def noise(self, p: np.ndarray) -> np.ndarray:
        """Implied noise variances in the graph's node order."""
        _, _, om = self._forward(np.atleast_2d(p))
        return om[:, self.pos]


class PenaltyObjective(_Objective):
    """Free edge weights and log noise variances, latent variances penalized."""

    def __init__(self, g, sigma_hat, k, penalty: float):
        super().__init__(g, sigma_hat, k)
        self.penalty = float(penalty)
        self.lat = self.pos[np.arange(g.num_latent)]

    @property
    def num_params(self) -> int:
        return self.num_edges + self.g.num_nodes

    def split(self, p: np.ndarray):
        """Edge weights and noise variances (noise in permuted order)."""
        return p[:, : self.num_edges], np.exp(p[:, self.num_edges :])

    def noise(self, p: np.ndarray) -> np.ndarray:
        _, om = self.split(np.atleast_2d(p))
        return om[:, self.pos]

    def sigma_full(self, p: np.ndarray):
        w, om = self.split(p)
        fp = self._fperm(w)
        d = fp.shape[1]
        t = np.linalg.inv(np.eye(d) - fp)
        sig = np.swapaxes(t, 1, 2) @ (om[:, :, None] * t)
        return t, om, (sig + np.swapaxes(sig, 1, 2)) / 2

    def nll_part(self, p: np.ndarray) -> np.ndarray:
        _, _, sig = self.sigma_full(np.atleast_2d(p))
        vals, _ = _batched_nll_terms(sig[:, self.obs[:, None], self.obs[None, :]], self.sigma_hat, False)
        return vals

    def value_and_grad(self, p: np.ndarray, need_grad: bool = True):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        t, om, sig = self.sigma_full(p)
        vals, gsig = _batched_nll_terms(sig[:, self.obs[:, None], self.obs[None, :]], self.sigma_hat, need_grad)
        lat_var = sig[:, self.lat, self.lat]
        vals = vals + self.penalty * ((lat_var - 1.0) ** 2).sum(axis=1)
        vals[~np.isfinite(vals)] = np.inf
        if not need_grad:
            return vals, None
        g = np.zeros_like(sig)
        g[:, self.obs[:, None], self.obs[None, :]] = gsig
        g[:, self.lat, self.lat] += 2.0 * self.penalty * (lat_var - 1.0)
        gf = 2.0 * sig @ g @ np.swapaxes(t, 1, 2)
        gom = np.einsum("rij,rjk,rik->ri", t, g, t)
        grad = np.concatenate([gf[:, self.src, self.dst], gom * om], axis=1)
        grad[~np.isfinite(vals)] = 0.0
        return vals, grad


def make_objective(g: PolcmGraph, sigma_hat: np.ndarray, k: float, cfg: EstimatorConfig) -> _Objective:
    if cfg.method is Method.TR:
        return TrekObjective(g, sigma_hat, k, cfg.reject_infeasible)
    return PenaltyObjective(g, sigma_hat, k, cfg.lm_penalty_weight)


def gradient(obj: _Objective, p: np.ndarray, backend: GradientBackend = GradientBackend.ANALYTIC) -> np.ndarray:
    """Gradient of ``obj`` at a batch of points; raises if any value is infinite."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    vals, grad = obj.value_and_grad(p, need_grad=GradientBackend(backend) is GradientBackend.ANALYTIC)
    if not np.all(np.isfinite(vals)):
        raise InvalidIterate("objective is infinite at the requested point")
    if GradientBackend(backend) is GradientBackend.FINITE_DIFFERENCE:
        grad = obj.finite_difference_grad(p)
    return grad


# -- optimization -------------------------------------------------------------


def restart_schedule(g: PolcmGraph, cfg: EstimatorConfig) -> np.ndarray:
    """Initial edge weights, one row per restart.

    Each restart draws from its own seed, uniform on [-init_scale,
    init_scale]. A draw with no unit-variance model is halved until it has
    one, so every restart starts from a valid point.
    """
    seqs = np.random.SeedSequence(cfg.seed).spawn(cfg.restarts)
    e = len(g.edges)
    out = np.empty((cfg.restarts, e))
    edges = sorted(g.edges)
    for i, s in enumerate(seqs):
        w = np.random.default_rng(s).uniform(-cfg.init_scale, cfg.init_scale, size=e)
        for _ in range(64):
            f = np.zeros((g.num_nodes, g.num_nodes))
            for (a, b), v in zip(edges, w):
                f[a, b] = v
            _, om = unit_variance_covariance(g, f)
            if np.all(om > 0):
                break
            w = w / 2
        out[i] = w
    return out


def _initial_params(obj: _Objective, g: PolcmGraph, w0: np.ndarray) -> np.ndarray:
    if isinstance(obj, PenaltyObjective):
        om = np.stack([unit_variance_covariance(g, f)[1] for f in obj.weights(w0)])
        return np.concatenate([w0, np.log(om[:, obj.perm])], axis=1)
    return w0.copy()


def _adam(obj: _Objective, p0: np.ndarray, cfg: EstimatorConfig):
    """Adam with per-restart step rejection; accepted steps never increase
    the objective. Returns final params, values, gradients and diagnostics."""
    p = p0.copy()
    r, q = p.shape
    analytic = cfg.gradient_backend is GradientBackend.ANALYTIC

    def evaluate(x):
        v, gr = obj.value_and_grad(x, need_grad=analytic)
        if not analytic:
            gr = np.zeros_like(x)
            fin = np.isfinite(v)
            if fin.any():
                gr[fin] = obj.finite_difference_grad(x[fin])
        return v, gr

    val, grad = evaluate(p)
    m = np.zeros_like(p)
    v2 = np.zeros_like(p)
    t = np.zeros(r)
    mult = np.ones(r)
    iters = np.zeros(r, dtype=int)
    reason = np.array(["max_iters"] * r, dtype=object)
    active = np.isfinite(val)
    reason[~active] = "infeasible_start"
    for _ in range(cfg.max_iters):
        gnorm = np.linalg.norm(grad, axis=1)
        done = active & (gnorm <= cfg.grad_tol)
        reason[done] = "grad_tol"
        stalled = active & (mult < MIN_STEP_MULT)
        reason[stalled & ~done] = "step_collapse"
        active &= ~(done | stalled)
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        gi = grad[idx]
        t[idx] += 1
        m[idx] = BETA1 * m[idx] + (1 - BETA1) * gi
        v2[idx] = BETA2 * v2[idx] + (1 - BETA2) * gi**2
        mhat = m[idx] / (1 - BETA1 ** t[idx])[:, None]
        vhat = v2[idx] / (1 - BETA2 ** t[idx])[:, None]
        trial = p[idx] - (cfg.learning_rate * mult[idx])[:, None] * mhat / (np.sqrt(vhat) + ADAM_EPS)
        tv, tg = evaluate(trial)
        iters[idx] += 1
        ok = tv < val[idx]
        acc, rej = idx[ok], idx[~ok]
        p[acc], val[acc], grad[acc] = trial[ok], tv[ok], tg[ok]
        mult[acc] = np.minimum(1.0, 2.0 * mult[acc])
        mult[rej] *= 0.5
        # restart momentum along the current gradient so the next trial
        # is a descent direction
        m[rej] = grad[rej] * (1 - BETA1 ** t[rej])[:, None]
    diag = [
        {
            "restart": i,
            "objective": float(val[i]),
            "iterations": int(iters[i]),
            "grad_norm": float(np.linalg.norm(grad[i])),
            "stop": str(reason[i]),
        }
        for i in range(r)
    ]
    return p, val, grad, diag


def estimate(g: PolcmGraph, sigma_hat: np.ndarray, k: float, cfg: EstimatorConfig | None = None) -> EstimateResult:
    """Best-of-restarts maximum-likelihood fit.

    For TR the input is first rescaled to a correlation matrix, since the
    model has unit variances throughout.
    """
    cfg = cfg or EstimatorConfig()
    sigma_hat = np.asarray(sigma_hat, dtype=float)
    if cfg.method is Method.TR:
        sd = np.sqrt(np.diag(sigma_hat))
        if np.max(np.abs(sd - 1.0)) > 1e-6:
            logger.info("rescaling input covariance to unit diagonal")
        sigma_hat = sigma_hat / np.outer(sd, sd)
    obj = make_objective(g, sigma_hat, k, cfg)
    w0 = restart_schedule(g, cfg)
    p0 = _initial_params(obj, g, w0)
    p, val, _, diag = _adam(obj, p0, cfg)
    if not np.any(np.isfinite(val)):
        raise EstimationFailed("no restart reached a finite objective", diag)
    feasible = np.all(obj.noise(p) > 0, axis=1)
    for dg, ok in zip(diag, feasible):
        dg["feasible"] = bool(ok)
    # prefer restarts that end at a valid model; argmin keeps the lowest index on ties
    pool = feasible & np.isfinite(val) if np.any(feasible & np.isfinite(val)) else np.isfinite(val)
    best = int(np.argmin(np.where(pool, val, np.inf)))
    if not feasible[best]:
        logger.warning("best restart has non-positive implied noise variances")
    pb = p[best : best + 1]
    f_hat = obj.weights(pb)[0]
    omega_hat = obj.noise(pb)[0]
    if isinstance(obj, PenaltyObjective):
        nll_val = float(obj.nll_part(pb)[0]) * obj.k
    else:
        nll_val = float(val[best]) * obj.k
    for dg in diag:
        dg["nll_per_sample"] = dg.pop("objective")
    return EstimateResult(
        f_hat=f_hat,
        omega_hat=omega_hat,
        nll=nll_val,
        restart_index=best,
        converged=diag[best]["stop"] in ("grad_tol", "step_collapse"),
        iterations=diag[best]["iterations"],
        objective=float(val[best]) * obj.k,
        method=cfg.method,
        restarts=diag,
    )


def model_covariance(g: PolcmGraph, f: np.ndarray, omega: np.ndarray | None = None) -> np.ndarray:
    """Observed covariance implied by ``f``: unit-variance if ``omega`` is None."""
    m = g.num_latent
    if omega is None:
        s, _ = unit_variance_covariance(g, f)
        return s[m:, m:]
    return covariance_full(f, omega, m).sigma_X
