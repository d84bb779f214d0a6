"""Population covariance of a linear model and its indeterminacy transforms.

Weight matrices are dense ``(m+n, m+n)`` arrays with ``f[j, i]`` the
coefficient of edge ``j -> i``; latents come first. Noise is the diagonal of
Omega as a vector.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .graph import PolcmGraph, enumerate_simple_treks

COND_WARN = 1e10


class UnsupportedShape(ValueError):
    """The block formula does not apply; use :func:`covariance_full`."""


class InfeasibleModel(ValueError):
    """No positive noise variances give every variable unit variance."""

    def __init__(self, msg: str, omega: np.ndarray):
        super().__init__(msg)
        self.omega = omega


@dataclass(frozen=True)
class CovModel:
    sigma_full: np.ndarray
    num_latent: int

    @property
    def sigma_X(self) -> np.ndarray:
        m = self.num_latent
        return self.sigma_full[m:, m:]

    @property
    def sigma_L(self) -> np.ndarray:
        m = self.num_latent
        return self.sigma_full[:m, :m]


# -- helpers ------------------------------------------------------------------


def support_mask(g: PolcmGraph) -> np.ndarray:
    mask = np.zeros((g.num_nodes, g.num_nodes), dtype=bool)
    for a, b in g.edges:
        mask[a, b] = True
    return mask


def weights_from_edges(g: PolcmGraph, coefs: dict) -> np.ndarray:
    f = np.zeros((g.num_nodes, g.num_nodes))
    for (a, b), v in coefs.items():
        if (a, b) not in g.edges:
            raise ValueError(f"coefficient on non-edge ({a}, {b})")
        f[a, b] = v
    return f


def edges_from_weights(g: PolcmGraph, f: np.ndarray) -> dict:
    return {(a, b): float(f[a, b]) for a, b in sorted(g.edges)}


def check_support(g: PolcmGraph, f: np.ndarray) -> None:
    f = np.asarray(f)
    if f.shape != (g.num_nodes, g.num_nodes):
        raise ValueError(f"weight matrix shape {f.shape} does not match {g.num_nodes} nodes")
    if np.any(f[~support_mask(g)] != 0):
        raise ValueError("weight matrix has nonzero entries off the graph's edges")


def _solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.size and np.linalg.cond(a) > COND_WARN:
        warnings.warn("ill-conditioned matrix in covariance computation", RuntimeWarning, stacklevel=3)
    return np.linalg.solve(a, b)


# -- covariance ---------------------------------------------------------------


def covariance_full(f: np.ndarray, omega: np.ndarray, num_latent: int = 0) -> CovModel:
    """Sigma = (I - F)^{-T} Omega (I - F)^{-1}."""
    f = np.asarray(f, dtype=float)
    d = f.shape[0]
    t = _solve(np.eye(d) - f, np.eye(d))
    sigma = t.T @ np.diag(omega) @ t
    return CovModel((sigma + sigma.T) / 2, num_latent)


def covariance_blocks_prop1(f: np.ndarray, omega: np.ndarray, num_latent: int) -> CovModel:
    """Block form of the covariance, written in the latent/observed blocks.

    The closed form for the latent part needs the observed-to-latent block C
    to be square and invertible. ``C == 0`` is also accepted, since the
    latent part then does not depend on the observed noise.
    """
    f = np.asarray(f, dtype=float)
    omega = np.asarray(omega, dtype=float)
    m = num_latent
    n = f.shape[0] - m
    a, b, c, dd = f[:m, :m], f[:m, m:], f[m:, :m], f[m:, m:]
    om_l, om_x = np.diag(omega[:m]), np.diag(omega[m:])
    i_m, i_n = np.eye(m), np.eye(n)
    imd_inv = _solve(i_n - dd, i_n)
    mm = _solve(i_m - a - b @ imd_inv @ c, i_m)
    if not np.any(c):
        nn = np.zeros((n, m))
    elif m == n and abs(np.linalg.det(c)) > 1e-12:
        nn = _solve((i_m - a) @ _solve(c, i_n - dd) - b, i_m)
    else:
        raise UnsupportedShape(
            "block formula needs the observed-to-latent block to be square and invertible (or zero); "
            "use covariance_full"
        )
    sigma_l = mm.T @ om_l @ mm + nn.T @ om_x @ nn
    inner = om_x + b.T @ sigma_l @ b + om_x @ nn @ b + b.T @ nn.T @ om_x
    sigma_x = imd_inv.T @ inner @ imd_inv
    # the cross block follows from V_X = (I - D)^{-T}(B^T V_L + e_X)
    cross = (sigma_l @ b + nn.T @ om_x) @ imd_inv
    full = np.block([[sigma_l, cross], [cross.T, sigma_x]])
    return CovModel((full + full.T) / 2, m)


def trek_rule_sigma(g: PolcmGraph, f: np.ndarray, node_variances, i: int, j: int) -> float:
    """Covariance of ``i`` and ``j`` summed over simple treks.

    Each trek contributes the variance of its top times the product of the
    edge coefficients on both sides.
    """
    total = 0.0
    for tr in enumerate_simple_treks(g, i, j):
        mono = node_variances[tr.top]
        for a, b in tr.edges():
            mono *= f[a, b]
        total += mono
    return float(total)


def _topo_perm(g: PolcmGraph) -> np.ndarray:
    return np.asarray(g.topological_order, dtype=int)


def unit_variance_covariance(g: PolcmGraph, f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Covariance and noise variances that make every variable unit-variance.

    Covariances are built node by node in topological order, so the noise
    of each node is whatever is left of its unit variance budget. Returns
    ``(sigma, omega)`` without checking the sign of ``omega``.
    """
    perm = _topo_perm(g)
    fp = np.asarray(f, dtype=float)[np.ix_(perm, perm)]
    d = len(perm)
    s = np.eye(d)
    om = np.ones(d)
    for k in range(1, d):
        col = fp[:k, k]
        if not col.any():
            continue
        cov = s[:k, :k] @ col
        s[:k, k] = cov
        s[k, :k] = cov
        om[k] = 1.0 - col @ cov
    inv = np.empty(d, dtype=int)
    inv[perm] = np.arange(d)
    return s[np.ix_(inv, inv)], om[inv]


def unit_variance_noise_solve(g: PolcmGraph, f: np.ndarray) -> np.ndarray:
    """Noise variances giving unit variance everywhere; raises if any is <= 0."""
    _, om = unit_variance_covariance(g, f)
    bad = np.flatnonzero(om <= 0)
    if bad.size:
        raise InfeasibleModel(
            f"no unit-variance model: noise for {g.label(bad.tolist())} would be non-positive", om
        )
    return om


def standardize_model(f: np.ndarray, omega: np.ndarray, variances=None) -> tuple[np.ndarray, np.ndarray]:
    """Rescale every variable to unit variance.

    ``variances`` defaults to the model's own; pass empirical variances to
    standardize against a sample instead.
    """
    f = np.asarray(f, dtype=float)
    if variances is None:
        variances = np.diag(covariance_full(f, omega).sigma_full)
    sd = np.sqrt(np.asarray(variances, dtype=float))
    return f * sd[:, None] / sd[None, :], np.asarray(omega) / sd**2


# -- indeterminacy transforms -------------------------------------------------


def rescale_latents(f: np.ndarray, omega: np.ndarray, lam, num_latent: int):
    """Scale each latent by ``lam``; the observed covariance is unchanged."""
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (num_latent,):
        raise ValueError(f"expected {num_latent} scale factors")
    if np.any(lam == 0):
        raise ValueError("latent scale factors must be nonzero")
    s = np.ones(f.shape[0])
    s[:num_latent] = lam
    return f * s[None, :] / s[:, None], np.asarray(omega, dtype=float) * s**2


def group_sign_flip(f: np.ndarray, latents, num_latent: int) -> np.ndarray:
    latents = list(latents)
    if any(not 0 <= v < num_latent for v in latents):
        raise ValueError("only latent nodes can be sign-flipped")
    s = np.ones(f.shape[0])
    s[latents] = -1.0
    return f * s[:, None] * s[None, :]


def orthogonal_transform(f: np.ndarray, omega: np.ndarray, q: np.ndarray, num_latent: int, tol: float = 1e-10):
    """Rotate the latent coordinates by ``q``.

    The observed covariance is preserved when ``q`` commutes with the latent
    noise covariance, e.g. unit noise on every latent that ``q`` mixes.
    """
    m = num_latent
    q = np.asarray(q, dtype=float)
    if q.shape != (m, m):
        raise ValueError(f"rotation must be {m}x{m}")
    if np.max(np.abs(q.T @ q - np.eye(m)), initial=0.0) > tol:
        raise ValueError("q is not orthogonal")
    omega = np.asarray(omega, dtype=float)
    om_l = np.diag(omega[:m])
    if np.max(np.abs(q @ om_l @ q.T - om_l), initial=0.0) > tol:
        raise ValueError("q mixes latents with different noise variances")
    u = np.eye(f.shape[0])
    u[:m, :m] = q
    return u.T @ f @ u, omega.copy()


# -- I/O ------------------------------------------------------------------------


def write_covariance_csv(path, names, sigma: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in sigma:
            w.writerow([repr(float(x)) for x in row])


def read_covariance_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty covariance file")
    names = rows[0]
    try:
        sigma = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric entry ({exc})") from None
    if sigma.shape != (len(names), len(names)):
        raise ValueError(f"{path}: expected a {len(names)}x{len(names)} matrix, got {sigma.shape}")
    if not np.allclose(sigma, sigma.T, atol=1e-10):
        raise ValueError(f"{path}: covariance is not symmetric")
    return names, sigma
