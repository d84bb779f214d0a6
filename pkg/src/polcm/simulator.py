"""Random models and ancestral sampling."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, replace

import numpy as np

from .covariance import support_mask
from .graph import PolcmGraph


class NoiseKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"


class DegenerateColumn(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    coeff_range: tuple[float, float] = (-2.0, 2.0)
    noise_var_range: tuple[float, float] = (1.0, 5.0)
    noise_kind: NoiseKind = NoiseKind.GAUSSIAN
    lrelu_alpha: float | None = None  # None means linear
    sample_size: int = 10000
    seed: int = 0
    min_abs_coeff: float = 0.0

    def __post_init__(self):
        lo, hi = self.coeff_range
        if lo > hi:
            raise ValueError("coeff_range must be ordered")
        lo, hi = self.noise_var_range
        if not 0 < lo <= hi:
            raise ValueError("noise_var_range must be positive and ordered")
        if self.lrelu_alpha is not None and not 0 < self.lrelu_alpha <= 1:
            raise ValueError("lrelu_alpha must lie in (0, 1]")
        if self.sample_size < 2:
            raise ValueError("sample_size must be at least 2")
        object.__setattr__(self, "noise_kind", NoiseKind(self.noise_kind))

    def with_(self, **kw) -> "SimConfig":
        return replace(self, **kw)


@dataclass
class Dataset:
    samples: np.ndarray  # K x n, observed columns only
    names: tuple[str, ...]
    standardized: bool = False
    latent_samples: np.ndarray | None = None

    @property
    def k(self) -> int:
        return self.samples.shape[0]


def _streams(seed: int, d: int):
    """One generator for parameters plus one per node for noise."""
    root = np.random.SeedSequence(seed)
    param_seq, noise_seq = root.spawn(2)
    return np.random.default_rng(param_seq), [np.random.default_rng(s) for s in noise_seq.spawn(d)]


def random_polcm(g: PolcmGraph, cfg: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    """Draw coefficients on the support and noise variances, both uniform."""
    rng, _ = _streams(cfg.seed, g.num_nodes)
    d = g.num_nodes
    lo, hi = cfg.coeff_range
    f = np.zeros((d, d))
    for a, b in sorted(g.edges):
        v = rng.uniform(lo, hi)
        if cfg.min_abs_coeff > 0:
            if max(abs(lo), abs(hi)) < cfg.min_abs_coeff:
                raise ValueError("min_abs_coeff is unreachable for coeff_range")
            while abs(v) < cfg.min_abs_coeff:
                v = rng.uniform(lo, hi)
        f[a, b] = v
    omega = rng.uniform(*cfg.noise_var_range, size=d)
    return f, omega


def _noise(rng: np.random.Generator, kind: NoiseKind, var: float, k: int) -> np.ndarray:
    if kind is NoiseKind.GAUSSIAN:
        return rng.normal(0.0, np.sqrt(var), size=k)
    half = np.sqrt(3.0 * var)
    return rng.uniform(-half, half, size=k)


def simulate(g: PolcmGraph, f: np.ndarray, omega: np.ndarray, cfg: SimConfig, keep_latent: bool = False) -> Dataset:
    """Ancestral sampling, optionally through a leaky ReLU at every node."""
    d, k = g.num_nodes, cfg.sample_size
    _, noise_rngs = _streams(cfg.seed, d)
    mask = support_mask(g)
    values = np.zeros((k, d))
    alpha = cfg.lrelu_alpha
    for v in g.topological_order:
        pa = np.flatnonzero(mask[:, v])
        x = values[:, pa] @ f[pa, v] + _noise(noise_rngs[v], cfg.noise_kind, omega[v], k)
        if alpha is not None and alpha != 1:
            x = np.maximum(alpha * x, x)
        values[:, v] = x
    m = g.num_latent
    return Dataset(
        samples=values[:, m:].copy(),
        names=tuple(g.names[m:]),
        latent_samples=values[:, :m].copy() if keep_latent else None,
    )


def sample_covariance(d: Dataset | np.ndarray) -> np.ndarray:
    x = d.samples if isinstance(d, Dataset) else np.asarray(d, dtype=float)
    if x.shape[0] < 2:
        raise ValueError("need at least two samples")
    xc = x - x.mean(axis=0)
    s = xc.T @ xc / x.shape[0]
    return (s + s.T) / 2


def standardize(d: Dataset) -> Dataset:
    x = d.samples
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    const = np.flatnonzero(sd <= 1e-12 * np.maximum(1.0, np.abs(mu)))
    if const.size:
        raise DegenerateColumn(f"constant column(s): {[d.names[i] for i in const]}")
    return replace(d, samples=(x - mu) / sd, standardized=True)


def write_dataset_csv(path, d: Dataset) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(d.names)
        w.writerows([repr(float(v)) for v in row] for row in d.samples)


def read_dataset_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path}: no data rows")
    names = tuple(rows[0])
    try:
        x = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric entry ({exc})") from None
    if x.ndim != 2 or x.shape[1] != len(names):
        raise ValueError(f"{path}: ragged rows")
    return Dataset(x, names)
