"""Shared test helpers."""

import numpy as np
from hypothesis import strategies as st

from polcm import fixtures
from polcm.covariance import covariance_full, standardize_model, support_mask
from polcm.graph import PolcmGraph
from polcm.simulator import SimConfig, random_polcm


def random_dag(rng: np.random.Generator, max_nodes: int = 10, density: float = 0.35, min_nodes: int = 2) -> PolcmGraph:
    """Random DAG with a shuffled node order so latents are not always roots."""
    d = int(rng.integers(min_nodes, max_nodes + 1))
    m = int(rng.integers(0, d // 2 + 1))
    order = rng.permutation(d)
    edges = frozenset(
        (int(order[a]), int(order[b])) for a in range(d) for b in range(a + 1, d) if rng.random() < density
    )
    return PolcmGraph(m, d - m, edges)


@st.composite
def dags(draw, max_nodes=8):
    seed = draw(st.integers(0, 2**32 - 1))
    return random_dag(np.random.default_rng(seed), max_nodes=max_nodes)


def random_weights(g: PolcmGraph, rng: np.random.Generator, scale: float = 1.0):
    f = np.zeros((g.num_nodes, g.num_nodes))
    mask = support_mask(g)
    f[mask] = rng.uniform(-scale, scale, size=mask.sum())
    return f


def population(name_or_graph, seed: int = 1):
    """Graph, standardized truth and its observed covariance."""
    g = fixtures.load(name_or_graph) if isinstance(name_or_graph, str) else name_or_graph
    f, om = random_polcm(g, SimConfig(seed=seed))
    fs, oms = standardize_model(f, om)
    return g, fs, oms, covariance_full(fs, oms, g.num_latent).sigma_X
