"""DAG over latent and observed variables.

Nodes are integers. Indices ``0..m-1`` are latent and ``m..m+n-1`` are
observed, so the coefficient matrix keeps its latent/observed block layout
without a lookup table. Names are carried only for display and I/O.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from itertools import chain
from typing import Iterable, Sequence


class GraphError(ValueError):
    """Raised for malformed graphs or invalid node references."""


@dataclass(frozen=True)
class Trek:
    """A pair of directed paths that share their first node (the top).

    ``path_up`` runs from the top down to the first endpoint and
    ``path_down`` from the top down to the second endpoint.
    """

    path_up: tuple[int, ...]
    path_down: tuple[int, ...]

    @property
    def top(self) -> int:
        return self.path_up[0]

    def edges(self) -> list[tuple[int, int]]:
        return list(zip(self.path_up, self.path_up[1:])) + list(
            zip(self.path_down, self.path_down[1:])
        )

    def is_simple(self) -> bool:
        return set(self.path_up) & set(self.path_down) == {self.top}


@dataclass(frozen=True)
class PolcmGraph:
    num_latent: int
    num_observed: int
    edges: frozenset[tuple[int, int]]
    names: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        d = self.num_latent + self.num_observed
        if self.num_latent < 0 or self.num_observed < 0:
            raise GraphError("node counts must be non-negative")
        edges = frozenset((int(a), int(b)) for a, b in self.edges)
        for a, b in edges:
            if not (0 <= a < d and 0 <= b < d):
                raise GraphError(f"edge ({a}, {b}) references a node outside [0, {d})")
            if a == b:
                raise GraphError(f"self-loop on node {a}")
        object.__setattr__(self, "edges", edges)
        if not self.names:
            object.__setattr__(self, "names", default_names(self.num_latent, self.num_observed))
        elif len(self.names) != d:
            raise GraphError(f"expected {d} names, got {len(self.names)}")
        else:
            object.__setattr__(self, "names", tuple(self.names))
        # raises on cycles
        self.topological_order

    @classmethod
    def from_names(cls, latent: Sequence[str], observed: Sequence[str], edges: Iterable[tuple[str, str]]):
        names = list(latent) + list(observed)
        index = {nm: i for i, nm in enumerate(names)}
        try:
            idx_edges = frozenset((index[a], index[b]) for a, b in edges)
        except KeyError as exc:
            raise GraphError(f"unknown node name {exc.args[0]!r}") from None
        return cls(len(latent), len(observed), idx_edges, tuple(names))

    @property
    def num_nodes(self) -> int:
        return self.num_latent + self.num_observed

    @property
    def latent(self) -> range:
        return range(self.num_latent)

    @property
    def observed(self) -> range:
        return range(self.num_latent, self.num_nodes)

    def is_latent(self, v: int) -> bool:
        return 0 <= v < self.num_latent

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise GraphError(f"unknown node name {name!r}") from None

    def nodes(self, *names: str) -> frozenset[int]:
        return frozenset(self.index(nm) for nm in names)

    def check_node(self, v: int) -> int:
        if not isinstance(v, (int,)) or not 0 <= v < self.num_nodes:
            raise GraphError(f"invalid node id {v!r}")
        return v

    @cached_property
    def _parents(self) -> tuple[frozenset[int], ...]:
        pa: list[set[int]] = [set() for _ in range(self.num_nodes)]
        for a, b in self.edges:
            pa[b].add(a)
        return tuple(frozenset(p) for p in pa)

    @cached_property
    def _children(self) -> tuple[frozenset[int], ...]:
        ch: list[set[int]] = [set() for _ in range(self.num_nodes)]
        for a, b in self.edges:
            ch[a].add(b)
        return tuple(frozenset(c) for c in ch)

    def parents(self, v: int) -> frozenset[int]:
        return self._parents[self.check_node(v)]

    def children(self, v: int) -> frozenset[int]:
        return self._children[self.check_node(v)]

    def adjacent(self, u: int, v: int) -> bool:
        return (u, v) in self.edges or (v, u) in self.edges

    @cached_property
    def topological_order(self) -> tuple[int, ...]:
        """Kahn's algorithm, always taking the smallest ready index."""
        import heapq

        indeg = [len(p) for p in self._parents]
        ready = [v for v in range(self.num_nodes) if indeg[v] == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            v = heapq.heappop(ready)
            order.append(v)
            for c in self._children[v]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    heapq.heappush(ready, c)
        if len(order) != self.num_nodes:
            raise GraphError("edge relation contains a cycle")
        return tuple(order)

    @cached_property
    def _descendants(self) -> tuple[frozenset[int], ...]:
        desc: list[frozenset[int]] = [frozenset()] * self.num_nodes
        for v in reversed(self.topological_order):
            acc = set(self._children[v])
            for c in self._children[v]:
                acc |= desc[c]
            desc[v] = frozenset(acc)
        return tuple(desc)

    def descendants(self, v: int) -> frozenset[int]:
        """Strict descendants of ``v``."""
        return self._descendants[self.check_node(v)]

    def ancestors(self, nodes: Iterable[int]) -> frozenset[int]:
        """Ancestors of ``nodes``, including the nodes themselves."""
        stack = list(nodes)
        seen = set(stack)
        while stack:
            v = stack.pop()
            for p in self._parents[v]:
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return frozenset(seen)

    def with_edges(self, add=(), remove=()) -> "PolcmGraph":
        edges = (set(self.edges) | set(add)) - set(remove)
        return PolcmGraph(self.num_latent, self.num_observed, frozenset(edges), self.names)

    def drop_nodes(self, drop: Iterable[int]) -> "PolcmGraph":
        """Remove nodes (and incident edges), reindexing the survivors."""
        drop = set(drop)
        keep = [v for v in range(self.num_nodes) if v not in drop]
        new_index = {v: i for i, v in enumerate(keep)}
        edges = frozenset(
            (new_index[a], new_index[b]) for a, b in self.edges if a in new_index and b in new_index
        )
        m = sum(1 for v in keep if self.is_latent(v))
        return PolcmGraph(m, len(keep) - m, edges, tuple(self.names[v] for v in keep))

    def label(self, nodes: Iterable[int]) -> list[str]:
        return [self.names[v] for v in sorted(nodes)]

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "num_latent": self.num_latent,
            "num_observed": self.num_observed,
            "names": list(self.names),
            "edges": sorted([a, b] for a, b in self.edges),
        }


def default_names(m: int, n: int) -> tuple[str, ...]:
    return tuple(chain((f"L{i + 1}" for i in range(m)), (f"X{i + 1}" for i in range(m, m + n))))


def graph_from_dict(data: dict) -> PolcmGraph:
    try:
        m = int(data["num_latent"])
        n = int(data["num_observed"])
        edges = frozenset((int(a), int(b)) for a, b in data["edges"])
    except (KeyError, TypeError, ValueError) as exc:
        raise GraphError(f"malformed graph description: {exc}") from None
    names = tuple(data.get("names") or ())
    return PolcmGraph(m, n, edges, names)


def load_graph(path) -> tuple[PolcmGraph, dict | None]:
    """Read a graph JSON file; returns the graph and optional coefficients.

    Coefficients, when present, come back as ``{(parent, child): value}``.
    """
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise GraphError(f"{path}: invalid JSON ({exc})") from None
    g = graph_from_dict(data)
    coefs = None
    if data.get("coefficients") is not None:
        coefs = {(int(i), int(j)): float(v) for i, j, v in data["coefficients"]}
        missing = set(coefs) - g.edges
        if missing:
            raise GraphError(f"coefficients given for non-edges {sorted(missing)}")
    return g, coefs


def parents(g: PolcmGraph, v: int) -> frozenset[int]:
    return g.parents(v)


def neighbours(g: PolcmGraph, cover: Iterable[int]) -> frozenset[int]:
    """Nodes adjacent (as parent or child) to some member of ``cover``."""
    cover = frozenset(cover)
    out: set[int] = set()
    for v in cover:
        out |= g.parents(v) | g.children(v)
    return frozenset(out - cover)


def pure_children(g: PolcmGraph, cover: Iterable[int]) -> frozenset[int]:
    """Nodes outside ``cover`` whose parent set is exactly ``cover``."""
    cover = frozenset(cover)
    for v in cover:
        g.check_node(v)
    if not cover:
        return frozenset()
    candidates = set.intersection(*(set(g.children(v)) for v in cover))
    return frozenset(c for c in candidates - cover if g.parents(c) == cover)


def loose_pure_children(g: PolcmGraph, cover: Iterable[int]) -> frozenset[int]:
    """Set-level pure children: every parent lies in ``cover`` and the
    children's parents jointly cover all of it.

    Returns the empty set when the union of parents falls short of ``cover``.
    """
    cover = frozenset(cover)
    kids = set()
    for v in cover:
        kids |= g.children(v)
    kids = {c for c in kids - cover if g.parents(c) <= cover}
    union = frozenset().union(*(g.parents(c) for c in kids)) if kids else frozenset()
    return frozenset(kids) if union == cover else frozenset()


def topological_order(g: PolcmGraph) -> tuple[int, ...]:
    return g.topological_order


def d_separated(g: PolcmGraph, a: Iterable[int], b: Iterable[int], z: Iterable[int]) -> bool:
    """Reachability ("Bayes ball") test of ``a`` ⊥ ``b`` | ``z``."""
    a, b, z = frozenset(a), frozenset(b), frozenset(z)
    if a & b or a & z or b & z:
        raise GraphError("d-separation query sets must be disjoint")
    for v in a | b | z:
        g.check_node(v)
    if not a or not b:
        return True
    anc_z = g.ancestors(z)
    # states: (node, arrived_from_child) ; from_child=True means travelling "up"
    stack = [(v, True) for v in a]
    visited: set[tuple[int, bool]] = set()
    while stack:
        v, up = stack.pop()
        if (v, up) in visited:
            continue
        visited.add((v, up))
        if v not in z and v in b:
            return False
        if up and v not in z:
            stack.extend((p, True) for p in g._parents[v])
            stack.extend((c, False) for c in g._children[v])
        elif not up:
            if v not in z:
                stack.extend((c, False) for c in g._children[v])
            if v in anc_z:
                stack.extend((p, True) for p in g._parents[v])
    return True


def directed_paths(g: PolcmGraph, source: int, sink: int, avoid: frozenset[int] = frozenset()):
    """All directed paths from ``source`` to ``sink`` that skip ``avoid``."""
    if source in avoid:
        return
    if source == sink:
        yield (source,)
        return
    desc = g._descendants
    stack = [(source, (source,))]
    while stack:
        v, path = stack.pop()
        for c in sorted(g._children[v], reverse=True):
            if c in avoid or c in path:
                continue
            if c == sink:
                yield path + (c,)
            elif sink in desc[c]:
                stack.append((c, path + (c,)))


def enumerate_simple_treks(g: PolcmGraph, i: int, j: int) -> list[Trek]:
    """Simple treks between ``i`` and ``j``, sorted by their node sequences.

    For ``i == j`` only the trivial trek survives: two distinct paths into
    the same sink always meet below the top.
    """
    g.check_node(i)
    g.check_node(j)
    tops = g.ancestors([i]) & g.ancestors([j])
    out = []
    for t in tops:
        for up in directed_paths(g, t, i):
            used = frozenset(up[1:])
            for down in directed_paths(g, t, j, avoid=used):
                out.append(Trek(up, down))
    out.sort(key=lambda tr: (tr.path_up, tr.path_down))
    return out
