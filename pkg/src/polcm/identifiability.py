"""Graphical identifiability checks.

Atomic covers are found by exhaustive search with a fixed-point iteration,
since a cover's witnesses may themselves be atomic covers. The condition
checkers then decide whether the structure, and in turn the edge
coefficients, are identifiable.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable

import numpy as np

from .graph import (
    PolcmGraph,
    d_separated,
    loose_pure_children,
    neighbours,
    pure_children,
)

logger = logging.getLogger(__name__)

Cover = frozenset  # frozenset[int]


@dataclass(frozen=True)
class AtomicCoverCertificate:
    cover: frozenset[int]
    latent_count: int
    witness_children: tuple[frozenset[int], ...] = ()
    witness_neighbours: tuple[frozenset[int], ...] = ()

    def to_dict(self, g: PolcmGraph) -> dict:
        return {
            "cover": g.label(self.cover),
            "latent_count": self.latent_count,
            "witness_children": [g.label(c) for c in self.witness_children],
            "witness_neighbours": [g.label(c) for c in self.witness_neighbours],
        }


class Verdict(str, enum.Enum):
    FULLY_IDENTIFIABLE = "FullyIdentifiable"
    UP_TO_ORTHOGONAL = "IdentifiableUpToOrthogonal"
    NOT_STRUCTURE_IDENTIFIABLE = "NotStructureIdentifiable"
    UNKNOWN = "Unknown"


@dataclass
class CheckResult:
    """Outcome of one condition. ``passed`` is None when a search cap
    prevented a decision."""

    passed: bool | None
    details: dict = field(default_factory=dict)

    def __bool__(self):
        return bool(self.passed)


@dataclass
class IdentReport:
    atomic_covers: list[AtomicCoverCertificate]
    cond_basic: CheckResult
    cond_colliders: CheckResult
    thm3_i: CheckResult
    thm3_ii: CheckResult
    cor5_pairwise_distinct: CheckResult
    orth_indeterminacy: list[frozenset[int]]
    verdict: Verdict
    max_cover_size: int
    max_sep_size: int

    def to_dict(self, g: PolcmGraph) -> dict:
        def check(c: CheckResult):
            return {"passed": c.passed, **c.details}

        return {
            "verdict": self.verdict.value,
            "max_cover_size": self.max_cover_size,
            "max_sep_size": self.max_sep_size,
            "atomic_covers": [c.to_dict(g) for c in self.atomic_covers],
            "cond_basic": check(self.cond_basic),
            "cond_colliders": check(self.cond_colliders),
            "thm3_i": check(self.thm3_i),
            "thm3_ii": check(self.thm3_ii),
            "cor5_pairwise_distinct": check(self.cor5_pairwise_distinct),
            "orth_indeterminacy": [g.label(s) for s in self.orth_indeterminacy],
        }


def _sort_key(s: Iterable[int]):
    s = sorted(s)
    return (len(s), s)


# -- atomic covers -----------------------------------------------------------


def _certify(g: PolcmGraph, cover: frozenset[int], known: set[frozenset[int]]):
    l = sum(1 for v in cover if g.is_latent(v))
    pch = pure_children(g, cover)
    if len(pch) < l + 1:
        return None
    child_covers = sorted((c for c in known if c <= pch), key=_sort_key)
    best = None
    # a minimal witness never needs more than l+1 covers
    for k in range(1, min(l + 1, len(child_covers)) + 1):
        for combo in combinations(child_covers, k):
            union = frozenset().union(*combo)
            if len(union) < l + 1:
                continue
            key = (len(union), sorted(union), k)
            if best is None or key < best[0]:
                best = (key, combo, union)
    if best is None:
        return None
    _, combo, union = best
    spare = sorted(neighbours(g, cover) - union)
    if len(spare) < l + 1:
        return None
    members = sorted(cover)
    first, rest = members[0], members[1:]
    for k in range(0, len(rest)):
        for extra in combinations(rest, k):
            part = frozenset((first,) + extra)
            if part in known and (cover - part) in known:
                return None
    return AtomicCoverCertificate(
        cover=cover,
        latent_count=l,
        witness_children=tuple(combo),
        witness_neighbours=tuple(frozenset([v]) for v in spare),
    )


def find_atomic_covers(g: PolcmGraph, max_cover_size: int = 4, max_rounds: int = 50) -> list[AtomicCoverCertificate]:
    """All atomic covers of at most ``max_cover_size`` nodes.

    Only parent sets of some node can have pure children, so those are the
    candidates; sets made only of observed nodes are left out (their single
    observed members are already atomic). The partition clause is checked
    against the covers accepted in the previous round.
    """
    if max_cover_size < 1:
        raise ValueError("max_cover_size must be >= 1")
    base = {frozenset([v]): AtomicCoverCertificate(frozenset([v]), 0) for v in g.observed}
    candidates = {
        g.parents(v)
        for v in range(g.num_nodes)
        if 0 < len(g.parents(v)) <= max_cover_size and any(g.is_latent(p) for p in g.parents(v))
    }
    candidates = sorted(candidates, key=_sort_key)
    known = set(base)
    certs: dict[frozenset[int], AtomicCoverCertificate] = {}
    for _ in range(max_rounds):
        certs = {}
        for cand in candidates:
            cert = _certify(g, cand, known)
            if cert is not None:
                certs[cand] = cert
        new_known = set(base) | set(certs)
        if new_known == known:
            break
        known = new_known
    else:
        logger.warning("atomic cover search did not reach a fixed point in %d rounds", max_rounds)
    out = list(base.values()) + list(certs.values())
    out.sort(key=lambda c: _sort_key(c.cover))
    return out


def verify_certificate(g: PolcmGraph, cert: AtomicCoverCertificate, covers: Iterable[frozenset[int]]) -> bool:
    """Re-check a certificate against the cover definition from scratch."""
    covers = set(covers)
    v = cert.cover
    if len(v) == 1 and not g.is_latent(next(iter(v))):
        return True
    l = sum(1 for x in v if g.is_latent(x))
    if l != cert.latent_count:
        return False
    pch = pure_children(g, v)
    cu = frozenset().union(*cert.witness_children) if cert.witness_children else frozenset()
    nu = frozenset().union(*cert.witness_neighbours) if cert.witness_neighbours else frozenset()
    if len(cu) < l + 1 or not cu <= pch or any(c not in covers for c in cert.witness_children):
        return False
    if len(nu) < l + 1 or not nu <= neighbours(g, v) or nu & cu:
        return False
    members = sorted(v)
    for k in range(1, len(members)):
        for part in combinations(members, k):
            part = frozenset(part)
            if part in covers and (v - part) in covers:
                return False
    return True


# -- separators ---------------------------------------------------------------


def minimal_separators(g: PolcmGraph, a: frozenset[int], b: frozenset[int], max_size: int, candidates=None):
    """Minimal d-separators of ``a`` and ``b`` with at most ``max_size`` nodes.

    Enumerates by increasing size, so minimality only needs a subset test
    against separators already found.
    """
    if candidates is None:
        candidates = [v for v in range(g.num_nodes) if v not in a and v not in b]
    candidates = sorted(candidates)
    found: list[frozenset[int]] = []
    for k in range(0, min(max_size, len(candidates)) + 1):
        for t in combinations(candidates, k):
            t = frozenset(t)
            if any(f <= t for f in found):
                continue
            if d_separated(g, a, b, t):
                found.append(t)
    return found


def separable_within(g: PolcmGraph, a: frozenset[int], b: frozenset[int], allowed: Iterable[int]):
    """Return a separator drawn from ``allowed`` if one exists, else None.

    If any subset of ``allowed`` separates ``a`` from ``b`` then so does the
    part of ``allowed`` that lies among the ancestors of ``a ∪ b``.
    """
    z = (g.ancestors(a | b) & frozenset(allowed)) - a - b
    return z if d_separated(g, a, b, z) else None


# -- conditions ---------------------------------------------------------------


def check_condition_basic(g: PolcmGraph, covers: list[AtomicCoverCertificate]) -> CheckResult:
    covered = set()
    for c in covers:
        covered |= {v for v in c.cover if g.is_latent(v)}
    uncovered = [v for v in g.latent if v not in covered]
    violations = []
    for c in covers:
        if c.latent_count == 0:
            continue
        kids = set()
        for v in c.cover:
            kids |= g.children(v)
        kids -= c.cover
        nbs = neighbours(g, c.cover)
        for ch in sorted(kids):
            for nb in sorted(nbs):
                if ch != nb and g.adjacent(ch, nb):
                    violations.append((c.cover, ch, nb))
    details = {
        "uncovered_latents": g.label(uncovered),
        "child_neighbour_adjacency": [
            {"cover": g.label(cv), "child": g.names[ch], "neighbour": g.names[nb]} for cv, ch, nb in violations
        ],
    }
    return CheckResult(not uncovered and not violations, details)


def common_colliders(g: PolcmGraph, v1: frozenset[int], v2: frozenset[int]) -> frozenset[int]:
    return frozenset(
        c
        for c in range(g.num_nodes)
        if c not in v1 and c not in v2 and g.parents(c) & v1 and g.parents(c) & v2
    )


def check_condition_colliders(g: PolcmGraph, covers: list[AtomicCoverCertificate], max_sep_size: int = 5) -> CheckResult:
    """Cardinality condition on pairs of atomic covers with common children.

    The collider set of a pair is taken to be all of their common children;
    every minimal separator of the pair must satisfy the inequality.
    """
    failures = []
    checked = []
    undecided = []
    sets = [c.cover for c in covers]
    for v1, v2 in combinations(sets, 2):
        if v1 & v2:
            continue
        col = common_colliders(g, v1, v2)
        if not col:
            continue
        need = len(v1) + len(v2) - len(col)
        seps = minimal_separators(g, v1, v2, max_sep_size)
        for t in seps:
            has_latent = any(g.is_latent(x) for x in col | v1 | v2 | t)
            ok = not has_latent or len(t) >= need
            entry = {"V": g.label(col), "V1": g.label(v1), "V2": g.label(v2), "T": g.label(t), "holds": ok}
            checked.append(entry)
            if not ok:
                failures.append(entry)
        # a separator larger than the cap already satisfies the inequality
        # unless the cap sits below the bound
        if need - 1 > max_sep_size and not failures:
            undecided.append({"V1": g.label(v1), "V2": g.label(v2)})
    passed: bool | None = not failures
    if passed and undecided:
        passed = None
    return CheckResult(passed, {"failures": failures, "checked": checked, "undecided": undecided})


def check_theorem3(g: PolcmGraph, covers: list[AtomicCoverCertificate], max_sep_size: int = 5):
    """Return ``(thm3_i, thm3_ii)`` check results."""
    multi = [c.cover for c in covers if c.latent_count > 1]
    res_i = CheckResult(not multi, {"offending_covers": [g.label(c) for c in multi]})
    witnesses = []
    offending = []
    for c in covers:
        if c.latent_count != 1 or len(c.cover) < 2:
            continue
        lat = frozenset(v for v in c.cover if g.is_latent(v))
        obs = c.cover - lat
        allowed = [v for v in g.observed if v not in obs]
        z = separable_within(g, obs, lat, allowed)
        if z is None:
            offending.append(c.cover)
            continue
        best = z
        for k in range(0, min(max_sep_size, len(z)) + 1):
            hit = next(
                (frozenset(t) for t in combinations(sorted(z), k) if d_separated(g, obs, lat, frozenset(t))),
                None,
            )
            if hit is not None:
                best = hit
                break
        witnesses.append({"cover": g.label(c.cover), "separator": g.label(best)})
    res_ii = CheckResult(not offending, {"witnesses": witnesses, "offending_covers": [g.label(c) for c in offending]})
    return res_i, res_ii


def detect_orthogonal_indeterminacy(g: PolcmGraph) -> list[frozenset[int]]:
    """Maximal groups of two or more latents with identical parents and children."""
    groups: dict[tuple, list[int]] = {}
    for v in g.latent:
        if not g.children(v):
            continue
        key = (g.parents(v), g.children(v))
        groups.setdefault(key, []).append(v)
    out = [frozenset(vs) for vs in groups.values() if len(vs) >= 2]
    return sorted(out, key=_sort_key)


def check_pairwise_distinct(g: PolcmGraph) -> CheckResult:
    bad = []
    for a, b in combinations(g.latent, 2):
        if g.parents(a) == g.parents(b) and g.children(a) == g.children(b):
            bad.append(g.label([a, b]))
    return CheckResult(not bad, {"offending_pairs": bad})


def check_identifiability(g: PolcmGraph, max_cover_size: int = 4, max_sep_size: int = 5) -> IdentReport:
    covers = find_atomic_covers(g, max_cover_size)
    basic = check_condition_basic(g, covers)
    coll = check_condition_colliders(g, covers, max_sep_size)
    t_i, t_ii = check_theorem3(g, covers, max_sep_size)
    distinct = check_pairwise_distinct(g)
    orth = detect_orthogonal_indeterminacy(g)

    if orth or not t_i:
        verdict = Verdict.UP_TO_ORTHOGONAL
    elif basic.passed is False or coll.passed is False:
        verdict = Verdict.NOT_STRUCTURE_IDENTIFIABLE
    elif basic.passed and coll.passed and t_i.passed and t_ii.passed:
        verdict = Verdict.FULLY_IDENTIFIABLE
    else:
        verdict = Verdict.UNKNOWN
    return IdentReport(
        atomic_covers=covers,
        cond_basic=basic,
        cond_colliders=coll,
        thm3_i=t_i,
        thm3_ii=t_ii,
        cor5_pairwise_distinct=distinct,
        orth_indeterminacy=orth,
        verdict=verdict,
        max_cover_size=max_cover_size,
        max_sep_size=max_sep_size,
    )


# -- graph operators ----------------------------------------------------------


def _creates_cycle(g: PolcmGraph, parent: int, child: int) -> bool:
    return parent == child or parent in g.descendants(child)


def apply_skeleton_operator(g: PolcmGraph, max_cover_size: int = 4) -> PolcmGraph:
    """Connect every latent cover member to every pure child of its cover.

    Pure children are taken at the set level (each child's parents lie in the
    cover and jointly span it). Repeats until no edge is added.
    """
    while True:
        added = set()
        for cert in find_atomic_covers(g, max_cover_size):
            if cert.latent_count == 0:
                continue
            for c in sorted(loose_pure_children(g, cert.cover)):
                for v in sorted(cert.cover):
                    if g.is_latent(v) and not g.adjacent(v, c) and not _creates_cycle(g, v, c):
                        added.add((v, c))
        if not added:
            return g
        g = g.with_edges(add=added)


def _mergeable(g: PolcmGraph, lc: frozenset[int], pc: frozenset[int], known: set[frozenset[int]]) -> bool:
    if lc == pc or lc & pc or len(lc) != len(pc):
        return False
    if not all(g.is_latent(v) for v in lc | pc):
        return False
    if not all(g.parents(v) == pc for v in lc):
        return False
    if pure_children(g, lc) in known:
        return True
    siblings = frozenset().union(*(g.children(p) for p in pc)) - lc
    return siblings in known


def apply_minimal_graph_operator(g: PolcmGraph, max_cover_size: int = 4) -> PolcmGraph:
    """Merge latent covers into a latent parent cover of the same size.

    The merged cover's children are re-parented to the parent cover and its
    nodes are removed. Applied until no pair qualifies.
    """
    while True:
        covers = [c.cover for c in find_atomic_covers(g, max_cover_size)]
        known = set(covers)
        pair = next(
            ((lc, pc) for lc in covers for pc in covers if _mergeable(g, lc, pc, known)),
            None,
        )
        if pair is None:
            return g
        lc, pc = pair
        kids = frozenset().union(*(g.children(v) for v in lc)) - lc
        add = {(p, c) for p in pc for c in kids}
        g = g.with_edges(add=add).drop_nodes(lc)


# -- algebraic identification -------------------------------------------------


class NumericalDegeneracyError(ArithmeticError):
    pass


@dataclass
class AlgebraicResult:
    coefficients: dict[tuple[int, int], float]
    unresolved: frozenset[tuple[int, int]]
    covariance: np.ndarray  # full covariance, NaN where not recovered

    def as_matrix(self, d: int) -> np.ndarray:
        f = np.zeros((d, d))
        for (i, j), v in self.coefficients.items():
            f[i, j] = v
        return f


def latent_pair_coefficient(sigma: np.ndarray, c1: int, c2: int, n: int) -> float:
    """Edge from a latent into its pure child ``c1``, given a second pure
    child ``c2`` and a borrowed variable ``n`` (positive root)."""
    return float(np.sqrt(sigma[c1, c2] * sigma[c1, n] / sigma[c2, n]))


def algebraic_identify(g: PolcmGraph, sigma_x: np.ndarray, tol: float = 1e-10) -> AlgebraicResult:
    """Closed-form recovery for single-node covers (observed or latent).

    ``sigma_x`` is the observed covariance; it is rescaled to unit variances.
    Latents with two recovered pure children and a borrowed variable are
    solved first and then treated as observed, bottom-up; every node whose
    parents are all recovered is solved by regression. Edges that need
    covers with both latent and observed members stay unresolved.
    """
    d, m = g.num_nodes, g.num_latent
    sigma_x = np.asarray(sigma_x, dtype=float)
    if sigma_x.shape != (g.num_observed, g.num_observed):
        raise ValueError(f"expected a {g.num_observed}x{g.num_observed} covariance")
    sd = np.sqrt(np.diag(sigma_x))
    corr = sigma_x / np.outer(sd, sd)
    cov = np.full((d, d), np.nan)
    cov[m:, m:] = corr
    known = set(g.observed)
    coef: dict[tuple[int, int], float] = {}

    def expose(latent: int, anchors: dict[int, float]):
        cov[latent, latent] = 1.0
        for a in sorted(known):
            for c, fc in anchors.items():
                if a != c and a not in g.descendants(c) and abs(fc) > tol and not np.isnan(cov[a, c]):
                    cov[latent, a] = cov[a, latent] = cov[a, c] / fc
                    break
        known.add(latent)

    progress = True
    while progress:
        progress = False
        for lat in g.latent:
            if lat in known:
                continue
            kids = sorted(c for c in pure_children(g, {lat}) if c in known)
            if len(kids) < 2:
                continue
            triple = None
            first_bad = None
            for c1, c2 in combinations(kids, 2):
                for n in sorted(known):
                    if n in (c1, c2) or n in g.descendants(c1) or n in g.descendants(c2):
                        continue
                    vals = (cov[c1, c2], cov[c1, n], cov[c2, n])
                    if any(np.isnan(v) for v in vals):
                        continue
                    if min(abs(v) for v in vals) <= tol or vals[0] * vals[1] / vals[2] <= 0:
                        first_bad = first_bad or (c1, c2, n)
                        continue
                    triple = (c1, c2, n)
                    break
                if triple:
                    break
            if triple is None:
                if first_bad is not None:
                    raise NumericalDegeneracyError(
                        "near-zero covariance in every candidate triple for "
                        f"{g.names[lat]}, e.g. {g.label(first_bad)}"
                    )
                continue
            c1, c2, n = triple
            f1 = latent_pair_coefficient(cov, c1, c2, n)
            anchors = {c1: f1}
            coef[(lat, c1)] = f1
            for ck in kids:
                if ck != c1:
                    anchors[ck] = coef[(lat, ck)] = float(cov[c1, ck] / f1)
            expose(lat, anchors)
            progress = True
        for v in g.topological_order:
            pa = sorted(g.parents(v))
            if not pa or v not in known or all((p, v) in coef for p in pa):
                continue
            if not all(p in known for p in pa):
                continue
            sub = cov[np.ix_(pa, pa)]
            rhs = cov[pa, v]
            if np.isnan(sub).any() or np.isnan(rhs).any():
                continue
            beta = np.linalg.solve(sub, rhs)
            for p, b in zip(pa, beta):
                coef.setdefault((p, v), float(b))
            progress = True
    unresolved = frozenset(e for e in g.edges if e not in coef)
    return AlgebraicResult(coef, unresolved, cov)
