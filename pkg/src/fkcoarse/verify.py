"""Renormalisation constants and exact or statistical checks of the measures.

Exact checks enumerate configurations of small edge sets; increasing events
are represented by up-sets of the configuration cube, and every up-set of
``{0,1}^m`` for ``m <= 5`` is enumerated explicitly.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm

from .events import Event
from .fk import (
    BoundaryPartition,
    DisorderLaw,
    FKParams,
    _counts,
    _product_log_weights,
    averaged_worst,
    boundary_classes,
    compile_graph,
    config_bits,
    exact_averaged,
    fk_table,
    free_single_edge,
)
from .lattice import Edge, EdgeSet, Point, make_edge
from . import _graph


class DomainError(ValueError):
    """Raised outside the domain of a renormalisation constant."""

    def __init__(self, message: str, threshold: float):
        super().__init__(message)
        self.threshold = threshold


# --------------------------------------------------------------------------
# renormalisation constants
# --------------------------------------------------------------------------


def lss_threshold(K: int) -> float:
    """Smallest p for which the domination constant is defined: 1 - (K-1)^(K-1) / K^K."""
    return 1.0 - (K - 1) ** (K - 1) / K**K


def r_lss(K: int, p: float) -> float:
    """Product-measure parameter dominated by a K-dependent field of marginal p."""
    if K < 2:
        raise ValueError("the dependence range K must be >= 2")
    thr = lss_threshold(K)
    if not (thr <= p <= 1):
        raise DomainError(f"p={p} outside [{thr}, 1] for K={K}", thr)
    a = (1 - p) ** (1 / K) / (K - 1) ** ((K - 1) / K)
    b = ((1 - p) * (K - 1)) ** (1 / K)
    return (1 - a) * (1 - b)


def r_prime(K: int, p: float) -> float:
    """r(K, 1 - sqrt(1 - p))^2."""
    return r_lss(K, 1 - math.sqrt(1 - p)) ** 2


@dataclass(frozen=True)
class DominationParams:
    K: int
    p: float

    @property
    def r(self) -> float:
        return r_lss(self.K, self.p)

    @property
    def r_prime(self) -> float:
        return r_prime(self.K, self.p)


# --------------------------------------------------------------------------
# failure of the averaged boundary equation
# --------------------------------------------------------------------------


@dataclass
class DLRFailure:
    conditional: float
    unconditional_sup: float
    margin: float
    closed_form: float


def dlr_failure_closed_form(lam: float, p: float, q: float) -> float:
    """lam p / (lam + (1 - lam) pt / ph) with the free and path-wired edge values."""
    pt = p / (1 + (1 - p) * (q - 1))
    ph = p / (1 + (1 - p) ** 2 * (q - 1))
    return lam * p / (lam + (1 - lam) * pt / ph)


def dlr_geometry() -> Tuple[EdgeSet, BoundaryPartition]:
    """Two edges x-y and y-z with x wired to z but not to y."""
    x, y, z = (0, 0), (1, 0), (2, 0)
    E = EdgeSet([(x, y), (y, z)])
    return E, BoundaryPartition(((x, z),))


def demonstrate_dlr_failure(lam: float, p: float, q: float) -> DLRFailure:
    """Exact conditional law of the first edge given the second is open, by enumeration.

    Couplings are Bernoulli(lam) and p(J) = p J.  The result is compared with
    the largest unconditional open probability of a single edge over all
    boundary conditions, averaged over its coupling.
    """
    if q < 1:
        raise ValueError("the cluster weight must be >= 1")
    if not (0 < lam < 1 and 0 < p < 1):
        raise ValueError("need 0 < lambda < 1 and 0 < p < 1")
    E, pi = dlr_geometry()
    params = FKParams(q=q, family="linear", beta=p)
    rho = DisorderLaw.bernoulli(lam)
    both = exact_averaged(E, rho, params, pi, lambda J, b: b[:, 0] * b[:, 1])
    second = exact_averaged(E, rho, params, pi, lambda J, b: b[:, 1].astype(float))
    cond = both / second
    single = EdgeSet([E.edges[0]])
    sup = averaged_worst(single, rho, params, lambda b: b[:, 0] == 1)
    return DLRFailure(cond, sup, cond - sup, dlr_failure_closed_form(lam, p, q))


# --------------------------------------------------------------------------
# up-sets and exact inequality checks
# --------------------------------------------------------------------------


@lru_cache(maxsize=8)
def upsets(m: int) -> np.ndarray:
    """Indicator matrix (n_upsets x 2^m) of every up-set of {0,1}^m, bit k = edge k."""
    if m > 5:
        raise ValueError("up-sets are enumerated for at most 5 edges")
    # monotone functions on m variables as integer truth tables over 2^m points
    funcs = [0, 1]  # m = 0: constant false, constant true
    for k in range(m):
        size = 1 << k
        new = []
        for lo in funcs:
            for hi in funcs:
                if lo & ~hi == 0:  # lo <= hi pointwise
                    new.append(lo | (hi << size))
        funcs = new
    n = 1 << m
    return ((np.array(funcs, dtype=object)[:, None] >> np.arange(n)) & 1).astype(bool)


@dataclass
class VerificationReport:
    instance: str
    inequality: str
    worst_margin: float
    checks: int
    passed: bool


def _fkg_margin(probs: np.ndarray, U: np.ndarray, chunk: int = 1024) -> float:
    """min over up-set pairs of P(A and B) - P(A) P(B).

    The covariance matrix is one product of augmented matrices, evaluated on
    its upper triangle in row blocks.
    """
    Uf = U.astype(float)
    a = Uf @ probs
    left = np.hstack([Uf * probs[None, :], -a[:, None]])
    right = np.hstack([Uf, a[:, None]])
    worst = math.inf
    for s in range(0, len(U), chunk):
        block = left[s : s + chunk] @ right[s:].T
        worst = min(worst, float(block.min()))
    return worst


def _lattice_margin(probs: np.ndarray, m: int) -> np.ndarray:
    """min over pairs of mu(a or b) mu(a and b) - mu(a) mu(b), per row of ``probs``."""
    c = np.arange(1 << m)
    A, B = np.meshgrid(c, c, indexing="ij")
    A, B = A.ravel(), B.ravel()
    P = np.atleast_2d(probs)
    out = (P[:, A | B] * P[:, A & B] - P[:, A] * P[:, B]).min(axis=1)
    return out if np.ndim(probs) > 1 else float(out[0])


def _dominated_margin(small: np.ndarray, big: np.ndarray, U: np.ndarray) -> float:
    """min over up-sets of big(A) - small(A)."""
    Uf = U.astype(float)
    return float((Uf @ big - Uf @ small).min())


def _induced_partition(E: EdgeSet, pi: BoundaryPartition, inside: Sequence[int], outside_open: Sequence[int]) -> Tuple[EdgeSet, BoundaryPartition]:
    """Boundary partition seen by the sub-edge-set ``inside`` given open edges outside it."""
    sub = EdgeSet([E.edges[k] for k in inside])
    g = compile_graph(E, pi)
    mask = np.zeros(len(E), dtype=np.uint8)
    mask[list(outside_open)] = 1
    labels, _ = _graph.component_labels(g.n, g.eu, g.ev, mask)
    vi = E.vertex_index
    groups: Dict[int, list] = {}
    for x in sub.boundary_span:
        groups.setdefault(int(labels[g.node_of[vi[x]]]), []).append(x)
    return sub, BoundaryPartition(tuple(tuple(v) for v in groups.values()))


def dlr_margin(E: EdgeSet, p: np.ndarray, q: float, pi: BoundaryPartition) -> Tuple[float, int]:
    """Largest deviation between conditional laws on sub-edge-sets and the induced measures."""
    m = len(E)
    full = fk_table(E, p, q, pi).probs
    worst = 0.0
    checks = 0
    for r in range(1, m):
        for inside in itertools.combinations(range(m), r):
            outside = [k for k in range(m) if k not in inside]
            for bits_out in itertools.product((0, 1), repeat=len(outside)):
                open_out = [k for k, b in zip(outside, bits_out) if b]
                base = sum(1 << k for k in open_out)
                idx = np.array(
                    [base + sum(1 << inside[t] for t in range(r) if (c >> t) & 1) for c in range(1 << r)]
                )
                w = full[idx]
                if w.sum() == 0:
                    continue
                cond = w / w.sum()
                sub, induced = _induced_partition(E, pi, inside, open_out)
                # the sub-edge-set keeps the order of ``inside`` since E is sorted
                local = fk_table(sub, p[list(inside)], q, induced).probs
                worst = max(worst, float(np.abs(cond - local).max()))
                checks += 1
    return worst, checks


def verify_inequalities(
    E: EdgeSet,
    J,
    params: FKParams,
    tolerance: float = 1e-12,
    classes: Optional[List[BoundaryPartition]] = None,
    p_grid: Sequence[float] = (),
) -> List[VerificationReport]:
    """Exact checks of positive association, monotonicity, comparison and the boundary equation.

    * positive association: every pair of up-sets, for every boundary class;
    * monotonicity in the boundary: every pair of classes ordered by refinement;
    * monotonicity in p: the given couplings against each p-map in ``p_grid``
      that dominates them pointwise (uniform values);
    * comparison with product measures of parameters p/(p + q(1-p)) and p;
    * boundary equation: every proper sub-edge-set and outside configuration.
    """
    m = len(E)
    U = upsets(m)
    J = np.broadcast_to(np.asarray(J, dtype=float), (m,))
    p = params.p(J)
    q = params.q
    classes = boundary_classes(E) if classes is None else classes
    tables = {pi: fk_table(E, p, q, pi).probs for pi in classes}
    reports = []
    name = f"|E|={m}, q={q}"

    worst = min(_fkg_margin(t, U) for t in tables.values())
    reports.append(VerificationReport(name, "positive-association", worst, len(U) ** 2 * len(classes), worst >= -tolerance))

    worst, n = math.inf, 0
    for a in classes:
        for b in classes:
            if a != b and a.is_finer_than(b):
                worst = min(worst, _dominated_margin(tables[a], tables[b], U))
                n += 1
    reports.append(VerificationReport(name, "boundary-monotonicity", worst if n else 0.0, n, n == 0 or worst >= -tolerance))

    worst, n = math.inf, 0
    for pv in p_grid:
        if np.all(pv >= p):
            for pi in classes:
                worst = min(worst, _dominated_margin(tables[pi], fk_table(E, np.full(m, pv), q, pi).probs, U))
                n += 1
    reports.append(VerificationReport(name, "p-monotonicity", worst if n else 0.0, n, n == 0 or worst >= -tolerance))

    lower = fk_table(E, free_single_edge(p, q), 1.0, "free").probs
    upper = fk_table(E, p, 1.0, "free").probs
    worst = min(min(_dominated_margin(lower, t, U), _dominated_margin(t, upper, U)) for t in tables.values())
    reports.append(VerificationReport(name, "product-comparison", worst, 2 * len(classes), worst >= -tolerance))

    dev, n = 0.0, 0
    for pi in classes:
        d_, c_ = dlr_margin(E, p, q, pi)
        dev = max(dev, d_)
        n += c_
    reports.append(VerificationReport(name, "boundary-equation", -dev, n, dev <= tolerance))
    return reports


# --------------------------------------------------------------------------
# exhaustive corpus over small connected edge sets of Z^2
# --------------------------------------------------------------------------


def _normalise(edges: Iterable[Edge]) -> Tuple[Edge, ...]:
    edges = list(edges)
    mx = min(min(a[0], b[0]) for a, b in edges)
    my = min(min(a[1], b[1]) for a, b in edges)
    return tuple(sorted(make_edge((a[0] - mx, a[1] - my), (b[0] - mx, b[1] - my)) for a, b in edges))


_SYMMETRIES = [
    lambda x, y: (x, y),
    lambda x, y: (-y, x),
    lambda x, y: (-x, -y),
    lambda x, y: (y, -x),
    lambda x, y: (-x, y),
    lambda x, y: (x, -y),
    lambda x, y: (y, x),
    lambda x, y: (-y, -x),
]


def _canonical(edges: Tuple[Edge, ...], symmetric: bool) -> Tuple[Edge, ...]:
    if not symmetric:
        return _normalise(edges)
    return min(_normalise((f(*a), f(*b)) for a, b in edges) for f in _SYMMETRIES)


def connected_edge_sets(max_edges: int, symmetric: bool = True) -> List[Tuple[Edge, ...]]:
    """Connected edge sets of Z^2 with at most ``max_edges`` edges.

    Sets are taken up to translation, and also up to the symmetries of the
    square lattice when ``symmetric`` is true.
    """
    level = {_canonical((((0, 0), (1, 0)),), symmetric), _canonical((((0, 0), (0, 1)),), symmetric)}
    out = list(level)
    for _ in range(max_edges - 1):
        nxt = set()
        for shape in level:
            verts = {v for e in shape for v in e}
            have = set(shape)
            for x in verts:
                for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    e = make_edge(x, (x[0] + dx, x[1] + dy))
                    if e not in have:
                        nxt.add(_canonical(shape + (e,), symmetric))
        level = nxt
        out.extend(sorted(level))
    return out


def refinement_covers(classes: Sequence[BoundaryPartition], span: Sequence[Point]) -> List[Tuple[int, int]]:
    """Pairs (a, b) where b merges exactly two groups of a.

    Stochastic order is transitive, so checking these pairs covers every pair
    ordered by refinement.
    """
    def n_groups(pi):
        grouped = sum(len(g) for g in pi.groups)
        return len(pi.groups) + len(span) - grouped

    sizes = [n_groups(pi) for pi in classes]
    out = []
    for a, pa in enumerate(classes):
        for b, pb in enumerate(classes):
            if sizes[b] == sizes[a] - 1 and pa.is_finer_than(pb):
                out.append((a, b))
    return out


@dataclass
class CorpusResult:
    instances: int
    checks: Dict[str, int]
    worst: Dict[str, float]
    violations: List[str]


class _SubsetData:
    """Index bookkeeping for the boundary equation on one shape."""

    def __init__(self, E: EdgeSet):
        m = len(E)
        self.items = []
        vi = E.vertex_index
        for r in range(1, m):
            for inside in itertools.combinations(range(m), r):
                outside = [k for k in range(m) if k not in inside]
                sub = EdgeSet([E.edges[k] for k in inside])
                cfg = config_bits(r)
                offsets = cfg @ (1 << np.array(inside))
                bases = []
                for bits_out in itertools.product((0, 1), repeat=len(outside)):
                    open_out = [k for k, b in zip(outside, bits_out) if b]
                    mask = np.zeros(m, dtype=np.uint8)
                    mask[open_out] = 1
                    bases.append((sum(1 << k for k in open_out), mask))
                span_ids = np.array([vi[x] for x in sub.boundary_span], dtype=np.int64)
                self.items.append((r, sub, offsets, bases, span_ids, cfg.sum(axis=1)))


def verify_corpus(
    max_edges: int = 5,
    p_grid: Sequence[float] = tuple(np.round(np.arange(0.1, 0.95, 0.1), 10)),
    q_grid: Sequence[float] = (1.0, 1.5, 2.0, 4.0),
    tolerance: float = 1e-12,
    full_fkg_edges: int = 4,
    full_fkg_p: Sequence[float] = (0.1, 0.5, 0.9),
    full_fkg_q: Sequence[float] = (1.5, 4.0),
    symmetric: bool = True,
) -> CorpusResult:
    """Run the exact inequality checks over every small connected edge set.

    For each shape, boundary class, q and uniform p:

    * positive association through the lattice condition, which implies it
      for all increasing functions; shapes with at most ``full_fkg_edges``
      edges are also checked over every pair of up-sets, and larger shapes
      are for the free and wired classes at ``full_fkg_p`` x ``full_fkg_q``;
    * boundary monotonicity over every refinement cover and every up-set;
    * p-monotonicity over consecutive grid values and every up-set;
    * comparison with the two product measures over every up-set;
    * the boundary equation over every proper sub-edge-set and every
      configuration outside it.
    """
    names = ["positive-association", "lattice-condition", "boundary-monotonicity", "p-monotonicity", "product-comparison", "boundary-equation"]
    checks = {k: 0 for k in names}
    worst = {k: math.inf for k in names}
    worst["boundary-equation"] = 0.0
    violations: List[str] = []
    instances = 0

    def note(kind, value, label, n=1, is_dev=False):
        checks[kind] += n
        if is_dev:
            worst[kind] = max(worst[kind], value)
            bad = value > tolerance
        else:
            worst[kind] = min(worst[kind], value)
            bad = value < -tolerance
        if bad:
            violations.append(f"{kind}: {label} margin={value:.3e}")

    for shape in connected_edge_sets(max_edges, symmetric):
        E = EdgeSet(shape)
        m = len(E)
        U = upsets(m)
        Uf = U.astype(float)
        classes = boundary_classes(E)
        counts = np.array([_counts(E, pi) for pi in classes], dtype=float)
        covers = refinement_covers(classes, E.boundary_span)
        ca = np.array([a for a, _ in covers], dtype=np.int64)
        cb = np.array([b for _, b in covers], dtype=np.int64)
        for q in q_grid:
            lq = math.log(q)
            prev = None
            for pv in p_grid:
                p = np.full(m, pv)
                lw = _product_log_weights(p)[None, :] + counts * lq
                tabs = np.exp(lw - lw.max(axis=1, keepdims=True))
                tabs /= tabs.sum(axis=1, keepdims=True)
                up = tabs @ Uf.T  # (classes, upsets)
                label = f"{shape} q={q} p={pv}"
                lat = _lattice_margin(tabs, m)
                k = int(np.argmin(lat))
                note("lattice-condition", float(lat[k]), f"{label} {classes[k]}", n=len(classes))
                instances += len(classes)
                for k, pi in enumerate(classes):
                    extremal = k == 0 or k == len(classes) - 1
                    if m <= full_fkg_edges or (extremal and pv in full_fkg_p and q in full_fkg_q):
                        note("positive-association", _fkg_margin(tabs[k], U), f"{label} {pi}")
                if len(covers):
                    note("boundary-monotonicity", float((up[cb] - up[ca]).min()), label, n=len(covers))
                if prev is not None:
                    note("p-monotonicity", float((up - prev).min()), label, n=len(classes))
                prev = up
                lo = Uf @ fk_table(E, free_single_edge(p, q), 1.0, "free").probs
                hi = Uf @ fk_table(E, p, 1.0, "free").probs
                note("product-comparison", float(min((up - lo).min(), (hi - up).min())), label, n=len(classes))
        dev, n = _dlr_grid(E, classes, counts, p_grid, q_grid)
        note("boundary-equation", dev, str(shape), n=n, is_dev=True)
    return CorpusResult(instances, checks, worst, violations)


def _label_key(labels: np.ndarray) -> Tuple[int, ...]:
    seen: Dict[int, int] = {}
    return tuple(seen.setdefault(int(x), len(seen)) for x in labels)


def _dlr_grid(E: EdgeSet, classes, counts: np.ndarray, p_grid, q_grid) -> Tuple[float, int]:
    """Boundary-equation deviation for every class, vectorised over classes and the (p, q) grid."""
    m = len(E)
    P = np.array([pv for q in q_grid for pv in p_grid])
    Q = np.array([q for q in q_grid for pv in p_grid])
    logp, log1p, logq = np.log(P), np.log1p(-P), np.log(Q)
    k_open = config_bits(m).sum(axis=1)
    data = _SubsetData(E)
    graphs = [compile_graph(E, pi) for pi in classes]
    # full[c, g, x]: unnormalised weights per class and grid point
    full_lw = (k_open * logp[:, None] + (m - k_open) * log1p[:, None])[None] + counts[:, None, :] * logq[None, :, None]
    full = np.exp(full_lw - full_lw.max(axis=2, keepdims=True))
    worst = 0.0
    n = 0
    for r, sub, offsets, bases, span_ids, sub_open in data.items:
        prod_lw = sub_open[None, :] * logp[:, None] + (r - sub_open)[None, :] * log1p[:, None]
        local: Dict[Tuple[int, ...], np.ndarray] = {}
        span = sub.boundary_span
        for base, mask in bases:
            w = full[:, :, base + offsets]
            cond = w / w.sum(axis=2, keepdims=True)
            keys = []
            for g in graphs:
                labels, _ = _graph.component_labels(g.n, g.eu, g.ev, mask)
                key = _label_key(labels[g.node_of[span_ids]])
                if key not in local:
                    groups: Dict[int, list] = {}
                    for x, lab in zip(span, key):
                        groups.setdefault(lab, []).append(x)
                    induced = BoundaryPartition(tuple(tuple(v) for v in groups.values()))
                    llw = prod_lw + _counts(sub, induced)[None, :] * logq[:, None]
                    loc = np.exp(llw - llw.max(axis=1, keepdims=True))
                    local[key] = loc / loc.sum(axis=1, keepdims=True)
                keys.append(local[key])
            worst = max(worst, float(np.abs(cond - np.stack(keys)).max()))
            n += cond.shape[0] * cond.shape[1]
    return worst, n


# --------------------------------------------------------------------------
# statistical domination test
# --------------------------------------------------------------------------


@dataclass
class EventTest:
    name: str
    mean_a: float
    mean_b: float
    z: float
    rejected: bool


@dataclass
class DominationReport:
    alpha: float
    threshold: float
    tests: List[EventTest]

    @property
    def rejected(self) -> bool:
        return any(t.rejected for t in self.tests)


def domination_test(
    E: EdgeSet,
    sample_a: np.ndarray,
    sample_b: np.ndarray,
    events: Sequence[Event],
    alpha: float = 0.01,
) -> DominationReport:
    """One-sided tests of ``P_a(A) <= P_b(A)`` for increasing events, Bonferroni corrected.

    Samples are stacks of independent configurations on ``E``.  The null is
    rejected for an event when the z statistic of ``mean_a - mean_b`` exceeds
    the ``1 - alpha / k`` normal quantile.
    """
    for ev in events:
        if not getattr(ev, "increasing", False):
            raise ValueError(f"event {getattr(ev, 'name', ev)!r} is not marked increasing")
    k = len(events)
    thr = float(norm.ppf(1 - alpha / k))
    tests = []
    for ev in events:
        xa = ev.evaluate(E, sample_a).astype(float)
        xb = ev.evaluate(E, sample_b).astype(float)
        ma, mb = xa.mean(), xb.mean()
        se = math.sqrt(xa.var(ddof=1) / len(xa) + xb.var(ddof=1) / len(xb))
        if se == 0:
            z = math.inf if ma > mb else 0.0
        else:
            z = (ma - mb) / se
        tests.append(EventTest(ev.name, float(ma), float(mb), float(z), bool(z > thr)))
    return DominationReport(alpha, thr, tests)
