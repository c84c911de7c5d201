"""Random-cluster measures with random couplings on finite edge sets.

The measure on ``{0,1}^E`` with edge parameters ``p_e = p(J_e)``, cluster
weight ``q`` and boundary partition ``pi`` gives each configuration weight

    prod_e p_e^w_e (1 - p_e)^(1 - w_e) * q^C(w),

where ``C`` counts the clusters of ``w`` joined with the wiring ``pi`` that
contain an endpoint of ``E``.  Exact tables enumerate all ``2^|E|``
configurations, with configuration ``c`` having edge ``k`` open iff bit ``k``
of ``c`` is set.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Tuple, Union

import numpy as np
from scipy.special import logsumexp

from . import _graph
from .lattice import EdgeSet, Point, box_hat, edge_set

MAX_EXACT_EDGES = 24
MAX_SPAN = 12
MAX_AVERAGED_WORK = 10**7


class TooLargeError(ValueError):
    """Raised when an exact computation exceeds its enumeration budget."""


# --------------------------------------------------------------------------
# disorder and interaction
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DisorderLaw:
    """A law on [0, 1] with finitely many atoms."""

    values: Tuple[float, ...]
    probs: Tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        ps = tuple(float(p) for p in self.probs)
        if len(vals) != len(ps) or not vals:
            raise ValueError("values and probabilities must be non-empty and of equal length")
        if any(v < 0 or v > 1 for v in vals):
            raise ValueError("couplings must lie in [0, 1]")
        if any(p < 0 for p in ps) or abs(sum(ps) - 1) > 1e-12:
            raise ValueError("atom probabilities must be non-negative and sum to 1")
        if len(set(vals)) != len(vals):
            raise ValueError("atoms must be distinct")
        order = np.argsort(vals)
        object.__setattr__(self, "values", tuple(vals[k] for k in order))
        object.__setattr__(self, "probs", tuple(ps[k] for k in order))

    @classmethod
    def bernoulli(cls, lam: float) -> "DisorderLaw":
        """``lam * delta_1 + (1 - lam) * delta_0``."""
        if not 0 <= lam <= 1:
            raise ValueError("lambda must lie in [0, 1]")
        if lam == 1:
            return cls((1.0,), (1.0,))
        if lam == 0:
            return cls((0.0,), (1.0,))
        return cls((0.0, 1.0), (1 - lam, lam))

    @classmethod
    def delta(cls, value: float = 1.0) -> "DisorderLaw":
        return cls((value,), (1.0,))

    @classmethod
    def from_atoms(cls, atoms: Mapping[float, float]) -> "DisorderLaw":
        return cls(tuple(atoms.keys()), tuple(atoms.values()))

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        idx = rng.choice(len(self.values), size=size, p=np.array(self.probs))
        return np.asarray(self.values)[idx]

    def mass(self, lo: float, hi: float) -> float:
        """Probability of the open interval (lo, hi)."""
        return float(sum(p for v, p in zip(self.values, self.probs) if lo < v < hi))


@dataclass(frozen=True)
class QuantileDisorder:
    """A continuous coupling law given by its quantile function (sampling only)."""

    quantile: Callable[[np.ndarray], np.ndarray]

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return np.clip(np.asarray(self.quantile(rng.random(size)), dtype=float), 0.0, 1.0)


INTERACTIONS = ("potts", "ising", "linear")


@dataclass(frozen=True)
class FKParams:
    """Cluster weight and interaction map ``p(J)``.

    Families: ``potts`` gives ``1 - exp(-beta J)``, ``ising`` gives
    ``1 - exp(-2 beta J)`` and ``linear`` gives ``beta * J`` (slope below 1).
    """

    q: float = 2.0
    family: str = "potts"
    beta: float = 1.0
    disorder: Optional[DisorderLaw] = None

    def __post_init__(self):
        if not self.q >= 1:
            raise ValueError(f"cluster weight q must be >= 1, got {self.q}")
        if self.family not in INTERACTIONS:
            raise ValueError(f"unknown interaction family {self.family!r}")
        if not (self.beta >= 0 and math.isfinite(self.beta)):
            raise ValueError("beta must be finite and non-negative")
        if self.family == "linear" and self.beta >= 1:
            raise ValueError("a linear interaction needs slope < 1 so that p(1) < 1")

    def p(self, J) -> np.ndarray:
        J = np.asarray(J, dtype=float)
        if self.family == "potts":
            return -np.expm1(-self.beta * J)
        if self.family == "ising":
            return -np.expm1(-2.0 * self.beta * J)
        return self.beta * J


def free_single_edge(p, q: float):
    """Open probability of an isolated edge with free ends: p / (p + q(1 - p))."""
    p = np.asarray(p, dtype=float)
    return p / (p + q * (1.0 - p))


# --------------------------------------------------------------------------
# boundary partitions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundaryPartition:
    """A partition of the boundary span into wired groups.

    Groups are stored sorted; vertices not listed in any group are singletons.
    """

    groups: Tuple[Tuple[Point, ...], ...]

    def __post_init__(self):
        gs = [tuple(sorted(tuple(v) for v in g)) for g in self.groups]
        gs = tuple(sorted(g for g in gs if len(g) > 1))
        seen = set()
        for g in gs:
            for v in g:
                if v in seen:
                    raise ValueError(f"vertex {v} appears in two boundary groups")
                seen.add(v)
        object.__setattr__(self, "groups", gs)

    @classmethod
    def free(cls) -> "BoundaryPartition":
        return cls(())

    @classmethod
    def wired(cls, E: EdgeSet) -> "BoundaryPartition":
        return cls((E.boundary_span,))

    def group_of(self) -> Dict[Point, int]:
        return {v: k for k, g in enumerate(self.groups) for v in g}

    def is_finer_than(self, other: "BoundaryPartition") -> bool:
        """True when every group of ``self`` lies inside a group of ``other``."""
        where = other.group_of()
        for g in self.groups:
            ids = {where.get(v, ("single", v)) for v in g}
            if len(ids) > 1:
                return False
        return True


BoundaryLike = Union[BoundaryPartition, str, None]


def resolve_boundary(E: EdgeSet, pi: BoundaryLike) -> BoundaryPartition:
    """Accept ``'free'``, ``'wired'`` or a partition and check it against ``E``."""
    if pi is None or (isinstance(pi, str) and pi == "free"):
        return BoundaryPartition.free()
    if isinstance(pi, str):
        if pi == "wired":
            return BoundaryPartition.wired(E)
        raise ValueError(f"unknown boundary condition {pi!r}")
    span = set(E.boundary_span)
    for g in pi.groups:
        for v in g:
            if v not in span:
                raise ValueError(f"boundary group vertex {v} is not in the boundary span of E")
    return pi


@dataclass(frozen=True)
class CompiledGraph:
    """Node-level graph of an edge set with its boundary groups contracted."""

    n: int
    eu: np.ndarray
    ev: np.ndarray
    node_of: np.ndarray  # node id of every vertex of E (in E.vertices order)
    ptr: np.ndarray
    adj_e: np.ndarray
    adj_n: np.ndarray


@lru_cache(maxsize=256)
def compile_graph(E: EdgeSet, pi: BoundaryPartition) -> CompiledGraph:
    vi = E.vertex_index
    rep = np.arange(len(E.vertices))
    for g in pi.groups:
        first = vi[g[0]]
        for v in g[1:]:
            rep[vi[v]] = first
    _, node_of = np.unique(rep, return_inverse=True)
    node_of = node_of.astype(np.int64)
    n = int(node_of.max()) + 1
    u, v = E.endpoints
    eu, ev = node_of[u], node_of[v]
    ptr, adj_e, adj_n = _graph.incidence(n, eu, ev)
    return CompiledGraph(n, eu, ev, node_of, ptr, adj_e, adj_n)


def cluster_count(omega: np.ndarray, E: EdgeSet, pi: BoundaryLike = None) -> int:
    """Clusters of ``omega`` joined with the wiring that touch an endpoint of ``E``."""
    omega = np.asarray(omega, dtype=np.uint8)
    if omega.shape != (len(E),):
        raise ValueError("configuration length does not match the edge set")
    g = compile_graph(E, resolve_boundary(E, pi))
    _, count = _graph.component_labels(g.n, g.eu, g.ev, omega)
    return int(count)


def _restricted_growth(n: int) -> Iterable[Tuple[int, ...]]:
    """Restricted growth strings of length n in lexicographic order."""
    if n == 0:
        yield ()
        return
    a = [0] * n

    def rec(k, top):
        if k == n:
            yield tuple(a)
            return
        for b in range(top + 2):
            a[k] = b
            yield from rec(k + 1, max(top, b))

    a[0] = 0
    yield from rec(1, 0)


def boundary_classes(E: EdgeSet) -> List[BoundaryPartition]:
    """All partitions of the boundary span, in restricted-growth-string order.

    The first class is the fully wired one and the last is the free one.
    """
    span = E.boundary_span
    if len(span) > MAX_SPAN:
        raise TooLargeError(f"boundary span {len(span)} exceeds {MAX_SPAN}")
    out = []
    for rgs in _restricted_growth(len(span)):
        groups: Dict[int, list] = {}
        for v, b in zip(span, rgs):
            groups.setdefault(b, []).append(v)
        out.append(BoundaryPartition(tuple(tuple(g) for g in groups.values())))
    return out


# --------------------------------------------------------------------------
# exact tables
# --------------------------------------------------------------------------


@lru_cache(maxsize=65536)
def _counts(E: EdgeSet, pi: BoundaryPartition) -> np.ndarray:
    if len(E) > MAX_EXACT_EDGES:
        raise TooLargeError(f"|E| = {len(E)} exceeds the exact limit {MAX_EXACT_EDGES}")
    g = compile_graph(E, pi)
    out = _graph.enumerate_component_counts(g.n, g.eu, g.ev)
    out.setflags(write=False)
    return out


def config_bits(m: int) -> np.ndarray:
    """The ``2^m x m`` 0/1 matrix of all configurations."""
    return ((np.arange(1 << m)[:, None] >> np.arange(m)[None, :]) & 1).astype(np.uint8)


def _product_log_weights(p: np.ndarray) -> np.ndarray:
    lw = np.zeros(1)
    with np.errstate(divide="ignore"):
        for pk in p:
            lw = np.concatenate([lw + np.log1p(-pk), lw + np.log(pk)])
    return lw


@dataclass
class ProbabilityTable:
    """Exact law of a configuration: ``probs[c]`` for every bit mask ``c``."""

    edges: EdgeSet
    probs: np.ndarray
    log_Z: float

    @property
    def Z(self) -> float:
        return math.exp(self.log_Z)

    def bits(self) -> np.ndarray:
        return config_bits(len(self.edges))

    def marginal(self, e) -> float:
        k = e if isinstance(e, (int, np.integer)) else self.edges.index[e]
        mask = ((np.arange(len(self.probs)) >> k) & 1).astype(bool)
        return float(self.probs[mask].sum())

    def probability(self, event) -> float:
        """``event`` is a boolean array over configurations or a callable on ``bits()``."""
        if callable(event):
            event = event(self.bits())
        return float(self.probs[np.asarray(event, dtype=bool)].sum())

    def expect(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(np.dot(self.probs, f(self.bits())))


def fk_table(E: EdgeSet, p, q: float, pi: BoundaryLike = None) -> ProbabilityTable:
    """Exact table from explicit edge probabilities ``p`` (values in [0, 1])."""
    p = np.broadcast_to(np.asarray(p, dtype=float), (len(E),))
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("edge probabilities must lie in [0, 1]")
    if q < 1:
        raise ValueError("q must be >= 1")
    counts = _counts(E, resolve_boundary(E, pi))
    lw = _product_log_weights(p) + counts * math.log(q)
    log_Z = float(logsumexp(lw))
    probs = np.exp(lw - log_Z)
    return ProbabilityTable(E, probs, log_Z)


def exact_distribution(E: EdgeSet, J, params: FKParams, pi: BoundaryLike = None) -> ProbabilityTable:
    """Exact quenched measure for couplings ``J`` (array aligned with ``E``)."""
    J = np.broadcast_to(np.asarray(J, dtype=float), (len(E),))
    return fk_table(E, params.p(J), params.q, pi)


def log_partition_Y(E: EdgeSet, J, params: FKParams, pi: BoundaryLike = None) -> float:
    """log of sum over w of prod (p/(1-p))^w_e q^C(w)."""
    J = np.broadcast_to(np.asarray(J, dtype=float), (len(E),))
    p = params.p(J)
    if np.any(p >= 1):
        raise ValueError("the partition function Y needs p(J) < 1")
    table = fk_table(E, p, params.q, pi)
    return table.log_Z - float(np.sum(np.log1p(-p)))


def partition_Y(E: EdgeSet, J, params: FKParams, pi: BoundaryLike = None) -> float:
    return math.exp(log_partition_Y(E, J, params, pi))


def _disorder_atoms(rho: DisorderLaw, m: int) -> Iterable[Tuple[np.ndarray, float]]:
    vals = np.asarray(rho.values)
    probs = np.asarray(rho.probs)
    for idx in itertools.product(range(len(vals)), repeat=m):
        w = float(np.prod(probs[list(idx)]))
        if w > 0:
            yield vals[list(idx)], w


def exact_averaged(
    E: EdgeSet,
    rho: DisorderLaw,
    params: FKParams,
    pi: BoundaryLike,
    f: Callable[[np.ndarray, np.ndarray], np.ndarray],
) -> float:
    """Average over couplings of the quenched expectation of ``f(J, bits)``.

    ``f`` receives the couplings and the ``2^m x m`` configuration matrix and
    returns one value per configuration.
    """
    m = len(E)
    if len(rho.values) ** m * 2**m > MAX_AVERAGED_WORK:
        raise TooLargeError("averaged enumeration exceeds its budget")
    pi = resolve_boundary(E, pi)
    bits = config_bits(m)
    total = 0.0
    for J, w in _disorder_atoms(rho, m):
        table = exact_distribution(E, J, params, pi)
        total += w * float(np.dot(table.probs, f(J, bits)))
    return total


def _event_values(event, E: EdgeSet) -> np.ndarray:
    bits = config_bits(len(E))
    if hasattr(event, "evaluate"):
        return np.asarray(event.evaluate(E, bits), dtype=bool)
    if callable(event):
        return np.asarray(event(bits), dtype=bool)
    return np.asarray(event, dtype=bool)


def worst_boundary(E: EdgeSet, J, params: FKParams, event, tol: float = 1e-12) -> Tuple[BoundaryPartition, float]:
    """Boundary class maximising the probability of ``event``.

    Ties (within ``tol``) go to the first class in enumeration order.
    """
    ev = _event_values(event, E)
    values = []
    classes = boundary_classes(E)
    for pi in classes:
        values.append(exact_distribution(E, J, params, pi).probability(ev))
    best = max(values)
    k = next(k for k, v in enumerate(values) if v >= best - tol)
    return classes[k], values[k]


def averaged_worst(E: EdgeSet, rho: DisorderLaw, params: FKParams, event) -> float:
    """Average over couplings of the largest probability over boundary classes."""
    m = len(E)
    if len(rho.values) ** m * 2**m > MAX_AVERAGED_WORK:
        raise TooLargeError("averaged enumeration exceeds its budget")
    total = 0.0
    for J, w in _disorder_atoms(rho, m):
        total += w * worst_boundary(E, J, params, event)[1]
    return total


def pressure_estimate(
    N: int,
    rho,
    params: FKParams,
    pi: str = "free",
    d: int = 2,
    replicas: int = 16,
    seed: int = 0,
) -> Tuple[float, float]:
    """Mean and standard error of ``log Y / (2N+1)^d`` on the wired edges of {-N..N}^d.

    Each replica draws couplings from ``rho`` and evaluates ``log Y`` exactly,
    so the box must be small enough for enumeration.
    """
    box = box_hat(N, d)
    E = edge_set(box, "wired")
    if len(E) > MAX_EXACT_EDGES:
        raise TooLargeError(f"|E| = {len(E)} is too large for exact pressure")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    vals = np.array([log_partition_Y(E, rho.sample(rng, len(E)), params, pi) for _ in range(replicas)])
    vals /= box.size
    se = float(vals.std(ddof=1) / math.sqrt(replicas)) if replicas > 1 else float("nan")
    return float(vals.mean()), se


__all__ = [
    "BoundaryPartition",
    "CompiledGraph",
    "DisorderLaw",
    "FKParams",
    "ProbabilityTable",
    "QuantileDisorder",
    "TooLargeError",
    "averaged_worst",
    "boundary_classes",
    "cluster_count",
    "compile_graph",
    "config_bits",
    "exact_averaged",
    "exact_distribution",
    "fk_table",
    "free_single_edge",
    "log_partition_Y",
    "partition_Y",
    "pressure_estimate",
    "resolve_boundary",
    "worst_boundary",
]
