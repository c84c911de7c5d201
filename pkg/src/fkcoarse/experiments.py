"""Finite-size estimators built on the samplers.

All estimators draw independent replicas: replica ``r`` uses the coupling
stream ``(seed, r, 0)`` and the chain stream ``(seed, r, 1)``.  Replica
averages come with the standard error of the replica mean.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, maximum_flow

from . import _graph
from .clusters import crossing_cluster, decompose, density, doubly_connected_set, first_pivotal_bond, restrict, unique_large
from .events import CountAtLeast, Event, UpSet, connection, edge_open, face_crossing
from .fk import BoundaryPartition, FKParams, config_bits, exact_distribution
from .ising import (
    InvariantViolation,
    IsingChain,
    _spin_layout,
    block_label,
    cluster_kernel_spins,
    compatible,
    ising_exact,
    joint_exact,
    phase_labels,
    spin_configs,
)
from .lattice import (
    Box,
    EdgeSet,
    _box_counts,
    block_partition,
    box_from_sides,
    box_hat,
    box_lambda,
    covering,
    covering_properties,
    edge_set,
    slab_box,
)
from .sampler import (
    Schedule,
    cluster_kernel,
    new_chain,
    sample_averaged,
    sample_psi,
    seed_sequence,
    single_edge_kernel,
    stream,
    sweep_kernel,
)
from .verify import DomainError, DominationReport, domination_test, lss_threshold, r_lss, r_prime


def mean_se(x) -> Tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        return float(x.mean()) if len(x) else float("nan"), float("nan")
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))


@dataclass
class Estimate:
    value: float
    se: float
    replicas: int


# --------------------------------------------------------------------------
# point-to-boundary connection
# --------------------------------------------------------------------------


def _reach_boundary(E: EdgeSet, box: Box):
    """Function omega -> [origin joined to a vertex outside ``box``]."""
    u, v = E.endpoints
    nv = len(E.vertices)
    c = E.coords
    outside = ~np.all((c >= np.array(box.lower)) & (c <= np.array(box.upper)), axis=1)
    origin = E.vertex_index[(0,) * box.dim]

    def f(omega):
        labels, _ = _graph.component_labels(nv, u, v, omega)
        return bool(np.any(labels[outside] == labels[origin]))

    return f


def theta_estimate(
    N: int,
    rho,
    params: FKParams,
    bc: str,
    d: int = 2,
    replicas: int = 100,
    schedule: Schedule = Schedule(60, 30, 3),
    seed: int = 0,
    method: str = "auto",
    workers: Optional[int] = None,
) -> Estimate:
    """Averaged probability that the origin reaches the outside of {-N..N}^d."""
    box = box_hat(N, d)
    E = edge_set(box, "wired")
    hit = _reach_boundary(E, box)
    per = []
    if params.beta == 0:
        return Estimate(0.0, 0.0, replicas)
    for J, batch in sample_averaged(
        E, rho, params, bc, replicas, schedule, seed, method, "open", lambda J, w: hit(w), False, workers
    ):
        per.append(np.mean(batch.observations))
    m, se = mean_se(per)
    return Estimate(m, se, replicas)


@dataclass
class ThetaCurve:
    bc: str
    N: List[int]
    theta: List[float]
    se: List[float]
    replicas: int


def estimate_theta(
    N_list: Sequence[int],
    rho,
    params: FKParams,
    bc: str = "wired",
    d: int = 2,
    replicas: int = 100,
    schedule: Schedule = Schedule(60, 30, 3),
    seed: int = 0,
    workers: Optional[int] = None,
) -> ThetaCurve:
    """theta-hat(N) for each N; the N-th entry uses the seed stream ``(seed, k)``."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    th, se = [], []
    for k, N in enumerate(N_list):
        est = theta_estimate(N, rho, params, bc, d, replicas, schedule, seed_sequence(seed, k), workers=workers)
        th.append(est.value)
        se.append(est.se)
    return ThetaCurve(bc, list(N_list), th, se, replicas)


def magnetization_estimate(
    N: int,
    rho,
    beta: float,
    d: int = 2,
    replicas: int = 100,
    schedule: Schedule = Schedule(60, 30, 3),
    seed: int = 0,
) -> Estimate:
    """Averaged plus-boundary magnetisation at the origin of {-N..N}^d, from spin samples."""
    box = box_hat(N, d)
    E, _, _, _ = _spin_layout(box)
    origin = box.vertices().index((0,) * d)
    per = []
    for r in range(replicas):
        J = rho.sample(stream(seed, r, 0), len(E))
        chain = IsingChain(box, J, beta, stream(seed, r, 1))
        chain.sweep(schedule.burn_in)
        vals = []
        for _ in range(schedule.n_samples):
            chain.sweep(schedule.thin)
            vals.append(chain.sigma[origin])
        per.append(np.mean(vals))
    m, se = mean_se(per)
    return Estimate(m, se, replicas)


# --------------------------------------------------------------------------
# crossing and density
# --------------------------------------------------------------------------


def _random_partition(E: EdgeSet, rng: np.random.Generator, groups: int = 4) -> BoundaryPartition:
    span = sorted(E.boundary_span)
    lab = rng.integers(0, groups, size=len(span))
    return BoundaryPartition(tuple(tuple(x for x, g in zip(span, lab) if g == k) for k in range(groups)))


def _final_configs(E, rho, params, pi, replicas, schedule, seed, workers):
    """One configuration per replica, taken at the end of the schedule."""
    sched = Schedule(schedule.sweeps, schedule.sweeps - 1, 1)
    for J, batch in sample_averaged(E, rho, params, pi, replicas, sched, seed, "auto", "open", None, True, workers):
        yield J, batch.configs[-1]


@dataclass
class CrossingResult:
    N: int
    l: float
    probability: float
    se: float
    crossing_probability: float
    per_policy: Dict[str, float]
    replicas: int


def crossing_experiment(
    N: int,
    l: float,
    rho,
    params: FKParams,
    bc_policy: str = "free",
    replicas: int = 100,
    seed: int = 0,
    d: int = 2,
    schedule: Schedule = Schedule(40, 39, 1),
    sampled_classes: int = 2,
    workers: Optional[int] = None,
) -> CrossingResult:
    """Probability of a crossing cluster that is the only cluster of diameter >= l in {1..N-1}^d.

    ``bc_policy`` is ``free``, ``wired`` or ``worst``; the last takes the
    smallest estimate over free, wired and ``sampled_classes`` random wirings.
    """
    box = box_lambda(N, d)
    E = edge_set(box, "wired")
    if bc_policy in ("free", "wired"):
        policies = {bc_policy: bc_policy}
    elif bc_policy == "worst":
        rng = stream(seed, 1 << 20)
        policies = {"free": "free", "wired": "wired"}
        for k in range(sampled_classes):
            policies[f"random-{k}"] = _random_partition(E, rng)
    else:
        raise ValueError(f"unknown boundary policy {bc_policy!r}")
    results = {}
    for k, (name, pi) in enumerate(policies.items()):
        good, cross = [], []
        for J, w in _final_configs(E, rho, params, pi, replicas, schedule, seed_sequence(seed, k), workers):
            rep = unique_large(decompose(w, E), box, l)
            cross.append(rep.crossing is not None)
            good.append(rep.unique_large)
        results[name] = (float(np.mean(good)), float(np.mean(cross)))
    worst = min(results, key=lambda k: results[k][0])
    prob = results[worst][0]
    se = math.sqrt(max(prob * (1 - prob), 0.0) / replicas)
    return CrossingResult(N, l, prob, se, results[worst][1], {k: v[0] for k, v in results.items()}, replicas)


@dataclass
class DensityResult:
    N: int
    densities: np.ndarray
    outside_fraction: float
    bracket: Tuple[float, float]
    block_density: float
    block_crossing: float
    label_violations: int = 0
    labels_checked: int = 0
    label_counts: Dict[int, int] = field(default_factory=dict)


def _block_stats(w: np.ndarray, E: EdgeSet, box: Box, L: int) -> Tuple[float, float]:
    """Mean crossing-cluster density of the (L, 0) blocks and crossing fraction of the (L, L-1) blocks."""
    dens = []
    for inner in covering(box, L, 0).inner.values():
        Ei = edge_set(inner, "wired")
        dec = decompose(restrict(w, E, Ei), Ei)
        dens.append(density(dec, crossing_cluster(dec, inner), inner))
    cov = covering(box, L, L - 1)
    hits = []
    for outer in cov.outer.values():
        Eo = edge_set(outer, "wired")
        dec = decompose(restrict(w, E, Eo), Eo)
        hits.append(crossing_cluster(dec, outer) is not None)
    return float(np.mean(dens)), float(np.mean(hits))


def density_experiment(
    N: int,
    L: int,
    rho,
    params: FKParams,
    theta_f: float,
    theta_w: float,
    eps: float = 0.05,
    bc: str = "free",
    replicas: int = 100,
    seed: int = 0,
    d: int = 2,
    schedule: Schedule = Schedule(40, 39, 1),
    m_beta: Optional[float] = None,
    delta: float = 0.1,
    delta_iso: float = 0.01,
    workers: Optional[int] = None,
) -> DensityResult:
    """Crossing-cluster density of {1..N-1}^d against the bracket [theta_f - eps, theta_w + eps].

    With ``m_beta`` given the replicas are drawn as spin/bond pairs with plus
    boundary (Ising family, wired bonds) and every pair is also labelled with
    block size ``L``; label invariants are counted rather than raised.
    """
    box = box_lambda(N, d)
    E = edge_set(box, "wired")
    lo, hi = theta_f - eps, theta_w + eps
    dens, bdens, bcross = [], [], []
    violations = checked = 0
    counts = {-1: 0, 0: 0, 1: 0}

    def account(w):
        dec = decompose(w, E)
        dens.append(density(dec, crossing_cluster(dec, box), box))
        a, b = _block_stats(w, E, box, L)
        bdens.append(a)
        bcross.append(b)

    if m_beta is None:
        for J, w in _final_configs(E, rho, params, bc, replicas, schedule, seed, workers):
            account(w)
    else:
        if params.family != "ising" or params.q != 2:
            raise ValueError("spin samples need the ising family with q = 2")
        for r in range(replicas):
            J = rho.sample(stream(seed, r, 0), len(E))
            chain = IsingChain(box, J, params.beta, stream(seed, r, 1))
            chain.sweep(schedule.sweeps)
            w = chain.omega.copy()
            account(w)
            sigma = chain.sigma
            checked += 1
            try:
                lab = phase_labels(sigma, w, N, L, m_beta, d, delta, delta_iso)
                locality_check(sigma, w, lab, N, L, m_beta, d, delta, delta_iso, stream(seed, r, 2))
            except InvariantViolation:
                violations += 1
                continue
            for v in lab.labels.values():
                counts[v] += 1
    dens = np.array(dens)
    out = float(np.mean((dens < lo) | (dens > hi)))
    return DensityResult(
        N, dens, out, (lo, hi), float(np.mean(bdens)), float(np.mean(bcross)), violations, checked, counts
    )


def locality_check(sigma, omega, labels, N, L, m_beta, d=2, delta=0.1, delta_iso=0.01, rng=None) -> None:
    """Relabel each block after scrambling everything it is not allowed to see."""
    box = box_lambda(N, d)
    E = edge_set(box, "wired")
    rng = np.random.default_rng(0) if rng is None else rng
    grid_shape = box.shape
    cov = labels.covering
    for i in cov.indices:
        inner, outer = cov.inner[i], cov.outer[i]
        s = np.where(rng.random(len(sigma)) < 0.5, 1, -1).reshape(grid_shape)
        s[inner.slices(box.lower)] = np.asarray(sigma).reshape(grid_shape)[inner.slices(box.lower)]
        w = (rng.random(len(E)) < 0.5).astype(np.uint8)
        keep = E.restrict_map(edge_set(outer, "wired"))
        keep = keep[keep >= 0]
        w[keep] = np.asarray(omega)[keep]
        s_in = s[inner.slices(box.lower)].ravel()
        w_in = restrict(w, E, edge_set(inner, "wired"))
        w_out = restrict(w, E, edge_set(outer, "wired"))
        lab, _, _ = block_label(s_in, w_in, w_out, inner, outer, L, m_beta, delta, delta_iso)
        if lab != labels.labels[i]:
            raise InvariantViolation(f"block {i}: label depends on data outside its region")


# --------------------------------------------------------------------------
# slabs
# --------------------------------------------------------------------------


@dataclass
class SlabResult:
    N: int
    H: int
    value: float
    se: float
    killer_fraction: float
    replicas: int


def slab_probe(
    N: int,
    H: int,
    rho,
    params: FKParams,
    replicas: int = 100,
    seed: int = 0,
    d: int = 2,
    pairs: int = 4,
    schedule: Schedule = Schedule(40, 39, 1),
    workers: Optional[int] = None,
) -> SlabResult:
    """Connectivity in the slab {1..N-1}^(d-1) x {1..H-1} under the averaged free measure.

    For d = 2 the value is the probability of a cluster joining the left
    and right sides; for d >= 3 it is the smallest connection probability
    over ``pairs`` random pairs of slab vertices.  ``killer_fraction`` is the
    fraction of replicas in which some bottom vertex has no positive coupling.
    """
    if d < 2:
        raise ValueError("slabs need d >= 2")
    box = slab_box(N, H, d)
    E = edge_set(box, "wired")
    if d == 2:
        events: List[Event] = [face_crossing(box, 0)]
    else:
        rng = stream(seed, 1 << 20)
        verts = box.vertices()
        events = []
        for _ in range(pairs):
            a, b = rng.choice(len(verts), size=2, replace=False)
            events.append(connection(verts[a], verts[b]))
    bottom = [x for x in box.vertices() if x[-1] == box.lower[-1]]
    bottom_edges = [[k for k, e in enumerate(E.edges) if x in e] for x in bottom]
    hits = np.zeros((replicas, len(events)), dtype=bool)
    killed = []
    for r, (J, w) in enumerate(_final_configs(E, rho, params, "free", replicas, schedule, seed, workers)):
        hits[r] = [ev(E, w[None, :])[0] for ev in events]
        killed.append(any(np.all(J[ks] == 0) for ks in bottom_edges))
    probs = hits.mean(axis=0)
    k = int(np.argmin(probs))
    value = float(probs[k])
    se = math.sqrt(max(value * (1 - value), 0.0) / replicas)
    return SlabResult(N, H, value, se, float(np.mean(killed)), replicas)


# --------------------------------------------------------------------------
# product-of-blocks domination
# --------------------------------------------------------------------------


def standard_events(box: Box, L: int, count: int = 20) -> List[Event]:
    """Increasing events on the wired edges of ``box``, mixing edges, connections, crossings and counts."""
    E = edge_set(box, "wired")
    part = block_partition(box, L)
    lat = [E.edges[k] for k in part.lateral]
    lo, hi = box.lower, box.upper
    mid = tuple((a + b) // 2 for a, b in zip(lo, hi))
    events: List[Event] = []
    for e in lat[:: max(1, len(lat) // 6)][:6]:
        events.append(edge_open(e))
    events.append(face_crossing(box, 0))
    events.append(face_crossing(box, 1))
    corners = [lo, hi, (lo[0], hi[1]), (hi[0], lo[1])]
    events.append(connection(corners[0], corners[1]))
    events.append(connection(corners[2], corners[3]))
    events.append(connection(lo, mid))
    events.append(connection(mid, (mid[0] + L, mid[1])))
    events.append(connection(mid, (mid[0], mid[1] - L)))
    m = len(E)
    for frac in (0.3, 0.4, 0.5, 0.6):
        events.append(CountAtLeast(tuple(E.edges), int(frac * m)))
    for e in lat[1::7][:3]:
        a, b = e
        events.append(UpSet((frozenset({e}), frozenset(E.edges[k] for k in range(m) if a in E.edges[k] and E.edges[k] != e)), name=f"near {e}"))
    return events[:count]


@dataclass
class PsiSamples:
    box: Box
    psi: np.ndarray
    averaged: np.ndarray


def psi_samples(
    L: int,
    rho,
    params: FKParams,
    replicas: int = 1000,
    seed: int = 0,
    d: int = 2,
    schedule: Schedule = Schedule(60, 59, 1),
    workers: Optional[int] = None,
) -> PsiSamples:
    """Paired draws from the product-of-blocks law and the averaged free measure on {1..2L-1}^d."""
    box = box_lambda(2 * L, d)
    E = edge_set(box, "wired")
    psi = np.zeros((replicas, len(E)), dtype=np.uint8)
    for r in range(replicas):
        psi[r] = sample_psi(box, L, rho, params, seed_sequence(seed, 0, r), schedule)[1]
    avg = np.array([w for _, w in _final_configs(E, rho, params, "free", replicas, schedule, seed_sequence(seed, 1), workers)])
    return PsiSamples(box, psi, avg)


def psi_domination(
    L: int,
    rho,
    params: FKParams,
    replicas: int = 1000,
    seed: int = 0,
    alpha: float = 0.01,
    d: int = 2,
    schedule: Schedule = Schedule(60, 59, 1),
    swap: bool = False,
    samples: Optional[PsiSamples] = None,
) -> DominationReport:
    """Test that the product-of-blocks law is dominated by the averaged free measure.

    ``swap`` tests the reverse order, which should be rejected.
    """
    s = psi_samples(L, rho, params, replicas, seed, d, schedule) if samples is None else samples
    E = edge_set(s.box, "wired")
    events = standard_events(s.box, L)
    a, b = (s.averaged, s.psi) if swap else (s.psi, s.averaged)
    return domination_test(E, a, b, events, alpha)


# --------------------------------------------------------------------------
# audits
# --------------------------------------------------------------------------


@dataclass
class CoveringSweep:
    cases: int
    failures: Dict[str, int]
    max_multiplicity: int
    examples: List[str]


def covering_sweep(max_side: int = 20, d: int = 2, sorted_sides: Optional[bool] = None) -> CoveringSweep:
    """Check every (L, L')-covering of every box with sides <= ``max_side``.

    For d >= 3 only non-decreasing side tuples are enumerated by default; the
    construction acts axis by axis, so permuting the sides permutes the
    covering.
    """
    sorted_sides = d >= 3 if sorted_sides is None else sorted_sides
    sides_iter = (
        itertools.combinations_with_replacement(range(1, max_side + 1), d)
        if sorted_sides
        else itertools.product(range(1, max_side + 1), repeat=d)
    )
    failures = {k: 0 for k in ("union", "separation", "overlap", "uniqueness", "multiplicity")}
    cases = 0
    worst = 0
    examples: List[str] = []
    for sides in sides_iter:
        box = box_from_sides((0,) * d, sides)
        m = min(sides)
        for L in range(1, m + 1):
            for Lp in range(0, min(L, (m - L) // 2) + 1):
                cov = covering(box, L, Lp)
                props = covering_properties(cov)
                cases += 1
                worst = max(worst, _max_multiplicity(cov))
                for k, ok in props.items():
                    if not ok:
                        failures[k] += 1
                        if len(examples) < 20:
                            examples.append(f"sides={sides} L={L} L'={Lp}: {k}")
    return CoveringSweep(cases, failures, worst, examples)


def _max_multiplicity(cov) -> int:
    box = cov.box
    lo = np.array([cov.outer[i].lower for i in cov.indices]) - np.array(box.lower)
    hi = np.array([cov.outer[i].upper for i in cov.indices]) - np.array(box.lower)
    return int(_box_counts(box.shape, lo, hi).max())


def _flow_value(n: int, a: np.ndarray, b: np.ndarray, s: int, t: int) -> int:
    """Unit-capacity max flow between ``s`` and ``t`` on the undirected edges (a, b)."""
    if s == t:
        return 2
    rows = np.concatenate([a, b])
    cols = np.concatenate([b, a])
    g = csr_matrix((np.ones(len(rows), dtype=np.int32), (rows, cols)), shape=(n, n))
    g.sum_duplicates()
    return int(maximum_flow(g, s, t).flow_value)


def _connected(n: int, a: np.ndarray, b: np.ndarray, s: int, t: int) -> bool:
    g = csr_matrix((np.ones(len(a), dtype=np.int8), (a, b)), shape=(n, n))
    _, lab = connected_components(g, directed=False)
    return lab[s] == lab[t]


@dataclass
class PivotalAudit:
    configurations: int
    doubly_mismatches: int
    pivotal_mismatches: int
    first_failures: int
    connected_pairs: int
    with_pivotal: int
    examples: List[str]


def pivotal_audit(samples: int = 1000, seed: int = 0, N: int = 6, density_range=(0.3, 0.9)) -> PivotalAudit:
    """Compare double connections and pivotal bonds with flow and edge-removal oracles.

    Configurations live on the wired edges of {1..N-1}^2; each one uses an
    edge density drawn from ``density_range`` and a random pair x, y.
    """
    box = box_lambda(N, 2)
    E = edge_set(box, "wired")
    u, v = E.endpoints
    nv = len(E.vertices)
    verts = box.vertices()
    vi = E.vertex_index
    dm = pm = ff = pairs = withp = 0
    examples: List[str] = []
    for r in range(samples):
        rng = stream(seed, r)
        w = (rng.random(len(E)) < rng.uniform(*density_range)).astype(np.uint8)
        xa, ya = rng.choice(len(verts), size=2, replace=False)
        x, y = verts[xa], verts[ya]
        on = w.astype(bool)
        a, b = u[on], v[on]
        # doubly connected set: flow of value >= 2
        flow_set = {E.vertices[k] for k in range(nv) if _flow_value(nv, a, b, vi[x], k) >= 2}
        c2 = doubly_connected_set(w, E, x)
        if c2 != frozenset(flow_set):
            dm += 1
            if len(examples) < 20:
                examples.append(f"config {r}: doubly connected set of {x} differs from flow oracle")
        # pivotal bonds: open edges whose removal disconnects x and y
        joined = _connected(nv, a, b, vi[x], vi[y])
        brute = set()
        if joined:
            pairs += 1
            for k in np.flatnonzero(on):
                keep = on.copy()
                keep[k] = False
                if not _connected(nv, u[keep], v[keep], vi[x], vi[y]):
                    brute.add(E.edges[k])
        try:
            rep = first_pivotal_bond(w, E, x, y)
        except AssertionError:
            ff += 1
            continue
        if set(rep.pivotal) != brute or rep.connected != joined:
            pm += 1
            if len(examples) < 20:
                examples.append(f"config {r}: pivotal bonds of {x}, {y} differ from edge-removal oracle")
        if brute:
            withp += 1
            touching = [e for e in brute if e[0] in c2 or e[1] in c2]
            if len(touching) != 1 or rep.first != touching[0]:
                ff += 1
                if len(examples) < 20:
                    examples.append(f"config {r}: first pivotal bond is not the unique one touching C2")
    return PivotalAudit(samples, dm, pm, ff, pairs, withp, examples)


# --------------------------------------------------------------------------
# sampler, coupling and constant checks
# --------------------------------------------------------------------------


def unit_square() -> EdgeSet:
    return EdgeSet([((0, 0), (1, 0)), ((0, 0), (0, 1)), ((1, 0), (1, 1)), ((0, 1), (1, 1))])


@dataclass
class SamplerCheck:
    bc: str
    exact: np.ndarray
    freq: np.ndarray
    se: np.ndarray
    max_z: float
    balance_residual: float
    stationarity_residual: float


def sampler_check(
    E: EdgeSet,
    J,
    params: FKParams,
    bc: str,
    sweeps: int = 10**6,
    batches: int = 1000,
    seed: int = 0,
    method: str = "heat-bath",
) -> SamplerCheck:
    """Configuration frequencies of a long chain against the exact table.

    Standard errors come from ``batches`` batch means, so they include the
    autocorrelation of the chain.  Residuals are taken on the explicit
    transition matrices: detailed balance of every single-edge kernel and
    stationarity of the full sweep (or cluster) kernel.
    """
    exact = exact_distribution(E, J, params, bc).probs
    state = new_chain(E, J, params, bc, seed, method)
    state.sweep(100)
    snaps = state.record(sweeps, 1)
    codes = snaps.astype(np.int64) @ (1 << np.arange(len(E)))
    n = 1 << len(E)
    per = sweeps // batches
    counts = np.stack([np.bincount(codes[b * per : (b + 1) * per], minlength=n) / per for b in range(batches)])
    freq = counts.mean(axis=0)
    se = counts.std(axis=0, ddof=1) / math.sqrt(batches)
    z = np.abs(freq - exact) / np.maximum(se, 1e-300)
    balance = 0.0
    for e in range(len(E)):
        K = single_edge_kernel(E, J, params, bc, e)
        flux = exact[:, None] * K
        balance = max(balance, float(np.abs(flux - flux.T).max()))
    K = cluster_kernel(E, J, params, bc) if state.method == "swendsen-wang" else sweep_kernel(E, J, params, bc)
    stat = float(np.abs(exact @ K - exact).max())
    return SamplerCheck(bc, exact, freq, se, float(z.max()), balance, stat)


@dataclass
class CouplingCheck:
    tv_spins: float
    tv_bonds: float
    stationarity: float
    conditional_spins: float


def coupling_check(box: Box, J, beta: float) -> CouplingCheck:
    """Exact Edwards-Sokal marginals and cluster-kernel stationarity on a small box."""
    E = edge_set(box, "wired")
    J = np.broadcast_to(np.asarray(J, dtype=float), (len(E),))
    joint = joint_exact(box, J, beta)
    spins = ising_exact(box, J, beta).probs
    bonds = exact_distribution(E, J, FKParams(q=2.0, family="ising", beta=beta), "wired").probs
    tv_s = 0.5 * float(np.abs(joint.sum(axis=1) - spins).sum())
    tv_b = 0.5 * float(np.abs(joint.sum(axis=0) - bonds).sum())
    K = cluster_kernel_spins(box, J, beta)
    stat = float(np.abs(spins @ K - spins).max())
    # the spin law given the bonds: uniform over compatible spins with plus on boundary clusters
    cond = joint / np.maximum(joint.sum(axis=0, keepdims=True), 1e-300)
    sig = spin_configs(box.size)
    bits = config_bits(len(E))
    worst = 0.0
    for c in range(len(bits)):
        if joint[:, c].sum() == 0:
            continue
        ok = np.array([compatible(s, bits[c], box) for s in sig])
        ref = ok / ok.sum()
        worst = max(worst, float(np.abs(cond[:, c] - ref).max()))
    return CouplingCheck(tv_s, tv_b, stat, worst)


@dataclass
class ConstantsCheck:
    at_one: float
    prime_at_one: float
    min_increment: float
    guard_failures: int
    prime_excess: float


def constants_check(K_values: Sequence[int] = tuple(range(2, 9)), grid: int = 1000) -> ConstantsCheck:
    """Endpoint values, monotonicity on a grid, domain guards and r' <= r."""
    dev1 = dev2 = 0.0
    inc = math.inf
    guard = 0
    excess = -math.inf
    for K in K_values:
        dev1 = max(dev1, abs(r_lss(K, 1.0) - 1.0))
        dev2 = max(dev2, abs(r_prime(K, 1.0) - 1.0))
        thr = lss_threshold(K)
        ps = np.linspace(thr, 1.0, grid)
        vals = np.array([r_lss(K, p) for p in ps])
        inc = min(inc, float(np.diff(vals).min()))
        for p in (thr - 1e-9, thr / 2, 0.0):
            try:
                r_lss(K, p)
                guard += 1
            except DomainError as exc:
                if exc.threshold != thr:
                    guard += 1
        # r' is defined where 1 - sqrt(1 - p) reaches the threshold
        pp = ps[1 - np.sqrt(1 - ps) >= thr]
        if len(pp):
            excess = max(excess, float(max(r_prime(K, p) - r_lss(K, p) for p in pp)))
    return ConstantsCheck(dev1, dev2, inc, guard, float(excess))
