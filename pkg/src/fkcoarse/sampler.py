"""Markov chain samplers for the quenched and averaged random-cluster measures.

Randomness: every stream is a PCG64 generator seeded by
``SeedSequence(seed, spawn_key=key)``.  For replica ``r`` of an averaged run
the couplings use key ``(r, 0)`` and the chain uses key ``(r, 1)``; the
blocks of a product-of-blocks sample use key ``(..., b, 0)`` and
``(..., b, 1)`` for block ``b`` and the lateral edges use ``(..., nblocks, 0)``.
Each sweep draws its uniforms in edge order, so runs are reproducible for a
fixed seed regardless of the number of worker threads.

Two update rules are available.  The heat-bath rule resamples single edges
from their conditional law.  The cluster rule (integer ``q >= 2``) colours
the clusters uniformly and redraws the bonds, which mixes much faster in the
ordered phase.  With ``q = 1`` a single heat-bath sweep is an exact sample.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator, List, Optional, Tuple, Union

import numpy as np

from . import _graph
from .fk import (
    BoundaryLike,
    BoundaryPartition,
    CompiledGraph,
    FKParams,
    compile_graph,
    config_bits,
    fk_table,
    free_single_edge,
    resolve_boundary,
)
from .lattice import Box, EdgeSet, block_partition, edge_set, inner_block

SeedLike = Union[int, np.random.SeedSequence]
WORKERS_ENV = "FK_COARSE_WORKERS"


def seed_sequence(seed: SeedLike, *key: int) -> np.random.SeedSequence:
    """Child sequence of ``seed`` extended by ``key`` (deterministic, order free)."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + tuple(key))
    if int(seed) < 0:
        raise ValueError("seeds must be non-negative")
    return np.random.SeedSequence(int(seed), spawn_key=tuple(key))


def stream(seed: SeedLike, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *key)))


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class Schedule:
    """Total sweeps, sweeps discarded as burn-in, and sweeps between records."""

    sweeps: int = 200
    burn_in: int = 100
    thin: int = 10

    def __post_init__(self):
        if self.burn_in < 0 or self.thin < 1:
            raise ValueError("burn_in must be >= 0 and thin >= 1")
        if self.sweeps <= self.burn_in:
            raise ValueError("sweeps must exceed burn_in")

    @property
    def n_samples(self) -> int:
        return (self.sweeps - self.burn_in) // self.thin


def _resolve_method(method: str, q: float) -> str:
    if method == "auto":
        if q == 1:
            return "heat-bath"
        return "swendsen-wang" if float(q).is_integer() else "heat-bath"
    if method not in ("heat-bath", "swendsen-wang"):
        raise ValueError(f"unknown update rule {method!r}")
    if method == "swendsen-wang" and not (float(q).is_integer() and q >= 1):
        raise ValueError("the cluster update needs an integer q")
    return method


@dataclass
class ChainState:
    """A bond configuration together with everything needed to update it."""

    edges: EdgeSet
    graph: CompiledGraph
    partition: BoundaryPartition
    p: np.ndarray
    q: float
    omega: np.ndarray
    rng: np.random.Generator
    method: str = "heat-bath"
    scan: str = "systematic"
    sweeps_done: int = 0
    _mark: np.ndarray = field(default=None, repr=False)
    _stamp: int = 0

    def __post_init__(self):
        if self._mark is None:
            self._mark = np.full(self.graph.n, -1, dtype=np.int64)
        self.pt = free_single_edge(self.p, self.q)
        self.spins = np.zeros(self.graph.n, dtype=np.int64)

    @property
    def m(self) -> int:
        return len(self.edges)

    def _orders(self, n: int) -> np.ndarray:
        if self.scan == "systematic":
            return np.broadcast_to(np.arange(self.m, dtype=np.int64), (n, self.m))
        return self.rng.integers(0, self.m, size=(n, self.m), dtype=np.int64)

    def sweep(self, n: int = 1) -> "ChainState":
        """Apply ``n`` sweeps of the configured update rule."""
        if n <= 0:
            return self
        if self.method == "swendsen-wang":
            u_spin = self.rng.random((n, self.graph.n))
            u_bond = self.rng.random((n, self.m))
            g = self.graph
            _graph.swendsen_wang_run(g.n, g.eu, g.ev, self.omega, self.p, int(self.q), u_spin, u_bond, -1, 0, self.spins)
        else:
            orders = self._orders(n)
            uniforms = self.rng.random((n, self.m))
            if self.q == 1:
                # edges are independent: the heat-bath rule reduces to a fresh draw
                for s in range(n):
                    self.omega[orders[s]] = (uniforms[s] < self.p[orders[s]]).astype(np.uint8)
            else:
                g = self.graph
                self._stamp = _graph.heat_bath_run(
                    g.eu, g.ev, g.ptr, g.adj_e, g.adj_n, self.omega, self.p, self.pt, uniforms, orders, self._mark, self._stamp
                )
        self.sweeps_done += n
        return self

    def record(self, n_sweeps: int, thin: int) -> np.ndarray:
        """Run ``n_sweeps`` heat-bath sweeps, returning the state after every ``thin``-th."""
        if self.method != "heat-bath" or self.scan != "systematic":
            out = []
            for _ in range(n_sweeps // thin):
                self.sweep(thin)
                out.append(self.omega.copy())
            return np.array(out, dtype=np.uint8).reshape(-1, self.m)
        orders = self._orders(n_sweeps)
        uniforms = self.rng.random((n_sweeps, self.m))
        out = np.zeros((n_sweeps // thin, self.m), dtype=np.uint8)
        g = self.graph
        self._stamp = _graph.heat_bath_record(
            g.eu, g.ev, g.ptr, g.adj_e, g.adj_n, self.omega, self.p, self.pt, uniforms, orders, self._mark, self._stamp, thin, out
        )
        self.sweeps_done += n_sweeps
        return out


def new_chain(
    E: EdgeSet,
    J,
    params: FKParams,
    pi: BoundaryLike = None,
    seed: SeedLike = 0,
    method: str = "heat-bath",
    scan: str = "systematic",
    init: str = "closed",
) -> ChainState:
    """Initialise a chain for the quenched measure with couplings ``J``."""
    pi = resolve_boundary(E, pi)
    J = np.broadcast_to(np.asarray(J, dtype=float), (len(E),))
    p = np.ascontiguousarray(params.p(J), dtype=float)
    if np.any(p >= 1) or np.any(p < 0):
        raise ValueError("edge probabilities must lie in [0, 1)")
    if scan not in ("systematic", "random"):
        raise ValueError(f"unknown scan {scan!r}")
    if init == "closed":
        omega = np.zeros(len(E), dtype=np.uint8)
    elif init == "open":
        omega = (p > 0).astype(np.uint8)
    else:
        raise ValueError(f"unknown initial state {init!r}")
    rng = seed if isinstance(seed, np.random.Generator) else stream(seed)
    return ChainState(E, compile_graph(E, pi), pi, p, float(params.q), omega, rng, _resolve_method(method, params.q), scan)


def heat_bath_step(state: ChainState, e: int, u: Optional[float] = None) -> ChainState:
    """Resample edge ``e``: open with ``p`` if its endpoints are joined off ``e``, else with the free value."""
    if u is None:
        u = state.rng.random()
    prob = conditional_open_probability(state.graph, state.omega, state.p, state.q, e)
    state.omega[e] = 1 if u < prob else 0
    return state


def conditional_open_probability(graph: CompiledGraph, omega: np.ndarray, p: np.ndarray, q: float, e: int) -> float:
    """Probability that edge ``e`` is open given the other edges."""
    mark = np.full(graph.n, -1, dtype=np.int64)
    qa = np.empty(graph.n, np.int64)
    qb = np.empty(graph.n, np.int64)
    joined = _graph.connected_without(
        graph.eu[e], graph.ev[e], e, graph.ptr, graph.adj_e, graph.adj_n, np.asarray(omega, dtype=np.uint8), mark, 0, qa, qb
    )
    return float(p[e]) if joined else float(free_single_edge(p[e], q))


def single_edge_kernel(E: EdgeSet, J, params: FKParams, pi: BoundaryLike, e: int) -> np.ndarray:
    """Exact ``2^m x 2^m`` transition matrix of the heat-bath update of edge ``e``."""
    pi = resolve_boundary(E, pi)
    g = compile_graph(E, pi)
    p = params.p(np.broadcast_to(np.asarray(J, dtype=float), (len(E),)))
    bits = config_bits(len(E))
    n = len(bits)
    K = np.zeros((n, n))
    for c in range(n):
        prob = conditional_open_probability(g, bits[c], p, params.q, e)
        K[c, c | (1 << e)] += prob
        K[c, c & ~(1 << e)] += 1 - prob
    return K


def sweep_kernel(E: EdgeSet, J, params: FKParams, pi: BoundaryLike) -> np.ndarray:
    """Transition matrix of one systematic sweep (edges in canonical order)."""
    K = np.eye(1 << len(E))
    for e in range(len(E)):
        K = K @ single_edge_kernel(E, J, params, pi, e)
    return K


def cluster_kernel(E: EdgeSet, J, params: FKParams, pi: BoundaryLike) -> np.ndarray:
    """Exact transition matrix of one colour-and-redraw cluster update (integer q)."""
    pi = resolve_boundary(E, pi)
    g = compile_graph(E, pi)
    q = int(params.q)
    p = params.p(np.broadcast_to(np.asarray(J, dtype=float), (len(E),)))
    bits = config_bits(len(E))
    n = len(bits)
    K = np.zeros((n, n))
    for c in range(n):
        labels, count = _graph.component_labels(g.n, g.eu, g.ev, bits[c])
        for colours in np.ndindex(*(q,) * count):
            col = np.asarray(colours)[labels]
            agree = col[g.eu] == col[g.ev]
            probs = np.where(bits.astype(bool), agree * p, 1 - agree * p).prod(axis=1)
            K[c] += probs / q**count
    return K


# --------------------------------------------------------------------------
# batch samplers
# --------------------------------------------------------------------------


def integrated_autocorr_time(x: np.ndarray, c: float = 5.0) -> float:
    """Integrated autocorrelation time with an automatic window."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 4 or np.var(x) == 0:
        return 1.0
    y = x - x.mean()
    f = np.fft.rfft(y, n=2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    acf /= acf[0]
    tau = 1.0
    for w in range(1, n):
        tau = 1.0 + 2.0 * acf[1 : w + 1].sum()
        if w >= c * tau:
            break
    return float(max(tau, 1.0))


@dataclass
class SampleBatch:
    """Thinned output of one chain: configurations and/or observations."""

    configs: Optional[np.ndarray]
    observations: List
    density_trace: np.ndarray
    seed_key: Tuple[int, ...] = ()

    @property
    def tau_int(self) -> float:
        return integrated_autocorr_time(self.density_trace)


def run_schedule(
    state: ChainState,
    schedule: Schedule,
    observe: Optional[Callable[[np.ndarray], object]] = None,
    keep_configs: bool = True,
) -> SampleBatch:
    """Burn in, then record every ``thin`` sweeps until ``sweeps`` is reached."""
    state.sweep(schedule.burn_in)
    configs, obs, trace = [], [], []
    for _ in range(schedule.n_samples):
        state.sweep(schedule.thin)
        w = state.omega
        trace.append(w.mean())
        if keep_configs:
            configs.append(w.copy())
        if observe is not None:
            obs.append(observe(w))
    arr = np.array(configs, dtype=np.uint8).reshape(-1, state.m) if keep_configs else None
    return SampleBatch(arr, obs, np.array(trace))


def sample_quenched(
    E: EdgeSet,
    J,
    params: FKParams,
    pi: BoundaryLike = None,
    schedule: Schedule = Schedule(),
    seed: SeedLike = 0,
    method: str = "heat-bath",
    scan: str = "systematic",
    init: str = "closed",
    observe: Optional[Callable[[np.ndarray], object]] = None,
    keep_configs: bool = True,
) -> SampleBatch:
    """Sample the quenched measure with fixed couplings ``J``."""
    state = new_chain(E, J, params, pi, seed, method, scan, init)
    return run_schedule(state, schedule, observe, keep_configs)


def _replica(args):
    E, rho, params, pi, schedule, seed, r, method, init, observe, keep = args
    J = rho.sample(stream(seed, r, 0), len(E))
    state = new_chain(E, J, params, pi, seed_sequence(seed, r, 1), method, init=init)
    batch = run_schedule(state, schedule, lambda w: observe(J, w) if observe else None, keep)
    if observe is None:
        batch.observations = []
    batch.seed_key = (r,)
    return J, batch


def sample_averaged(
    E: EdgeSet,
    rho,
    params: FKParams,
    pi: BoundaryLike = None,
    replicas: int = 10,
    schedule: Schedule = Schedule(),
    seed: SeedLike = 0,
    method: str = "auto",
    init: str = "closed",
    observe: Optional[Callable[[np.ndarray, np.ndarray], object]] = None,
    keep_configs: bool = True,
    workers: Optional[int] = None,
    first_replica: int = 0,
) -> Iterator[Tuple[np.ndarray, SampleBatch]]:
    """Yield ``(J, batch)`` for independent replicas of the averaged measure.

    ``observe(J, omega)`` is applied to every recorded configuration.
    """
    pi = resolve_boundary(E, pi)
    workers = default_workers() if workers is None else workers
    jobs = (
        (E, rho, params, pi, schedule, seed, r, method, init, observe, keep_configs)
        for r in range(first_replica, first_replica + replicas)
    )
    if workers <= 1:
        for job in jobs:
            yield _replica(job)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            yield from pool.map(_replica, jobs)


def sample_exact(table, rng: np.random.Generator) -> np.ndarray:
    """Draw one configuration from an exact table."""
    c = int(np.searchsorted(np.cumsum(table.probs), rng.random() * table.probs.sum(), side="right"))
    c = min(c, len(table.probs) - 1)
    m = len(table.edges)
    return ((c >> np.arange(m)) & 1).astype(np.uint8)


def sample_psi(
    box: Box,
    L: int,
    rho,
    params: FKParams,
    seed: SeedLike = 0,
    schedule: Schedule = Schedule(sweeps=60, burn_in=59, thin=1),
    method: str = "auto",
    exact_max_edges: int = 16,
) -> Tuple[np.ndarray, np.ndarray]:
    """One draw ``(J, omega)`` on the wired edges of ``box`` from the product-of-blocks law.

    Each inner block carries an averaged free measure on its wired edges and
    every lateral edge is an independent averaged free single edge.
    """
    part = block_partition(box, L)
    E = part.edges
    J = np.zeros(len(E))
    omega = np.zeros(len(E), dtype=np.uint8)
    for b, i in enumerate(part.indices):
        Eb = edge_set(inner_block(i, L), "wired")
        Jb = rho.sample(stream(seed, b, 0), len(Eb))
        if len(Eb) <= exact_max_edges:
            wb = sample_exact(fk_table(Eb, params.p(Jb), params.q, "free"), stream(seed, b, 1))
        else:
            state = new_chain(Eb, Jb, params, "free", seed_sequence(seed, b, 1), method)
            state.sweep(schedule.sweeps)
            wb = state.omega
        idx = part.inner_edges[i]
        J[idx] = Jb
        omega[idx] = wb
    lat = part.lateral
    rng = stream(seed, len(part.indices), 0)
    Jl = rho.sample(rng, len(lat))
    J[lat] = Jl
    omega[lat] = (rng.random(len(lat)) < free_single_edge(params.p(Jl), params.q)).astype(np.uint8)
    return J, omega
