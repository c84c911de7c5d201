"""Block events for the coarse-graining of random-cluster configurations.

All configurations ``omega`` and couplings ``J`` are arrays aligned with the
wired edge set of the ambient box ``box``; edges outside it count as closed
(for ``omega``) or absent (for ``J``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import _graph
from .clusters import decompose, doubly_connected_set, horizontal_interface, restrict
from .fk import DisorderLaw, FKParams
from .lattice import (
    BlockIndex,
    Box,
    EdgeSet,
    Facet,
    Point,
    box_log,
    check_admissible,
    closed_block,
    edge_set,
    extended_block,
    facets,
    log_height,
)


def scale_H(L: int, delta: float, d: int) -> int:
    """H = floor((delta log L)^(1/d))."""
    H = int(math.floor((delta * math.log(L)) ** (1.0 / d) + 1e-12))
    if H < 1:
        raise ValueError(f"scale H = {H} < 1 for L={L}, delta={delta}, d={d}")
    return H


@lru_cache(maxsize=256)
def _block_edges(box: Box, i: BlockIndex, L: int) -> EdgeSet:
    """Edges of the closed block ``i`` that also belong to the wired edges of ``box``."""
    E = edge_set(box, "wired")
    B = edge_set(closed_block(i, L), "free")
    keep = [e for e in B.edges if e in E.index]
    return EdgeSet(keep, kind="block")


def _facet_open(omega: np.ndarray, E: EdgeSet, f: Facet) -> bool:
    idx = E.index
    for e in f.edges():
        k = idx.get(e)
        if k is None or not omega[k]:
            return False
    return True


def find_seed(omega: np.ndarray, box: Box, i: BlockIndex, face: Tuple[int, int], L: int, H: int) -> Optional[Facet]:
    """First facet (lexicographic in j) that misses ``box`` or has all its edges open."""
    E = edge_set(box, "wired")
    axis, side = face
    for f in facets(tuple(i), L, H, axis, side):
        fb = f.box
        if fb.intersect(box) is None or _facet_open(omega, E, f):
            return f
    return None


@dataclass
class SeedEvent:
    holds: bool
    seeds: Dict[Tuple[int, int], Optional[Facet]]


def event_E_LH(omega: np.ndarray, box: Box, i: BlockIndex, L: int, H: int) -> SeedEvent:
    """Every face of block ``i`` has a seed and one cluster of the block edges meets all seeds."""
    d = box.dim
    check_admissible(box, L)
    seeds = {}
    for axis in range(d):
        for side in (0, 1):
            seeds[(axis, side)] = find_seed(omega, box, i, (axis, side), L, H)
    if any(s is None for s in seeds.values()):
        return SeedEvent(False, seeds)
    Eb = _block_edges(box, tuple(i), L)
    local = restrict(omega, edge_set(box, "wired"), Eb)
    dec = decompose(local, Eb)
    vi = Eb.vertex_index
    common = None
    for f in seeds.values():
        labs = {int(dec.labels[vi[x]]) for x in f.points() if x in vi}
        common = labs if common is None else common & labs
        if not common:
            return SeedEvent(False, seeds)
    return SeedEvent(bool(common), seeds)


def event_E_L(omega: np.ndarray, box: Box, i: BlockIndex, L: int, delta: float) -> bool:
    return event_E_LH(omega, box, i, L, scale_H(L, delta, box.dim)).holds


def event_D(omega: np.ndarray, box: Box, i: BlockIndex, L: int, delta: float = 1.0, H: Optional[int] = None) -> bool:
    """The seed event at scale L/3 holds for all 3^d sub-blocks of block ``i``."""
    if L % 3 != 0:
        raise ValueError("the sub-block event needs L divisible by 3")
    l = L // 3
    h = scale_H(l, delta, box.dim) if H is None else H
    d = box.dim
    for off in np.ndindex(*(3,) * d):
        j = tuple(3 * a + b for a, b in zip(i, off))
        if not event_E_LH(omega, box, j, l, h).holds:
            return False
    return True


def cutoff_epsilon(rho: DisorderLaw, L: float) -> float:
    """Largest eps in (0, 1] with P(0 < J < eps) <= exp(-L)."""
    bound = math.exp(-L)
    positive = [(v, p) for v, p in zip(rho.values, rho.probs) if v > 0 and p > 0]
    cum = 0.0
    eps = 1.0
    for v, p in positive:
        # for eps just above v the open interval (0, eps) contains this atom
        if cum + p > bound * (1 + 1e-12):
            eps = v
            break
        cum += p
    return float(eps)


@dataclass(frozen=True)
class CutoffPolicy:
    rho: DisorderLaw

    def __call__(self, L: float) -> float:
        return cutoff_epsilon(self.rho, L)


@lru_cache(maxsize=256)
def _sub_edges(box: Box, sub: Box) -> EdgeSet:
    return edge_set(sub, "wired")


def event_G(J: np.ndarray, box: Box, i: BlockIndex, L: int, eps: float) -> bool:
    """Unique J-open cluster of diameter >= L near block ``i`` and no small positive couplings."""
    E = edge_set(box, "wired")
    b1 = extended_block(box, tuple(i), L, 1)
    b3 = extended_block(box, tuple(i), L, 3)
    if b1 is None or b3 is None:
        return False
    E3 = _sub_edges(box, b3)
    J3 = _restrict_values(J, E, E3)
    if np.any((J3 > 0) & (J3 < eps)):
        return False
    E1 = _sub_edges(box, b1)
    J1 = _restrict_values(J, E, E1)
    dec = decompose((J1 > 0).astype(np.uint8), E1)
    return int(np.count_nonzero(dec.diameters >= L)) == 1


def _restrict_values(x: np.ndarray, E: EdgeSet, sub: EdgeSet) -> np.ndarray:
    idx = _cached_map(E, sub)
    out = np.zeros(len(sub))
    ok = idx >= 0
    out[ok] = np.asarray(x, dtype=float)[idx[ok]]
    return out


@lru_cache(maxsize=512)
def _cached_map(E: EdgeSet, sub: EdgeSet) -> np.ndarray:
    return E.restrict_map(sub)


def event_T(omega: np.ndarray, J: np.ndarray, box: Box, i: BlockIndex, L: int, delta: float, eps: float) -> bool:
    return event_D(omega, box, i, L, delta) and event_G(J, box, i, L, eps)


@dataclass
class InterfaceResult:
    holds: bool
    good: List[BlockIndex]
    region: Box


def event_L(
    J: np.ndarray,
    omega: np.ndarray,
    n: int,
    L: int,
    d: int,
    eps: float,
    overlay: Iterable = (),
) -> InterfaceResult:
    """Good blocks meeting C2(o) contain a horizontal interface of the logarithmic slab.

    ``J`` and ``omega`` live on the wired edges of the slab
    {1..Ln-1}^(d-1) x {1..L ceil(log n) - 1} and o = (1, ..., 1).
    """
    box = box_log(n, L, d)
    E = edge_set(box, "wired")
    h = log_height(n)
    region = Box((0,) * (d - 1) + (1,), (n - 1,) * (d - 1) + (h - 1,))
    c2 = doubly_connected_set(omega, E, (1,) * d, overlay)
    good = []
    for i in region.vertices():
        blk = closed_block(i, L)
        if not any(blk.contains(x) for x in c2):
            continue
        if event_G(J, box, i, L, eps):
            good.append(i)
    return InterfaceResult(horizontal_interface(good, region), good, region)


@dataclass
class SlabProbe:
    value: float
    per_case: Dict[Tuple[str, str, Point], float]
    se: float


def j_good_slab_probe(
    J: np.ndarray,
    n: int,
    L: int,
    d: int,
    params: FKParams,
    samples: int = 50,
    seed: int = 0,
    points: Optional[Sequence[Point]] = None,
    sweeps: int = 40,
) -> SlabProbe:
    """Monte Carlo proxy for the slab goodness of the couplings ``J``.

    For bottom points x, boundary conditions free and wired, and lower
    half-space configurations empty or full, estimate the probability that
    x reaches o or fails to reach the top, and return the minimum.  A full
    lower configuration wires all bottom vertices together.
    """
    from .sampler import new_chain, seed_sequence

    box = box_log(n, L, d)
    E = edge_set(box, "wired")
    o = (1,) * d
    top_h = box.upper[-1] + 1
    verts = E.vertices
    vi = E.vertex_index
    bottom_ids = np.array([k for k, v in enumerate(verts) if v[-1] == 0], dtype=np.int64)
    top_ids = np.array([k for k, v in enumerate(verts) if v[-1] == top_h], dtype=np.int64)
    if points is None:
        rng = np.random.default_rng(seed_sequence(seed, 999))
        pick = rng.choice(len(bottom_ids), size=min(4, len(bottom_ids)), replace=False)
        points = [verts[bottom_ids[k]] for k in sorted(pick)]
    u, v = E.endpoints
    nv = len(verts)
    # extra edges wiring the bottom layer in a chain
    extra_u = bottom_ids[:-1]
    extra_v = bottom_ids[1:]
    per_case = {}
    counter = 0
    for bc in ("free", "wired"):
        state = new_chain(E, J, params, bc, seed_sequence(seed, counter), method="auto")
        counter += 1
        hits = {(xi, x): 0 for xi in ("empty", "full") for x in points}
        for _ in range(samples):
            state.sweep(sweeps)
            w = state.omega
            for xi in ("empty", "full"):
                if xi == "full":
                    eu = np.concatenate([u, extra_u])
                    ev = np.concatenate([v, extra_v])
                    ww = np.concatenate([w, np.ones(len(extra_u), dtype=np.uint8)])
                else:
                    eu, ev, ww = u, v, w
                labels, _ = _graph.component_labels(nv, eu, ev, ww)
                top_labels = set(labels[top_ids].tolist())
                for x in points:
                    lx = labels[vi[x]]
                    if lx == labels[vi[o]] or lx not in top_labels:
                        hits[(xi, x)] += 1
        for (xi, x), c in hits.items():
            per_case[(bc, xi, x)] = c / samples
    worst = min(per_case.values())
    se = math.sqrt(max(worst * (1 - worst), 1e-12) / samples)
    return SlabProbe(worst, per_case, se)
