"""Cluster structure of bond configurations.

Configurations are 0/1 arrays aligned with an :class:`EdgeSet`.  Diameters
use the sup norm.  An optional ``overlay`` lists extra edges (for example a
boundary configuration outside the edge set) that are treated as open.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
from scipy import ndimage

from . import _graph
from .fk import BoundaryLike, compile_graph, resolve_boundary
from .lattice import Box, Edge, EdgeSet, Point, boundary_faces, make_edge


@dataclass
class ClusterDecomposition:
    """Connected components of the open subgraph on the vertices of ``E``.

    ``labels[k]`` is the cluster of ``E.vertices[k]``; clusters are numbered
    by their lowest vertex in lexicographic order.
    """

    edges: EdgeSet
    labels: np.ndarray
    n_clusters: int
    sizes: np.ndarray
    diameters: np.ndarray

    def members(self, c: int) -> List[Point]:
        vs = self.edges.vertices
        return [vs[k] for k in np.flatnonzero(self.labels == c)]

    def label_of(self, x: Point) -> int:
        return int(self.labels[self.edges.vertex_index[tuple(x)]])


def decompose(omega: np.ndarray, E: EdgeSet, pi: BoundaryLike = None) -> ClusterDecomposition:
    """Union-find decomposition of ``omega``; ``pi`` optionally wires boundary groups."""
    omega = np.asarray(omega, dtype=np.uint8)
    if omega.shape != (len(E),):
        raise ValueError("configuration length does not match the edge set")
    if pi is None or pi == "free":
        u, v = E.endpoints
        labels, count = _graph.component_labels(len(E.vertices), u, v, omega)
    else:
        g = compile_graph(E, resolve_boundary(E, pi))
        node_labels, count = _graph.component_labels(g.n, g.eu, g.ev, omega)
        labels = node_labels[g.node_of]
        # renumber so that labels follow the vertex order
        _, first = np.unique(labels, return_index=True)
        order = np.argsort(first)
        remap = np.empty(count, dtype=np.int64)
        remap[np.unique(labels)[order]] = np.arange(count)
        labels = remap[labels]
    coords = E.coords
    sizes = np.bincount(labels, minlength=count)
    d = coords.shape[1]
    diam = np.zeros(count, dtype=np.int64)
    for k in range(d):
        hi = np.full(count, np.iinfo(np.int64).min)
        lo = np.full(count, np.iinfo(np.int64).max)
        np.maximum.at(hi, labels, coords[:, k])
        np.minimum.at(lo, labels, coords[:, k])
        diam = np.maximum(diam, hi - lo)
    return ClusterDecomposition(E, labels, int(count), sizes, diam)


@lru_cache(maxsize=128)
def _face_masks(E: EdgeSet, box: Box) -> Tuple[np.ndarray, ...]:
    vi = E.vertex_index
    out = []
    for key, pts in sorted(boundary_faces(box).items()):
        mask = np.zeros(len(E.vertices), dtype=bool)
        for x in pts:
            k = vi.get(x)
            if k is not None:
                mask[k] = True
        out.append(mask)
    return tuple(out)


@lru_cache(maxsize=128)
def _inside_mask(E: EdgeSet, box: Box) -> np.ndarray:
    c = E.coords
    return np.all((c >= np.array(box.lower)) & (c <= np.array(box.upper)), axis=1)


def crossing_clusters(dec: ClusterDecomposition, box: Box) -> List[int]:
    """Clusters meeting every face of the exterior boundary of ``box``."""
    ok = np.ones(dec.n_clusters, dtype=bool)
    for mask in _face_masks(dec.edges, box):
        hit = np.zeros(dec.n_clusters, dtype=bool)
        hit[dec.labels[mask]] = True
        ok &= hit
    return [int(c) for c in np.flatnonzero(ok)]


def crossing_cluster(dec: ClusterDecomposition, box: Box) -> Optional[int]:
    """The largest crossing cluster, or None."""
    cs = crossing_clusters(dec, box)
    if not cs:
        return None
    return max(cs, key=lambda c: (dec.sizes[c], -c))


@dataclass
class CrossingReport:
    crossing: Optional[int]
    n_crossing: int
    unique_large: bool


def unique_large(dec: ClusterDecomposition, box: Box, l: float) -> CrossingReport:
    """Crossing cluster exists and is the only cluster of diameter at least ``l``."""
    cs = crossing_clusters(dec, box)
    c = crossing_cluster(dec, box)
    if c is None:
        return CrossingReport(None, 0, False)
    large = np.flatnonzero(dec.diameters >= l)
    ok = all(k == c for k in large)
    return CrossingReport(c, len(cs), bool(ok))


def density(dec: ClusterDecomposition, c: Optional[int], box: Box) -> float:
    """Fraction of the vertices of ``box`` that belong to cluster ``c``."""
    if c is None:
        return 0.0
    inside = _inside_mask(dec.edges, box)
    return float(np.count_nonzero(inside & (dec.labels == c)) / box.size)


def isolated_small_clusters(dec: ClusterDecomposition, box: Box, threshold: Optional[int] = None) -> int:
    """Clusters inside ``box`` that avoid its exterior boundary, of size at most ``threshold``."""
    inside = _inside_mask(dec.edges, box)
    touches_out = np.zeros(dec.n_clusters, dtype=bool)
    touches_out[dec.labels[~inside]] = True
    has_in = np.zeros(dec.n_clusters, dtype=bool)
    has_in[dec.labels[inside]] = True
    ok = has_in & ~touches_out
    if threshold is not None:
        ok &= dec.sizes <= threshold
    return int(np.count_nonzero(ok))


def restrict(omega: np.ndarray, E: EdgeSet, sub: EdgeSet) -> np.ndarray:
    """Values of ``omega`` on the edges of ``sub`` (edges absent from ``E`` are closed)."""
    idx = _restrict_map(E, sub)
    out = np.zeros(len(sub), dtype=np.uint8)
    ok = idx >= 0
    out[ok] = np.asarray(omega)[idx[ok]]
    return out


@lru_cache(maxsize=512)
def _restrict_map(E: EdgeSet, sub: EdgeSet) -> np.ndarray:
    return E.restrict_map(sub)


# --------------------------------------------------------------------------
# bridges, doubly connected sets and pivotal bonds
# --------------------------------------------------------------------------


class _OpenGraph:
    """Adjacency lists of the open edges of ``omega`` plus the overlay."""

    def __init__(self, omega, E: EdgeSet, overlay: Iterable[Edge] = ()):
        open_edges = {e for e, w in zip(E.edges, np.asarray(omega)) if w}
        open_edges.update(make_edge(a, b) for a, b in overlay)
        self.edges: List[Edge] = sorted(open_edges)
        verts = set()
        for a, b in self.edges:
            verts.add(a)
            verts.add(b)
        self.vertices = sorted(verts)
        self.index = {v: k for k, v in enumerate(self.vertices)}
        self.adj: List[List[Tuple[int, int]]] = [[] for _ in self.vertices]
        for k, (a, b) in enumerate(self.edges):
            ia, ib = self.index[a], self.index[b]
            self.adj[ia].append((ib, k))
            self.adj[ib].append((ia, k))

    def component(self, s: int, banned: Set[int] = frozenset()) -> Set[int]:
        seen = {s}
        todo = deque([s])
        while todo:
            v = todo.popleft()
            for w, k in self.adj[v]:
                if k not in banned and w not in seen:
                    seen.add(w)
                    todo.append(w)
        return seen

    def bridges(self, s: int) -> Set[int]:
        """Bridges of the component of node ``s`` (iterative low-link search)."""
        disc: Dict[int, int] = {s: 0}
        low: Dict[int, int] = {s: 0}
        out: Set[int] = set()
        t = 1
        stack = [(s, -1, iter(self.adj[s]))]
        while stack:
            v, pe, it = stack[-1]
            pushed = False
            for w, k in it:
                if k == pe:
                    continue
                if w not in disc:
                    disc[w] = low[w] = t
                    t += 1
                    stack.append((w, k, iter(self.adj[w])))
                    pushed = True
                    break
                low[v] = min(low[v], disc[w])
            if not pushed:
                stack.pop()
                if stack:
                    u = stack[-1][0]
                    low[u] = min(low[u], low[v])
                    if low[v] > disc[u]:
                        out.add(pe)
        return out


def doubly_connected_set(omega: np.ndarray, E: EdgeSet, x: Point, overlay: Iterable[Edge] = ()) -> FrozenSet[Point]:
    """Vertices joined to ``x`` by two edge-disjoint open paths, together with ``x``."""
    g = _OpenGraph(omega, E, overlay)
    x = tuple(x)
    if x not in g.index:
        return frozenset([x])
    s = g.index[x]
    comp = g.component(s, g.bridges(s))
    return frozenset(g.vertices[k] for k in comp)


@dataclass
class PivotalReport:
    """Pivotal bonds for the connection of ``x`` to ``y``, ordered from ``x``."""

    connected: bool
    pivotal: Tuple[Edge, ...]
    first: Optional[Edge]
    doubly_connected: FrozenSet[Point]


def first_pivotal_bond(
    omega: np.ndarray, E: EdgeSet, x: Point, y: Point, overlay: Iterable[Edge] = ()
) -> PivotalReport:
    """Open bonds whose removal disconnects ``x`` from ``y``, and the one touching C2(x).

    The pivotal bonds are the bridges on the path from the two-edge-connected
    component of ``x`` to that of ``y``.  The first pivotal bond is the
    pivotal bond with an endpoint in the doubly connected set of ``x``.
    """
    g = _OpenGraph(omega, E, overlay)
    x, y = tuple(x), tuple(y)
    if x not in g.index or y not in g.index:
        c2 = frozenset([x]) if x not in g.index else doubly_connected_set(omega, E, x, overlay)
        return PivotalReport(x == y, (), None, c2)
    s, t = g.index[x], g.index[y]
    bridges = g.bridges(s)
    c2_nodes = g.component(s, bridges)
    c2 = frozenset(g.vertices[k] for k in c2_nodes)
    if t not in g.component(s):
        return PivotalReport(False, (), None, c2)
    # walk the tree of two-edge-connected components from x towards y
    comp_of: Dict[int, int] = {}
    comps: List[Set[int]] = []
    for v in g.component(s):
        if v not in comp_of:
            c = g.component(v, bridges)
            for w in c:
                comp_of[w] = len(comps)
            comps.append(c)
    tree: Dict[int, List[Tuple[int, int]]] = {k: [] for k in range(len(comps))}
    for k in bridges:
        a, b = g.edges[k]
        ca, cb = comp_of[g.index[a]], comp_of[g.index[b]]
        tree[ca].append((cb, k))
        tree[cb].append((ca, k))
    src, dst = comp_of[s], comp_of[t]
    parent: Dict[int, Tuple[int, int]] = {src: (-1, -1)}
    todo = deque([src])
    while todo:
        c = todo.popleft()
        for c2_, k in tree[c]:
            if c2_ not in parent:
                parent[c2_] = (c, k)
                todo.append(c2_)
    path = []
    c = dst
    while c != src:
        c, k = parent[c]
        path.append(g.edges[k])
    path.reverse()
    touching = [e for e in path if e[0] in c2 or e[1] in c2]
    if len(touching) > 1:
        raise AssertionError("more than one pivotal bond touches the doubly connected set")
    return PivotalReport(True, tuple(path), touching[0] if touching else None, c2)


# --------------------------------------------------------------------------
# interfaces of block index sets
# --------------------------------------------------------------------------


def horizontal_interface(I: Iterable[Sequence[int]], R: Box) -> bool:
    """No *-connected path in ``R`` minus ``I`` joins the lowest and highest layers of the last axis.

    *-neighbours differ by at most one in every coordinate.
    """
    free = np.ones(R.shape, dtype=bool)
    for i in I:
        i = tuple(i)
        if R.contains(i):
            free[tuple(a - b for a, b in zip(i, R.lower))] = False
    d = R.dim
    labels, _ = ndimage.label(free, structure=np.ones((3,) * d, dtype=bool))
    bottom = labels[(Ellipsis, 0)]
    top = labels[(Ellipsis, -1)]
    common = np.intersect1d(bottom[bottom > 0], top[top > 0])
    return common.size == 0
