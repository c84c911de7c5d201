"""Finite subsets of Z^d: boxes, edge sets, block partitions, coverings, facets.

Points are tuples of ints.  Axes are numbered from 0, and a face of a box is
named ``(axis, side)`` with ``side`` 0 for the low end and 1 for the high end.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

Point = Tuple[int, ...]
Edge = Tuple[Point, Point]
BlockIndex = Tuple[int, ...]


def unit(d: int, k: int, s: int = 1) -> Point:
    return tuple(s if a == k else 0 for a in range(d))


def add(x: Sequence[int], y: Sequence[int]) -> Point:
    return tuple(a + b for a, b in zip(x, y))


def scale(c: int, x: Sequence[int]) -> Point:
    return tuple(c * a for a in x)


def make_edge(x: Sequence[int], y: Sequence[int]) -> Edge:
    """Canonical nearest-neighbour edge with the smaller endpoint first."""
    x, y = tuple(x), tuple(y)
    if sum(abs(a - b) for a, b in zip(x, y)) != 1:
        raise ValueError(f"{x} and {y} are not nearest neighbours")
    return (x, y) if x < y else (y, x)


@dataclass(frozen=True)
class Box:
    """The product of integer intervals ``lower[k]..upper[k]`` (inclusive)."""

    lower: Point
    upper: Point

    def __post_init__(self):
        lo, up = tuple(int(a) for a in self.lower), tuple(int(a) for a in self.upper)
        if len(lo) != len(up) or not lo:
            raise ValueError("box corners must have the same positive dimension")
        if any(a > b for a, b in zip(lo, up)):
            raise ValueError(f"empty box {lo}..{up}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(b - a + 1 for a, b in zip(self.lower, self.upper))

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    def contains(self, x: Sequence[int]) -> bool:
        return all(a <= c <= b for a, c, b in zip(self.lower, x, self.upper))

    def __contains__(self, x) -> bool:
        return self.contains(x)

    def vertices(self) -> List[Point]:
        """All points in lexicographic order."""
        return list(itertools.product(*(range(a, b + 1) for a, b in zip(self.lower, self.upper))))

    def coords(self) -> np.ndarray:
        grids = np.meshgrid(*(np.arange(a, b + 1) for a, b in zip(self.lower, self.upper)), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def translate(self, v: Sequence[int]) -> "Box":
        return Box(add(self.lower, v), add(self.upper, v))

    def intersect(self, other: "Box") -> Optional["Box"]:
        lo = tuple(max(a, b) for a, b in zip(self.lower, other.lower))
        up = tuple(min(a, b) for a, b in zip(self.upper, other.upper))
        if any(a > b for a, b in zip(lo, up)):
            return None
        return Box(lo, up)

    def contains_box(self, other: "Box") -> bool:
        return all(a <= c for a, c in zip(self.lower, other.lower)) and all(
            c <= b for c, b in zip(other.upper, self.upper)
        )

    def expand(self, r: int) -> "Box":
        return Box(tuple(a - r for a in self.lower), tuple(b + r for b in self.upper))

    def slices(self, origin: Sequence[int]) -> Tuple[slice, ...]:
        """Array slices of this box inside an array whose index 0 sits at ``origin``."""
        return tuple(slice(a - o, b - o + 1) for a, b, o in zip(self.lower, self.upper, origin))


def box_lambda(N: int, d: int) -> Box:
    """{1..N-1}^d."""
    return Box((1,) * d, (N - 1,) * d)


def box_hat(N: int, d: int) -> Box:
    """{-N..N}^d, centred at the origin."""
    return Box((-N,) * d, (N,) * d)


def slab_box(N: int, H: int, d: int) -> Box:
    """{1..N-1}^(d-1) x {1..H-1}."""
    return Box((1,) * d, (N - 1,) * (d - 1) + (H - 1,))


def log_height(n: int) -> int:
    return math.ceil(math.log(n))


def box_log(n: int, L: int, d: int) -> Box:
    """{1..Ln-1}^(d-1) x {1..L*ceil(log n)-1}."""
    if n < 3:
        raise ValueError("the logarithmic slab needs n >= 3")
    return Box((1,) * d, (L * n - 1,) * (d - 1) + (L * log_height(n) - 1,))


def box_from_sides(z: Sequence[int], sides: Sequence[int]) -> Box:
    """z + prod {1..L_k}."""
    return Box(tuple(a + 1 for a in z), tuple(a + s for a, s in zip(z, sides)))


# --------------------------------------------------------------------------
# boundaries and edge sets
# --------------------------------------------------------------------------


def exterior_boundary(box: Box) -> frozenset:
    """Points outside ``box`` with a nearest neighbour inside it."""
    out = set()
    for k in range(box.dim):
        for side in (0, 1):
            out.update(boundary_faces(box)[(k, side)])
    return frozenset(out)


@lru_cache(maxsize=256)
def boundary_faces(box: Box) -> Dict[Tuple[int, int], frozenset]:
    """The ``2d`` faces of the exterior boundary, keyed by ``(axis, side)``."""
    faces = {}
    for k in range(box.dim):
        for side in (0, 1):
            c = box.lower[k] - 1 if side == 0 else box.upper[k] + 1
            lo = box.lower[:k] + (c,) + box.lower[k + 1 :]
            up = box.upper[:k] + (c,) + box.upper[k + 1 :]
            faces[(k, side)] = frozenset(Box(lo, up).vertices())
    return faces


class EdgeSet:
    """A finite set of nearest-neighbour edges in lexicographic order.

    ``kind`` and ``box`` record how the set was built (for example the wired
    edge set of a box) and are informational only; equality is by edges.
    """

    def __init__(self, edges: Iterable[Edge], kind: str = "explicit", box: Optional[Box] = None):
        canon = sorted({make_edge(a, b) for a, b in edges})
        if not canon:
            raise ValueError("empty edge set")
        dims = {len(a) for a, _ in canon}
        if len(dims) != 1:
            raise ValueError("edges of mixed dimension")
        self.edges: Tuple[Edge, ...] = tuple(canon)
        self.kind = kind
        self.box = box
        self._hash = hash(self.edges)

    def __len__(self) -> int:
        return len(self.edges)

    def __iter__(self) -> Iterator[Edge]:
        return iter(self.edges)

    def __eq__(self, other) -> bool:
        return isinstance(other, EdgeSet) and (self is other or self.edges == other.edges)

    def __hash__(self) -> int:
        return self._hash

    def __repr__(self) -> str:
        where = f", box={self.box.lower}..{self.box.upper}" if self.box is not None else ""
        return f"EdgeSet({len(self)} edges, kind={self.kind!r}{where})"

    @property
    def dim(self) -> int:
        return len(self.edges[0][0])

    @cached_property
    def index(self) -> Dict[Edge, int]:
        return {e: k for k, e in enumerate(self.edges)}

    @cached_property
    def vertices(self) -> Tuple[Point, ...]:
        vs = set()
        for a, b in self.edges:
            vs.add(a)
            vs.add(b)
        return tuple(sorted(vs))

    @cached_property
    def vertex_index(self) -> Dict[Point, int]:
        return {v: k for k, v in enumerate(self.vertices)}

    @cached_property
    def endpoints(self) -> Tuple[np.ndarray, np.ndarray]:
        vi = self.vertex_index
        u = np.array([vi[a] for a, _ in self.edges], dtype=np.int64)
        v = np.array([vi[b] for _, b in self.edges], dtype=np.int64)
        return u, v

    @cached_property
    def coords(self) -> np.ndarray:
        return np.array(self.vertices, dtype=np.int64)

    @cached_property
    def boundary_span(self) -> Tuple[Point, ...]:
        """Vertices of the set incident to at least one edge of Z^d outside it."""
        idx = self.index
        d = self.dim
        span = []
        for x in self.vertices:
            for k in range(d):
                if make_edge(x, add(x, unit(d, k, 1))) not in idx or make_edge(x, add(x, unit(d, k, -1))) not in idx:
                    span.append(x)
                    break
        return tuple(span)

    def positions(self, edges: Iterable[Edge]) -> np.ndarray:
        """Indices of ``edges`` in this set (all must belong to it)."""
        idx = self.index
        return np.array([idx[e] for e in edges], dtype=np.int64)

    def restrict_map(self, sub: "EdgeSet") -> np.ndarray:
        """Index in this set of every edge of ``sub``, or -1 when absent."""
        idx = self.index
        return np.array([idx.get(e, -1) for e in sub.edges], dtype=np.int64)


@lru_cache(maxsize=512)
def edge_set(box: Box, kind: str = "wired") -> EdgeSet:
    """Edges touching ``box`` (``wired``) or with both endpoints inside (``free``)."""
    if kind not in ("wired", "free"):
        raise ValueError(f"unknown edge-set kind {kind!r}")
    d = box.dim
    edges = []
    for x in box.vertices():
        for k in range(d):
            y = add(x, unit(d, k, 1))
            if y in box:
                edges.append((x, y))
            elif kind == "wired":
                edges.append((x, y))
            if kind == "wired":
                z = add(x, unit(d, k, -1))
                if z not in box:
                    edges.append((z, x))
    return EdgeSet(edges, kind=kind, box=box)


def free_edges_within(points: Iterable[Point]) -> List[Edge]:
    """Edges with both endpoints in an arbitrary point set."""
    pts = set(points)
    out = []
    for x in pts:
        d = len(x)
        for k in range(d):
            y = add(x, unit(d, k, 1))
            if y in pts:
                out.append((x, y))
    return sorted(out)


# --------------------------------------------------------------------------
# block partitions
# --------------------------------------------------------------------------


def check_admissible(box: Box, L: int) -> Tuple[int, ...]:
    """Return the multipliers ``a`` when ``box = prod {1..a_k L - 1}`` with ``a_k >= 2``."""
    if L < 1:
        raise ValueError("block side L must be positive")
    if any(a != 1 for a in box.lower):
        raise ValueError("an L-admissible box starts at (1, ..., 1)")
    mult = []
    for b in box.upper:
        if (b + 1) % L != 0:
            raise ValueError(f"side {b} is not of the form a*L - 1 for L={L}")
        a = (b + 1) // L
        if a < 2:
            raise ValueError(f"side {b} gives a multiplier {a} < 2 for L={L}")
        mult.append(a)
    return tuple(mult)


def inner_block(i: BlockIndex, L: int) -> Box:
    """{1..L-1}^d + L i."""
    return Box(tuple(L * a + 1 for a in i), tuple(L * a + L - 1 for a in i))


def closed_block(i: BlockIndex, L: int) -> Box:
    """{0..L}^d + L i."""
    return Box(tuple(L * a for a in i), tuple(L * a + L for a in i))


def extended_block(box: Box, i: BlockIndex, L: int, n: int) -> Optional[Box]:
    """(L i + {-nL+1..(n+1)L-1}^d) intersected with ``box``."""
    raw = Box(tuple(L * a - n * L + 1 for a in i), tuple(L * a + (n + 1) * L - 1 for a in i))
    return raw.intersect(box)


@dataclass
class BlockPartition:
    """Block decomposition of the wired edge set of an L-admissible box.

    ``inner_edges[i]`` and ``block_edges[i]`` index into ``edges`` and hold
    the wired edges of the inner block and the closed-block edges of the box,
    respectively; ``lateral`` indexes the wired edges covered by no inner block.
    """

    box: Box
    L: int
    edges: EdgeSet
    indices: List[BlockIndex]
    inner_edges: Dict[BlockIndex, np.ndarray]
    block_edges: Dict[BlockIndex, np.ndarray]
    lateral: np.ndarray


@lru_cache(maxsize=64)
def block_partition(box: Box, L: int) -> BlockPartition:
    mult = check_admissible(box, L)
    E = edge_set(box, "wired")
    indices = list(itertools.product(*(range(a) for a in mult)))
    inner, full = {}, {}
    covered = np.zeros(len(E), dtype=bool)
    for i in indices:
        inner[i] = E.positions(edge_set(inner_block(i, L), "wired").edges)
        covered[inner[i]] = True
        full[i] = np.array(
            [k for k in E.restrict_map(edge_set(closed_block(i, L), "free")) if k >= 0], dtype=np.int64
        )
    lateral = np.flatnonzero(~covered)
    return BlockPartition(box, L, E, indices, inner, full, lateral)


# --------------------------------------------------------------------------
# (L, L') coverings
# --------------------------------------------------------------------------


@dataclass
class Covering:
    """An (L, L')-covering of ``z + prod {1..L_k}`` by boxes Delta_i inside Delta'_i."""

    box: Box
    L: int
    Lp: int
    indices: List[BlockIndex]
    inner: Dict[BlockIndex, Box]
    outer: Dict[BlockIndex, Box]
    corner: Dict[BlockIndex, Point] = field(default_factory=dict)
    outer_corner: Dict[BlockIndex, Point] = field(default_factory=dict)

    @property
    def origin(self) -> Point:
        return tuple(a - 1 for a in self.box.lower)


def covering(box: Box, L: int, Lp: int) -> Covering:
    """Build the (L, L')-covering; needs ``0 <= L' <= L`` and ``L + 2L' <= min side``."""
    sides = box.shape
    if L < 1 or Lp < 0 or Lp > L:
        raise ValueError(f"need 0 <= L' <= L and L >= 1, got L={L}, L'={Lp}")
    if L + 2 * Lp > min(sides):
        raise ValueError(f"need L + 2L' <= min side, got {L} + 2*{Lp} > {min(sides)}")
    z = tuple(a - 1 for a in box.lower)
    indices = list(itertools.product(*(range(math.ceil(s / L)) for s in sides)))
    inner, outer, xs, xps = {}, {}, {}, {}
    for i in indices:
        x = tuple(zk + min(L * ik, s - L) for zk, ik, s in zip(z, i, sides))
        xp = tuple(zk + min(max(L * ik, Lp), s - L - Lp) for zk, ik, s in zip(z, i, sides))
        xs[i], xps[i] = x, xp
        inner[i] = Box(tuple(a + 1 for a in x), tuple(a + L for a in x))
        outer[i] = Box(tuple(a - Lp + 1 for a in xp), tuple(a + L + Lp for a in xp))
    return Covering(box, L, Lp, indices, inner, outer, xs, xps)


def _box_counts(shape: Tuple[int, ...], lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Number of boxes [lo, hi] (offset coordinates, inclusive) covering each cell."""
    d = len(shape)
    diff = np.zeros(tuple(s + 1 for s in shape), dtype=np.int64)
    for corner in itertools.product((0, 1), repeat=d):
        pos = np.where(np.array(corner, dtype=bool), hi + 1, lo)
        sign = (-1) ** sum(corner)
        np.add.at(diff, tuple(pos.T), sign)
    for k in range(d):
        diff = np.cumsum(diff, axis=k)
    return diff[tuple(slice(0, s) for s in shape)]


def covering_properties(cov: Covering) -> Dict[str, bool]:
    """Check the five covering properties by explicit counting over the box.

    Distances are measured in the sup norm and the uniqueness clause uses
    coordinates relative to the corner ``z`` of the box.
    """
    box, L, Lp = cov.box, cov.L, cov.Lp
    d = box.dim
    blo, bhi = np.array(box.lower), np.array(box.upper)
    idx = cov.indices
    ilo = np.array([cov.inner[i].lower for i in idx])
    ihi = np.array([cov.inner[i].upper for i in idx])
    olo = np.array([cov.outer[i].lower for i in idx])
    ohi = np.array([cov.outer[i].upper for i in idx])
    inside = bool(
        np.all(ilo >= blo) and np.all(ihi <= bhi) and np.all(olo >= blo) and np.all(ohi <= bhi)
        and np.all(olo <= ilo) and np.all(ihi <= ohi)
    )
    if not inside:
        return {"union": False, "separation": False, "overlap": False, "uniqueness": False, "multiplicity": False}
    count = _box_counts(box.shape, ilo - blo, ihi - blo)
    count_outer = _box_counts(box.shape, olo - blo, ohi - blo)
    union_ok = bool(np.all(count >= 1))
    # points of the box within sup distance L' of Delta_i must lie in Delta'_i
    near_lo = np.maximum(ilo - Lp, blo)
    near_hi = np.minimum(ihi + Lp, bhi)
    separated = bool(np.all(olo <= near_lo) and np.all(near_hi <= ohi))
    # overlap of consecutive outer boxes
    overlap = True
    row = {i: r for r, i in enumerate(idx)}
    xp = np.array([cov.outer_corner[i] for i in idx])
    for k in range(d):
        pairs = [(row[i], row[j]) for i in idx if (j := add(i, unit(d, k))) in row]
        if not pairs:
            continue
        a, b = np.array(pairs).T
        s_lo = olo[b]
        s_hi = ohi[b].copy()
        s_hi[:, k] = np.minimum(ohi[b, k], xp[b, k] + Lp)
        real = s_hi[:, k] >= s_lo[:, k]
        ok = np.all(olo[a] <= s_lo, axis=1) & np.all(s_hi <= ohi[a], axis=1)
        if not np.all(ok | ~real):
            overlap = False
    # uniqueness away from the upper faces
    lim = tuple(s - L for s in box.shape)
    if all(v >= 1 for v in lim):
        unique = bool(np.all(count[tuple(slice(0, v) for v in lim)] == 1))
    else:
        unique = True
    return {
        "union": union_ok,
        "separation": separated,
        "overlap": overlap,
        "uniqueness": unique,
        "multiplicity": bool(count_outer.max() <= 6**d),
    }


# --------------------------------------------------------------------------
# facets of block faces
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Facet:
    """A (d-1)-dimensional cube of side H on the face ``(axis, side)`` of block ``i``."""

    block: BlockIndex
    axis: int
    side: int
    j: Tuple[int, ...]
    L: int
    H: int

    @property
    def box(self) -> Box:
        d = len(self.block)
        base = add(add(scale(self.L, self.block), scale(self.L * self.side, unit(d, self.axis))), scale(self.H, self.j))
        top = tuple(base[k] + (0 if k == self.axis else self.H - 1) for k in range(d))
        return Box(base, top)

    def points(self) -> List[Point]:
        return self.box.vertices()

    def edges(self) -> List[Edge]:
        """Edges with both endpoints in the facet."""
        return free_edges_within(self.points())


def facet_indices(L: int, H: int, axis: int, d: int) -> List[Tuple[int, ...]]:
    """Lexicographically ordered j with j_axis = 0 and L/(3H) <= j_k <= 2L/(3H) - 1."""
    if H < 1 or L < 1:
        raise ValueError("L and H must be positive")
    # exact rational bounds, avoiding float rounding at integer boundaries
    lo = -((-L) // (3 * H))
    hi = (2 * L) // (3 * H) - 1
    ranges = [range(0, 1) if k == axis else range(lo, hi + 1) for k in range(d)]
    return list(itertools.product(*ranges))


def facets(i: BlockIndex, L: int, H: int, axis: int, side: int) -> List[Facet]:
    """Facets of face ``(axis, side)`` of the closed block ``i`` in lexicographic order of j."""
    d = len(i)
    return [Facet(tuple(i), axis, side, j, L, H) for j in facet_indices(L, H, axis, d)]
