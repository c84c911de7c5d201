import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fkcoarse.lattice import (
    Box,
    block_partition,
    box_from_sides,
    box_lambda,
    boundary_faces,
    check_admissible,
    covering,
    covering_properties,
    edge_set,
    exterior_boundary,
    facet_indices,
    facets,
    make_edge,
)


def brute_boundary(box):
    d = box.dim
    inside = set(box.vertices())
    out = set()
    for x in inside:
        for k in range(d):
            for s in (-1, 1):
                y = tuple(x[a] + (s if a == k else 0) for a in range(d))
                if y not in inside:
                    out.add(y)
    return out


def brute_edges(box, kind):
    inside = set(box.vertices())
    pts = inside | brute_boundary(box)
    out = set()
    for x, y in itertools.combinations(sorted(pts), 2):
        if sum(abs(a - b) for a, b in zip(x, y)) != 1:
            continue
        n_in = (x in inside) + (y in inside)
        if n_in == 2 or (kind == "wired" and n_in == 1):
            out.add((x, y))
    return out


def test_boundary_single_point_d1():
    assert exterior_boundary(Box((1,), (1,))) == {(0,), (2,)}


def test_boundary_square():
    box = box_lambda(3, 2)
    assert box == Box((1, 1), (2, 2))
    assert len(exterior_boundary(box)) == 8
    faces = boundary_faces(box)
    assert len(faces) == 4
    assert all(len(f) == 2 for f in faces.values())


def test_empty_box_rejected():
    with pytest.raises(ValueError):
        Box((2,), (1,))


def test_edge_counts():
    d1 = Box((1,), (1,))
    assert len(edge_set(d1, "wired")) == 2
    with pytest.raises(ValueError):
        edge_set(d1, "free")  # no edges at all
    sq = box_lambda(3, 2)
    assert len(edge_set(sq, "free")) == 4
    assert len(edge_set(sq, "wired")) == 12


@given(st.lists(st.integers(1, 4), min_size=1, max_size=3))
def test_edge_sets_match_brute_force(sides):
    box = box_from_sides((0,) * len(sides), sides)
    Ew = edge_set(box, "wired")
    assert set(Ew.edges) == brute_edges(box, "wired")
    assert set(Ew.vertices) == set(box.vertices()) | brute_boundary(box)
    assert exterior_boundary(box) == brute_boundary(box)
    if box.size > 1:
        Ef = edge_set(box, "free")
        assert set(Ef.edges) == brute_edges(box, "free")
        assert set(Ef.edges) <= set(Ew.edges)
    for a, b in Ew.edges:
        assert sum(abs(x - y) for x, y in zip(a, b)) == 1
        for v in (a, b):
            assert v in box or v in exterior_boundary(box)


def test_make_edge_rejects_non_neighbours():
    with pytest.raises(ValueError):
        make_edge((0, 0), (1, 1))


@pytest.mark.parametrize("mult,L,d", [((2, 2), 2, 2), ((3, 2), 3, 2), ((2, 2, 2), 2, 3), ((3,), 4, 1)])
def test_block_partition_is_partition(mult, L, d):
    box = Box((1,) * d, tuple(a * L - 1 for a in mult))
    bp = block_partition(box, L)
    assert sorted(bp.indices) == sorted(itertools.product(*(range(a) for a in mult)))
    seen = np.zeros(len(bp.edges), dtype=int)
    for i in bp.indices:
        seen[bp.inner_edges[i]] += 1
        assert set(bp.inner_edges[i]) <= set(bp.block_edges[i])
    seen[bp.lateral] += 1
    assert np.all(seen == 1)
    total = sum(len(v) for v in bp.inner_edges.values()) + len(bp.lateral)
    assert total == len(edge_set(box, "wired"))
    for i, j in itertools.combinations(bp.indices, 2):
        diff = [abs(a - b) for a, b in zip(i, j)]
        disjoint = not set(bp.block_edges[i]) & set(bp.block_edges[j])
        # closed blocks share a face of dimension d - #differing coordinates
        touching = max(diff) <= 1 and sum(x > 0 for x in diff) <= d - 1
        assert disjoint == (not touching)
        if d == 2:
            assert disjoint == (sum(x * x for x in diff) > 1)


def test_non_admissible_box_named():
    with pytest.raises(ValueError, match="a\\*L - 1"):
        check_admissible(Box((1, 1), (4, 5)), 3)
    with pytest.raises(ValueError, match="multiplier"):
        check_admissible(Box((1, 1), (2, 5)), 3)
    with pytest.raises(ValueError, match="starts"):
        check_admissible(Box((0, 0), (5, 5)), 3)


def brute_covering_checks(cov):
    box, Lp = cov.box, cov.Lp
    pts = box.vertices()
    for x in pts:
        assert any(x in cov.inner[i] for i in cov.indices)
        assert sum(x in cov.outer[i] for i in cov.indices) <= 6 ** box.dim
    for i in cov.indices:
        inner, outer = cov.inner[i], cov.outer[i]
        assert box.contains_box(outer) and outer.contains_box(inner)
        for x in pts:
            if x not in outer:
                dist = min(max(abs(a - b) for a, b in zip(x, y)) for y in inner.vertices())
                assert dist >= Lp + 1


def test_covering_example():
    box = box_from_sides((0, 0), (10, 10))
    cov = covering(box, 4, 2)
    brute_covering_checks(cov)
    assert all(covering_properties(cov).values())


@given(
    st.integers(1, 4).flatmap(
        lambda L: st.tuples(
            st.just(L),
            st.integers(0, L),
            st.lists(st.integers(0, 8), min_size=2, max_size=2),
        )
    )
)
def test_covering_properties_hold(args):
    L, Lp, extra = args
    sides = [L + 2 * Lp + e for e in extra]
    cov = covering(box_from_sides((3, -2), sides), L, Lp)
    brute_covering_checks(cov)
    assert all(covering_properties(cov).values())


def test_covering_constraints():
    box = box_from_sides((0, 0), (6, 6))
    with pytest.raises(ValueError):
        covering(box, 2, 3)
    with pytest.raises(ValueError):
        covering(box, 4, 2)


def test_facet_bounds():
    js = facet_indices(30, 2, axis=0, d=2)
    assert [j[1] for j in js] == [5, 6, 7, 8, 9]
    assert all(j[0] == 0 for j in js)
    assert facet_indices(9, 7, 0, 2) == []


@given(st.integers(1, 40), st.integers(1, 15), st.integers(1, 3))
def test_facet_bounds_brute(L, H, d):
    for axis in range(d):
        ok = [k for k in range(-5, 50) if 3 * H * k >= L and 3 * H * (k + 1) <= 2 * L]
        expected = list(itertools.product(*([0] if a == axis else ok for a in range(d))))
        assert facet_indices(L, H, axis, d) == expected


def test_shared_face_facets_coincide():
    L, H, d = 12, 2, 2
    for axis in range(d):
        i = (1, 2)
        nxt = tuple(a + (1 if k == axis else 0) for k, a in enumerate(i))
        hi = facets(i, L, H, axis, 1)
        lo = facets(nxt, L, H, axis, 0)
        assert [f.box for f in hi] == [f.box for f in lo]
        assert all(f.box.shape[axis] == 1 for f in hi)
