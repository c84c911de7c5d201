import math

import mpmath
import numpy as np
import pytest

from fkcoarse.events import CountAtLeast, connection, edge_open
from fkcoarse.fk import BoundaryPartition, FKParams, boundary_classes, fk_table
from fkcoarse.lattice import EdgeSet, edge_set, box_lambda
from fkcoarse.verify import (
    DomainError,
    connected_edge_sets,
    demonstrate_dlr_failure,
    dlr_margin,
    domination_test,
    lss_threshold,
    r_lss,
    r_prime,
    refinement_covers,
    upsets,
    verify_corpus,
    verify_inequalities,
)

DEDEKIND = [2, 3, 6, 20, 168, 7581]


def test_r_endpoints_and_guards():
    for K in range(2, 9):
        assert r_lss(K, 1.0) == 1.0
        assert r_prime(K, 1.0) == 1.0
        thr = lss_threshold(K)
        with pytest.raises(DomainError) as exc:
            r_lss(K, thr - 1e-9)
        assert exc.value.threshold == thr
    with pytest.raises(ValueError):
        r_lss(1, 0.99)


def test_r_high_precision():
    mpmath.mp.dps = 50
    K, p = 2, mpmath.mpf("0.99")
    a = (1 - p) ** (mpmath.mpf(1) / K) / mpmath.mpf(K - 1) ** (mpmath.mpf(K - 1) / K)
    b = ((1 - p) * (K - 1)) ** (mpmath.mpf(1) / K)
    ref = (1 - a) * (1 - b)
    assert abs(r_lss(2, 0.99) - float(ref)) < 1e-15
    assert float(ref) == pytest.approx(0.81, abs=1e-12)


def test_r_monotone_and_prime_below():
    for K in (2, 3, 5):
        ps = np.linspace(lss_threshold(K), 1, 400)
        vals = np.array([r_lss(K, p) for p in ps])
        assert np.all(np.diff(vals) >= 0)
        for p in ps:
            if 1 - math.sqrt(1 - p) >= lss_threshold(K):
                assert r_prime(K, p) <= r_lss(K, p) + 1e-15
        # r' -> 1 as p -> 1, at the slow rate (1 - p)^(1/2K)
        gaps = [1 - r_prime(K, 1 - t) for t in (1e-3, 1e-7, 1e-11, 1e-15)]
        assert all(b < a for a, b in zip(gaps, gaps[1:]))
        assert gaps[-1] < 0.15


def test_dedekind_counts():
    for m, n in enumerate(DEDEKIND):
        assert len(upsets(m)) == n


def test_upsets_are_up_closed():
    U = upsets(3)
    for row in U:
        for a in range(8):
            for b in range(8):
                if a & b == a and row[a]:
                    assert row[b]


def test_dlr_failure_values():
    res = demonstrate_dlr_failure(0.5, 0.5, 2.0)
    assert res.conditional == pytest.approx(3 / 11, abs=1e-15)
    assert res.unconditional_sup == pytest.approx(0.25, abs=1e-15)
    assert res.margin == pytest.approx(1 / 44, abs=1e-15)
    assert res.closed_form == pytest.approx(3 / 11, abs=1e-15)
    assert abs(demonstrate_dlr_failure(0.4, 0.7, 1.0).margin) < 1e-14


def test_dlr_failure_grid():
    grid = np.round(np.arange(0.1, 1.0, 0.1), 10)
    for lam in grid:
        for p in grid:
            for q in (1.5, 2.0, 4.0):
                res = demonstrate_dlr_failure(lam, p, q)
                assert res.margin > 0
                assert res.conditional == pytest.approx(res.closed_form, abs=1e-13)


def test_q1_and_single_edge():
    E = EdgeSet([((0, 0), (1, 0)), ((1, 0), (1, 1)), ((1, 1), (2, 1))])
    reps = verify_inequalities(E, np.ones(3), FKParams(q=1.0, family="linear", beta=0.4))
    assert all(r.passed for r in reps)
    single = EdgeSet([((0,), (1,))])
    par = FKParams(q=2.0, family="linear", beta=0.6)
    reps = {r.inequality: r for r in verify_inequalities(single, [1.0], par)}
    assert all(r.passed for r in reps.values())
    wired, free = boundary_classes(single)
    pw = fk_table(single, [0.6], 2.0, wired).marginal(0)
    pf = fk_table(single, [0.6], 2.0, free).marginal(0)
    assert pw == pytest.approx(0.6) and pf == pytest.approx(0.6 / 1.4)
    # the lower comparison is tight on a single free edge
    assert abs(reps["product-comparison"].worst_margin) < 1e-15


def test_five_edge_tree():
    tree = EdgeSet([((0, 0), (1, 0)), ((1, 0), (2, 0)), ((1, 0), (1, 1)), ((1, 0), (1, -1)), ((2, 0), (3, 0))])
    reps = verify_inequalities(tree, np.ones(5), FKParams(q=2.0, family="linear", beta=0.5), tolerance=1e-12)
    assert all(r.passed for r in reps), [(r.inequality, r.worst_margin) for r in reps if not r.passed]


def test_dlr_margin_on_square():
    E = edge_set(box_lambda(2, 2), "wired")
    p = np.array([0.3, 0.5, 0.7, 0.9])
    for pi in (BoundaryPartition.free(), BoundaryPartition.wired(E)):
        dev, n = dlr_margin(E, p, 2.5, pi)
        assert dev < 1e-13 and n > 0


def test_corpus_counts_and_small_run():
    # bond animals of Z^2 up to translation, and up to all lattice symmetries
    fixed = [2, 6, 22, 88, 372]
    free = [1, 2, 5, 16, 55]
    for n in range(1, 6):
        assert sum(len(s) == n for s in connected_edge_sets(n, symmetric=False)) == fixed[n - 1]
        assert sum(len(s) == n for s in connected_edge_sets(n)) == free[n - 1]
    res = verify_corpus(max_edges=3, p_grid=(0.2, 0.7), q_grid=(1.0, 2.0), full_fkg_edges=3)
    assert res.instances > 0 and not res.violations


def test_refinement_covers_one_merge():
    E = EdgeSet([((0,), (1,)), ((1,), (2,))])
    classes = boundary_classes(E)
    covers = refinement_covers(classes, E.boundary_span)
    assert covers == [(1, 0)]


def test_domination_identical_and_swapped():
    E = edge_set(box_lambda(3, 2), "wired")
    rng = np.random.default_rng(0)
    events = [edge_open(e) for e in E.edges[:5]] + [CountAtLeast(E.edges, 6), connection((1, 1), (2, 2))]
    a = (rng.random((4000, len(E))) < 0.5).astype(np.uint8)
    b = (rng.random((4000, len(E))) < 0.5).astype(np.uint8)
    assert not domination_test(E, a, b, events, 0.01).rejected
    big = (rng.random((4000, len(E))) < 0.6).astype(np.uint8)
    assert not domination_test(E, a, big, events, 0.01).rejected
    assert domination_test(E, big, a, events, 0.01).rejected


def test_domination_rejects_non_increasing():
    from fkcoarse.events import PredicateEvent

    E = edge_set(box_lambda(3, 2), "wired")
    x = np.zeros((10, len(E)), dtype=np.uint8)
    with pytest.raises(ValueError):
        domination_test(E, x, x, [PredicateEvent(lambda E, w: True)])
