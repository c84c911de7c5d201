import math

import numpy as np
import pytest

from fkcoarse.events import face_crossing
from fkcoarse.fk import DisorderLaw, FKParams, config_bits, exact_averaged, exact_distribution, free_single_edge
from fkcoarse.lattice import EdgeSet, block_partition, box_lambda, edge_set, inner_block
from fkcoarse.sampler import (
    Schedule,
    cluster_kernel,
    conditional_open_probability,
    heat_bath_step,
    new_chain,
    sample_averaged,
    sample_psi,
    sample_quenched,
    seed_sequence,
    single_edge_kernel,
    sweep_kernel,
)
from fkcoarse.verify import dlr_geometry

SQUARE = EdgeSet([((0, 0), (1, 0)), ((1, 0), (1, 1)), ((0, 1), (1, 1)), ((0, 0), (0, 1))])


def test_q1_branches_coincide():
    par = FKParams(q=1.0, family="linear", beta=0.6)
    st = new_chain(SQUARE, np.ones(4), par, "free")
    for c in range(16):
        w = ((c >> np.arange(4)) & 1).astype(np.uint8)
        for e in range(4):
            assert conditional_open_probability(st.graph, w, st.p, 1.0, e) == pytest.approx(0.6)


def test_conditional_probability_branches():
    par = FKParams(q=2.0, family="linear", beta=0.6)
    st = new_chain(SQUARE, np.ones(4), par, "free")
    closed_path = np.array([0, 1, 1, 1], dtype=np.uint8)
    assert conditional_open_probability(st.graph, closed_path, st.p, 2.0, 0) == pytest.approx(0.6)
    lone = np.zeros(4, dtype=np.uint8)
    assert conditional_open_probability(st.graph, lone, st.p, 2.0, 0) == pytest.approx(0.6 / (0.6 + 2 * 0.4))


def test_single_edge_wired_stationary():
    E = EdgeSet([((0,), (1,))])
    par = FKParams(q=3.0, family="linear", beta=0.4)
    K = single_edge_kernel(E, [1.0], par, "wired", 0)
    pi = exact_distribution(E, [1.0], par, "wired").probs
    assert np.allclose(pi @ K, pi, atol=1e-15)
    assert pi[1] == pytest.approx(0.4)


@pytest.mark.parametrize("bc", ["free", "wired"])
@pytest.mark.parametrize("q", [1.5, 2.0, 4.0])
def test_detailed_balance(bc, q):
    E = edge_set(box_lambda(2, 2), "wired")
    J = np.array([1.0, 0.5, 0.0, 1.0])
    par = FKParams(q=q, family="potts", beta=1.2)
    pi = exact_distribution(E, J, par, bc).probs
    for e in range(len(E)):
        K = single_edge_kernel(E, J, par, bc, e)
        flow = pi[:, None] * K
        assert np.abs(flow - flow.T).max() < 1e-10
    S = sweep_kernel(E, J, par, bc)
    assert np.abs(pi @ S - pi).max() < 1e-10


def test_cluster_kernel_stationary():
    par = FKParams(q=3.0, family="linear", beta=0.6)
    for bc in ("free", "wired"):
        K = cluster_kernel(SQUARE, np.ones(4), par, bc)
        pi = exact_distribution(SQUARE, np.ones(4), par, bc).probs
        assert np.allclose(K.sum(axis=1), 1)
        assert np.abs(pi @ K - pi).max() < 1e-10


def test_irreducible_on_compatible_states():
    J = np.array([1.0, 0.0, 0.3, 1.0])
    par = FKParams(q=2.0, family="linear", beta=0.6)
    S = sweep_kernel(SQUARE, J, par, "free")
    pi = exact_distribution(SQUARE, J, par, "free").probs
    support = pi > 0
    assert np.all(~support | (config_bits(4)[:, 1] == 0))
    R = np.linalg.matrix_power(S, 2)
    assert np.all(R[np.ix_(support, support)] > 0)


def test_heat_bath_step_uses_uniform():
    par = FKParams(q=2.0, family="linear", beta=0.6)
    st = new_chain(SQUARE, np.ones(4), par, "free")
    heat_bath_step(st, 0, u=0.0)
    assert st.omega[0] == 1
    heat_bath_step(st, 0, u=0.999)
    assert st.omega[0] == 0


def test_zero_couplings_stay_closed():
    par = FKParams(q=2.0, beta=1.0)
    E = edge_set(box_lambda(4, 2), "wired")
    for method in ("heat-bath", "swendsen-wang"):
        b = sample_quenched(E, np.zeros(len(E)), par, "wired", Schedule(20, 5, 1), seed=1, method=method, init="open")
        assert b.configs.sum() == 0


def test_determinism():
    E = edge_set(box_lambda(5, 2), "wired")
    par = FKParams(q=2.5, beta=1.0)
    J = np.ones(len(E))
    a = sample_quenched(E, J, par, "free", Schedule(30, 10, 2), seed=7).configs
    b = sample_quenched(E, J, par, "free", Schedule(30, 10, 2), seed=7).configs
    c = sample_quenched(E, J, par, "free", Schedule(30, 10, 2), seed=8).configs
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != c.tobytes()


def test_seed_streams_are_distinct():
    keys = [seed_sequence(5, r, s).generate_state(2).tolist() for r in range(5) for s in range(2)]
    assert len({tuple(k) for k in keys}) == len(keys)


def test_sampler_marginals_square():
    par = FKParams(q=2.0, family="linear", beta=0.6)
    table = exact_distribution(SQUARE, np.ones(4), par, "free")
    b = sample_quenched(SQUARE, np.ones(4), par, "free", Schedule(200_000, 1000, 1), seed=3)
    x = b.configs.astype(float)
    batches = x[: len(x) // 100 * 100].reshape(100, -1, 4).mean(axis=1)
    se = batches.std(axis=0, ddof=1) / math.sqrt(100)
    for e in range(4):
        assert abs(x[:, e].mean() - table.marginal(e)) < 4 * se[e]


def test_increasing_events_bracketed_by_percolation():
    E = edge_set(box_lambda(5, 2), "wired")
    J = np.ones(len(E))
    par = FKParams(q=4.0, beta=1.0)
    p = float(par.p(1.0))
    ev = face_crossing(box_lambda(5, 2), 0)
    sched = Schedule(3000, 200, 2)
    fk = ev(E, sample_quenched(E, J, par, "wired", sched, seed=1).configs).mean()
    rng = np.random.default_rng(0)
    n = 20000
    hi = ev(E, rng.random((n, len(E))) < p).mean()
    lo = ev(E, rng.random((n, len(E))) < free_single_edge(p, 4.0)).mean()
    assert lo - 0.03 < fk < hi + 0.03
    assert lo < hi


def test_averaged_delta_one_identical_couplings():
    E = edge_set(box_lambda(3, 2), "free")
    par = FKParams(q=2.0, beta=1.0)
    Js = [J for J, _ in sample_averaged(E, DisorderLaw.delta(1.0), par, "free", 4, Schedule(3, 1, 1), seed=2)]
    assert all(np.array_equal(Js[0], J) for J in Js)


def test_averaged_q1_marginal():
    E = edge_set(box_lambda(4, 2), "wired")
    par = FKParams(q=1.0, family="linear", beta=0.7)
    rho = DisorderLaw.from_atoms({0.0: 0.3, 0.5: 0.3, 1.0: 0.4})
    x = np.array([b.configs[-1] for _, b in sample_averaged(E, rho, par, "free", 2000, Schedule(2, 1, 1), seed=9)])
    target = 0.7 * (0.5 * 0.3 + 0.4)
    # edges and couplings are independent at q = 1, so the pooled mean has a binomial error
    assert abs(x.mean() - target) < 3 * math.sqrt(target * (1 - target) / x.size)


def test_averaged_counterexample_joint():
    lam, p, q = 0.5, 0.5, 2.0
    E, pi = dlr_geometry()
    par = FKParams(q=q, family="linear", beta=p)
    ph = p / (1 + (1 - p) ** 2 * (q - 1))
    out = sample_averaged(E, DisorderLaw.bernoulli(lam), par, pi, 20000, Schedule(4, 3, 1), seed=4, method="heat-bath")
    x = np.array([b.configs[0, 0] & b.configs[0, 1] for _, b in out], dtype=float)
    target = lam**2 * p * ph
    assert abs(x.mean() - target) < 3 * math.sqrt(target * (1 - target) / len(x))


def test_psi_lateral_marginal():
    box = box_lambda(4, 2)  # L = 2, a = (2, 2)
    par = FKParams(q=3.0, family="linear", beta=0.8)
    rho = DisorderLaw.bernoulli(0.6)
    lat = block_partition(box, 2).lateral
    assert len(lat) > 0
    x = np.array([sample_psi(box, 2, rho, par, seed=s)[1][lat] for s in range(3000)], dtype=float)
    target = 0.6 * free_single_edge(0.8, 3.0)
    assert abs(x.mean() - target) < 3 * math.sqrt(target * (1 - target) / x.size)


def test_psi_compatibility_and_block_marginal():
    box = box_lambda(4, 2)
    par = FKParams(q=2.0, family="linear", beta=0.5)
    rho = DisorderLaw.bernoulli(0.5)
    part = block_partition(box, 2)
    i = part.indices[0]
    idx = part.inner_edges[i]
    Eb = edge_set(inner_block(i, 2), "wired")
    draws = [sample_psi(box, 2, rho, par, seed=s) for s in range(3000)]
    for J, w in draws:
        assert np.all(w[J == 0] == 0)
    target = exact_averaged(Eb, rho, par, "free", lambda J, b: b[:, 0].astype(float))
    x = np.array([w[idx[0]] for _, w in draws], dtype=float)
    assert abs(x.mean() - target) < 3 * math.sqrt(target * (1 - target) / len(x))
