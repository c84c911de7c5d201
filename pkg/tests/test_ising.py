import math

import numpy as np
import pytest

from fkcoarse.fk import config_bits
from fkcoarse.ising import (
    InvariantViolation,
    PhaseLabels,
    block_magnetization,
    check_label_invariants,
    cluster_kernel_spins,
    compatible,
    es_bond_given_spin,
    es_spin_given_bond,
    ising_chain,
    ising_exact,
    joint_exact,
    legendre_lambda_star,
    phase_labels,
    spin_configs,
)
from fkcoarse.lattice import Box, box_lambda, covering, edge_set


def test_beta_zero_uniform():
    box = box_lambda(3, 2)
    t = ising_exact(box, np.ones(12), 0.0)
    assert np.allclose(t.probs, 1 / 16)


def test_single_site():
    box = Box((1,), (1,))
    beta = 0.37
    t = ising_exact(box, np.ones(2), beta)
    plus = t.probs[1]
    assert plus == pytest.approx(math.exp(2 * beta) / (math.exp(2 * beta) + math.exp(-2 * beta)), abs=1e-14)


def brute_ising(box, J, beta):
    E = edge_set(box, "wired")
    sites = box.vertices()
    out = []
    for s in spin_configs(len(sites)):
        val = dict(zip(sites, s))
        energy = sum(j * val.get(a, 1) * val.get(b, 1) for j, (a, b) in zip(J, E.edges))
        out.append(math.exp(beta * energy))
    out = np.array(out)
    return out / out.sum()


def test_ising_exact_brute_force():
    box = Box((1, 1), (2, 3))
    E = edge_set(box, "wired")
    J = np.random.default_rng(0).choice([0.0, 0.5, 1.0], size=len(E))
    assert np.allclose(ising_exact(box, J, 0.8).probs, brute_ising(box, J, 0.8), atol=1e-14)


@pytest.mark.parametrize("beta", [0.2, 0.7, 1.5])
def test_joint_marginal_is_ising(beta):
    box = box_lambda(3, 2)
    J = np.array([1.0, 0.0, 1.0, 0.5, 1.0, 1.0, 0.0, 1.0, 1.0, 0.3, 1.0, 1.0])
    joint = joint_exact(box, J, beta)
    assert np.abs(joint.sum(axis=1) - ising_exact(box, J, beta).probs).sum() < 1e-10


def test_joint_supported_on_compatible_pairs():
    box = box_lambda(3, 2)
    J = np.ones(12)
    joint = joint_exact(box, J, 0.6)
    sig = spin_configs(4)
    bits = config_bits(12)
    for s in range(16):
        for w in range(0, 4096, 37):
            if joint[s, w] > 0:
                assert compatible(sig[s], bits[w], box)


def test_es_spin_given_wired_bonds():
    box = box_lambda(4, 2)
    E = edge_set(box, "wired")
    sig = es_spin_given_bond(np.ones(len(E)), box, seed=1)
    assert np.all(sig == 1)


def test_es_bonds_on_alternating_spins():
    box = box_lambda(4, 2)
    E = edge_set(box, "wired")
    grid = np.indices(box.shape).sum(axis=0) % 2
    sigma = np.where(grid == 0, 1, -1).ravel()
    w = es_bond_given_spin(sigma, box, np.ones(len(E)), 5.0, seed=2)
    assert compatible(sigma, w, box)
    sites = dict(zip(box.vertices(), sigma))
    for (a, b), x in zip(E.edges, w):
        if sites.get(a, 1) != sites.get(b, 1):
            assert x == 0


def test_cluster_update_stationary():
    box = box_lambda(3, 2)
    J = np.array([1.0, 0.5, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.2, 1.0, 1.0, 1.0])
    K = cluster_kernel_spins(box, J, 0.9)
    pi = ising_exact(box, J, 0.9).probs
    assert np.allclose(K.sum(axis=1), 1)
    assert np.abs(pi @ K - pi).max() < 1e-10


def test_chain_spins_compatible_and_reproducible():
    box = box_lambda(8, 2)
    a = ising_chain(box, 1.0, 0.8, seed=3).sweep(10)
    b = ising_chain(box, 1.0, 0.8, seed=3).sweep(10)
    assert np.array_equal(a.sigma, b.sigma)
    assert compatible(a.sigma, a.omega, box)


def test_block_magnetization_examples():
    box = box_lambda(9, 2)
    cov = covering(box, 4, 2)
    i = cov.indices[0]
    assert block_magnetization(np.ones(box.size), box, cov, i) == 1.0
    assert block_magnetization(-np.ones(box.size), box, cov, i) == -1.0
    grid = np.indices(box.shape).sum(axis=0) % 2
    checker = np.where(grid == 0, 1, -1).ravel()
    assert block_magnetization(checker, box, cov, i) == 0.0


def test_labels_vanish_without_bonds():
    N, L = 13, 4
    box = box_lambda(N, 2)
    E = edge_set(box, "wired")
    lab = phase_labels(np.ones(box.size), np.zeros(len(E)), N, L, 0.9)
    assert set(lab.labels.values()) == {0}
    assert not any(lab.events.values())


def test_labels_reject_incompatible_pair():
    N, L = 13, 4
    box = box_lambda(N, 2)
    E = edge_set(box, "wired")
    with pytest.raises(ValueError):
        phase_labels(-np.ones(box.size), np.ones(len(E)), N, L, 0.9)


def isolated_lattice(box, period=6):
    """All bonds open except those touching sites congruent to (3, 3) mod period."""
    E = edge_set(box, "wired")
    hole = lambda x: all(c % period == 3 for c in x)
    return np.array([0 if hole(a) or hole(b) else 1 for a, b in E.edges], dtype=np.uint8)


def test_labels_plus_on_dense_fixture():
    N, L = 64, 16
    box = box_lambda(N, 2)
    omega = isolated_lattice(box)
    m = 1 - 1 / 36
    lab = phase_labels(np.ones(box.size), omega, N, L, m_beta=m, delta=0.1, delta_iso=0.01)
    assert set(lab.labels.values()) == {1}
    flipped = phase_labels(-np.ones(box.size), omega * 0, N, L, m_beta=m)
    assert set(flipped.labels.values()) == {0}


def test_labels_from_chain_satisfy_invariants():
    N, L = 32, 8
    box = box_lambda(N, 2)
    chain = ising_chain(box, 1.0, 1.0, seed=5).sweep(30)
    lab = phase_labels(chain.sigma, chain.omega, N, L, m_beta=0.97, delta=0.1, delta_iso=0.01)
    assert -1 not in lab.labels.values()
    for i, v in lab.labels.items():
        if v:
            assert abs(lab.magnetizations[i] - 0.97 * v) <= 0.1


def test_invariant_checker_catches_opposite_neighbours():
    cov = covering(box_lambda(13, 2), 4, 4)
    labels = {i: 0 for i in cov.indices}
    mags = {i: 0.0 for i in cov.indices}
    a, b = (1, 1), (1, 2)
    labels[a], labels[b] = 1, -1
    mags[a], mags[b] = 0.9, -0.9
    with pytest.raises(InvariantViolation):
        check_label_invariants(PhaseLabels(cov, labels, {}, mags), 4, 0.9, 0.1)
    labels[b] = 0
    check_label_invariants(PhaseLabels(cov, labels, {}, mags), 4, 0.9, 0.1)
    mags[a] = 0.5
    with pytest.raises(InvariantViolation):
        check_label_invariants(PhaseLabels(cov, labels, {}, mags), 4, 0.9, 0.1)


def test_legendre():
    assert legendre_lambda_star(0.0) == 0.0
    x = np.linspace(-0.99, 0.99, 99)
    v = legendre_lambda_star(x)
    assert np.allclose(v, legendre_lambda_star(-x))
    assert np.all(v >= x**2 / 2)
    with pytest.raises(ValueError):
        legendre_lambda_star(1.0)
