"""Dilute Ising model with plus boundary condition and its cluster coupling.

Spins live on the vertices of a box and equal +1 outside it.  The bond
parameter of the joint spin/bond coupling is ``p = 1 - exp(-2 beta J)``,
which makes the bond marginal the wired random-cluster measure with ``q = 2``.
Spin arrays are aligned with ``box.vertices()`` and bond arrays with the
wired edge set of the box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from . import _graph
from .clusters import crossing_cluster, decompose, isolated_small_clusters, restrict, unique_large
from .fk import compile_graph, config_bits, resolve_boundary
from .lattice import BlockIndex, Box, Covering, box_lambda, covering, edge_set
from .sampler import SeedLike, stream

MAX_EXACT_SPINS = 20


class InvariantViolation(RuntimeError):
    """A structural property of the block labels failed."""


def ising_p(J, beta: float) -> np.ndarray:
    return -np.expm1(-2.0 * beta * np.asarray(J, dtype=float))


@lru_cache(maxsize=64)
def _spin_layout(box: Box):
    """Edge endpoints as spin indices, with -1 for the plus boundary."""
    E = edge_set(box, "wired")
    sites = {x: k for k, x in enumerate(box.vertices())}
    u = np.array([sites.get(a, -1) for a, _ in E.edges], dtype=np.int64)
    v = np.array([sites.get(b, -1) for _, b in E.edges], dtype=np.int64)
    # vertex-of-E index for every site
    site_vertex = np.array([E.vertex_index[x] for x in box.vertices()], dtype=np.int64)
    return E, u, v, site_vertex


def _edge_products(sigma: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """sigma_x sigma_y per edge for spin arrays of shape (..., n)."""
    ext = np.concatenate([sigma, np.ones(sigma.shape[:-1] + (1,), dtype=sigma.dtype)], axis=-1)
    return ext[..., u] * ext[..., v]  # index -1 picks the appended +1


def spin_configs(n: int) -> np.ndarray:
    """All +-1 configurations; configuration c has spin k = +1 iff bit k is set."""
    return (2 * config_bits(n).astype(np.int64) - 1)


@dataclass
class SpinTable:
    box: Box
    probs: np.ndarray
    log_Z: float

    def configs(self) -> np.ndarray:
        return spin_configs(self.box.size)


def ising_exact(box: Box, J, beta: float) -> SpinTable:
    """Exact plus-boundary law on a box with at most 20 sites."""
    if box.size > MAX_EXACT_SPINS:
        raise ValueError(f"|box| = {box.size} exceeds {MAX_EXACT_SPINS}")
    E, u, v, _ = _spin_layout(box)
    J = np.broadcast_to(np.asarray(J, dtype=float), (len(E),))
    sig = spin_configs(box.size)
    energy = _edge_products(sig, u, v) @ J
    lw = beta * energy
    log_Z = float(logsumexp(lw))
    return SpinTable(box, np.exp(lw - log_Z), log_Z)


def joint_exact(box: Box, J, beta: float) -> np.ndarray:
    """Exact joint law of (spins, bonds) as a ``2^|box| x 2^|E|`` array."""
    if box.size > MAX_EXACT_SPINS:
        raise ValueError("box too large for the exact joint law")
    E, u, v, _ = _spin_layout(box)
    J = np.broadcast_to(np.asarray(J, dtype=float), (len(E),))
    p = ising_p(J, beta)
    sig = spin_configs(box.size)
    agree = _edge_products(sig, u, v) > 0  # (S, m)
    bits = config_bits(len(E)).astype(bool)  # (W, m)
    # weight: prod_e [w_e p_e 1{agree} + (1 - w_e)(1 - p_e)]
    logw = np.zeros((len(sig), len(bits)))
    with np.errstate(divide="ignore"):
        for k in range(len(E)):
            open_w = np.where(agree[:, k], p[k], 0.0)
            logw += np.where(bits[None, :, k], np.log(open_w)[:, None], math.log1p(-p[k]))
    w = np.exp(logw - logsumexp(logw))
    return w


def es_spin_given_bond(omega: np.ndarray, box: Box, seed: SeedLike = 0) -> np.ndarray:
    """Spins constant on clusters: +1 on clusters reaching outside ``box``, fair coins elsewhere."""
    E, _, _, site_vertex = _spin_layout(box)
    g = compile_graph(E, resolve_boundary(E, "wired"))
    labels, count = _graph.component_labels(g.n, g.eu, g.ev, np.asarray(omega, dtype=np.uint8))
    rng = seed if isinstance(seed, np.random.Generator) else stream(seed)
    colour = np.where(rng.random(count) < 0.5, 1, -1)
    ghost = labels[g.node_of[E.vertex_index[next(iter(E.boundary_span))]]]
    colour[ghost] = 1
    return colour[labels[g.node_of[site_vertex]]]


def es_bond_given_spin(sigma: np.ndarray, box: Box, J, beta: float, seed: SeedLike = 0) -> np.ndarray:
    """Each edge opens with probability p(J_e) when its spins agree."""
    E, u, v, _ = _spin_layout(box)
    J = np.broadcast_to(np.asarray(J, dtype=float), (len(E),))
    rng = seed if isinstance(seed, np.random.Generator) else stream(seed)
    agree = _edge_products(np.asarray(sigma), u, v) > 0
    return (agree & (rng.random(len(E)) < ising_p(J, beta))).astype(np.uint8)


def compatible(sigma: np.ndarray, omega: np.ndarray, box: Box) -> bool:
    """Every open edge joins equal spins (with +1 outside ``box``)."""
    E, u, v, _ = _spin_layout(box)
    agree = _edge_products(np.asarray(sigma), u, v) > 0
    return bool(np.all(agree | (np.asarray(omega) == 0)))


def cluster_kernel_spins(box: Box, J, beta: float) -> np.ndarray:
    """Exact spin-to-spin transition matrix of one bond-then-spin cluster update."""
    E, u, v, site_vertex = _spin_layout(box)
    J = np.broadcast_to(np.asarray(J, dtype=float), (len(E),))
    p = ising_p(J, beta)
    sig = spin_configs(box.size)
    bits = config_bits(len(E))
    g = compile_graph(E, resolve_boundary(E, "wired"))
    ghost_node = g.node_of[E.vertex_index[next(iter(E.boundary_span))]]
    agree = _edge_products(sig, u, v) > 0
    # P(omega | sigma)
    P_bond = np.ones((len(sig), len(bits)))
    for k in range(len(E)):
        po = np.where(agree[:, k], p[k], 0.0)
        P_bond *= np.where(bits[None, :, k] == 1, po[:, None], 1 - po[:, None])
    # P(sigma' | omega)
    P_spin = np.zeros((len(bits), len(sig)))
    for c, w in enumerate(bits):
        labels, count = _graph.component_labels(g.n, g.eu, g.ev, w)
        site_lab = labels[g.node_of[site_vertex]]
        ghost = labels[ghost_node]
        free_clusters = count - 1
        for s, sv in enumerate(sig):
            ok = True
            colour = {}
            for lab, val in zip(site_lab, sv):
                if lab == ghost and val != 1:
                    ok = False
                    break
                if colour.setdefault(lab, val) != val:
                    ok = False
                    break
            if ok:
                P_spin[c, s] = 0.5 ** free_clusters
    return P_bond @ P_spin


# --------------------------------------------------------------------------
# cluster-update sampler for the plus phase
# --------------------------------------------------------------------------


@dataclass
class IsingChain:
    box: Box
    J: np.ndarray
    beta: float
    rng: np.random.Generator
    omega: np.ndarray = None
    spins: np.ndarray = None

    def __post_init__(self):
        self.E, self.u, self.v, self.site_vertex = _spin_layout(self.box)
        self.graph = compile_graph(self.E, resolve_boundary(self.E, "wired"))
        self.ghost = int(self.graph.node_of[self.E.vertex_index[next(iter(self.E.boundary_span))]])
        self.p = np.ascontiguousarray(ising_p(self.J, self.beta))
        if self.omega is None:
            self.omega = (self.p > 0).astype(np.uint8)
        self.node_spins = np.zeros(self.graph.n, dtype=np.int64)

    def sweep(self, n: int = 1) -> "IsingChain":
        g = self.graph
        u_spin = self.rng.random((n, g.n))
        u_bond = self.rng.random((n, len(self.E)))
        _graph.swendsen_wang_run(g.n, g.eu, g.ev, self.omega, self.p, 2, u_spin, u_bond, self.ghost, 0, self.node_spins)
        return self

    @property
    def sigma(self) -> np.ndarray:
        """Spins of the sites; colour 0 is +1 (the boundary colour)."""
        return 1 - 2 * self.node_spins[self.graph.node_of[self.site_vertex]]


def ising_chain(box: Box, J, beta: float, seed: SeedLike = 0) -> IsingChain:
    J = np.broadcast_to(np.asarray(J, dtype=float), (len(edge_set(box, "wired")),)).copy()
    rng = seed if isinstance(seed, np.random.Generator) else stream(seed)
    return IsingChain(box, J, beta, rng)


# --------------------------------------------------------------------------
# block magnetisation and phase labels
# --------------------------------------------------------------------------


def legendre_lambda_star(x):
    """((1+x)/2) log(1+x) + ((1-x)/2) log(1-x) on the open interval (-1, 1)."""
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) >= 1):
        raise ValueError("the rate function is evaluated on (-1, 1) only")
    out = 0.5 * (1 + x) * np.log1p(x) + 0.5 * (1 - x) * np.log1p(-x)
    return float(out) if out.ndim == 0 else out


def _site_slices(box: Box, sub: Box):
    return sub.slices(box.lower)


def block_magnetization(sigma: np.ndarray, box: Box, cov: Covering, i: BlockIndex) -> float:
    """Average spin over the inner box of block ``i``."""
    grid = np.asarray(sigma).reshape(box.shape)
    return float(grid[_site_slices(box, cov.inner[i])].mean())


@dataclass
class PhaseLabels:
    covering: Covering
    labels: Dict[BlockIndex, int]
    events: Dict[BlockIndex, bool] = field(default_factory=dict)
    magnetizations: Dict[BlockIndex, float] = field(default_factory=dict)


def block_label(
    sigma_inner: np.ndarray,
    omega_inner: np.ndarray,
    omega_outer: np.ndarray,
    inner: Box,
    outer: Box,
    L: int,
    m_beta: float,
    delta: float = 0.1,
    delta_iso: float = 0.01,
    size_threshold: Optional[int] = None,
) -> Tuple[int, bool, float]:
    """Label of one block from the spins of its inner box and the bonds of its two boxes.

    Returns ``(label, good_event, magnetisation)``.
    """
    d = inner.dim
    Ei = edge_set(inner, "wired")
    Eo = edge_set(outer, "wired")
    mag = float(np.mean(sigma_inner))
    dec_o = decompose(omega_outer, Eo)
    rep_o = unique_large(dec_o, outer, L ** (1.0 / 3.0))
    if rep_o.crossing is None or not rep_o.unique_large:
        return 0, False, mag
    dec_i = decompose(omega_inner, Ei)
    c = crossing_cluster(dec_i, inner)
    if c is None:
        return 0, False, mag
    sites = inner.vertices()
    vi = Ei.vertex_index
    in_c = np.array([dec_i.labels[vi[x]] == c for x in sites])
    dens = in_c.sum() / L**d
    if not (m_beta * (1 - delta / 2) <= dens <= m_beta * (1 + delta / 2)):
        return 0, False, mag
    if isolated_small_clusters(dec_i, inner, size_threshold) < delta_iso * L**d:
        return 0, False, mag
    # compatibility on the edges inside the inner box
    sig = {x: s for x, s in zip(sites, sigma_inner)}
    for (a, b), w in zip(Ei.edges, omega_inner):
        if w and a in sig and b in sig and sig[a] != sig[b]:
            return 0, True, mag
    if not in_c.any():
        return 0, True, mag
    eps = int(np.asarray(sigma_inner)[np.flatnonzero(in_c)[0]])
    if abs(mag - m_beta * eps) > delta:
        return 0, True, mag
    return eps, True, mag


def phase_labels(
    sigma: np.ndarray,
    omega: np.ndarray,
    N: int,
    L: int,
    m_beta: float,
    d: int = 2,
    delta: float = 0.1,
    delta_iso: float = 0.01,
    size_threshold: Optional[int] = None,
    check: bool = True,
) -> PhaseLabels:
    """Labels in {-1, 0, +1} for the (L, L)-covering of {1..N-1}^d.

    The spin/bond pair must be compatible; the structural properties of the
    labels are then asserted and a violation raises :class:`InvariantViolation`.
    """
    box = box_lambda(N, d)
    if 3 * L > N - 1:
        raise ValueError("phase labels need 3L <= N - 1")
    cov = covering(box, L, L)
    E = edge_set(box, "wired")
    sigma = np.asarray(sigma)
    omega = np.asarray(omega, dtype=np.uint8)
    if not compatible(sigma, omega, box):
        raise ValueError("spins and bonds are not compatible")
    grid = sigma.reshape(box.shape)
    out = PhaseLabels(cov, {})
    for i in cov.indices:
        inner, outer = cov.inner[i], cov.outer[i]
        s_in = grid[_site_slices(box, inner)].ravel()
        w_in = restrict(omega, E, edge_set(inner, "wired"))
        w_out = restrict(omega, E, edge_set(outer, "wired"))
        lab, ev, mag = block_label(s_in, w_in, w_out, inner, outer, L, m_beta, delta, delta_iso, size_threshold)
        out.labels[i] = lab
        out.events[i] = ev
        out.magnetizations[i] = mag
    if check:
        check_label_invariants(out, L, m_beta, delta)
    return out


def check_label_invariants(labels: PhaseLabels, L: int, m_beta: float, delta: float) -> None:
    """Magnetisation near the label and no opposite labels side by side (plus outside)."""
    cov = labels.covering
    idx = set(cov.indices)
    for i, lab in labels.labels.items():
        if lab != 0 and abs(labels.magnetizations[i] - m_beta * lab) > delta + 1e-12:
            raise InvariantViolation(f"block {i}: magnetisation far from its label")
        d = len(i)
        for k in range(d):
            for s in (-1, 1):
                j = tuple(a + (s if t == k else 0) for t, a in enumerate(i))
                other = labels.labels[j] if j in idx else 1
                if lab * other < 0:
                    raise InvariantViolation(f"blocks {i} and {j} carry opposite labels")
