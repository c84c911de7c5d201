"""Compiled graph kernels shared by the exact, sampling and cluster routines.

Graphs are stored as flat integer arrays: ``eu[k], ev[k]`` are the node ids of
edge ``k`` and ``ptr/adj_e/adj_n`` is a CSR incidence list.  Boundary wiring is
applied before compilation by mapping every vertex of a wired group to one
node, so the kernels never need to know about boundary conditions.
"""

from __future__ import annotations

import numba as nb
import numpy as np


@nb.njit(cache=True, nogil=True)
def _find(parent, a):
    root = a
    while parent[root] != root:
        root = parent[root]
    while parent[a] != root:
        nxt = parent[a]
        parent[a] = root
        a = nxt
    return root


@nb.njit(cache=True, nogil=True)
def component_labels(n, eu, ev, open_mask):
    """Union-find labels of the open subgraph, numbered by first appearance."""
    parent = np.arange(n)
    for k in range(eu.shape[0]):
        if open_mask[k]:
            a = _find(parent, eu[k])
            b = _find(parent, ev[k])
            if a != b:
                if a < b:
                    parent[b] = a
                else:
                    parent[a] = b
    labels = np.empty(n, np.int64)
    remap = np.full(n, -1, np.int64)
    count = 0
    for v in range(n):
        r = _find(parent, v)
        if remap[r] < 0:
            remap[r] = count
            count += 1
        labels[v] = remap[r]
    return labels, count


@nb.njit(cache=True, nogil=True)
def enumerate_component_counts(n, eu, ev):
    """Number of components for every bit mask of the ``m`` edges."""
    m = eu.shape[0]
    total = 1 << m
    out = np.empty(total, np.int16)
    parent = np.empty(n, np.int64)
    for mask in range(total):
        for v in range(n):
            parent[v] = v
        comps = n
        for k in range(m):
            if (mask >> k) & 1:
                a = _find(parent, eu[k])
                b = _find(parent, ev[k])
                if a != b:
                    if a < b:
                        parent[b] = a
                    else:
                        parent[a] = b
                    comps -= 1
        out[mask] = comps
    return out


def incidence(n, eu, ev):
    """CSR incidence arrays ``(ptr, adj_e, adj_n)`` for an edge list."""
    m = len(eu)
    deg = np.bincount(np.concatenate([eu, ev]), minlength=n)
    ptr = np.zeros(n + 1, np.int64)
    np.cumsum(deg, out=ptr[1:])
    ends = np.concatenate([eu, ev])
    other = np.concatenate([ev, eu])
    eid = np.concatenate([np.arange(m), np.arange(m)])
    order = np.argsort(ends, kind="stable")
    return ptr, eid[order].astype(np.int64), other[order].astype(np.int64)


@nb.njit(cache=True, nogil=True)
def connected_without(src, dst, skip, ptr, adj_e, adj_n, omega, mark, stamp, qa, qb):
    """Whether ``src`` and ``dst`` are joined by open edges other than ``skip``.

    Two breadth-first searches are grown alternately, so the cost is governed
    by the smaller of the two explored regions.  ``mark`` must hold values
    below ``stamp``; the caller advances ``stamp`` by two per query.
    """
    if src == dst:
        return True
    sa = stamp
    sb = stamp + 1
    mark[src] = sa
    mark[dst] = sb
    ha = 0
    ta = 1
    hb = 0
    tb = 1
    qa[0] = src
    qb[0] = dst
    while ha < ta and hb < tb:
        v = qa[ha]
        ha += 1
        for k in range(ptr[v], ptr[v + 1]):
            e = adj_e[k]
            if e == skip or omega[e] == 0:
                continue
            w = adj_n[k]
            if mark[w] == sb:
                return True
            if mark[w] != sa:
                mark[w] = sa
                qa[ta] = w
                ta += 1
        if ha >= ta:
            return False
        v = qb[hb]
        hb += 1
        for k in range(ptr[v], ptr[v + 1]):
            e = adj_e[k]
            if e == skip or omega[e] == 0:
                continue
            w = adj_n[k]
            if mark[w] == sa:
                return True
            if mark[w] != sb:
                mark[w] = sb
                qb[tb] = w
                tb += 1
    return False


@nb.njit(cache=True, nogil=True)
def heat_bath_run(eu, ev, ptr, adj_e, adj_n, omega, p, pt, uniforms, order, mark, stamp):
    """Apply the heat-bath update to the edges ``order[s, :]`` for every row ``s``.

    An edge whose endpoints are connected off the edge is opened with
    probability ``p``, otherwise with ``pt``.  Returns the next free stamp.
    """
    n = ptr.shape[0] - 1
    qa = np.empty(n, np.int64)
    qb = np.empty(n, np.int64)
    for s in range(order.shape[0]):
        for t in range(order.shape[1]):
            e = order[s, t]
            if p[e] == pt[e]:
                prob = p[e]
            else:
                if connected_without(eu[e], ev[e], e, ptr, adj_e, adj_n, omega, mark, stamp, qa, qb):
                    prob = p[e]
                else:
                    prob = pt[e]
                stamp += 2
            omega[e] = 1 if uniforms[s, t] < prob else 0
    return stamp


@nb.njit(cache=True, nogil=True)
def heat_bath_record(eu, ev, ptr, adj_e, adj_n, omega, p, pt, uniforms, order, mark, stamp, thin, out):
    """Systematic sweeps that store the configuration every ``thin`` sweeps in ``out``."""
    n = ptr.shape[0] - 1
    m = eu.shape[0]
    qa = np.empty(n, np.int64)
    qb = np.empty(n, np.int64)
    rec = 0
    for s in range(order.shape[0]):
        for t in range(order.shape[1]):
            e = order[s, t]
            if p[e] == pt[e]:
                prob = p[e]
            else:
                if connected_without(eu[e], ev[e], e, ptr, adj_e, adj_n, omega, mark, stamp, qa, qb):
                    prob = p[e]
                else:
                    prob = pt[e]
                stamp += 2
            omega[e] = 1 if uniforms[s, t] < prob else 0
        if (s + 1) % thin == 0:
            for k in range(m):
                out[rec, k] = omega[k]
            rec += 1
    return stamp


@nb.njit(cache=True, nogil=True)
def swendsen_wang_run(n, eu, ev, omega, p, q, u_spin, u_bond, fixed_node, fixed_spin, spins):
    """Cluster updates of the Potts/random-cluster joint measure.

    Row ``s`` of ``u_spin`` colours the clusters of the current bonds (a
    cluster takes the colour drawn at its lowest node) and row ``s`` of ``u_bond``
    redraws the bonds given the colours.  When ``fixed_node >= 0`` its cluster
    is given ``fixed_spin``.  ``spins`` receives the colours of the last row.
    """
    m = eu.shape[0]
    for s in range(u_spin.shape[0]):
        labels, count = component_labels(n, eu, ev, omega)
        colour = np.empty(count, np.int64)
        for c in range(count):
            colour[c] = -1
        if fixed_node >= 0:
            colour[labels[fixed_node]] = fixed_spin
        for v in range(n):
            c = labels[v]
            if colour[c] < 0:
                colour[c] = min(int(u_spin[s, v] * q), q - 1)
        for v in range(n):
            spins[v] = colour[labels[v]]
        for k in range(m):
            if spins[eu[k]] == spins[ev[k]] and u_bond[s, k] < p[k]:
                omega[k] = 1
            else:
                omega[k] = 0
