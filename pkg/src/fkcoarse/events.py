"""Events on bond configurations, evaluated on stacks of configurations.

An event maps ``(E, omegas)`` with ``omegas`` of shape ``(n, |E|)`` to a
boolean array of length ``n``.  Only events flagged ``increasing`` may be fed
to the stochastic-domination test.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, FrozenSet, Optional, Tuple

import numpy as np

from . import _graph
from .lattice import Box, Edge, EdgeSet, Point, boundary_faces


class Event:
    name: str = "event"
    increasing: bool = False

    def evaluate(self, E: EdgeSet, omegas: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, E: EdgeSet, omegas: np.ndarray) -> np.ndarray:
        return self.evaluate(E, omegas)


@dataclass
class UpSet(Event):
    """The up-set generated by a family of edge sets (its minimal elements)."""

    generators: Tuple[FrozenSet[Edge], ...]
    name: str = "upset"
    increasing: bool = True

    def __post_init__(self):
        self.generators = tuple(frozenset(g) for g in self.generators)
        if not self.generators:
            raise ValueError("an up-set needs at least one generator")

    def evaluate(self, E: EdgeSet, omegas: np.ndarray) -> np.ndarray:
        omegas = np.atleast_2d(omegas)
        out = np.zeros(omegas.shape[0], dtype=bool)
        for g in self.generators:
            idx = [E.index.get(e, -1) for e in g]
            if min(idx, default=0) < 0:
                continue  # a generator using edges outside E never holds
            out |= np.all(omegas[:, idx] == 1, axis=1) if idx else True
        return out


@dataclass
class PredicateEvent(Event):
    """An event given by a per-configuration predicate.

    The ``increasing`` flag is a claim made by the caller.
    """

    predicate: Callable[[EdgeSet, np.ndarray], bool]
    name: str = "predicate"
    increasing: bool = False

    def evaluate(self, E: EdgeSet, omegas: np.ndarray) -> np.ndarray:
        omegas = np.atleast_2d(omegas)
        return np.array([bool(self.predicate(E, w)) for w in omegas], dtype=bool)


def _labels(E: EdgeSet, omega: np.ndarray) -> np.ndarray:
    u, v = E.endpoints
    labels, _ = _graph.component_labels(len(E.vertices), u, v, np.asarray(omega, dtype=np.uint8))
    return labels


@dataclass
class ConnectionEvent(Event):
    """Two vertex sets are joined by an open path (increasing)."""

    a: Tuple[Point, ...]
    b: Tuple[Point, ...]
    name: str = "connection"
    increasing: bool = True

    def evaluate(self, E: EdgeSet, omegas: np.ndarray) -> np.ndarray:
        omegas = np.atleast_2d(omegas)
        vi = E.vertex_index
        ia = np.array([vi[x] for x in self.a if x in vi], dtype=np.int64)
        ib = np.array([vi[x] for x in self.b if x in vi], dtype=np.int64)
        out = np.zeros(omegas.shape[0], dtype=bool)
        if len(ia) == 0 or len(ib) == 0:
            return out
        for k, w in enumerate(omegas):
            lab = _labels(E, w)
            out[k] = bool(np.intersect1d(lab[ia], lab[ib]).size)
        return out


def connection(x: Point, y: Point, name: Optional[str] = None) -> ConnectionEvent:
    return ConnectionEvent((tuple(x),), (tuple(y),), name=name or f"{tuple(x)}<->{tuple(y)}")


def face_crossing(box: Box, axis: int, name: Optional[str] = None) -> ConnectionEvent:
    """Open path between the two exterior faces of ``box`` orthogonal to ``axis``."""
    faces = boundary_faces(box)
    return ConnectionEvent(
        tuple(sorted(faces[(axis, 0)])), tuple(sorted(faces[(axis, 1)])), name=name or f"crossing-axis{axis}"
    )


def edge_open(e: Edge, name: Optional[str] = None) -> UpSet:
    return UpSet((frozenset([e]),), name=name or f"open{e}")


@dataclass
class CountAtLeast(Event):
    """At least ``k`` of the listed edges are open (increasing)."""

    edges: Tuple[Edge, ...]
    k: int
    name: str = "count"
    increasing: bool = True

    def evaluate(self, E: EdgeSet, omegas: np.ndarray) -> np.ndarray:
        omegas = np.atleast_2d(omegas)
        idx = E.positions(self.edges)
        return omegas[:, idx].sum(axis=1) >= self.k
