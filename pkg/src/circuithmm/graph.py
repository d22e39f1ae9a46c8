"""Spatial graphs, Laplacians and centroid distances.

A :class:`SpatialGraph` holds node identifiers, planar centroids and a
weighted, undirected edge list.  Edge weights are conductances; with all
weights equal to one the adjacency matrix is the usual 0/1 neighbourhood
matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import (
    CoincidentCentroids,
    DisconnectedGraph,
    DuplicateEdge,
    EmptyTerminalSet,
    GraphError,
    InvalidInput,
    NonpositiveConductance,
    OverlappingTerminals,
    UnknownNode,
)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SpatialGraph:
    """Undirected weighted graph with planar node centroids.

    Instances are immutable and hashed by identity, so they can be used as
    cache keys.
    """

    node_ids: tuple[str, ...]
    centroids: np.ndarray
    edges: tuple[tuple[str, str, float], ...]
    adjacency: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.node_ids)

    @property
    def index(self) -> dict[str, int]:
        return {k: i for i, k in enumerate(self.node_ids)}

    def laplacian(self) -> np.ndarray:
        return laplacian(self.adjacency)


def build_graph(nodes: Sequence, edges: Iterable) -> SpatialGraph:
    """Validate nodes ``(id, x, y)`` and edges ``(a, b[, conductance])``."""
    nodes = list(nodes)
    if len(nodes) < 2:
        raise GraphError("a graph needs at least two nodes")
    ids = tuple(str(nd[0]) for nd in nodes)
    if len(set(ids)) != len(ids):
        raise GraphError("duplicate node identifiers")
    index = {k: i for i, k in enumerate(ids)}
    xy = np.array([[float(nd[1]), float(nd[2])] for nd in nodes])
    if not np.all(np.isfinite(xy)):
        raise InvalidInput("centroids must be finite")

    n = len(ids)
    A = np.zeros((n, n))
    seen = set()
    clean = []
    for e in edges:
        a, b = str(e[0]), str(e[1])
        c = float(e[2]) if len(e) > 2 and e[2] is not None else 1.0
        for k in (a, b):
            if k not in index:
                raise UnknownNode(f"edge references unknown node {k!r}")
        if a == b:
            raise GraphError(f"self-loop on node {a!r}")
        if not (c > 0) or not np.isfinite(c):
            raise NonpositiveConductance(f"edge {a}-{b} has conductance {c}")
        key = frozenset((a, b))
        if key in seen:
            raise DuplicateEdge(f"duplicate edge {a}-{b}")
        seen.add(key)
        i, j = index[a], index[b]
        A[i, j] = A[j, i] = c
        clean.append((a, b, c))

    n_comp, _ = connected_components(csr_matrix(A), directed=False)
    if n_comp != 1:
        raise DisconnectedGraph(f"graph has {n_comp} connected components")
    return SpatialGraph(ids, _frozen(xy), tuple(clean), _frozen(A))


def lattice(rows: int, cols: int, spacing: float = 1.0) -> SpatialGraph:
    """Rook-adjacency grid with unit conductances.

    Node ``r{r}c{c}`` sits at ``(c, r) * spacing``; row ``rows - 1`` is the
    northern (top) edge.
    """
    if rows < 1 or cols < 1 or rows * cols < 2:
        raise GraphError(f"degenerate lattice size {rows}x{cols}")
    nodes = [(lattice_id(r, c), c * spacing, r * spacing)
             for r in range(rows) for c in range(cols)]
    edges = []
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                edges.append((lattice_id(r, c), lattice_id(r, c + 1), 1.0))
            if r + 1 < rows:
                edges.append((lattice_id(r, c), lattice_id(r + 1, c), 1.0))
    return build_graph(nodes, edges)


def lattice_id(r: int, c: int) -> str:
    return f"r{r}c{c}"


def lattice_terminals(rows: int, cols: int) -> tuple[list[str], list[str]]:
    """Battery on the top row, ground on the bottom row."""
    top = [lattice_id(rows - 1, c) for c in range(cols)]
    bottom = [lattice_id(0, c) for c in range(cols)]
    return top, bottom


def laplacian(A: np.ndarray) -> np.ndarray:
    """``diag(A 1) - A`` for a symmetric, zero-diagonal, nonnegative ``A``."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInput("adjacency must be square")
    if not np.allclose(A, A.T, rtol=0, atol=1e-12):
        raise InvalidInput("adjacency must be symmetric")
    if np.any(np.diag(A) != 0):
        raise InvalidInput("adjacency must have a zero diagonal")
    if np.any(A < 0):
        raise InvalidInput("adjacency must be nonnegative")
    return np.diag(A.sum(axis=1)) - A


@dataclass(frozen=True, eq=False)
class AugmentedGraph:
    """Base graph plus a battery node (index n) and a ground node (index n+1)."""

    base: SpatialGraph
    battery_attach: frozenset
    ground_attach: frozenset
    A_star: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def battery_index(self) -> int:
        return self.base.n

    @property
    def ground_index(self) -> int:
        return self.base.n + 1

    def laplacian(self) -> np.ndarray:
        return laplacian(self.A_star)


def augment(g: SpatialGraph, battery_attach: Iterable[str], ground_attach: Iterable[str],
            battery_conductance: float = 1.0, ground_conductance: float = 1.0) -> AugmentedGraph:
    battery = frozenset(str(k) for k in battery_attach)
    ground = frozenset(str(k) for k in ground_attach)
    if not battery or not ground:
        raise EmptyTerminalSet("battery and ground attachment sets must be non-empty")
    if battery & ground:
        raise OverlappingTerminals(f"nodes attached to both terminals: {sorted(battery & ground)}")
    index = g.index
    for k in battery | ground:
        if k not in index:
            raise UnknownNode(f"terminal attachment references unknown node {k!r}")
    for c in (battery_conductance, ground_conductance):
        if not c > 0:
            raise NonpositiveConductance("terminal conductances must be positive")

    n = g.n
    A = np.zeros((n + 2, n + 2))
    A[:n, :n] = g.adjacency
    for k in battery:
        A[index[k], n] = A[n, index[k]] = battery_conductance
    for k in ground:
        A[index[k], n + 1] = A[n + 1, index[k]] = ground_conductance
    return AugmentedGraph(g, battery, ground, _frozen(A))


def distance_matrix(g: SpatialGraph) -> np.ndarray:
    """Euclidean distances between centroids."""
    xy = g.centroids
    diff = xy[:, None, :] - xy[None, :, :]
    D = np.sqrt((diff ** 2).sum(axis=-1))
    off = ~np.eye(g.n, dtype=bool)
    if np.any(D[off] <= 0):
        i, j = np.argwhere((D <= 0) & off)[0]
        raise CoincidentCentroids(f"nodes {g.node_ids[i]!r} and {g.node_ids[j]!r} share a centroid")
    return _frozen(D)
