"""County adjacency and intrinsic CAR (ICAR) prior machinery."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np


class GraphError(ValueError):
    """Raised for malformed adjacency input."""


@dataclass(frozen=True)
class AdjacencyGraph:
    """Undirected, loop-free neighbour structure over ``n_areas`` areas.

    ``neighbor_lists[i]`` holds the sorted neighbour indices of area ``i``.
    ``edges`` is the canonical ``(a, b)`` list with ``a < b``, which is what
    every quadratic form iterates over. Dense ``W``/``D`` are only built on
    request (tests and generation-time eigendecompositions).
    """

    area_ids: tuple
    neighbor_lists: tuple
    edges: np.ndarray  # (edge_count, 2) int64, a < b

    @property
    def n_areas(self) -> int:
        return len(self.area_ids)

    @property
    def edge_count(self) -> int:
        return int(self.edges.shape[0])

    @property
    def degrees(self) -> np.ndarray:
        return np.array([len(nb) for nb in self.neighbor_lists], dtype=np.int64)

    def index_of(self, area_id) -> int:
        return self._index[area_id]

    @cached_property
    def _index(self) -> dict:
        return {a: i for i, a in enumerate(self.area_ids)}

    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """Neighbour lists packed as (offsets, indices) for the sampling kernels."""
        deg = self.degrees
        offsets = np.zeros(self.n_areas + 1, dtype=np.int64)
        np.cumsum(deg, out=offsets[1:])
        if offsets[-1]:
            indices = np.concatenate([np.asarray(nb, dtype=np.int64) for nb in self.neighbor_lists])
        else:
            indices = np.zeros(0, dtype=np.int64)
        return offsets, indices

    def adjacency_matrix(self) -> np.ndarray:
        W = np.zeros((self.n_areas, self.n_areas))
        if self.edge_count:
            W[self.edges[:, 0], self.edges[:, 1]] = 1.0
            W[self.edges[:, 1], self.edges[:, 0]] = 1.0
        return W

    def degree_matrix(self) -> np.ndarray:
        return np.diag(self.degrees.astype(float))

    def icar_precision(self) -> np.ndarray:
        """Dense ``D - W``."""
        return self.degree_matrix() - self.adjacency_matrix()


def from_edges(edge_records: Iterable[tuple], area_ids: Sequence) -> AdjacencyGraph:
    """Build a graph from undirected edge records over an ordered id list.

    Reversed duplicates are merged. Unknown ids and self-loops raise
    :class:`GraphError` naming the offending record.
    """
    area_ids = tuple(area_ids)
    index = {a: i for i, a in enumerate(area_ids)}
    if len(index) != len(area_ids):
        raise GraphError("duplicate area ids")
    canon = set()
    for rec in edge_records:
        a, b = rec
        if a not in index or b not in index:
            raise GraphError(f"unknown area id in edge record {rec!r}")
        if a == b:
            raise GraphError(f"self-loop in edge record {rec!r}")
        i, j = index[a], index[b]
        canon.add((min(i, j), max(i, j)))
    edges = np.array(sorted(canon), dtype=np.int64).reshape(-1, 2)
    nbrs = [[] for _ in area_ids]
    for i, j in edges:
        nbrs[i].append(int(j))
        nbrs[j].append(int(i))
    neighbor_lists = tuple(tuple(sorted(nb)) for nb in nbrs)
    return AdjacencyGraph(area_ids=area_ids, neighbor_lists=neighbor_lists, edges=edges)


# spec name
load_adjacency = from_edges


def icar_quadform(graph: AdjacencyGraph, u) -> float:
    """Sum of squared differences across edges, i.e. ``u' (D - W) u``."""
    u = np.asarray(u, dtype=float)
    if u.shape != (graph.n_areas,):
        raise ValueError(f"expected vector of length {graph.n_areas}, got shape {u.shape}")
    if graph.edge_count == 0:
        return 0.0
    d = u[graph.edges[:, 0]] - u[graph.edges[:, 1]]
    return float(np.dot(d, d))


def icar_logdensity_unnorm(graph: AdjacencyGraph, u, tau: float) -> float:
    """Improper ICAR log-density ``-(tau/2) u'(D-W)u`` without normalising constant."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    return -0.5 * tau * icar_quadform(graph, u)


def connected_components(graph: AdjacencyGraph) -> np.ndarray:
    """Component label per area (labels 0..k-1 in order of first appearance)."""
    labels = np.full(graph.n_areas, -1, dtype=np.int64)
    current = 0
    for start in range(graph.n_areas):
        if labels[start] >= 0:
            continue
        stack = [start]
        labels[start] = current
        while stack:
            i = stack.pop()
            for j in graph.neighbor_lists[i]:
                if labels[j] < 0:
                    labels[j] = current
                    stack.append(j)
        current += 1
    return labels


def icar_rank(graph: AdjacencyGraph) -> int:
    """Rank of ``D - W``: areas minus components (isolated areas count as components)."""
    labels = connected_components(graph)
    n_comp = int(labels.max()) + 1 if labels.size else 0
    return graph.n_areas - n_comp


def center_by_component(graph: AdjacencyGraph, u) -> np.ndarray:
    """Subtract per-component means; isolated areas are set to zero."""
    u = np.array(u, dtype=float)
    labels = connected_components(graph)
    for c in np.unique(labels):
        mask = labels == c
        u[mask] -= u[mask].mean()
    return u


def _range_basis(Q: np.ndarray) -> np.ndarray:
    if Q.shape[0] == 0:
        return np.zeros((0, 0))
    lam, V = np.linalg.eigh(Q)
    keep = lam > 1e-9 * max(1.0, float(lam.max()))
    return V[:, keep] / np.sqrt(lam[keep])


def icar_sampling_basis(graph: AdjacencyGraph) -> np.ndarray:
    """Matrix ``L`` with ``L @ z`` (``z`` iid standard normal) distributed as the
    sum-to-zero-constrained ICAR field at unit precision.

    Columns are eigenvectors of ``D - W`` with positive eigenvalue scaled by
    ``1/sqrt(lambda)``. Dense eigendecomposition, so keep ``n`` modest.
    """
    return _range_basis(graph.icar_precision())


def rw1_sampling_basis(n_steps: int) -> np.ndarray:
    """Same construction for a first-order random walk constrained to sum to
    zero (the ICAR on a path graph)."""
    Q = np.zeros((n_steps, n_steps))
    for k in range(n_steps - 1):
        Q[k, k] += 1
        Q[k + 1, k + 1] += 1
        Q[k, k + 1] -= 1
        Q[k + 1, k] -= 1
    return _range_basis(Q)
