"""Weighted k-NN graphs over point clouds.

Edge weights use a Gaussian kernel on Euclidean distance,
w_ij = exp(-||p_i - p_j||^2 / sigma_p^2), so weights fall in (0, 1].
Neighbor queries are exact (kd-tree with full backtracking) and distance
ties are broken by the smaller point index, which makes the graph
independent of point insertion order.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.sparse import csr_matrix
from scipy.spatial import cKDTree

from .errors import DegenerateCloudError


class SpatialIndex:
    """Exact nearest-neighbor index with deterministic tie handling.

    Wraps a kd-tree; candidate sets are re-sorted by (distance, index) so
    exact distance ties always resolve to the smaller point index.
    """

    _PAD = 4

    def __init__(self, points: np.ndarray):
        points = np.ascontiguousarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {points.shape}")
        self.points = points
        self.n = points.shape[0]
        self._tree = cKDTree(points)

    def query_knn(self, targets: np.ndarray, k: int, exclude_self: bool = False) -> np.ndarray:
        """Return (m, k) neighbor indices sorted by (distance, index).

        With exclude_self=True, targets must be the indexed points
        themselves and each row drops its own index.
        """
        targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
        need = k + 1 if exclude_self else k
        if need > self.n:
            raise ValueError(f"requested {need} neighbors from {self.n} points")
        kq = min(self.n, need + self._PAD)
        # k as a rank sequence keeps the result 2-D even for a single rank.
        dist, idx = self._tree.query(targets, k=np.arange(1, kq + 1))
        # Expand any row whose candidate list may truncate a tie run at the
        # cutoff distance; rare, so a per-row loop is fine.
        while kq < self.n:
            cutoff = dist[:, need - 1]
            unsafe = dist[:, -1] <= cutoff
            if not np.any(unsafe):
                break
            kq = min(self.n, kq * 2)
            d2, i2 = self._tree.query(targets[unsafe], k=np.arange(1, kq + 1))
            pad_d = np.full((dist.shape[0], kq), np.inf)
            pad_i = np.zeros((dist.shape[0], kq), dtype=idx.dtype)
            pad_d[:, : dist.shape[1]] = dist
            pad_i[:, : idx.shape[1]] = idx
            pad_d[unsafe] = d2
            pad_i[unsafe] = i2
            dist, idx = pad_d, pad_i
        # Stable (distance, index) order; only rows with exact ties need it.
        tied = (dist[:, 1:] == dist[:, :-1]).any(axis=1)
        for row in np.flatnonzero(tied):
            order = np.lexsort((idx[row], dist[row]))
            idx[row] = idx[row][order]
            dist[row] = dist[row][order]
        if exclude_self:
            out = np.empty((targets.shape[0], k), dtype=np.int64)
            for row in range(targets.shape[0]):
                keep = idx[row][idx[row] != row]
                out[row] = keep[:k]
            return out
        return idx[:, :k].astype(np.int64)

    def nearest(self, targets: np.ndarray) -> np.ndarray:
        """Index of the nearest indexed point for each target (ties: smaller index)."""
        return self.query_knn(targets, 1)[:, 0]


def edge_weight(p_i: np.ndarray, p_j: np.ndarray, sigma_p: float) -> float | np.ndarray:
    """Gaussian kernel weight exp(-||p_i - p_j||^2 / sigma_p^2).

    Accepts single points or (..., 3) stacks; identical points give 1.
    """
    if sigma_p <= 0:
        raise ValueError(f"sigma_p must be > 0, got {sigma_p}")
    diff = np.asarray(p_i, dtype=np.float64) - np.asarray(p_j, dtype=np.float64)
    sq = np.sum(diff * diff, axis=-1)
    w = np.exp(-sq / (sigma_p * sigma_p))
    return float(w) if np.ndim(w) == 0 else w


@dataclass(eq=False)
class WeightedGraph:
    """Undirected weighted graph, canonical edge storage.

    Edges are kept as parallel arrays (ei, ej, w) with ei < ej, sorted
    lexicographically, no duplicates, no self-loops, weights in (0, 1].
    Treated as immutable after construction.
    """

    node_count: int
    ei: np.ndarray
    ej: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        if self.node_count < 1:
            raise ValueError("graph needs at least one node")
        ei = np.asarray(self.ei, dtype=np.int64).ravel()
        ej = np.asarray(self.ej, dtype=np.int64).ravel()
        w = np.asarray(self.w, dtype=np.float64).ravel()
        if not (ei.shape == ej.shape == w.shape):
            raise ValueError("edge arrays must have equal length")
        if ei.size:
            lo = np.minimum(ei, ej)
            hi = np.maximum(ei, ej)
            if np.any(lo == hi):
                raise ValueError("self-loops are not allowed")
            if lo.min() < 0 or hi.max() >= self.node_count:
                raise ValueError("edge endpoint out of range")
            order = np.lexsort((hi, lo))
            lo, hi, w = lo[order], hi[order], w[order]
            key = lo * self.node_count + hi
            if np.any(np.diff(key) == 0):
                raise ValueError("duplicate edges are not allowed")
            if np.any(w <= 0) or np.any(w > 1):
                raise ValueError("edge weights must lie in (0, 1]")
            ei, ej = lo, hi
        self.ei, self.ej, self.w = ei, ej, w

    @property
    def edge_count(self) -> int:
        return self.ei.size

    def degrees(self) -> np.ndarray:
        """Weighted degree of every node."""
        deg = np.zeros(self.node_count)
        np.add.at(deg, self.ei, self.w)
        np.add.at(deg, self.ej, self.w)
        return deg

    def incident_counts(self) -> np.ndarray:
        """Number of incident edges per node."""
        cnt = np.zeros(self.node_count, dtype=np.int64)
        np.add.at(cnt, self.ei, 1)
        np.add.at(cnt, self.ej, 1)
        return cnt

    @cached_property
    def neighbor_lists(self) -> list[np.ndarray]:
        """Per node: ascending array of neighbor indices."""
        nbrs: list[list[int]] = [[] for _ in range(self.node_count)]
        for a, b in zip(self.ei, self.ej):
            nbrs[a].append(int(b))
            nbrs[b].append(int(a))
        return [np.array(sorted(lst), dtype=np.int64) for lst in nbrs]

    @cached_property
    def _weight_lookup(self) -> dict[tuple[int, int], float]:
        return {
            (int(a), int(b)): float(wt)
            for a, b, wt in zip(self.ei, self.ej, self.w)
        }

    def weight_of(self, a: int, b: int) -> float:
        """Weight of edge (a, b); KeyError if absent."""
        if a > b:
            a, b = b, a
        return self._weight_lookup[(a, b)]

    def components(self) -> list[np.ndarray]:
        """Connected components as ascending index arrays, ordered by smallest member."""
        seen = np.zeros(self.node_count, dtype=bool)
        nbrs = self.neighbor_lists
        comps = []
        for start in range(self.node_count):
            if seen[start]:
                continue
            stack = [start]
            seen[start] = True
            comp = []
            while stack:
                u = stack.pop()
                comp.append(u)
                for v in nbrs[u]:
                    if not seen[v]:
                        seen[v] = True
                        stack.append(int(v))
            comps.append(np.array(sorted(comp), dtype=np.int64))
        return comps


def build_knn_graph(cloud_or_points, k: int, sigma_p: float) -> WeightedGraph:
    """Symmetrized (union) k-NN graph with Gaussian kernel weights.

    Every node contributes its k nearest neighbors (exact, ties by smaller
    index); an edge exists if either endpoint selected the other, so each
    node has at least k incident edges.
    """
    points = getattr(cloud_or_points, "positions", cloud_or_points)
    points = np.ascontiguousarray(points, dtype=np.float64)
    n = points.shape[0]
    if n < 2:
        raise DegenerateCloudError("k-NN graph needs at least 2 points")
    if k < 1 or k >= n:
        raise ValueError(f"k must satisfy 1 <= k < N, got k={k}, N={n}")
    if sigma_p <= 0:
        raise ValueError(f"sigma_p must be > 0, got {sigma_p}")
    if np.all(points == points[0]):
        raise DegenerateCloudError("all points coincide; k-NN graph undefined")

    idx = SpatialIndex(points).query_knn(points, k, exclude_self=True)
    src = np.repeat(np.arange(n, dtype=np.int64), k)
    dst = idx.ravel()
    lo = np.minimum(src, dst)
    hi = np.maximum(src, dst)
    key = np.unique(lo * n + hi)
    ei = key // n
    ej = key % n
    w = edge_weight(points[ei], points[ej], sigma_p)
    return WeightedGraph(n, ei, ej, np.atleast_1d(w))


def laplacian(graph: WeightedGraph, dense: bool = False):
    """Combinatorial Laplacian L = D - W (symmetric PSD, zero row sums)."""
    n = graph.node_count
    deg = graph.degrees()
    if dense:
        L = np.zeros((n, n))
        L[graph.ei, graph.ej] = -graph.w
        L[graph.ej, graph.ei] = -graph.w
        L[np.arange(n), np.arange(n)] = deg
        return L
    rows = np.concatenate([graph.ei, graph.ej, np.arange(n)])
    cols = np.concatenate([graph.ej, graph.ei, np.arange(n)])
    vals = np.concatenate([-graph.w, -graph.w, deg])
    return csr_matrix((vals, (rows, cols)), shape=(n, n))


def edge_list_lines(graph: WeightedGraph):
    """Yield 'i j w' debug lines in canonical order."""
    for a, b, wt in zip(graph.ei, graph.ej, graph.w):
        yield f"{a} {b} {wt:.17g}"


def export_edge_list(graph: WeightedGraph, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in edge_list_lines(graph):
            fh.write(line + "\n")
