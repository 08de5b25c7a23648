"""Surface normal estimation as a linear function of node position.

A node's normal is the unit cross product (p_i - p_k) x (p_k - p_l) of
its position with a support pair (k, l) drawn from the opposite class.
That cross product is affine in p_i:

    (p_i - p_k) x (p_k - p_l) = C p_i + d,
    C = skew(p_l - p_k),  d = p_k x p_l,

where skew(v) is the matrix with skew(v) @ x == v x x. Dividing by the
norm at a chosen linearization point gives n_i ~ A p_i + b. Signs are
made globally consistent with a minimum spanning tree walk.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .errors import CollinearityError, NoSupportPairError
from .graph import SpatialIndex, WeightedGraph

DEFAULT_COLLINEARITY_TOL = 1e-8


@dataclass(frozen=True)
class SupportPair:
    """Opposite-class anchor nodes (k, l) for one node's normal."""

    node: int
    k: int
    l: int

    def __post_init__(self):
        if len({self.node, self.k, self.l}) != 3:
            raise ValueError(f"support pair nodes must be distinct, got {self}")


@dataclass(frozen=True, eq=False)
class NormalLinearization:
    """Affine normal model n(p) = A p + b frozen at one linearization point.

    C, d are the exact cross-product coefficients; A = alpha * C / r and
    b = alpha * d / r with r = ||C p_in + d|| at the linearization point,
    so ||A p_in + b|| = 1 there.
    """

    C: np.ndarray
    d: np.ndarray
    alpha: int
    A: np.ndarray
    b: np.ndarray
    norm_in: float


@dataclass(eq=False)
class NormalField:
    """Oriented normals plus linearizations for a set of nodes."""

    ids: np.ndarray              # global node indices, ascending
    normals: np.ndarray          # (n, 3) oriented unit normals at the linearization point
    lins: list[NormalLinearization]
    pairs: list[SupportPair]


def skew(v: np.ndarray) -> np.ndarray:
    """Matrix S with S @ x == v x x."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def cross_coefficients(p_k: np.ndarray, p_l: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(C, d) with C p + d == (p - p_k) x (p_k - p_l) for every p."""
    p_k = np.asarray(p_k, dtype=np.float64)
    p_l = np.asarray(p_l, dtype=np.float64)
    return skew(p_l - p_k), np.cross(p_k, p_l)


def _is_valid_triple(p_i, p_k, p_l, tol: float) -> bool:
    cross = np.cross(p_i - p_k, p_k - p_l)
    return float(np.linalg.norm(cross)) > tol * float(
        np.linalg.norm(p_i - p_k) * np.linalg.norm(p_k - p_l)
    )


def raw_normal(p_i, p_k, p_l, tol: float = DEFAULT_COLLINEARITY_TOL):
    """Unit normal of the triple plus its affine coefficients.

    Returns (n, C, d, norm) with n = (C p_i + d) / norm. Raises
    CollinearityError when the triple is collinear within tol (relative
    to the two segment lengths).
    """
    p_i = np.asarray(p_i, dtype=np.float64)
    C, d = cross_coefficients(p_k, p_l)
    vec = C @ p_i + d
    norm = float(np.linalg.norm(vec))
    if norm <= tol * float(np.linalg.norm(p_i - p_k) * np.linalg.norm(np.asarray(p_k) - np.asarray(p_l))):
        raise CollinearityError(
            f"support triple is collinear (cross norm {norm:.3e})"
        )
    return vec / norm, C, d, norm


def select_support_pair(
    node: int,
    p_i: np.ndarray,
    candidate_ids: np.ndarray,
    candidate_positions: np.ndarray,
    tol: float = DEFAULT_COLLINEARITY_TOL,
) -> SupportPair:
    """First non-collinear (k, l) from distance-ordered candidates.

    Candidates must already be sorted by (distance to p_i, index). k walks
    the candidates nearest-first; for each k, l is the nearest other
    candidate passing the collinearity test; if none passes, k advances.
    """
    m = len(candidate_ids)
    if m < 2:
        raise NoSupportPairError(node, f"node {node}: only {m} opposite-class candidates")
    p_i = np.asarray(p_i, dtype=np.float64)
    for a in range(m):
        for b in range(m):
            if b == a:
                continue
            if _is_valid_triple(p_i, candidate_positions[a], candidate_positions[b], tol):
                return SupportPair(node, int(candidate_ids[a]), int(candidate_ids[b]))
    raise NoSupportPairError(node)


def linearize(p_in: np.ndarray, C: np.ndarray, d: np.ndarray, alpha: int,
              tol: float = 0.0) -> NormalLinearization:
    """Freeze the affine normal model at p_in: A = alpha C / r, b = alpha d / r."""
    if alpha not in (-1, 1):
        raise ValueError(f"alpha must be +1 or -1, got {alpha}")
    vec = C @ np.asarray(p_in, dtype=np.float64) + d
    norm = float(np.linalg.norm(vec))
    if not np.isfinite(norm) or norm <= tol or norm == 0.0:
        raise CollinearityError(f"degenerate normal magnitude {norm:.3e} at linearization point")
    scale = alpha / norm
    return NormalLinearization(C=C, d=d, alpha=alpha, A=scale * C, b=scale * d, norm_in=norm)


def orient_normals(positions: np.ndarray, normals: np.ndarray, k: int) -> np.ndarray:
    """Sign choices (+1/-1) making normals of nearby nodes agree.

    Builds a k-NN graph over the nodes with edge cost 1 - |n_i . n_j|,
    takes a minimum spanning tree per connected component (Prim, ties by
    smaller node index), roots each tree at its maximum-z node with the
    root's normal signed toward non-negative z, and propagates signs so
    every tree edge has (alpha_i n_i) . (alpha_j n_j) >= 0.
    """
    positions = np.asarray(positions, dtype=np.float64)
    normals = np.asarray(normals, dtype=np.float64)
    n = positions.shape[0]
    if normals.shape != (n, 3):
        raise ValueError(f"normals shape {normals.shape} does not match {n} nodes")
    alphas = np.ones(n, dtype=np.int8)
    if n == 1:
        if normals[0, 2] < 0:
            alphas[0] = -1
        return alphas

    k_eff = min(k, n - 1)
    idx = SpatialIndex(positions).query_knn(positions, k_eff, exclude_self=True)
    nbrs: list[set[int]] = [set() for _ in range(n)]
    for i in range(n):
        for j in idx[i]:
            nbrs[i].add(int(j))
            nbrs[int(j)].add(i)
    adjacency = [np.array(sorted(s), dtype=np.int64) for s in nbrs]

    in_tree = np.zeros(n, dtype=bool)
    for comp_nodes in _components(adjacency, n):
        zs = positions[comp_nodes, 2]
        root = int(comp_nodes[int(np.argmax(zs))])  # argmax takes the first = smallest index
        alphas[root] = 1 if normals[root, 2] >= 0 else -1

        # Prim with deterministic tie-breaks: best (cost, parent) per node,
        # pop order (cost, node).
        best_cost = np.full(n, np.inf)
        best_parent = np.full(n, -1, dtype=np.int64)
        best_cost[root] = 0.0
        heap = [(0.0, root)]
        while heap:
            cost, u = heapq.heappop(heap)
            if in_tree[u] or cost > best_cost[u]:
                continue
            in_tree[u] = True
            parent = best_parent[u]
            if parent >= 0:
                dot = float(normals[parent] @ normals[u])
                alphas[u] = alphas[parent] * (1 if dot >= 0 else -1)
            for v in adjacency[u]:
                v = int(v)
                if in_tree[v]:
                    continue
                c = 1.0 - abs(float(normals[u] @ normals[v]))
                if c < 0.0:
                    c = 0.0  # rounding can push |dot| just above 1
                if c < best_cost[v] or (c == best_cost[v] and u < best_parent[v]):
                    best_cost[v] = c
                    best_parent[v] = u
                    heapq.heappush(heap, (c, v))
    return alphas


def _components(adjacency: list[np.ndarray], n: int) -> list[np.ndarray]:
    seen = np.zeros(n, dtype=bool)
    comps = []
    for start in range(n):
        if seen[start]:
            continue
        stack = [start]
        seen[start] = True
        comp = []
        while stack:
            u = stack.pop()
            comp.append(u)
            for v in adjacency[u]:
                if not seen[v]:
                    seen[v] = True
                    stack.append(int(v))
        comps.append(np.array(sorted(comp), dtype=np.int64))
    return comps


def estimate_normal_field(
    positions: np.ndarray,
    graph: WeightedGraph,
    assignment: np.ndarray,
    opt_class: int,
    k: int,
    tol: float = DEFAULT_COLLINEARITY_TOL,
) -> tuple[NormalField, list[int]]:
    """Support pairs, oriented normals and linearizations for one class.

    positions are the current coordinates of all nodes; graph is the
    original k-NN graph (fixed topology); assignment maps nodes to
    classes. For each node of opt_class the candidate pool is its graph
    neighbors of the other class, ordered by current distance; when that
    pool is too small or fully collinear, a global query over the other
    class expands it (k, then 2k, then 4k candidates, capped). Nodes with
    no valid pair are skipped and returned in the failure list.
    """
    positions = np.asarray(positions, dtype=np.float64)
    assignment = np.asarray(assignment)
    opt_ids = np.flatnonzero(assignment == opt_class)
    other_ids = np.flatnonzero(assignment != opt_class)
    other_index: SpatialIndex | None = None

    pairs: list[SupportPair] = []
    ok_ids: list[int] = []
    failed: list[int] = []
    nbrs = graph.neighbor_lists

    def ordered(ids: np.ndarray, p_i: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        pos = positions[ids]
        dist = np.linalg.norm(pos - p_i, axis=1)
        order = np.lexsort((ids, dist))
        return ids[order], pos[order]

    for i in opt_ids:
        i = int(i)
        p_i = positions[i]
        local = nbrs[i][assignment[nbrs[i]] != opt_class]
        pair = None
        try:
            ids_o, pos_o = ordered(local, p_i)
            pair = select_support_pair(i, p_i, ids_o, pos_o, tol)
        except NoSupportPairError:
            if other_index is None and other_ids.size >= 2:
                other_index = SpatialIndex(positions[other_ids])
            if other_index is not None:
                for kk in (k, 2 * k, 4 * k):
                    kk = min(kk, other_ids.size)
                    cand = other_ids[other_index.query_knn(p_i, kk)[0]]
                    try:
                        ids_o, pos_o = ordered(cand, p_i)
                        pair = select_support_pair(i, p_i, ids_o, pos_o, tol)
                        break
                    except NoSupportPairError:
                        if kk == other_ids.size:
                            break
        if pair is None:
            failed.append(i)
        else:
            pairs.append(pair)
            ok_ids.append(i)

    if not ok_ids:
        return NormalField(np.array([], dtype=np.int64), np.zeros((0, 3)), [], []), failed

    ids_arr = np.array(ok_ids, dtype=np.int64)
    pk = positions[[p.k for p in pairs]]
    pl = positions[[p.l for p in pairs]]
    pi = positions[ids_arr]
    # Batched affine coefficients: C = skew(pl - pk), d = pk x pl.
    b_vec = pl - pk
    m = ids_arr.size
    C = np.zeros((m, 3, 3))
    C[:, 0, 1] = -b_vec[:, 2]
    C[:, 0, 2] = b_vec[:, 1]
    C[:, 1, 0] = b_vec[:, 2]
    C[:, 1, 2] = -b_vec[:, 0]
    C[:, 2, 0] = -b_vec[:, 1]
    C[:, 2, 1] = b_vec[:, 0]
    d = np.cross(pk, pl)
    vec = np.einsum("nij,nj->ni", C, pi) + d
    norms = np.linalg.norm(vec, axis=1)
    raw = vec / norms[:, None]

    alphas = orient_normals(pi, raw, k)
    lins = []
    for t in range(m):
        scale = alphas[t] / norms[t]
        lins.append(
            NormalLinearization(
                C=C[t], d=d[t], alpha=int(alphas[t]),
                A=scale * C[t], b=scale * d[t], norm_in=float(norms[t]),
            )
        )
    oriented = raw * alphas[:, None]
    return NormalField(ids_arr, oriented, lins, pairs), failed


def normal_field_lines(field: NormalField):
    """Yield 'node nx ny nz alpha k l' debug lines."""
    for t, i in enumerate(field.ids):
        nx, ny, nz = field.normals[t]
        p = field.pairs[t]
        yield f"{i} {nx:.17g} {ny:.17g} {nz:.17g} {field.lins[t].alpha:+d} {p.k} {p.l}"
