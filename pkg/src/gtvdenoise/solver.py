"""ADMM denoiser: quadratic fidelity plus graph total variation of normals.

Per node class (red / blue) the solver minimizes

    ||q - p||^2 + gamma * sum_edges w_ij ||m_ij||_1,
    m = B p + v,

where each 3-row block of B holds the normal linearizations A_i and -A_j
of an edge (i, j) and v holds b_i - b_j, so m approximates the stacked
normal differences n_i - n_j. The scaled-form ADMM splits are:

    p-step:  (2 I + rho B^T B) p = 2 q + rho B^T (m - u - v)   (conjugate gradient)
    m-step:  proximal gradient on rho/2 ||B p + v - m + u||^2
             with per-component soft threshold t * gamma * w_ij
    u-step:  u += B p + v - m

Red and blue passes alternate; each pass re-estimates support pairs,
orientations and linearizations from the current positions of the other
class and rebuilds the class's own k-NN graph from current positions.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.sparse import csr_matrix, identity

from .bipartite import BLUE, RED, Bipartition, approximate_bipartite
from .cloud import PointCloud
from .errors import AdmmDivergenceError, DegenerateCloudError, MissingLinearizationError
from .graph import WeightedGraph, build_knn_graph
from .normals import (
    DEFAULT_COLLINEARITY_TOL,
    NormalField,
    NormalLinearization,
    estimate_normal_field,
)


@dataclass
class DenoiseParams:
    """All tuning knobs of the denoiser with working defaults.

    gamma=0.1 tends to work better at noise sigma around 0.3; gamma=0.05
    suits sigma around 0.05-0.1.
    """

    gamma: float = 0.05          # GTV regularization strength
    rho: float = 5.0             # ADMM penalty
    t: float = 0.1               # proximal gradient step size
    sigma_p: float = 1.5         # Gaussian kernel bandwidth for edge weights
    k: int = 8                   # neighbors per node in k-NN graphs
    delta: float = 0.01          # GMRF regularization for the bipartition
    cg_tol: float = 1e-6
    cg_max_iter: int = 200
    prox_tol: float = 1e-6
    prox_max_iter: int = 100
    admm_tol: float = 1e-5
    admm_max_iter: int = 100
    outer_tol: float = 1e-4
    outer_max_iter: int = 10
    collinearity_tol: float = DEFAULT_COLLINEARITY_TOL
    start_node: int = 0
    view_hops: int = 2
    recompute_bipartition: bool = False
    window_budget: int = 20000   # clouds above this size are solved in windows

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        for name in ("rho", "t", "sigma_p", "delta", "cg_tol", "prox_tol",
                     "admm_tol", "outer_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("k", "cg_max_iter", "prox_max_iter", "admm_max_iter",
                     "outer_max_iter", "window_budget"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.t >= 2.0 / self.rho:
            warnings.warn(
                f"step size t={self.t} >= 2/rho={2.0 / self.rho}: "
                "the m-step proximal gradient may not converge",
                stacklevel=2,
            )
        elif self.t > 1.0 / self.rho:
            warnings.warn(
                f"step size t={self.t} > 1/rho={1.0 / self.rho}: "
                "m-step convergence may be slow",
                stacklevel=2,
            )

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(eq=False)
class EdgeOperator:
    """Sparse stacked-difference operator m = B p + v for one class graph."""

    B: csr_matrix                # (3E, 3V)
    v: np.ndarray                # (3E,)
    ei: np.ndarray
    ej: np.ndarray
    node_count: int

    @property
    def edge_count(self) -> int:
        return self.ei.size


@dataclass(eq=False)
class AdmmState:
    """Iterates of one ADMM solve."""

    p: np.ndarray
    m: np.ndarray
    u: np.ndarray
    iteration: int = 0
    residuals: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class CgResult:
    iterations: int
    residual: float
    converged: bool


@dataclass(eq=False)
class DiagnosticsReport:
    """Run metadata plus per-iteration solver records.

    rows: (pass label, iteration, primal residual, objective, gtv, seconds).
    """

    meta: dict = field(default_factory=dict)
    rows: list[tuple] = field(default_factory=list)
    outer_changes: list[tuple] = field(default_factory=list)

    def pass_labels(self) -> list[str]:
        seen: list[str] = []
        for row in self.rows:
            if row[0] not in seen:
                seen.append(row[0])
        return seen

    def rows_for(self, label: str) -> list[tuple]:
        return [r for r in self.rows if r[0] == label]

    def to_text(self) -> str:
        lines = ["# denoise diagnostics"]
        for key, value in self.meta.items():
            lines.append(f"{key}: {value}")
        for outer, change in self.outer_changes:
            lines.append(f"outer_change_{outer}: {change:.17g}")
        lines.append("[iterations]")
        lines.append("pass,iteration,primal_residual,objective,gtv,seconds")
        for label, it, res, obj, gtv, secs in self.rows:
            lines.append(f"{label},{it},{res:.17g},{obj:.17g},{gtv:.17g},{secs:.6f}")
        return "\n".join(lines) + "\n"

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())


def assemble_edge_operator(
    class_graph: WeightedGraph, lins: list[NormalLinearization | None]
) -> EdgeOperator:
    """Stack per-edge blocks [A_i, -A_j] into sparse B and b_i - b_j into v."""
    n = class_graph.node_count
    if len(lins) != n:
        raise ValueError(f"{len(lins)} linearizations for {n} nodes")
    for i, lin in enumerate(lins):
        if lin is None:
            raise MissingLinearizationError(i)
    e = class_graph.edge_count
    if e == 0:
        return EdgeOperator(
            csr_matrix((0, 3 * n)), np.zeros(0), class_graph.ei, class_graph.ej, n
        )
    a_all = np.stack([lin.A for lin in lins])        # (n, 3, 3)
    b_all = np.stack([lin.b for lin in lins])        # (n, 3)
    ei, ej = class_graph.ei, class_graph.ej

    blocks = np.empty((2 * e, 3, 3))
    blocks[0::2] = a_all[ei]
    blocks[1::2] = -a_all[ej]
    # Row index of block r of edge e is 3e + r; columns span the endpoint.
    rows = (3 * np.repeat(np.arange(e), 2)[:, None, None]
            + np.arange(3)[None, :, None]
            + np.zeros(3, dtype=np.int64)[None, None, :])
    cols = (3 * np.stack([ei, ej], axis=1).ravel()[:, None, None]
            + np.zeros(3, dtype=np.int64)[None, :, None]
            + np.arange(3)[None, None, :])
    B = csr_matrix(
        (blocks.ravel(), (rows.ravel(), cols.ravel())), shape=(3 * e, 3 * n)
    )
    v = (b_all[ei] - b_all[ej]).ravel()
    return EdgeOperator(B, v, ei, ej, n)


def _cg(apply_a, rhs: np.ndarray, x0: np.ndarray, tol: float, max_iter: int):
    """Conjugate gradient on an SPD operator, true-residual verified."""
    x = x0.copy()
    bnorm = float(np.linalg.norm(rhs))
    scale = max(bnorm, np.finfo(np.float64).tiny)
    r = rhs - apply_a(x)
    rnorm = float(np.linalg.norm(r))
    if rnorm / scale <= tol:
        return x, CgResult(0, rnorm / scale, True)
    p = r.copy()
    rs = float(r @ r)
    iterations = 0
    for _ in range(max_iter):
        ap = apply_a(p)
        alpha = rs / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        iterations += 1
        rs_new = float(r @ r)
        if np.sqrt(rs_new) / scale <= tol:
            # Recursion drift check: accept only if the true residual agrees.
            r = rhs - apply_a(x)
            rs_new = float(r @ r)
            if np.sqrt(rs_new) / scale <= tol:
                return x, CgResult(iterations, float(np.sqrt(rs_new)) / scale, True)
        beta = rs_new / rs
        p = r + beta * p
        rs = rs_new
    rnorm = float(np.linalg.norm(rhs - apply_a(x)))
    return x, CgResult(iterations, rnorm / scale, False)


def p_update(
    q: np.ndarray,
    B: csr_matrix,
    v: np.ndarray,
    m: np.ndarray,
    u: np.ndarray,
    rho: float,
    cg_tol: float = 1e-6,
    cg_max_iter: int = 200,
    p0: np.ndarray | None = None,
    Bt: csr_matrix | None = None,
    system: csr_matrix | None = None,
) -> tuple[np.ndarray, CgResult]:
    """Solve (2 I + rho B^T B) p = 2 q + rho B^T (m - u - v) by CG.

    The operator has smallest eigenvalue >= 2, so the system is SPD for any
    rho >= 0. Non-convergence is reported (warning + best iterate), not fatal.
    Bt and system are optional precomputed B^T and 2I + rho B^T B; callers
    that solve repeatedly with a fixed B pass them to skip the rebuild.
    """
    if Bt is None:
        Bt = B.T.tocsr()
    rhs = 2.0 * q + rho * (Bt @ (m - u - v))

    if system is None:
        def apply_a(x):
            return 2.0 * x + rho * (Bt @ (B @ x))
    else:
        def apply_a(x):
            return system @ x

    x0 = q if p0 is None else p0
    p, info = _cg(apply_a, rhs, x0, cg_tol, cg_max_iter)
    if not info.converged:
        warnings.warn(
            f"position CG stopped at relative residual {info.residual:.3e} "
            f"after {info.iterations} iterations (tol {cg_tol})",
            stacklevel=2,
        )
    return p, info


def soft_threshold(m, tau):
    """Componentwise soft threshold: shrink toward zero by tau, clip at zero."""
    m = np.asarray(m, dtype=np.float64)
    tau_arr = np.asarray(tau, dtype=np.float64)
    if np.any(tau_arr < 0):
        raise ValueError("threshold must be >= 0")
    out = np.sign(m) * np.maximum(np.abs(m) - tau_arr, 0.0)
    return float(out) if out.ndim == 0 else out


def edge_thresholds(weights: np.ndarray, scale: float) -> np.ndarray:
    """Per-component thresholds: scale * w_e repeated for the 3 rows of each edge."""
    return np.repeat(scale * np.asarray(weights, dtype=np.float64), 3)


def m_update(
    B: csr_matrix,
    v: np.ndarray,
    p: np.ndarray,
    u: np.ndarray,
    m_init: np.ndarray,
    rho: float,
    gamma: float,
    weights: np.ndarray,
    t: float,
    prox_tol: float = 1e-6,
    prox_max_iter: int = 100,
) -> np.ndarray:
    """Proximal gradient for the m-step.

    Gradient of the smooth part is -rho * (B p + v - m + u); each step
    applies the soft threshold with per-component threshold t*gamma*w_ij.
    The fixed point is the closed-form soft(B p + v + u, gamma w / rho).
    """
    z = B @ p + v
    return _m_update_from_z(z, u, m_init, rho, gamma, weights, t, prox_tol, prox_max_iter)


def _m_update_from_z(z, u, m_init, rho, gamma, weights, t, prox_tol, prox_max_iter):
    c = z + u
    tau = edge_thresholds(weights, t * gamma)
    m = m_init.astype(np.float64, copy=True)
    for _ in range(prox_max_iter):
        m_next = soft_threshold(m + t * rho * (c - m), tau)
        if not np.all(np.isfinite(m_next)):
            bad = int(np.flatnonzero(~np.isfinite(m_next))[0]) // 3
            raise FloatingPointError(f"non-finite m-step value at edge index {bad}")
        delta = float(np.max(np.abs(m_next - m))) if m.size else 0.0
        m = m_next
        if delta <= prox_tol:
            break
    return m


def u_update(u, B, v, p, m):
    """Scaled dual ascent: u + (B p + v - m)."""
    return u + (B @ p + v - m)


def admm_denoise_partite(
    q: np.ndarray,
    class_graph: WeightedGraph,
    lins: list[NormalLinearization],
    params: DenoiseParams,
    label: str = "admm",
    collector: DiagnosticsReport | None = None,
) -> np.ndarray:
    """Run ADMM for one node class; returns optimized stacked positions.

    q is the observed (noisy) stacked position vector of the class, which
    also initializes p. With gamma = 0 the solve returns q unchanged.
    """
    op = assemble_edge_operator(class_graph, list(lins))
    return _admm_with_operator(q, op, class_graph.w, params, label, collector)


def _admm_with_operator(
    q: np.ndarray,
    op: EdgeOperator,
    weights: np.ndarray,
    params: DenoiseParams,
    label: str,
    collector: DiagnosticsReport | None,
) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64).ravel()
    B, v = op.B, op.v
    p = q.copy()
    m = B @ p + v
    u = np.zeros_like(m)
    w3 = np.repeat(weights, 3)
    # B is fixed for the whole solve: precompute B^T and the SPD system once.
    Bt = B.T.tocsr()
    system = (2.0 * identity(B.shape[1], format="csr", dtype=np.float64)
              + params.rho * (Bt @ B)).tocsr()

    t0 = time.perf_counter()
    first_residual = None
    streak = 0
    for iteration in range(1, params.admm_max_iter + 1):
        p, _ = p_update(
            q, B, v, m, u, params.rho, params.cg_tol, params.cg_max_iter,
            p0=p, Bt=Bt, system=system,
        )
        z = B @ p + v
        m = _m_update_from_z(
            z, u, m, params.rho, params.gamma, weights,
            params.t, params.prox_tol, params.prox_max_iter,
        )
        u = u + (z - m)

        residual = float(np.linalg.norm(z - m)) / max(float(np.linalg.norm(m)), 1.0)
        gtv = float(w3 @ np.abs(z))
        objective = float(np.sum((q - p) ** 2)) + params.gamma * gtv
        if not np.isfinite(objective):
            raise FloatingPointError(f"{label}: objective became non-finite")
        if collector is not None:
            collector.rows.append(
                (label, iteration, residual, objective, gtv, time.perf_counter() - t0)
            )
        if residual <= params.admm_tol:
            break
        if first_residual is None:
            first_residual = residual
        elif residual > 10.0 * first_residual:
            streak += 1
            if streak >= 5:
                raise AdmmDivergenceError(
                    f"{label}: primal residual {residual:.3e} stayed 10x above its "
                    f"initial value {first_residual:.3e} for {streak} iterations; "
                    "try a smaller step size t or more inner iterations"
                )
        else:
            streak = 0
    return p


def _class_pass(
    p_cur: np.ndarray,
    q_obs: np.ndarray,
    graph: WeightedGraph,
    assignment: np.ndarray,
    cls: int,
    params: DenoiseParams,
    label: str,
    diag: DiagnosticsReport,
) -> int:
    """One red or blue pass: estimate normals, build the class graph, run ADMM.

    Mutates p_cur in place for the optimized nodes; returns the number of
    nodes skipped for lack of a support pair.
    """
    field_, failed = estimate_normal_field(
        p_cur, graph, assignment, cls, params.k, params.collinearity_tol
    )
    active = field_.ids
    if active.size == 0:
        return len(failed)
    sub_positions = p_cur[active]
    if active.size >= 2 and not np.all(sub_positions == sub_positions[0]):
        k_eff = min(params.k, active.size - 1)
        class_graph = build_knn_graph(sub_positions, k_eff, params.sigma_p)
    else:
        class_graph = WeightedGraph(active.size, np.array([], dtype=np.int64),
                                    np.array([], dtype=np.int64), np.array([]))
    q_sub = q_obs[active].ravel()
    p_new = admm_denoise_partite(
        q_sub, class_graph, field_.lins, params, label=label, collector=diag
    )
    p_cur[active] = p_new.reshape(-1, 3)
    return len(failed)


def denoise(
    cloud: PointCloud, params: DenoiseParams | None = None
) -> tuple[PointCloud, DiagnosticsReport]:
    """Denoise a cloud; returns the result plus a diagnostics report.

    Builds the k-NN graph and the red/blue bipartition from the noisy
    input once (optionally recomputed per pass), then alternates red and
    blue ADMM passes until the relative position change drops below
    outer_tol. Nodes without a valid support pair stay at their observed
    positions. Clouds larger than window_budget are solved in overlapping
    spatial windows.
    """
    if params is None:
        params = DenoiseParams()
    if cloud.n < 4:
        raise DegenerateCloudError(f"denoising needs at least 4 points, got {cloud.n}")
    diag = DiagnosticsReport()
    diag.meta["points"] = cloud.n
    diag.meta.update({f"param_{k}": v for k, v in params.as_dict().items()})
    t0 = time.perf_counter()
    if cloud.n > params.window_budget:
        out = _denoise_windowed(cloud.positions, cloud.positions, params, diag)
    else:
        out = _denoise_core(cloud.positions, params, diag, label_prefix="")
    diag.meta["seconds_total"] = round(time.perf_counter() - t0, 6)
    return PointCloud(out), diag


def _denoise_core(
    q_obs: np.ndarray, params: DenoiseParams, diag: DiagnosticsReport, label_prefix: str
) -> np.ndarray:
    graph = build_knn_graph(q_obs, min(params.k, q_obs.shape[0] - 1), params.sigma_p)
    bp = approximate_bipartite(
        graph, params.delta, params.start_node, view_hops=params.view_hops
    )
    if label_prefix == "":
        diag.meta["red_nodes"] = int(bp.red.size)
        diag.meta["blue_nodes"] = int(bp.blue.size)

    p_cur = q_obs.copy()
    skipped = 0
    for outer in range(1, params.outer_max_iter + 1):
        if params.recompute_bipartition and outer > 1:
            graph = build_knn_graph(p_cur, min(params.k, p_cur.shape[0] - 1), params.sigma_p)
            bp = approximate_bipartite(
                graph, params.delta, params.start_node, view_hops=params.view_hops
            )
        prev = p_cur.copy()
        for cls, name in ((RED, "red"), (BLUE, "blue")):
            skipped += _class_pass(
                p_cur, q_obs, graph, bp.assignment, cls, params,
                f"{label_prefix}outer{outer}:{name}", diag,
            )
        denom = max(float(np.linalg.norm(prev)), np.finfo(np.float64).tiny)
        change = float(np.linalg.norm(p_cur - prev)) / denom
        diag.outer_changes.append((f"{label_prefix}{outer}", change))
        if change <= params.outer_tol:
            break
    diag.meta["no_support_pair_events"] = diag.meta.get("no_support_pair_events", 0) + skipped
    return p_cur


def _denoise_windowed(
    positions: np.ndarray, q_obs: np.ndarray, params: DenoiseParams, diag: DiagnosticsReport
) -> np.ndarray:
    """Solve over a uniform grid of cells, each with a one-cell halo.

    Every point is solved in the window whose core cell owns it; halo
    points only provide boundary context. Window layout is a deterministic
    function of the input bounding box.
    """
    n = positions.shape[0]
    lo = positions.min(axis=0)
    extent = positions.max(axis=0) - lo
    h = float(extent.max())
    if h == 0.0:
        raise DegenerateCloudError("all points coincide; cannot denoise")

    cells: dict[tuple[int, int, int], np.ndarray] = {}
    for _ in range(16):
        ids = np.floor((positions - lo) / h).astype(np.int64)
        grouped: dict[tuple[int, int, int], list[int]] = {}
        for pos_idx in range(n):
            grouped.setdefault(tuple(ids[pos_idx]), []).append(pos_idx)
        cells = {key: np.array(val, dtype=np.int64) for key, val in grouped.items()}
        worst = max(
            sum(
                cells.get((cx + dx, cy + dy, cz + dz), np.array([], dtype=np.int64)).size
                for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
            )
            for (cx, cy, cz) in cells
        )
        if worst <= params.window_budget:
            break
        h /= 2.0
    else:
        warnings.warn(
            "could not split the cloud into windows within budget; "
            "solving oversized windows",
            stacklevel=2,
        )

    diag.meta["windows"] = len(cells)
    out = positions.copy()
    for w_idx, key in enumerate(sorted(cells)):
        cx, cy, cz = key
        member_ids = np.concatenate(
            [
                cells.get((cx + dx, cy + dy, cz + dz), np.array([], dtype=np.int64))
                for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
            ]
        )
        member_ids = np.sort(member_ids)
        core_ids = cells[key]
        if member_ids.size < 4:
            diag.meta["window_skips"] = diag.meta.get("window_skips", 0) + 1
            continue  # too small to denoise; core keeps observed positions
        solved = _denoise_core(
            q_obs[member_ids], params, diag, label_prefix=f"w{w_idx}:"
        )
        local_of = {int(g): t for t, g in enumerate(member_ids)}
        core_local = np.array([local_of[int(g)] for g in core_ids], dtype=np.int64)
        out[core_ids] = solved[core_local]
    return out
