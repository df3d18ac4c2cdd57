"""Biclustering and sparse clustering via Dykstra-like proximal alternation.

The unified loss adds to the squared-error fidelity a row-fusion penalty and
either a column-fusion penalty (biclustering) or a group-lasso column penalty
(sparse clustering). Each schedule step computes the proximal point of the
penalty sum at the current reduced data matrix by alternating the two exact
proximal maps with Dykstra corrections, then runs cluster fusion on rows (and
columns) or drops exactly-zero columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clusterpath import (
    ClusterState,
    Dendrogram,
    auto_lambda_grid,
    fuse_clusters,
    update_aggregates,
)
from .data import DataMatrix
from .dp import solve_matrix
from .errors import ConfigurationError, InvalidDataError
from .tree import WeightedTree, build_euclidean_mst, root_tree
from .weights import WeightConfig, compute_weights


@dataclass
class BiclusterConfig:
    """Trees, weights and the (lambda, gamma) schedule for the extensions.

    ``col_tree``/``col_weights`` are required for mode "bicluster" and unused
    for mode "sparse" (where the column penalty is the group lasso).
    """

    row_tree: WeightedTree
    row_weights: np.ndarray
    schedule: np.ndarray
    col_tree: WeightedTree | None = None
    col_weights: np.ndarray | None = None
    tolerance: float = 1e-6
    max_inner: int = 500
    mode: str = "bicluster"

    def __post_init__(self):
        self.schedule = np.asarray(self.schedule, dtype=np.float64).reshape(-1, 2)
        if self.mode not in ("bicluster", "sparse"):
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if self.mode == "bicluster" and (self.col_tree is None or self.col_weights is None):
            raise ConfigurationError("bicluster mode needs a column tree and weights")
        if not self.tolerance > 0:
            raise ConfigurationError("tolerance must be > 0")
        if self.max_inner < 1:
            raise ConfigurationError("max_inner must be >= 1")
        if len(self.schedule) == 0:
            raise ConfigurationError("empty schedule")
        lam, gam = self.schedule[:, 0], self.schedule[:, 1]
        if np.any(lam < 0) or np.any(gam < 0):
            raise ConfigurationError("schedule values must be >= 0")
        if np.any(np.diff(lam) <= 0) or np.any(np.diff(gam) < 0):
            raise ConfigurationError("schedule must increase in lambda and not decrease in gamma")


def default_config(data, mode: str = "bicluster", T: int = 30, ratio: float = 1.0,
                   weight_cfg: WeightConfig | None = None, spacing: str = "geometric",
                   tolerance: float = 1e-6, max_inner: int = 500,
                   sparse_gamma: float | None = None) -> BiclusterConfig:
    """Build MSTs, kernel weights and an auto schedule with gamma = ratio * lambda.

    The geometric grid is anchored at the fusion onset of the corresponding
    plain clusterpath (found with a cheap DP-only probe), so the expensive
    full-size Dykstra solves are not wasted on steps that fuse nothing.

    For sparse mode, ``sparse_gamma`` holds the group-lasso penalty constant
    over the schedule instead of coupling it to lambda: the norm threshold
    separating dead from live columns is scale-stable along the path, while
    lambda has to sweep decades.
    """
    values = data.values if isinstance(data, DataMatrix) else np.asarray(data, dtype=np.float64)
    cfg = weight_cfg or WeightConfig()
    row_tree = build_euclidean_mst(values)
    row_w = compute_weights(values, row_tree, cfg)
    lam = _onset_grid(values, row_tree, row_w, T, spacing)
    col_tree = col_w = None
    if mode == "bicluster":
        col_tree = build_euclidean_mst(values.T)
        col_w = compute_weights(values.T, col_tree, cfg)
        gam = ratio * _onset_grid(values.T, col_tree, col_w, T, spacing)
    elif sparse_gamma is not None:
        if sparse_gamma < 0:
            raise ConfigurationError("sparse_gamma must be >= 0")
        gam = np.full(T, float(sparse_gamma))
    else:
        gam = ratio * lam
    schedule = np.column_stack([lam, gam])
    return BiclusterConfig(row_tree, row_w, schedule, col_tree, col_w,
                           tolerance, max_inner, mode)


def _onset_grid(values, tree, weights, T, spacing):
    from .clusterpath import fit_clusterpath

    grid = auto_lambda_grid(values, tree, weights, max(T, 40), spacing=spacing)
    if spacing != "geometric":
        return grid[:T] if len(grid) == T else np.interp(
            np.linspace(0, 1, T), np.linspace(0, 1, len(grid)), grid)
    counts = fit_clusterpath(values, tree, weights, grid).cluster_counts
    n = tree.node_count
    fusing = np.flatnonzero(counts < max(n - 1, int(0.995 * n)))
    start = grid[max(int(fusing[0]) - 1, 0)] if len(fusing) else grid[0]
    return np.geomspace(start, grid[-1], T)


def prox_row_clustering(U, row_rooted, alpha, lam, row_mult, col_mult) -> np.ndarray:
    """Prox of the row-fusion penalty under (row x column)-weighted fidelity.

    Minimizes 0.5 * sum_rc mu_r nu_c (u_rc - theta_rc)^2
            + lam * sum_edges alpha_ij sum_c |theta_ic - theta_jc|
    exactly, one column at a time (the column weight folds into the edge
    penalties as lam / nu_c).
    """
    U = np.asarray(U, dtype=np.float64)
    if lam == 0.0:
        return U.copy()
    alpha = np.asarray(alpha, dtype=np.float64)
    col_mult = np.asarray(col_mult, dtype=np.float64)
    if np.all(col_mult == col_mult[0]):
        return solve_matrix(row_rooted, U, row_mult, (lam / col_mult[0]) * alpha)
    return solve_matrix(row_rooted, U, row_mult, lam * alpha, penalty_scales=1.0 / col_mult)


def prox_col_clustering(U, col_rooted, beta, gam, row_mult, col_mult) -> np.ndarray:
    """Transpose-symmetric counterpart of :func:`prox_row_clustering`."""
    return prox_row_clustering(np.asarray(U).T, col_rooted, beta, gam, col_mult, row_mult).T


def prox_group_columns(U, gam, row_mult) -> np.ndarray:
    """Prox of the column group-lasso penalty under row-weighted fidelity.

    Per column u: zero iff ||mu * u||_2 <= gam; otherwise
    theta_r = mu_r u_r / (mu_r + gam / s) with s = ||theta||_2 solving the
    scalar fixed point (closed form for uniform mu, bisection otherwise).
    Zeros are exact, so downstream feature removal needs no tolerance.
    """
    U = np.asarray(U, dtype=np.float64)
    if gam < 0:
        raise InvalidDataError("gamma must be >= 0")
    if gam == 0.0:
        return U.copy()
    mu = np.asarray(row_mult, dtype=np.float64)
    out = np.zeros_like(U)
    weighted = mu[:, None] * U
    live = np.sqrt((weighted ** 2).sum(axis=0)) > gam
    if not np.any(live):
        return out
    V = U[:, live]
    if np.all(mu == mu[0]):
        norms = np.sqrt((V ** 2).sum(axis=0))
        out[:, live] = V * np.maximum(1.0 - gam / (mu[0] * norms), 0.0)
        return out
    lo = np.zeros(V.shape[1])
    hi = np.sqrt((V ** 2).sum(axis=0))
    muv = mu[:, None] * V
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        g = np.sqrt(((muv * mid / (mu[:, None] * mid + gam)) ** 2).sum(axis=0))
        grow = g > mid
        lo[grow] = mid[grow]
        hi[~grow] = mid[~grow]
        if np.all(hi - lo <= 1e-12 * np.maximum(1.0, hi)):
            break
    s = 0.5 * (lo + hi)
    out[:, live] = muv * s / (mu[:, None] * s + gam)
    return out


@dataclass
class DykstraState:
    """Iterate and correction matrices of the alternating prox loop."""

    U: np.ndarray
    Z1: np.ndarray
    Z2: np.ndarray
    iteration: int = 0


@dataclass
class DykstraResult:
    U: np.ndarray
    U_row: np.ndarray
    converged: bool
    iterations: int


def dykstra_solve(target, lam, gam, cfg: BiclusterConfig, *,
                  row_rooted=None, col_rooted=None,
                  row_mult=None, col_mult=None,
                  row_weights=None, col_weights=None) -> DykstraResult:
    """Proximal point of the penalty sum at ``target`` by Dykstra alternation.

    Converges to the unique minimizer of the unified loss anchored at
    ``target``. Stops when the relative Frobenius change of the iterate drops
    below ``cfg.tolerance``; exhausting ``cfg.max_inner`` returns with
    ``converged=False``.

    ``U_row`` in the result is the final row-prox output: its rows carry the
    exact equalities used for row fusion.
    """
    target = np.asarray(target, dtype=np.float64)
    m_r, m_c = target.shape
    if row_rooted is None and m_r > 1:
        row_rooted = root_tree(cfg.row_tree, 0)
        if row_rooted.node_count != m_r:
            raise InvalidDataError("target rows do not match the configured row tree")
    if row_mult is None:
        row_mult = np.ones(m_r)
    if col_mult is None:
        col_mult = np.ones(m_c)
    if row_weights is None:
        row_weights = cfg.row_weights
    if cfg.mode == "bicluster" and col_rooted is None and m_c > 1:
        col_rooted = root_tree(cfg.col_tree, 0)
        if col_rooted.node_count != m_c:
            raise InvalidDataError("target columns do not match the configured column tree")
    if cfg.mode == "bicluster" and col_weights is None:
        col_weights = cfg.col_weights

    def prox1(V):
        if m_r == 1:
            return V.copy()
        return prox_row_clustering(V, row_rooted, row_weights, lam, row_mult, col_mult)

    def prox2(V):
        if cfg.mode == "sparse":
            return prox_group_columns(V, gam, row_mult)
        if m_c == 1 or gam == 0.0:
            return V.copy()
        return prox_col_clustering(V, col_rooted, col_weights, gam, row_mult, col_mult)

    state = DykstraState(target.copy(), np.zeros_like(target), np.zeros_like(target))
    u_row = state.U
    converged = False
    while state.iteration < cfg.max_inner:
        state.iteration += 1
        u_old = state.U
        u_row = prox1(state.U + state.Z1)
        state.Z1 = state.U + state.Z1 - u_row
        state.U = prox2(u_row + state.Z2)
        state.Z2 = u_row + state.Z2 - state.U
        change = np.linalg.norm(state.U - u_old) / max(1.0, np.linalg.norm(u_old))
        if change < cfg.tolerance:
            converged = True
            break
    return DykstraResult(state.U, u_row, converged, state.iteration)


@dataclass
class BiclusterResult:
    """Dendrograms and per-step cluster counts of a biclustering run."""

    row_dendrogram: Dendrogram
    col_dendrogram: Dendrogram
    schedule: np.ndarray
    row_counts: np.ndarray
    col_counts: np.ndarray
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)
    all_converged: bool = True


@dataclass
class SparseResult:
    """Row dendrogram plus per-step surviving feature sets of a sparse run."""

    row_dendrogram: Dendrogram
    schedule: np.ndarray
    row_counts: np.ndarray
    selected_features: list[np.ndarray] = field(default_factory=list)
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)
    all_converged: bool = True


def _aggregate(values, row_assign, col_assign, row_mult, col_mult):
    m_r = len(row_mult)
    by_rows = np.zeros((m_r, values.shape[1]))
    np.add.at(by_rows, row_assign, values)
    if col_assign is None:
        return by_rows / row_mult[:, None]
    m_c = len(col_mult)
    full = np.zeros((m_c, m_r))
    np.add.at(full, col_assign, by_rows.T)
    return full.T / np.outer(row_mult, col_mult)


def _extended_schedule(schedule, extra):
    """Doubling continuation past the schedule top (completes the dendrogram

    when accumulated multiplicities dilute the penalties near the end of the
    grid). The continuation steps run only while clusters remain.
    """
    if extra <= 0:
        return schedule
    lam, gam = schedule[-1]
    tail = np.array([[lam * 2.0 ** i, gam * 2.0 ** i] for i in range(1, extra + 1)])
    return np.vstack([schedule, tail])


def fit_bicluster(data, cfg: BiclusterConfig, snapshot_indices=(),
                  completion_steps: int = 20) -> BiclusterResult:
    """Alternate Dykstra solves with row and column cluster fusion over the schedule."""
    if cfg.mode != "bicluster":
        raise ConfigurationError("config mode must be 'bicluster'")
    values = data.values if isinstance(data, DataMatrix) else np.asarray(data, dtype=np.float64)
    n, p = values.shape
    row_state = ClusterState.singletons(values, cfg.row_tree, cfg.row_weights)
    col_state = ClusterState.singletons(values.T, cfg.col_tree, cfg.col_weights)
    row_dend = Dendrogram(n)
    col_dend = Dendrogram(p)
    snapshot_indices = set(int(t) for t in snapshot_indices)
    schedule = _extended_schedule(cfg.schedule, completion_steps)
    T = len(schedule)
    row_counts = np.ones(T, dtype=np.int64)
    col_counts = np.ones(T, dtype=np.int64)
    snapshots = {}
    all_conv = True
    for t, (lam, gam) in enumerate(schedule):
        if row_state.cluster_count > 1 or col_state.cluster_count > 1:
            target = _aggregate(values, row_state.assignment, col_state.assignment,
                                row_state.mult, col_state.mult)
            res = dykstra_solve(
                target, lam, gam, cfg,
                row_rooted=root_tree(row_state.tree, 0) if row_state.cluster_count > 1 else None,
                col_rooted=root_tree(col_state.tree, 0) if col_state.cluster_count > 1 else None,
                row_mult=row_state.mult, col_mult=col_state.mult,
                row_weights=row_state.tree.weights, col_weights=col_state.tree.weights,
            )
            all_conv = all_conv and res.converged
            if t in snapshot_indices:
                snapshots[t] = res.U[row_state.assignment][:, col_state.assignment]
            row_assign, row_events = fuse_clusters(row_state, res.U_row, height=float(lam))
            if row_events:
                row_dend.events.extend(row_events)
                row_state = update_aggregates(row_state, row_assign)
            col_assign, col_events = fuse_clusters(col_state, res.U.T, height=float(gam))
            if col_events:
                col_dend.events.extend(col_events)
                col_state = update_aggregates(col_state, col_assign)
        elif t in snapshot_indices:
            snapshots[t] = values.mean() * np.ones((n, p))
        row_counts[t] = row_state.cluster_count
        col_counts[t] = col_state.cluster_count
    return BiclusterResult(row_dend, col_dend, schedule, row_counts, col_counts,
                           snapshots, all_conv)


def fit_sparse(data, cfg: BiclusterConfig, snapshot_indices=(),
               completion_steps: int = 20) -> SparseResult:
    """Alternate Dykstra solves with row fusion and exact-zero feature removal."""
    if cfg.mode != "sparse":
        raise ConfigurationError("config mode must be 'sparse'")
    values = data.values if isinstance(data, DataMatrix) else np.asarray(data, dtype=np.float64)
    n, p = values.shape
    row_state = ClusterState.singletons(values, cfg.row_tree, cfg.row_weights)
    row_dend = Dendrogram(n)
    active = np.arange(p)
    snapshot_indices = set(int(t) for t in snapshot_indices)
    schedule = _extended_schedule(cfg.schedule, completion_steps)
    if completion_steps > 0:  # hold gamma at its top value while lambda completes rows
        schedule[len(cfg.schedule):, 1] = cfg.schedule[-1, 1]
    T = len(schedule)
    row_counts = np.ones(T, dtype=np.int64)
    selected = []
    snapshots = {}
    all_conv = True
    for t, (lam, gam) in enumerate(schedule):
        if len(active) and (row_state.cluster_count > 1 or t < len(cfg.schedule)):
            target = _aggregate(values[:, active], row_state.assignment, None,
                                row_state.mult, None)
            res = dykstra_solve(
                target, lam, gam, cfg,
                row_rooted=root_tree(row_state.tree, 0) if row_state.cluster_count > 1 else None,
                row_mult=row_state.mult,
                col_mult=np.ones(len(active)),
                row_weights=row_state.tree.weights,
            )
            all_conv = all_conv and res.converged
            if t in snapshot_indices:
                snap = np.zeros((n, p))
                snap[:, active] = res.U[row_state.assignment]
                snapshots[t] = snap
            if row_state.cluster_count > 1:
                row_assign, row_events = fuse_clusters(row_state, res.U_row, height=float(lam))
                if row_events:
                    row_dend.events.extend(row_events)
                    row_state = update_aggregates(row_state, row_assign)
            nonzero = np.any(res.U != 0.0, axis=0)
            active = active[nonzero]
        row_counts[t] = row_state.cluster_count
        selected.append(active.copy())
    return SparseResult(row_dend, schedule, row_counts, selected, snapshots, all_conv)
