"""Split-free clusterpaths: alternate the exact tree solver with cluster fusion.

Each step solves the reduced weighted problem on the current cluster tree,
fuses clusters whose fitted rows are exactly equal across all features along
tree edges, and contracts the tree (parallel edge weights summed). Fused
clusters never split, so the recorded merge events form a dendrogram.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .data import DataMatrix
from .dp import objective_value, solve_matrix
from .errors import ConfigurationError, InvalidDataError, InvalidStateError
from .tree import WeightedTree, root_tree


@dataclass(frozen=True)
class MergeEvent:
    """One fusion: the ``merged`` clusters are absorbed into ``into`` at ``height``.

    Cluster ids are persistent representatives: the smallest original row
    index contained in the cluster.
    """

    height: float
    merged: tuple[int, ...]
    into: int


@dataclass
class Dendrogram:
    """Ordered merge events over ``leaf_count`` leaves; heights non-decreasing."""

    leaf_count: int
    events: list[MergeEvent] = field(default_factory=list)

    @property
    def final_count(self) -> int:
        return self.leaf_count - sum(len(e.merged) for e in self.events)

    def recorded_counts(self):
        """Cluster counts of the recorded partitions: initial, then one per height."""
        counts = [self.leaf_count]
        c = self.leaf_count
        prev_h = None
        for e in self.events:
            if prev_h is not None and e.height == prev_h:
                counts[-1] -= len(e.merged)
            else:
                counts.append(c - len(e.merged))
                prev_h = e.height
            c -= len(e.merged)
        return counts


@dataclass
class Clusterpath:
    """Per-lambda cluster counts plus the dendrogram and optional snapshots."""

    lambdas: np.ndarray
    cluster_counts: np.ndarray
    dendrogram: Dendrogram
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)


class ClusterState:
    """Current partition with multiplicities, centroids and the contracted tree."""

    __slots__ = ("assignment", "reps", "mult", "centroids", "tree")

    def __init__(self, assignment, reps, mult, centroids, tree):
        self.assignment = assignment
        self.reps = reps
        self.mult = mult
        self.centroids = centroids
        self.tree = tree

    @property
    def cluster_count(self) -> int:
        return len(self.mult)

    @classmethod
    def singletons(cls, data, tree: WeightedTree, weights) -> "ClusterState":
        values = data.values if isinstance(data, DataMatrix) else np.asarray(data, dtype=np.float64)
        n = values.shape[0]
        if tree.node_count != n:
            raise InvalidDataError(f"tree has {tree.node_count} nodes for {n} rows")
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (tree.edge_count,):
            raise InvalidDataError(f"need one weight per tree edge ({tree.edge_count})")
        if tree.edge_count and (not np.all(np.isfinite(weights)) or np.any(weights <= 0)):
            raise InvalidDataError("edge weights must be finite and > 0")
        wtree = WeightedTree(n, tree.edges, tree.lengths, weights, _sorted=True)
        return cls(
            assignment=np.arange(n, dtype=np.int64),
            reps=np.arange(n, dtype=np.int64),
            mult=np.ones(n),
            centroids=values.copy(),
            tree=wtree,
        )


def fuse_clusters(state: ClusterState, theta_hat, height: float = 0.0):
    """Union clusters whose fitted rows are exactly equal along tree edges.

    Walks every tree edge (a breadth-first walk and any other edge order give
    the same components) and compares rows with exact floating-point equality
    in all coordinates. Returns the new length-n partition labels and the
    merge events at ``height``; tree contraction itself happens in
    :func:`update_aggregates`.
    """
    theta_hat = np.asarray(theta_hat)
    m = state.cluster_count
    if theta_hat.ndim == 1:
        theta_hat = theta_hat[:, None]
    if theta_hat.shape[0] != m:
        raise InvalidDataError(f"theta_hat must have {m} rows, got {theta_hat.shape[0]}")
    edges = state.tree.edges
    if len(edges) == 0:
        return state.assignment.copy(), []
    equal = np.all(theta_hat[edges[:, 0]] == theta_hat[edges[:, 1]], axis=1)
    if not np.any(equal):
        return state.assignment.copy(), []
    eq = edges[equal]
    graph = coo_matrix(
        (np.ones(len(eq)), (eq[:, 0], eq[:, 1])), shape=(m, m)
    )
    _, comp = connected_components(graph, directed=False)
    events = []
    order = np.argsort(comp, kind="stable")
    comp_sorted = comp[order]
    starts = np.flatnonzero(np.r_[True, comp_sorted[1:] != comp_sorted[:-1]])
    bounds = np.r_[starts, len(comp_sorted)]
    for a, b in zip(bounds[:-1], bounds[1:]):
        if b - a < 2:
            continue
        members = np.sort(state.reps[order[a:b]])
        events.append(MergeEvent(float(height), tuple(int(x) for x in members[1:]), int(members[0])))
    new_assignment = comp[state.assignment].astype(np.int64)
    return new_assignment, events


def update_aggregates(state: ClusterState, new_assignment) -> ClusterState:
    """Aggregate multiplicities, centroids and summed cross-weights for a coarsening.

    The partition must coarsen the current one and respect the tree (fusion
    only along edges); otherwise the contracted weight graph is not a tree
    and an :class:`InvalidStateError` is raised.
    """
    new_assignment = np.asarray(new_assignment, dtype=np.int64)
    if new_assignment.shape != state.assignment.shape:
        raise InvalidStateError("partition has wrong length")
    new_of_old = new_assignment[state.reps]
    if not np.array_equal(new_assignment, new_of_old[state.assignment]):
        raise InvalidStateError("partition does not coarsen the current clusters")
    labels, new_of_old = np.unique(new_of_old, return_inverse=True)
    m_new = len(labels)
    mult = np.bincount(new_of_old, weights=state.mult, minlength=m_new)
    centroids = np.zeros((m_new, state.centroids.shape[1]))
    np.add.at(centroids, new_of_old, state.mult[:, None] * state.centroids)
    centroids /= mult[:, None]
    reps = np.full(m_new, np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(reps, new_of_old, state.reps)
    tree = _contract_tree(state.tree, new_of_old, m_new)
    return ClusterState(new_of_old[state.assignment], reps, mult, centroids, tree)


def _contract_tree(tree: WeightedTree, new_of_old, m_new) -> WeightedTree:
    if m_new == 1 or tree.edge_count == 0:
        return WeightedTree(m_new, np.empty((0, 2), dtype=np.int64), np.empty(0), np.empty(0))
    u = new_of_old[tree.edges[:, 0]]
    v = new_of_old[tree.edges[:, 1]]
    cross = u != v
    u, v = u[cross], v[cross]
    lo = np.minimum(u, v)
    hi = np.maximum(u, v)
    key = lo * m_new + hi
    uniq, inv = np.unique(key, return_inverse=True)
    if len(uniq) != m_new - 1:
        raise InvalidStateError("contracted weight graph is not a tree")
    w = np.bincount(inv, weights=tree.weights[cross], minlength=len(uniq))
    lengths = np.full(len(uniq), np.inf)
    np.minimum.at(lengths, inv, tree.lengths[cross])
    edges = np.column_stack([uniq // m_new, uniq % m_new])
    return WeightedTree(m_new, edges, lengths, w, _sorted=True)


def fit_clusterpath(
    data,
    tree: WeightedTree,
    weights,
    lambdas,
    snapshot_indices=(),
    check_invariants: bool = False,
) -> Clusterpath:
    """Run the clusterpath over an increasing lambda grid.

    At each lambda the reduced problem (edge penalty lambda * summed weight)
    is solved exactly per feature, equal rows are fused, and aggregates are
    updated. Exits early once a single cluster remains; remaining grid values
    produce trivial records.

    Parameters
    ----------
    snapshot_indices : iterable of int
        Grid positions t at which to store the fitted n x p matrix
        (memory-bounded alternative to storing every solution).
    check_invariants : bool
        Re-validate tree structure and conservation laws after every step.
    """
    values = data.values if isinstance(data, DataMatrix) else np.asarray(data, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    lambdas = np.asarray(lambdas, dtype=np.float64)
    if lambdas.ndim != 1 or len(lambdas) == 0:
        raise InvalidDataError("lambda grid must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(lambdas)) or np.any(lambdas < 0):
        raise InvalidDataError("lambda values must be finite and >= 0")
    if np.any(np.diff(lambdas) <= 0):
        raise InvalidDataError("lambda values must be strictly increasing")
    state = ClusterState.singletons(values, tree, weights)
    n = values.shape[0]
    total_mass = float(n)
    total_moment = values.sum(axis=0)
    snapshot_indices = set(int(t) for t in snapshot_indices)
    counts = np.ones(len(lambdas), dtype=np.int64)
    dend = Dendrogram(leaf_count=n)
    snapshots: dict[int, np.ndarray] = {}
    for t, lam in enumerate(lambdas):
        if state.cluster_count > 1:
            rooted = root_tree(state.tree, 0)
            theta = solve_matrix(rooted, state.centroids, state.mult, lam * state.tree.weights)
            if t in snapshot_indices:
                snapshots[t] = theta[state.assignment]
            new_assignment, events = fuse_clusters(state, theta, height=float(lam))
            if events:
                dend.events.extend(events)
                state = update_aggregates(state, new_assignment)
            if check_invariants:
                _check_state(state, total_mass, total_moment)
        elif t in snapshot_indices:
            snapshots[t] = state.centroids[state.assignment]
        counts[t] = state.cluster_count
    return Clusterpath(lambdas, counts, dend, snapshots)


def _check_state(state: ClusterState, total_mass, total_moment):
    state.tree.validate()
    if abs(state.mult.sum() - total_mass) > 1e-9 * total_mass:
        raise InvalidStateError("multiplicity mass not conserved")
    moment = (state.mult[:, None] * state.centroids).sum(axis=0)
    scale = np.maximum(np.abs(total_moment), 1.0)
    if np.any(np.abs(moment - total_moment) > 1e-9 * scale):
        raise InvalidStateError("weighted-mean moment not conserved")


def auto_lambda_grid(data, tree: WeightedTree, weights, T: int, spacing: str = "linear",
                     max_doublings: int = 60) -> np.ndarray:
    """Build an increasing lambda grid whose top value fully fuses the data.

    A probe fit runs over a doubling lambda sequence starting at
    1e-3 * (mean edge length)^2, carrying fusion state forward, until one
    cluster remains; the grid then spans (0, lambda_max] with T values.
    """
    if T < 2:
        raise ConfigurationError("lambda grid needs T >= 2")
    if spacing not in ("linear", "geometric"):
        raise ConfigurationError(f"unknown spacing: {spacing!r}")
    values = data.values if isinstance(data, DataMatrix) else np.asarray(data, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    if tree.edge_count == 0:
        lam_max = 1.0
    else:
        lam0 = 1e-3 * float(np.mean(tree.lengths)) ** 2
        if lam0 == 0.0:
            lam0 = 1e-9
        # Fast-forward over the no-fusion region: the median isolated two-node
        # fusion threshold sits orders of magnitude below the full-fusion
        # lambda, and at large n every skipped doubling is a full-size solve.
        weights_arr = np.asarray(weights, dtype=np.float64)
        iso = 0.5 * np.abs(values[tree.edges[:, 0]] - values[tree.edges[:, 1]]).max(axis=1)
        iso = iso / weights_arr
        lam0 = max(lam0, float(np.quantile(iso, 0.5)))
        if lam0 == 0.0:
            lam0 = 1e-9
        state = ClusterState.singletons(values, tree, weights)
        lam = lam0
        lam_max = None
        rooted = None
        for _ in range(max_doublings + 1):
            if rooted is None:
                rooted = root_tree(state.tree, 0)
            theta = solve_matrix(rooted, state.centroids, state.mult, lam * state.tree.weights)
            new_assignment, events = fuse_clusters(state, theta)
            if events:
                state = update_aggregates(state, new_assignment)
                rooted = None
            if state.cluster_count == 1:
                lam_max = lam
                break
            lam *= 2.0
        if lam_max is None:
            raise ConfigurationError(
                f"no full fusion after {max_doublings} doublings from {lam0:g}"
            )
    if spacing == "linear":
        return lam_max * np.arange(1, T + 1) / T
    return np.geomspace(lam_max * 1e-4, lam_max, T)


def cut_dendrogram(dend: Dendrogram, k: int) -> np.ndarray:
    """Labels of the recorded partition whose cluster count is closest to k.

    Ties between equally close counts pick the larger count (smaller height).
    """
    n = dend.leaf_count
    if n < 1:
        raise InvalidStateError("empty dendrogram")
    if not 1 <= k <= n:
        raise InvalidDataError(f"k must lie in [1, {n}], got {k}")
    # partition boundaries: group events by height
    groups = []
    for e in dend.events:
        if groups and groups[-1][0] == e.height:
            groups[-1][1].append(e)
        else:
            groups.append((e.height, [e]))
    counts = [n]
    c = n
    for _, evs in groups:
        c -= sum(len(e.merged) for e in evs)
        counts.append(c)
    best = min(range(len(counts)), key=lambda i: (abs(counts[i] - k), -counts[i]))
    parent = np.arange(n, dtype=np.int64)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for _, evs in groups[:best]:
        for e in evs:
            ri = find(e.into)
            for mgd in e.merged:
                rm = find(mgd)
                if rm != ri:
                    parent[rm] = ri
    roots = np.fromiter((find(i) for i in range(n)), dtype=np.int64, count=n)
    _, labels = np.unique(roots, return_inverse=True)
    return labels.astype(np.int64)


def naive_path_oracle(data, tree: WeightedTree, weights, lambdas) -> list[np.ndarray]:
    """Exact fusion-free solutions: solve the full n-node problem at every lambda."""
    values = data.values if isinstance(data, DataMatrix) else np.asarray(data, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    weights = np.asarray(weights, dtype=np.float64)
    rooted = root_tree(tree, 0)
    ones = np.ones(values.shape[0])
    return [solve_matrix(rooted, values, ones, lam * weights) for lam in np.asarray(lambdas)]


def relative_difference(data, tree: WeightedTree, weights, lam, theta_path, theta_exact) -> float:
    """Excess loss of the fused-path solution over the exact one, relative.

    Returns 0 when the exact loss is itself 0 (only possible at lambda = 0).
    """
    values = data.values if isinstance(data, DataMatrix) else np.asarray(data, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    pen = lam * np.asarray(weights, dtype=np.float64)
    ones = np.ones(values.shape[0])
    l_path = objective_value(tree, values, ones, pen, theta_path)
    l_exact = objective_value(tree, values, ones, pen, theta_exact)
    if l_exact == 0.0:
        return 0.0
    return (l_path - l_exact) / l_exact


def fit_labels(path: Clusterpath, k: int) -> np.ndarray:
    """Convenience: cut the path's dendrogram at the count closest to k."""
    return cut_dendrogram(path.dendrogram, k)


def dendrogram_to_dict(dend: Dendrogram) -> dict:
    """JSON-ready form: {leaves, final_clusters, events:[{height, merged, into}]}."""
    return {
        "leaves": dend.leaf_count,
        "final_clusters": dend.final_count,
        "events": [
            {"height": e.height, "merged": list(e.merged), "into": e.into}
            for e in dend.events
        ],
    }


def dendrogram_from_dict(obj) -> Dendrogram:
    try:
        events = [
            MergeEvent(float(e["height"]), tuple(int(x) for x in e["merged"]), int(e["into"]))
            for e in obj["events"]
        ]
        return Dendrogram(int(obj["leaves"]), events)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidDataError(f"malformed dendrogram object: {exc}") from exc


def dendrogram_to_newick(dend: Dendrogram) -> str:
    """Newick string; branch lengths are merge-height differences.

    If the path did not fully fuse, the remaining components are joined under
    a virtual root at the final recorded height.
    """
    # nodes: id -> (children node ids or leaf index, height)
    children: list = [None] * dend.leaf_count
    heights = [0.0] * dend.leaf_count
    latest = {i: i for i in range(dend.leaf_count)}
    for e in dend.events:
        ids = [latest[e.into]] + [latest[i] for i in e.merged]
        children.append(ids)
        heights.append(e.height)
        latest[e.into] = len(children) - 1
        for i in e.merged:
            del latest[i]
    roots = sorted(latest.values())
    top = max(heights) if dend.events else 0.0
    if len(roots) > 1:
        children.append(list(roots))
        heights.append(top)
        root = len(children) - 1
    else:
        root = roots[0]
    return _newick_build(children, heights, root) + ";"


def _newick_build(children, heights, root) -> str:
    parts = {}
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if children[node] is None:
            parts[node] = str(node)
        elif not expanded:
            stack.append((node, True))
            stack.extend((kid, False) for kid in children[node])
        else:
            inner = ",".join(
                f"{parts.pop(kid)}:{max(heights[node] - heights[kid], 0.0):.12g}"
                for kid in children[node]
            )
            parts[node] = f"({inner})"
    return parts[root]


def dendrogram_leaf_order(dend: Dendrogram) -> list[int]:
    """Leaves ordered so that merged groups are contiguous (for heatmaps)."""
    groups = {i: [i] for i in range(dend.leaf_count)}
    for e in dend.events:
        g = groups[e.into]
        for i in e.merged:
            g.extend(groups.pop(i))
    order = []
    for key in sorted(groups):
        order.extend(groups[key])
    return order
