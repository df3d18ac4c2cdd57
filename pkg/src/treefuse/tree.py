"""Geometric tree structures: Euclidean MST construction, rooting, leaf depths.

Trees are undirected, connected and acyclic, with Euclidean edge lengths and
optional per-edge penalty weights. The MST of the complete Euclidean graph is
the default support for the fusion penalty.
"""

from __future__ import annotations

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import minimum_spanning_tree as _sparse_mst
from scipy.spatial import Delaunay, QhullError, cKDTree

from .data import FLOAT_FMT, DataMatrix
from .errors import InvalidDataError

# build_euclidean_mst switches from the O(n^2) Prim scan to KD-tree /
# Delaunay based construction above this size.
_PRIM_MAX_N = 4096


class WeightedTree:
    """A spanning tree over ``node_count`` nodes.

    Edges are stored as a (k, 2) integer array with u < v per row, sorted
    lexicographically, together with their Euclidean lengths and optional
    penalty weights.
    """

    __slots__ = ("node_count", "edges", "lengths", "weights")

    def __init__(self, node_count, edges, lengths, weights=None, _sorted=False):
        self.node_count = int(node_count)
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        lengths = np.asarray(lengths, dtype=np.float64).reshape(-1)
        if weights is not None:
            weights = np.asarray(weights, dtype=np.float64).reshape(-1)
        if not _sorted:
            edges = np.sort(edges, axis=1)
            order = np.lexsort((edges[:, 1], edges[:, 0]))
            edges = edges[order]
            lengths = lengths[order]
            if weights is not None:
                weights = weights[order]
        self.edges = edges
        self.lengths = lengths
        self.weights = weights
        self._check_structure()

    def _check_structure(self):
        m, k = self.node_count, len(self.edges)
        if m < 1:
            raise InvalidDataError("tree needs at least one node")
        if k != m - 1:
            raise InvalidDataError(f"tree over {m} nodes needs {m - 1} edges, got {k}")
        if len(self.lengths) != k:
            raise InvalidDataError("edge/length count mismatch")
        if self.weights is not None and len(self.weights) != k:
            raise InvalidDataError("edge/weight count mismatch")
        if k:
            if self.edges.min() < 0 or self.edges.max() >= m:
                raise InvalidDataError("edge endpoint out of range")
            if np.any(self.edges[:, 0] == self.edges[:, 1]):
                raise InvalidDataError("self-loop edge")
            if np.any((np.diff(self.edges[:, 0]) == 0) & (np.diff(self.edges[:, 1]) == 0)):
                raise InvalidDataError("duplicate edge")
            if np.any(self.lengths < 0) or not np.all(np.isfinite(self.lengths)):
                raise InvalidDataError("edge lengths must be finite and >= 0")

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def validate(self) -> None:
        """Full validation: structural checks plus connectivity (hence acyclicity)."""
        self._check_structure()
        parent = list(range(self.node_count))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for u, v in self.edges:
            ru, rv = find(int(u)), find(int(v))
            if ru == rv:
                raise InvalidDataError(f"cycle through edge ({u}, {v})")
            parent[ru] = rv
        # k == m-1 and no cycle implies connected

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.node_count, dtype=np.int64)
        if self.edge_count:
            np.add.at(deg, self.edges[:, 0], 1)
            np.add.at(deg, self.edges[:, 1], 1)
        return deg

    def adjacency_csr(self):
        """Adjacency as CSR arrays: (start, neighbor, edge_id), each edge twice."""
        m, k = self.node_count, self.edge_count
        ends = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        other = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        eid = np.concatenate([np.arange(k), np.arange(k)])
        order = np.argsort(ends, kind="stable")
        start = np.zeros(m + 1, dtype=np.int64)
        np.cumsum(np.bincount(ends, minlength=m), out=start[1:])
        return start, other[order], eid[order]

    def __repr__(self):
        w = "weighted" if self.weights is not None else "unweighted"
        return f"WeightedTree(nodes={self.node_count}, {w})"


class RootedTree:
    """A :class:`WeightedTree` oriented away from a root node.

    ``bfs_order`` visits parents before children; ``edge_index[v]`` is the row
    of the source tree's edge list joining v to its parent (-1 for the root).
    """

    __slots__ = ("tree", "root", "parent", "bfs_order", "edge_index",
                 "children_start", "children_flat", "_lists")

    def __init__(self, tree, root, parent, bfs_order, edge_index):
        self.tree = tree
        self.root = int(root)
        self.parent = parent
        self.bfs_order = bfs_order
        self.edge_index = edge_index
        m = tree.node_count
        nonroot = np.flatnonzero(edge_index >= 0)
        order = nonroot[np.argsort(parent[nonroot], kind="stable")]
        self.children_start = np.zeros(m + 1, dtype=np.int64)
        counts = np.bincount(parent[nonroot], minlength=m)
        np.cumsum(counts, out=self.children_start[1:])
        self.children_flat = order
        self._lists = None

    @property
    def node_count(self) -> int:
        return self.tree.node_count

    def as_lists(self):
        """Plain-list views of the traversal arrays for the DP hot loop."""
        if self._lists is None:
            self._lists = (
                self.bfs_order.tolist(),
                self.parent.tolist(),
                self.edge_index.tolist(),
                self.children_start.tolist(),
                self.children_flat.tolist(),
            )
        return self._lists


def build_euclidean_mst(data, method: str = "auto") -> WeightedTree:
    """Minimum spanning tree of the complete Euclidean graph over the rows of ``data``.

    Parameters
    ----------
    data : DataMatrix or array-like, shape (n, p)
    method : {"auto", "prim", "delaunay", "boruvka"}
        "prim" is the O(n^2)-time, O(np)-memory scan with deterministic
        lexicographic tie-breaking. "delaunay" (p == 2 only) and "boruvka"
        are exact accelerations for large n; "auto" picks by size.

    Returns
    -------
    WeightedTree
        The MST; total edge length is minimal over all spanning trees.
    """
    X = data.values if isinstance(data, DataMatrix) else np.asarray(data, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2 or X.shape[0] < 1:
        raise InvalidDataError(f"expected an n x p matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidDataError("non-finite coordinates")
    n, p = X.shape
    if n == 1:
        return WeightedTree(1, np.empty((0, 2), dtype=np.int64), np.empty(0))
    if method == "auto":
        if n <= _PRIM_MAX_N:
            method = "prim"
        elif p == 2:
            method = "delaunay"
        else:
            method = "boruvka"
    if method == "prim":
        edges, sq = _prim_mst(X)
    elif method == "delaunay":
        if p != 2:
            raise InvalidDataError("delaunay MST construction requires p == 2")
        out = _delaunay_mst(X)
        if out is None:  # degenerate input (collinear/duplicate points)
            edges, sq = _boruvka_mst(X)
        else:
            edges, sq = out
    elif method == "boruvka":
        edges, sq = _boruvka_mst(X)
    else:
        raise InvalidDataError(f"unknown MST method: {method!r}")
    return WeightedTree(n, edges, np.sqrt(sq))


def _prim_mst(X):
    """Exact Prim scan; ties broken by lexicographically smallest (u, v)."""
    n = X.shape[0]
    best_sq = np.full(n, np.inf)
    best_from = np.zeros(n, dtype=np.int64)
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    current = 0
    edges = np.empty((n - 1, 2), dtype=np.int64)
    sq_out = np.empty(n - 1)
    for t in range(n - 1):
        d = X - X[current]
        sq = np.einsum("ij,ij->i", d, d)
        sq[in_tree] = np.inf
        closer = sq < best_sq
        best_sq[closer] = sq[closer]
        best_from[closer] = current
        # equal-distance candidate: keep the lexicographically smaller edge
        tie = (sq == best_sq) & ~closer & ~in_tree & np.isfinite(best_sq)
        if np.any(tie):
            for j in np.flatnonzero(tie):
                if _edge_key(current, j) < _edge_key(best_from[j], j):
                    best_from[j] = current
        jmin = int(np.argmin(best_sq))
        mval = best_sq[jmin]
        ties = np.flatnonzero(best_sq == mval)
        if len(ties) > 1:
            jmin = min(ties, key=lambda j: _edge_key(best_from[j], j))
            jmin = int(jmin)
        u = int(best_from[jmin])
        edges[t, 0] = min(u, jmin)
        edges[t, 1] = max(u, jmin)
        sq_out[t] = mval
        in_tree[jmin] = True
        best_sq[jmin] = np.inf
        current = jmin
    return edges, sq_out


def _edge_key(a, b):
    return (min(a, b), max(a, b))


def _delaunay_mst(X):
    """MST of the Delaunay graph; equals the Euclidean MST for planar input."""
    n = X.shape[0]
    try:
        tri = Delaunay(X)
    except QhullError:
        return None
    s = tri.simplices
    e = np.vstack([s[:, [0, 1]], s[:, [1, 2]], s[:, [0, 2]]])
    e.sort(axis=1)
    e = np.unique(e, axis=0)
    d = X[e[:, 0]] - X[e[:, 1]]
    sq = np.einsum("ij,ij->i", d, d)
    g = coo_matrix((sq + 1.0, (e[:, 0], e[:, 1])), shape=(n, n)).tocsr()
    mst = _sparse_mst(g).tocoo()
    if mst.nnz != n - 1:  # points missing from the triangulation (duplicates)
        return None
    edges = np.column_stack([mst.row, mst.col]).astype(np.int64)
    return edges, mst.data - 1.0


def _boruvka_mst(X):
    """Exact Boruvka rounds with KD-tree out-of-component neighbor search."""
    n = X.shape[0]
    kdtree = cKDTree(X)
    parent = np.arange(n)

    def roots_of(idx):
        r = parent[idx]
        while True:
            rr = parent[r]
            if np.array_equal(rr, r):
                return r
            r = rr

    edges_u, edges_v, edges_sq = [], [], []
    n_comp = n
    k = 4
    while n_comp > 1:
        root = roots_of(np.arange(n))
        cand_d, cand_i, cand_j = _min_outgoing(X, kdtree, root, k)
        # per-component minimum outgoing candidate, tie-broken lexicographically
        order = np.lexsort((
            np.maximum(cand_i, cand_j),
            np.minimum(cand_i, cand_j),
            cand_d,
            root[cand_i],
        ))
        comp_sorted = root[cand_i][order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = comp_sorted[1:] != comp_sorted[:-1]
        chosen = order[first]
        for idx in chosen:
            i, j = int(cand_i[idx]), int(cand_j[idx])
            # ties can connect the same pair of components twice in a round:
            # union first, append the edge only when it merges live components
            ri2 = int(roots_of(np.array([int(root[i])]))[0])
            rj2 = int(roots_of(np.array([int(root[j])]))[0])
            if ri2 == rj2:
                continue
            parent[ri2] = rj2
            n_comp -= 1
            edges_u.append(min(i, j))
            edges_v.append(max(i, j))
            edges_sq.append(float(cand_d[idx]))
        k = min(max(k * 2, 8), n)
    edges = np.column_stack([edges_u, edges_v]).astype(np.int64)
    return edges, np.asarray(edges_sq)


def _min_outgoing(X, kdtree, root, k):
    """For every point, its nearest neighbor in a different component.

    Escalates k for points whose k nearest all fall inside their own
    component; falls back to querying the complement directly for the few
    large components that exhaust the escalation.
    """
    n = X.shape[0]
    out_d = np.full(n, np.inf)
    out_j = np.full(n, -1, dtype=np.int64)
    pending = np.arange(n)
    kk = min(k, n)
    while len(pending):
        dist, idx = kdtree.query(X[pending], k=kk, workers=-1)
        if kk == 1:
            dist = dist[:, None]
            idx = idx[:, None]
        ext = root[idx] != root[pending][:, None]
        has = ext.any(axis=1)
        first = np.argmax(ext, axis=1)
        rows = np.flatnonzero(has)
        out_d[pending[rows]] = dist[rows, first[rows]] ** 2
        out_j[pending[rows]] = idx[rows, first[rows]]
        pending = pending[~has]
        if kk >= n:
            break
        if kk >= 1024:
            # large blob components: query each against its complement
            for r in np.unique(root[pending]):
                inside = np.flatnonzero(root == r)
                outside = np.flatnonzero(root != r)
                sub = cKDTree(X[outside])
                d, j = sub.query(X[inside], k=1, workers=-1)
                out_d[inside] = d ** 2
                out_j[inside] = outside[j]
            pending = pending[:0]
            break
        kk = min(kk * 4, n)
    found = out_j >= 0
    return out_d[found], np.flatnonzero(found), out_j[found]


def root_tree(tree: WeightedTree, root: int = 0) -> RootedTree:
    """Orient ``tree`` away from ``root``; BFS order visits parents first."""
    m = tree.node_count
    if not 0 <= root < m:
        raise IndexError(f"root {root} out of range for {m} nodes")
    start, nbr, eid = tree.adjacency_csr()
    start_l = start.tolist()
    nbr_l = nbr.tolist()
    eid_l = eid.tolist()
    parent = np.full(m, -1, dtype=np.int64)
    edge_index = np.full(m, -1, dtype=np.int64)
    parent_l = parent.tolist()
    edge_l = edge_index.tolist()
    order = [root]
    parent_l[root] = root
    head = 0
    while head < len(order):
        v = order[head]
        head += 1
        for i in range(start_l[v], start_l[v + 1]):
            u = nbr_l[i]
            if parent_l[u] < 0:
                parent_l[u] = v
                edge_l[u] = eid_l[i]
                order.append(u)
    if len(order) != m:
        raise InvalidDataError("tree is not connected")
    return RootedTree(
        tree,
        root,
        np.asarray(parent_l, dtype=np.int64),
        np.asarray(order, dtype=np.int64),
        np.asarray(edge_l, dtype=np.int64),
    )


def leaf_proximity_depths(tree: WeightedTree) -> np.ndarray:
    """Hop distance from every node to its nearest degree-1 node (0 for leaves)."""
    m = tree.node_count
    if m == 1:
        return np.zeros(1, dtype=np.int64)
    deg = tree.degrees()
    depth = np.full(m, -1, dtype=np.int64)
    frontier = [int(v) for v in np.flatnonzero(deg <= 1)]
    for v in frontier:
        depth[v] = 0
    start, nbr, _ = tree.adjacency_csr()
    start_l, nbr_l = start.tolist(), nbr.tolist()
    depth_l = depth.tolist()
    head = 0
    while head < len(frontier):
        v = frontier[head]
        head += 1
        dv = depth_l[v] + 1
        for i in range(start_l[v], start_l[v + 1]):
            u = nbr_l[i]
            if depth_l[u] < 0:
                depth_l[u] = dv
                frontier.append(u)
    return np.asarray(depth_l, dtype=np.int64)


def write_edgelist(tree: WeightedTree, path) -> None:
    """Serialize as text, one ``u v length`` triple per line (0-based ids)."""
    with open(path, "w") as fh:
        fh.write(f"# nodes {tree.node_count}\n")
        for (u, v), length in zip(tree.edges, tree.lengths):
            fh.write(f"{u} {v} {FLOAT_FMT % length}\n")


def read_edgelist(path) -> WeightedTree:
    """Read a tree written by :func:`write_edgelist` and fully validate it."""
    edges, lengths = [], []
    node_count = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) == 2 and parts[0] == "nodes":
                    node_count = int(parts[1])
                continue
            parts = line.split()
            if len(parts) != 3:
                raise InvalidDataError(f"{path}: bad edge line: {line!r}")
            edges.append((int(parts[0]), int(parts[1])))
            lengths.append(float(parts[2]))
    if node_count is None:
        node_count = max((max(u, v) for u, v in edges), default=0) + 1
    tree = WeightedTree(node_count, np.asarray(edges, dtype=np.int64).reshape(-1, 2), lengths)
    tree.validate()
    return tree
