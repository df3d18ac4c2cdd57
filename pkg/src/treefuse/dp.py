"""Exact dynamic program for the weighted fused lasso on a rooted tree.

Solves, per feature,

    min_theta  sum_k  w_k/2 * (y_k - theta_k)^2  +  sum_{(k,l) in E} c_kl * |theta_k - theta_l|

by a leaf-to-root sweep over piecewise-linear derivatives followed by a
root-to-leaf clamping pass. The clamping pass copies the parent value verbatim
whenever it falls inside the child's clamp interval, so fused coordinates are
*exactly* equal in floating point -- later equality checks need no tolerance.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass
from itertools import chain

import numpy as np

from .errors import InvalidDataError, InvalidProblemError
from .tree import RootedTree


class PwlDerivative:
    """Strictly increasing piecewise-linear derivative of a convex node value function.

    Stored as a sorted double-ended queue of breakpoint events ``(pos, dslope)``
    plus the affine coefficients of the leftmost and rightmost pieces. Crossing
    an event at ``pos`` from left to right changes the affine piece
    ``a*t + b`` into ``(a + dslope)*t + (b - dslope*pos)`` (the derivative is
    continuous, so the intercept change is determined by the position).

    Every piece has slope >= the minimum node weight > 0, which keeps the
    clip positions and the root equation well defined. ``dslope`` is positive
    for lower-clip boundary events and negative for upper-clip ones.
    """

    __slots__ = ("events", "lo_a", "lo_b", "hi_a", "hi_b")

    def __init__(self, lo_a, lo_b, hi_a, hi_b, events=None):
        self.events = events if events is not None else deque()
        self.lo_a = lo_a
        self.lo_b = lo_b
        self.hi_a = hi_a
        self.hi_b = hi_b

    @classmethod
    def from_quadratic(cls, weight, target):
        """Derivative of w/2 * (y - t)^2, i.e. the line w*t - w*y."""
        b = -weight * target
        return cls(weight, b, weight, b)

    def clip(self, bound):
        """Truncate to [-bound, +bound]; returns the clamp interval (lo, hi).

        Breakpoints outside the interval are discarded eagerly and the two
        boundary breakpoints are pushed, keeping the queue tight.
        """
        events = self.events
        a = self.lo_a
        b = self.lo_b
        neg = -bound
        while events:
            pos, ds = events[0]
            if a * pos + b < neg:
                a += ds
                b -= ds * pos
                events.popleft()
            else:
                break
        lo = (neg - b) / a
        lo_slope = a
        a = self.hi_a
        b = self.hi_b
        while events:
            pos, ds = events[-1]
            if a * pos + b > bound:
                a -= ds
                b += ds * pos
                events.pop()
            else:
                break
        hi = (bound - b) / a
        events.appendleft((lo, lo_slope))
        events.append((hi, -a))
        self.lo_a = 0.0
        self.lo_b = neg
        self.hi_a = 0.0
        self.hi_b = bound
        return lo, hi

    def absorb(self, other):
        """Add another derivative in place (sum of convex functions).

        The other derivative's queue is consumed; event sequences are merged
        smaller-into-larger.
        """
        self.lo_a += other.lo_a
        self.lo_b += other.lo_b
        self.hi_a += other.hi_a
        self.hi_b += other.hi_b
        mine, theirs = self.events, other.events
        if not mine:
            self.events = theirs
        elif theirs:
            if len(mine) < len(theirs):
                mine, theirs = theirs, mine
            if mine[-1][0] <= theirs[0][0]:
                mine.extend(theirs)
            elif theirs[-1][0] <= mine[0][0]:
                mine.extendleft(reversed(theirs))
            else:
                mine = deque(heapq.merge(mine, theirs))
            self.events = mine

    def solve_zero(self):
        """Position where the derivative crosses zero (destructive walk)."""
        events = self.events
        a = self.lo_a
        b = self.lo_b
        while events:
            pos, ds = events[0]
            if a * pos + b < 0.0:
                a += ds
                b -= ds * pos
                events.popleft()
            else:
                break
        return -b / a

    def value(self, t):
        """Evaluate the derivative at t (non-destructive; for diagnostics)."""
        a = self.lo_a
        b = self.lo_b
        for pos, ds in self.events:
            if pos > t:
                break
            a += ds
            b -= ds * pos
        return a * t + b


@dataclass
class NodeProblem:
    """Per-node quadratic targets and per-edge fusion penalties.

    ``edge_penalties`` aligns with the rooted tree's underlying edge list.
    """

    targets: np.ndarray
    node_weights: np.ndarray
    edge_penalties: np.ndarray

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.float64)
        self.node_weights = np.asarray(self.node_weights, dtype=np.float64)
        self.edge_penalties = np.asarray(self.edge_penalties, dtype=np.float64)

    def validate(self, rooted: RootedTree):
        m = rooted.node_count
        if self.targets.shape != (m,):
            raise InvalidDataError(f"targets must have shape ({m},)")
        if self.node_weights.shape != (m,):
            raise InvalidDataError(f"node weights must have shape ({m},)")
        if self.edge_penalties.shape != (rooted.tree.edge_count,):
            raise InvalidDataError(
                f"edge penalties must have shape ({rooted.tree.edge_count},)"
            )
        if not np.all(np.isfinite(self.targets)):
            raise InvalidDataError("non-finite targets")
        if not np.all(np.isfinite(self.node_weights)) or np.any(self.node_weights <= 0):
            raise InvalidProblemError("node weights must be finite and > 0")
        if not np.all(np.isfinite(self.edge_penalties)) or np.any(self.edge_penalties < 0):
            raise InvalidProblemError("edge penalties must be finite and >= 0")


def solve_1d(rooted: RootedTree, prob: NodeProblem, return_bounds: bool = False):
    """Exact minimizer of the tree fused lasso for one feature.

    Returns the length-m solution vector; with ``return_bounds`` also the
    per-node clamp intervals (t_minus, t_plus) recorded by the forward pass.
    """
    prob.validate(rooted)
    order, parent_l, eidx, cstart, cflat = rooted.as_lists()
    theta, lo, hi = _sweep(
        order,
        parent_l,
        cstart,
        cflat,
        prob.node_weights.tolist(),
        prob.targets.tolist(),
        _penalty_by_node(rooted, prob.edge_penalties),
    )
    theta = np.asarray(theta)
    if return_bounds:
        return theta, (np.asarray(lo), np.asarray(hi))
    return theta


def solve_matrix(rooted: RootedTree, targets, node_weights, edge_penalties,
                 penalty_scales=None) -> np.ndarray:
    """Column-by-column :func:`solve_1d`; columns are fully independent.

    ``penalty_scales`` optionally multiplies the edge penalties per column
    (used when column multiplicities fold into the fusion penalty).
    """
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim == 1:
        targets = targets[:, None]
    m, p = targets.shape
    if m != rooted.node_count:
        raise InvalidDataError(f"targets must have {rooted.node_count} rows")
    if not np.all(np.isfinite(targets)):
        raise InvalidDataError("non-finite targets")
    prob = NodeProblem(targets[:, 0], node_weights, edge_penalties)
    prob.validate(rooted)
    if penalty_scales is not None:
        penalty_scales = np.asarray(penalty_scales, dtype=np.float64)
        if penalty_scales.shape != (p,):
            raise InvalidDataError(f"penalty_scales must have shape ({p},)")
        if not np.all(np.isfinite(penalty_scales)) or np.any(penalty_scales < 0):
            raise InvalidProblemError("penalty scales must be finite and >= 0")
    order, parent_l, eidx, cstart, cflat = rooted.as_lists()
    mu_l = prob.node_weights.tolist()
    cpen = _penalty_by_node(rooted, prob.edge_penalties)
    out = np.empty((m, p))
    for s in range(p):
        if penalty_scales is None:
            col_pen = cpen
        else:
            scale = penalty_scales[s]
            col_pen = cpen if scale == 1.0 else [x * scale for x in cpen]
        theta, _, _ = _sweep(order, parent_l, cstart, cflat, mu_l,
                             targets[:, s].tolist(), col_pen)
        out[:, s] = theta
    return out


def _penalty_by_node(rooted: RootedTree, edge_penalties):
    """Penalty of each node's parent edge (0.0 at the root)."""
    pen = np.zeros(rooted.node_count)
    nonroot = rooted.edge_index >= 0
    pen[nonroot] = np.asarray(edge_penalties)[rooted.edge_index[nonroot]]
    return pen.tolist()


def _sweep(order, parent, cstart, cflat, mu, y, cpen):
    """Forward (leaf-to-root) and backward (root-to-leaf) passes for one column.

    Hot loop: the clip/absorb bodies of :class:`PwlDerivative` are inlined
    over parallel lists. ``_sweep_reference`` is the method-based equivalent
    kept for differential testing.
    """
    m = len(order)
    events = [None] * m
    lo_a = [0.0] * m
    lo_b = [0.0] * m
    hi_a = [0.0] * m
    hi_b = [0.0] * m
    lo = [0.0] * m
    hi = [0.0] * m
    for i in range(m - 1, -1, -1):
        v = order[i]
        mv = mu[v]
        la = mv
        lb = -mv * y[v]
        ha = mv
        hb = lb
        j0 = cstart[v]
        j1 = cstart[v + 1]
        if j0 == j1:
            q = deque()
        else:
            gather = None
            for j in range(j0, j1):
                c = cflat[j]
                t = cpen[c]
                q = events[c]
                events[c] = None
                a = lo_a[c]
                b = lo_b[c]
                while q:
                    x, ds = q[0]
                    if a * x + b < -t:
                        a += ds
                        b -= ds * x
                        q.popleft()
                    else:
                        break
                tlo = (-t - b) / a
                alo = a
                a = hi_a[c]
                b = hi_b[c]
                while q:
                    x, ds = q[-1]
                    if a * x + b > t:
                        a -= ds
                        b += ds * x
                        q.pop()
                    else:
                        break
                lo[c] = tlo
                hi[c] = thi = (t - b) / a
                q.appendleft((tlo, alo))
                q.append((thi, -a))
                lb -= t
                hb += t
                if gather is None:
                    gather = q
                elif type(gather) is deque:
                    gather = [gather, q]
                else:
                    gather.append(q)
            if type(gather) is not deque:
                gather.sort(key=len)
                big = gather[-1]
                if len(gather) == 2 and (not gather[0] or gather[0][0][0] >= big[-1][0]):
                    big.extend(gather[0])
                    q = big
                else:
                    q = deque(sorted(chain.from_iterable(gather)))
            else:
                q = gather
        events[v] = q
        lo_a[v] = la
        lo_b[v] = lb
        hi_a[v] = ha
        hi_b[v] = hb
    root = order[0]
    q = events[root]
    a = lo_a[root]
    b = lo_b[root]
    while q:
        x, ds = q[0]
        if a * x + b < 0.0:
            a += ds
            b -= ds * x
            q.popleft()
        else:
            break
    theta = [0.0] * m
    theta[root] = -b / a
    for i in range(1, m):
        v = order[i]
        t = theta[parent[v]]
        if t < lo[v]:
            theta[v] = lo[v]
        elif t > hi[v]:
            theta[v] = hi[v]
        else:
            theta[v] = t
    return theta, lo, hi


def _sweep_reference(order, parent, cstart, cflat, mu, y, cpen):
    """Reference sweep built on PwlDerivative methods; must match _sweep exactly."""
    m = len(order)
    derivs = [None] * m
    lo = [0.0] * m
    hi = [0.0] * m
    for i in range(m - 1, -1, -1):
        v = order[i]
        d = PwlDerivative.from_quadratic(mu[v], y[v])
        for j in range(cstart[v], cstart[v + 1]):
            c = cflat[j]
            dc = derivs[c]
            lo[c], hi[c] = dc.clip(cpen[c])
            d.absorb(dc)
            derivs[c] = None
        derivs[v] = d
    root = order[0]
    theta = [0.0] * m
    theta[root] = derivs[root].solve_zero()
    for i in range(1, m):
        v = order[i]
        t = theta[parent[v]]
        if t < lo[v]:
            theta[v] = lo[v]
        elif t > hi[v]:
            theta[v] = hi[v]
        else:
            theta[v] = t
    return theta, lo, hi


def objective_value(tree, targets, node_weights, edge_penalties, theta) -> float:
    """The tree fused-lasso objective at ``theta``; accepts (m,) or (m, p) arrays."""
    targets = np.asarray(targets, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if targets.ndim == 1:
        targets = targets[:, None]
    if theta.ndim == 1:
        theta = theta[:, None]
    w = np.asarray(node_weights, dtype=np.float64)
    fit = 0.5 * float(np.einsum("i,ij->", w, (targets - theta) ** 2))
    if tree.edge_count == 0:
        return fit
    diffs = np.abs(theta[tree.edges[:, 0]] - theta[tree.edges[:, 1]]).sum(axis=1)
    return fit + float(np.dot(np.asarray(edge_penalties, dtype=np.float64), diffs))


def kkt_residual(rooted: RootedTree, prob: NodeProblem, theta) -> float:
    """Max-norm stationarity residual; <= 1e-8 certifies optimality.

    On edges with distinct endpoint values the subgradient is the sign; on
    fused edges (equal values, positive penalty) the subgradient is recovered
    by the unique flow that balances each fused subtree, clipped into the
    feasible band. Zero-penalty edges carry no subgradient.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (rooted.node_count,):
        raise InvalidDataError(f"theta must have shape ({rooted.node_count},)")
    prob.validate(rooted)
    balance = (prob.node_weights * (theta - prob.targets)).tolist()
    order, parent_l, _, _, _ = rooted.as_lists()
    theta_l = theta.tolist()
    pen_l = _penalty_by_node(rooted, prob.edge_penalties)
    m = len(order)

    # sign terms on edges with distinct endpoint values
    for i in range(1, m):
        v = order[i]
        u = parent_l[v]
        c = pen_l[v]
        if c == 0.0 or theta_l[v] == theta_l[u]:
            continue
        s = c if theta_l[v] > theta_l[u] else -c
        balance[v] += s
        balance[u] -= s

    # flows through fused edges, children before parents
    resid = 0.0
    for i in range(m - 1, 0, -1):
        v = order[i]
        u = parent_l[v]
        c = pen_l[v]
        if c > 0.0 and theta_l[v] == theta_l[u]:
            f = -balance[v]  # flow into the parent that zeroes this node
            if f > c:
                f = c
            elif f < -c:
                f = -c
            r = abs(balance[v] + f)
            balance[u] -= f
        else:
            r = abs(balance[v])
        if r > resid:
            resid = r
    return max(resid, abs(balance[order[0]]))
