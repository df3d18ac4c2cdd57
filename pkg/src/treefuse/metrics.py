"""Partition agreement metrics: assignment accuracy and adjusted Rand index."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InvalidDataError


def _contingency(pred, true):
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape or pred.ndim != 1:
        raise InvalidDataError("label vectors must be 1-D and of equal length")
    if len(pred) == 0:
        raise InvalidDataError("empty label vectors")
    _, pi = np.unique(pred, return_inverse=True)
    _, ti = np.unique(true, return_inverse=True)
    table = np.zeros((pi.max() + 1, ti.max() + 1), dtype=np.int64)
    np.add.at(table, (pi, ti), 1)
    return table


def accuracy(pred, true) -> float:
    """Best fraction of agreements over one-to-one cluster/class assignments.

    The optimal matching of predicted cluster ids to true classes is computed
    on the contingency table (rectangular tables are matched as-is, leaving
    surplus clusters or classes unmatched).
    """
    table = _contingency(pred, true)
    rows, cols = linear_sum_assignment(table, maximize=True)
    return float(table[rows, cols].sum()) / table.sum()


def adjusted_rand_index(pred, true) -> float:
    """Hubert-Arabie chance-corrected pair agreement; 1 for identical partitions.

    Degenerate pairs whose expected and maximal indices coincide (e.g. both
    partitions all-singletons) return 1.0.
    """
    table = _contingency(pred, true)
    n = table.sum()
    if n < 2:
        raise InvalidDataError("adjusted Rand index needs n >= 2")

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_cells = comb2(table).sum()
    sum_rows = comb2(table.sum(axis=1)).sum()
    sum_cols = comb2(table.sum(axis=0)).sum()
    expected = sum_rows * sum_cols / comb2(n)
    max_index = 0.5 * (sum_rows + sum_cols)
    if max_index == expected:
        return 1.0
    return float((sum_cells - expected) / (max_index - expected))
