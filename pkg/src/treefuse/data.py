"""Observation matrices with optional ground-truth labels, plus CSV I/O."""

from __future__ import annotations

import csv

import numpy as np

from .errors import InvalidDataError

# Round-trip precision for all floating-point output files.
FLOAT_FMT = "%.17g"


class DataMatrix:
    """An n x p matrix of observations, one row per object.

    Parameters
    ----------
    values : array-like, shape (n, p)
        Feature values; must be finite.
    labels : array-like of int, shape (n,), optional
        Ground-truth class labels, used only for evaluation.
    """

    def __init__(self, values, labels=None):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise InvalidDataError(f"expected an n x p matrix with n,p >= 1, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidDataError("data matrix contains non-finite entries")
        if labels is not None:
            labels = np.asarray(labels, dtype=np.int64)
            if labels.shape != (values.shape[0],):
                raise InvalidDataError(
                    f"labels must have length {values.shape[0]}, got shape {labels.shape}"
                )
        self.values = values
        self.labels = labels

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def __repr__(self):
        lab = "with labels" if self.labels is not None else "unlabeled"
        return f"DataMatrix(n={self.n}, p={self.p}, {lab})"


def write_csv(data: DataMatrix, path) -> None:
    """Write a dataset as CSV with header ``f1..fp[,label]``."""
    with open(path, "w", newline="") as fh:
        _write_csv_stream(data, fh)


def _write_csv_stream(data: DataMatrix, fh) -> None:
    writer = csv.writer(fh)
    header = [f"f{j + 1}" for j in range(data.p)]
    if data.labels is not None:
        header.append("label")
    writer.writerow(header)
    for i in range(data.n):
        row = [FLOAT_FMT % v for v in data.values[i]]
        if data.labels is not None:
            row.append(str(int(data.labels[i])))
        writer.writerow(row)


def read_csv(path) -> DataMatrix:
    """Read a dataset written by :func:`write_csv`.

    The header row names the columns; a column named ``label`` (any position)
    is parsed as integer class labels. All other columns must be numeric.

    Raises
    ------
    InvalidDataError
        On an empty file, ragged rows, or unparseable fields. The message
        carries 1-based line and column positions.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidDataError(f"{path}: empty CSV file")
    header = [h.strip() for h in rows[0]]
    try:
        label_col = header.index("label")
    except ValueError:
        label_col = None
    feat_cols = [j for j in range(len(header)) if j != label_col]
    if not feat_cols:
        raise InvalidDataError(f"{path}: no feature columns")
    values = []
    labels = [] if label_col is not None else None
    for i, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise InvalidDataError(
                f"{path}: line {i}: expected {len(header)} fields, got {len(row)}"
            )
        try:
            values.append([float(row[j]) for j in feat_cols])
        except ValueError:
            bad = next(j for j in feat_cols if not _is_float(row[j]))
            raise InvalidDataError(
                f"{path}: line {i}, column {bad + 1}: not a number: {row[bad]!r}"
            ) from None
        if label_col is not None:
            try:
                labels.append(int(float(row[label_col])))
            except ValueError:
                raise InvalidDataError(
                    f"{path}: line {i}, column {label_col + 1}: bad label: {row[label_col]!r}"
                ) from None
    if not values:
        raise InvalidDataError(f"{path}: no data rows")
    return DataMatrix(np.asarray(values), labels)


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False
