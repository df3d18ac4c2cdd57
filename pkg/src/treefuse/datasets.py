"""Synthetic benchmark generators: Gaussian mixtures, moons, circles, blocks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import DataMatrix
from .errors import ConfigurationError

MODELS = ("GM1", "GM2", "TM", "TC", "MTC", "CHECKERBOARD", "FS")

# per-model RNG sub-stream codes (seeded together with the user seed)
_MODEL_CODES = {name: i + 1 for i, name in enumerate(MODELS)}

_CLASS_COUNTS = {"GM1": 3, "GM2": 3, "TM": 2, "TC": 2, "MTC": 3, "CHECKERBOARD": 4, "FS": 4}


@dataclass
class LabeledDataset:
    """A generated dataset with mandatory row labels.

    ``col_labels`` is set only by the checkerboard model (column groups).
    """

    data: DataMatrix
    model: str
    seed: int
    col_labels: np.ndarray | None = None

    @property
    def n_classes(self) -> int:
        return _CLASS_COUNTS[self.model]


def generate(model: str, n: int, p: int | None = None, seed: int = 0) -> LabeledDataset:
    """Draw a dataset from one of the synthetic models, deterministic per seed.

    ``p`` is honored only by MTC (default 2) and FS (default 100, >= 20);
    GM1/GM2/TM/TC are planar and CHECKERBOARD is square (p == n).
    """
    model = model.upper()
    if model not in MODELS:
        raise ConfigurationError(f"unknown model {model!r}; choose from {MODELS}")
    k = _CLASS_COUNTS[model]
    if n < k:
        raise ConfigurationError(f"{model} needs n >= {k}")
    rng = np.random.default_rng([_MODEL_CODES[model], seed])
    col_labels = None
    if model in ("GM1", "GM2"):
        _require_p(model, p, 2)
        values, labels = _gaussian_mixture(model, n, rng)
    elif model == "TM":
        _require_p(model, p, 2)
        values, labels = _two_moons(n, rng)
    elif model == "TC":
        _require_p(model, p, 2)
        values, labels = _two_circles(n, rng)
    elif model == "MTC":
        p = 2 if p is None else p
        if p < 2:
            raise ConfigurationError("MTC needs p >= 2")
        values, labels = _multidim_three_cluster(n, p, rng)
    elif model == "CHECKERBOARD":
        if p is not None and p != n:
            raise ConfigurationError("CHECKERBOARD matrices are square (p == n)")
        values, labels, col_labels = _checkerboard(n, rng)
    else:  # FS
        p = 100 if p is None else p
        if p < 20:
            raise ConfigurationError("FS needs p >= 20 (20 informative features)")
        values, labels = _four_spherical(n, p, rng)
    return LabeledDataset(DataMatrix(values, labels), model, seed, col_labels)


def _require_p(model, p, fixed):
    if p is not None and p != fixed:
        raise ConfigurationError(f"{model} fixes p = {fixed}")


def _third_counts(n):
    return (n // 3, n // 3, n - 2 * (n // 3))


def _gaussian_mixture(model, n, rng):
    if model == "GM1":
        means = np.array([[1.0, 2.5], [2.5, -1.8], [-2.5, -2.0]])
        cov = np.eye(2)
    else:
        means = np.array([[1.3, 3.5], [2.0, -2.0], [-1.2, 4.0]])
        cov = np.array([[1.0, 0.9], [0.9, 1.2]])
    chol = np.linalg.cholesky(cov)
    counts = _third_counts(n)
    values = np.empty((n, 2))
    labels = np.empty(n, dtype=np.int64)
    at = 0
    for cls, cnt in enumerate(counts):
        z = rng.standard_normal((cnt, 2))
        values[at:at + cnt] = means[cls] + z @ chol.T
        labels[at:at + cnt] = cls
        at += cnt
    return values, labels


def _two_moons(n, rng):
    n1 = n // 2
    n2 = n - n1
    x1 = rng.uniform(0.0, np.pi, n1)
    y1 = 2.0 * np.sin(x1) - 0.35
    x2 = rng.uniform(np.pi / 2, 3 * np.pi / 2, n2)
    y2 = 2.0 * np.cos(x2) - 0.35
    values = np.column_stack([np.r_[x1, x2], np.r_[y1, y2]])
    values += rng.normal(0.0, 0.25, values.shape)
    labels = np.r_[np.zeros(n1, dtype=np.int64), np.ones(n2, dtype=np.int64)]
    return values, labels


def _circle(cnt, main_lo, main_hi, tail_lo, tail_hi, rng):
    n_main = int(round(0.9 * cnt))
    t = np.empty(cnt)
    t[:n_main] = rng.uniform(main_lo, main_hi, n_main)
    t[n_main:] = rng.uniform(tail_lo, tail_hi, cnt - n_main)
    ang = 2 * np.pi * rng.uniform(0.0, 1.0, cnt)
    return np.column_stack([t * np.sin(ang), t * np.cos(ang)])


def _two_circles(n, rng):
    n1 = n // 2
    n2 = n - n1
    outer = _circle(n1, 0.8, 0.9, 0.6, 0.8, rng)
    inner = _circle(n2, 0.3, 0.5, 0.4, 0.6, rng)
    labels = np.r_[np.zeros(n1, dtype=np.int64), np.ones(n2, dtype=np.int64)]
    return np.vstack([outer, inner]), labels


def _multidim_three_cluster(n, p, rng):
    base = np.array([[4 / np.sqrt(3), 0.0], [-2 / np.sqrt(3), 2.0], [-2 / np.sqrt(3), -2.0]])
    q, r = np.linalg.qr(rng.standard_normal((p, 2)))
    q *= np.sign(np.diag(r))  # canonical orientation
    counts = _third_counts(n)
    values = np.empty((n, p))
    labels = np.empty(n, dtype=np.int64)
    at = 0
    for cls, cnt in enumerate(counts):
        mean = base[cls] @ q.T + rng.normal(0.0, 0.25, p)
        b = rng.standard_normal((50, p))
        sigma_b = b.T @ b / 50.0
        scale = rng.uniform(0.5, 1.4, p)
        cov = sigma_b * np.outer(scale, scale)
        values[at:at + cnt] = rng.multivariate_normal(mean, cov, size=cnt, method="svd")
        labels[at:at + cnt] = cls
        at += cnt
    return values, labels


def _checkerboard(n, rng):
    probs = 1.0 / np.arange(1, 5)
    probs /= probs.sum()
    row_groups = rng.choice(4, size=n, p=probs)
    col_groups = rng.choice(4, size=n, p=probs)
    grid = np.arange(-6.0, 6.0 + 1e-9, 0.5)
    block_means = grid[rng.integers(0, len(grid), size=(4, 4))]
    values = block_means[row_groups][:, col_groups] + rng.normal(0.0, 3.0, (n, n))
    return values, row_groups.astype(np.int64), col_groups.astype(np.int64)


def _four_spherical(n, p, rng):
    mu = 1.5
    block = np.ones(10)
    means = np.vstack([
        np.r_[mu * block, mu * block],
        np.r_[mu * block, -mu * block],
        np.r_[-mu * block, mu * block],
        np.r_[-mu * block, -mu * block],
    ])
    labels = rng.integers(0, 4, size=n)
    values = np.empty((n, p))
    values[:, :20] = means[labels] + rng.standard_normal((n, 20))
    if p > 20:
        values[:, 20:] = rng.standard_normal((n, p - 20))
    return values, labels.astype(np.int64)
