"""Gram matrices and the empirical Hilbert-Schmidt independence criterion.

The estimator is the biased one, ``(n - 1)^-2 Tr(Kc Lc)`` with centered
Gram matrices ``Kc = H K H``, ``H = I - 11^T / n``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError, ShapeError


@dataclass(frozen=True)
class GramMatrix:
    values: np.ndarray
    centered: bool = False

    @property
    def size(self):
        return self.values.shape[0]


def center(values):
    """``H K H`` via row/column mean removal."""
    k = np.asarray(values, dtype=np.float64)
    row = k.mean(axis=1, keepdims=True)
    col = k.mean(axis=0, keepdims=True)
    return k - row - col + k.mean()


def centered(gram):
    return gram if gram.centered else GramMatrix(center(gram.values), True)


def gaussian_gram(x, bandwidth):
    x = np.asarray(x, dtype=np.float64).ravel()
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("non-finite input to gaussian_gram")
    diff = x[:, None] - x[None, :]
    return GramMatrix(np.exp(-(diff * diff) / (2.0 * bandwidth * bandwidth)))


def delta_gram(labels):
    labels = np.asarray(labels).ravel()
    if labels.size == 0:
        raise ValueError("delta_gram needs at least one label")
    return GramMatrix((labels[:, None] == labels[None, :]).astype(np.float64))


def median_bandwidth(x):
    """Median of the nonzero pairwise distances; 1.0 if all points coincide."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size < 2:
        raise ValueError("median_bandwidth needs at least two points")
    iu = np.triu_indices(x.size, k=1)
    d = np.abs(x[:, None] - x[None, :])[iu]
    d = d[d > 0]
    return float(np.median(d)) if d.size else 1.0


def empirical_hsic(kx, ly):
    """Biased empirical HSIC of two Gram matrices (centered on demand)."""
    if kx.size != ly.size:
        raise ShapeError(f"Gram sizes differ: {kx.size} vs {ly.size}")
    n = kx.size
    if n < 2:
        return 0.0
    # Tr(Kc Lc) = Tr(Kc L) because H is idempotent
    kc = centered(kx).values
    return float(np.sum(kc * ly.values) / (n - 1) ** 2)


def hsic(x, y, kernel_x="gaussian", kernel_y="gaussian"):
    """Convenience wrapper building Gram matrices from raw samples."""
    return empirical_hsic(_gram(x, kernel_x), _gram(y, kernel_y))


def _gram(v, kind):
    if kind == "gaussian":
        return gaussian_gram(v, median_bandwidth(v))
    if kind == "delta":
        return delta_gram(v)
    raise ValueError(f"unknown kernel {kind!r}")


def conditional_hsic(f_i, f_j, labels, bandwidth_i=None, bandwidth_j=None):
    """Class-size-weighted mean of within-class HSIC values.

    ``labels`` holds one class id per sample. Classes with fewer than two
    members contribute nothing. Bandwidths default to the median heuristic
    on the full vectors, shared by all classes.
    """
    f_i = np.asarray(f_i, dtype=np.float64).ravel()
    f_j = np.asarray(f_j, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if labels.size == 0:
        raise ValueError("conditional_hsic needs labeled samples")
    if not (f_i.size == f_j.size == labels.size):
        raise ShapeError("vectors and labels must have equal length")
    bw_i = median_bandwidth(f_i) if bandwidth_i is None else bandwidth_i
    bw_j = median_bandwidth(f_j) if bandwidth_j is None else bandwidth_j
    n = labels.size
    total = 0.0
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if idx.size < 2:
            continue
        h = empirical_hsic(gaussian_gram(f_i[idx], bw_i), gaussian_gram(f_j[idx], bw_j))
        total += idx.size / n * h
    return total


def permutation_test(x, y, num_permutations=100, seed=0, kernel_x="gaussian", kernel_y="gaussian"):
    """HSIC statistic plus a null sample from permuting ``y``.

    Returns ``(statistic, null, p_value)`` where the p-value counts the
    observed statistic as one of the permutations.
    """
    kx = centered(_gram(x, kernel_x)).values
    ly = _gram(y, kernel_y).values
    n = kx.shape[0]
    scale = 1.0 / (n - 1) ** 2
    stat = float(np.sum(kx * ly) * scale)
    rng = np.random.default_rng(seed)
    null = np.empty(num_permutations)
    for b in range(num_permutations):
        p = rng.permutation(n)
        null[b] = np.sum(kx * ly[np.ix_(p, p)]) * scale
    p_value = (1 + np.count_nonzero(null >= stat)) / (num_permutations + 1)
    return stat, null, float(p_value)
