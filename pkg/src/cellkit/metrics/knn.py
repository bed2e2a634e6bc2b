"""Exact nearest-neighbour metrics: bandwidth, MMD, sKNN, pKNN.

Neighbour order is by distance, then by point index, so every result is a
deterministic function of the inputs.
"""
from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist

from ..errors import NumericalError, ShapeError, ValidationError
from .pca import Embedding

K_SWEEP = (5, 10, 25, 50)


def _points(e) -> np.ndarray:
    if isinstance(e, Embedding):
        return e.points
    x = np.asarray(e, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ShapeError(f"expected points as a 2-D array, got shape {x.shape}")
    return x


def pairwise_sqdist(x, y) -> np.ndarray:
    return cdist(_points(x), _points(y), "sqeuclidean")


def neighbor_order(d: np.ndarray, exclude_self: bool) -> np.ndarray:
    """Row-wise neighbour indices by (distance, index); the diagonal is dropped if asked."""
    order = np.argsort(d, axis=1, kind="stable")
    if not exclude_self:
        return order
    n = d.shape[0]
    keep = order != np.arange(n)[:, None]
    return order[keep].reshape(n, n - 1)


def median_bandwidth(real, neighbors: int = 25) -> float:
    """Median over points of the mean Euclidean distance to the ``neighbors`` nearest others."""
    x = _points(real)
    n = x.shape[0]
    if n <= neighbors:
        raise ValidationError(f"need more than {neighbors} points for the bandwidth, got {n}")
    d = np.sqrt(pairwise_sqdist(x, x))
    nb = neighbor_order(d, exclude_self=True)[:, :neighbors]
    avg = np.take_along_axis(d, nb, axis=1).mean(axis=1)
    return float(np.median(avg))


def mmd_gammas(omega: float) -> tuple:
    """Kernel precisions ``1 / (2**(i-2) * omega**2)`` for ``i = 1, 2, 3``."""
    return tuple(1.0 / (2.0 ** (i - 2) * omega**2) for i in (1, 2, 3))


def kernel_matrix(x, y, omega: float) -> np.ndarray:
    d2 = pairwise_sqdist(x, y)
    return sum(np.exp(-g * d2) for g in mmd_gammas(omega))


def mmd(gen, real, omega: float | None = None, neighbors: int = 25) -> float:
    """Biased (all-pairs, diagonal included) MMD with a three-Gaussian kernel.

    ``omega`` defaults to :func:`median_bandwidth` of ``real``.

    Raises:
        ValidationError: empty or unequal-size samples.
        NumericalError: the bandwidth is zero.
    """
    x, y = _points(gen), _points(real)
    if x.shape[0] == 0 or y.shape[0] == 0:
        raise ValidationError("MMD needs non-empty samples")
    if x.shape[0] != y.shape[0]:
        raise ValidationError(f"MMD needs equal sample sizes, got {x.shape[0]} and {y.shape[0]}")
    if x.shape[1] != y.shape[1]:
        raise ShapeError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    if omega is None:
        omega = median_bandwidth(y, neighbors)
    if not omega > 0:
        raise NumericalError(f"degenerate MMD bandwidth omega={omega!r}")
    val = kernel_matrix(x, x, omega).mean() - 2.0 * kernel_matrix(x, y, omega).mean() + kernel_matrix(y, y, omega).mean()
    return float(np.sqrt(max(val, 0.0)))


def _check_k(k: int, n: int, strict: bool = True) -> None:
    if k < 1 or (k >= n if strict else k > n):
        bound = f"< {n}" if strict else f"<= {n}"
        raise ValidationError(f"K must satisfy 1 <= K {bound}, got {k}")


def sknn(e: Embedding, k: int) -> float:
    """Mean fraction of each point's ``k`` nearest neighbours (self excluded) sharing its label."""
    x = _points(e)
    n = x.shape[0]
    _check_k(k, n)
    labels = np.asarray(e.labels)
    nb = neighbor_order(pairwise_sqdist(x, x), exclude_self=True)[:, :k]
    return float(np.mean(labels[nb] == labels[:, None]))


def delta_sknn(real: Embedding, gen: Embedding, k: int) -> float:
    return abs(sknn(gen, k) - sknn(real, k))


def knn_vote(real: Embedding, points, k: int) -> list:
    """Majority label among the ``k`` nearest real points for each query point.

    Vote ties go to the label with the smallest summed distance, then to the
    lexicographically smallest label.
    """
    xr = _points(real)
    q = _points(points)
    _check_k(k, xr.shape[0], strict=False)
    d = np.sqrt(pairwise_sqdist(q, xr))
    nb = neighbor_order(d, exclude_self=False)[:, :k]
    labels = np.asarray(real.labels)
    out = []
    for i in range(q.shape[0]):
        tally = {}
        for j in nb[i]:
            c, s = tally.get(labels[j], (0, 0.0))
            tally[labels[j]] = (c + 1, s + d[i, j])
        out.append(min(tally, key=lambda lab: (-tally[lab][0], tally[lab][1], lab)))
    return out


def pknn(real: Embedding, gen: Embedding, k: int) -> float:
    """Accuracy of a ``k``-NN classifier fit on ``real`` at predicting the labels of ``gen``."""
    if len(real) == 0 or len(gen) == 0:
        raise ValidationError("pKNN needs non-empty real and generated sets")
    pred = knn_vote(real, gen, k)
    return float(np.mean([p == t for p, t in zip(pred, gen.labels)]))
