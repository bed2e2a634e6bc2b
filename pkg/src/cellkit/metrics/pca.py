"""Principal component analysis by symmetric eigendecomposition of the covariance."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ..errors import ShapeError, ValidationError


@dataclass(frozen=True)
class PcaModel:
    components: np.ndarray  # (k, n_features), orthonormal rows
    means: np.ndarray
    explained_variance: np.ndarray
    total_variance: float

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        if self.total_variance == 0:
            return np.zeros_like(self.explained_variance)
        return self.explained_variance / self.total_variance


@dataclass(frozen=True)
class Embedding:
    points: np.ndarray
    labels: tuple

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2:
            raise ShapeError(f"embedding points must be 2-D, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("embedding contains non-finite coordinates")
        labels = tuple(str(x) for x in self.labels)
        if len(labels) != pts.shape[0]:
            raise ShapeError(f"{len(labels)} labels for {pts.shape[0]} points")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.points.shape[0]


def pca_fit(x, k: int) -> PcaModel:
    """Top-``k`` principal axes of ``x`` (cells x features).

    Each axis is flipped so that its largest-magnitude loading is positive
    (first such index on ties).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {x.shape}")
    n, p = x.shape
    if not 0 < k < n:
        raise ValidationError(f"k must satisfy 0 < k < n_cells ({n}), got {k}")
    if k > p:
        raise ValidationError(f"k={k} exceeds the number of features ({p})")
    means = x.mean(axis=0)
    xc = x - means
    cov = xc.T @ xc / (n - 1)
    vals, vecs = linalg.eigh(cov, subset_by_index=[p - k, p - 1])
    order = np.argsort(-vals, kind="stable")
    vals, vecs = np.clip(vals[order], 0.0, None), vecs[:, order].T.copy()
    lead = np.argmax(np.abs(vecs), axis=1)
    signs = np.sign(vecs[np.arange(k), lead])
    vecs *= np.where(signs == 0, 1.0, signs)[:, None]
    return PcaModel(vecs, means, vals, float(np.trace(cov)))


def pca_transform(model: PcaModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != model.means.shape[0]:
        raise ShapeError(f"expected {model.means.shape[0]} columns, got {x.shape[1]}")
    return (x - model.means) @ model.components.T
