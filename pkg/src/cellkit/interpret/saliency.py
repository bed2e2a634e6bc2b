"""Masked input-gradient saliency and per-class aggregation."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError


@dataclass(frozen=True)
class SaliencyResult:
    classes: tuple
    scores: np.ndarray  # (n_classes, n_genes), mean normalized score
    top: tuple  # per class: gene indices, best first
    n_cells: tuple

    def top_genes(self, cls, genes=None) -> list:
        idx = self.top[self.classes.index(cls)]
        return list(idx) if genes is None else [genes[i] for i in idx]

    def to_tsv(self, genes=None) -> str:
        lines = ["class\trank\tgene\tscore"]
        for c, cls in enumerate(self.classes):
            for r, j in enumerate(self.top[c], start=1):
                name = genes[j] if genes is not None else str(j)
                lines.append(f"{cls}\t{r}\t{name}\t{self.scores[c, j]:.12g}")
        return "\n".join(lines) + "\n"


def gene_mask(g, s, gene_set=None) -> np.ndarray:
    """True where the gene is in ``gene_set``, its gradient is negative and it is expressed."""
    g = np.asarray(g, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if g.shape != s.shape:
        raise ShapeError(f"gradient shape {g.shape} != expression shape {s.shape}")
    m = (g < 0) & (s > 0)
    if gene_set is not None:
        in_g = np.zeros(g.shape[-1], dtype=bool)
        in_g[np.asarray(list(gene_set), dtype=np.int64)] = True
        m &= in_g
    return m


def saliency_scores(g, s, gene_set=None) -> np.ndarray:
    """``-g * mask``, min-max scaled over the whole vector; all zeros if it is constant."""
    o = np.where(gene_mask(g, s, gene_set), -np.asarray(g, dtype=np.float64), 0.0)
    lo, hi = o.min(), o.max()
    if hi == lo:
        return np.zeros_like(o)
    return (o - lo) / (hi - lo)


def aggregate_top_genes(scores, labels, n: int = 10, classes=None) -> SaliencyResult:
    """Average per-cell scores within each class and keep the ``n`` best genes.

    Ties are broken by ascending gene index. Classes listed in ``classes``
    without any cell are dropped with a warning.
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    labels = list(labels)
    if len(labels) != scores.shape[0]:
        raise ShapeError(f"{len(labels)} labels for {scores.shape[0]} score rows")
    classes = sorted(set(labels)) if classes is None else list(classes)
    kept, rows, tops, counts = [], [], [], []
    lab = np.asarray(labels, dtype=object)
    for cls in classes:
        sel = lab == cls
        if not sel.any():
            warnings.warn(f"class {cls!r} has no cells; omitted from saliency", stacklevel=2)
            continue
        mean = scores[sel].mean(axis=0)
        order = np.lexsort((np.arange(mean.size), -mean))
        kept.append(cls)
        rows.append(mean)
        tops.append(tuple(int(i) for i in order[:n]))
        counts.append(int(sel.sum()))
    mat = np.vstack(rows) if rows else np.zeros((0, scores.shape[1]))
    return SaliencyResult(tuple(kept), mat, tuple(tops), tuple(counts))
