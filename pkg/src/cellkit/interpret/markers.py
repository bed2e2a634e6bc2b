"""Welch's t-test and one-vs-rest marker ranking."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from ..errors import ValidationError
from ..expr.matrix import Dataset
from ..expr.preprocess import normalize_log1p


@dataclass(frozen=True)
class WelchResult:
    t: float
    df: float
    p: float


def welch_arrays(a, b, axis=0) -> tuple:
    """Column-wise Welch test of ``a`` against ``b``; returns ``(t, df, p)`` arrays.

    When both sample variances vanish, equal means give ``t = 0, p = 1`` and
    unequal means give ``t = +/-inf, p = 0``; ``df`` is then ``n_a + n_b - 2``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = a.shape[axis], b.shape[axis]
    if na < 2 or nb < 2:
        raise ValidationError(f"Welch's test needs at least two values per group, got {na} and {nb}")
    ma, mb = a.mean(axis=axis), b.mean(axis=axis)
    va, vb = a.var(axis=axis, ddof=1), b.var(axis=axis, ddof=1)
    qa, qb = va / na, vb / nb
    se2 = qa + qb
    diff = ma - mb
    degenerate = se2 == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        t = diff / np.sqrt(se2)
        # scale by the larger term so tiny variances cannot underflow to 0/0
        s = np.maximum(qa, qb)
        ra, rb = qa / s, qb / s
        df = (ra + rb) ** 2 / (ra**2 / (na - 1) + rb**2 / (nb - 1))
    t = np.where(degenerate, np.where(diff == 0, 0.0, np.copysign(np.inf, diff)), t)
    df = np.where(degenerate, float(na + nb - 2), df)
    with np.errstate(invalid="ignore"):
        p = special.betainc(df / 2.0, 0.5, df / (df + t * t))
    p = np.where(np.isinf(t), 0.0, p)
    return t, df, np.clip(p, 0.0, 1.0)


def welch_t(a, b) -> WelchResult:
    """Two-sided Welch's t-test for two 1-D samples."""
    t, df, p = welch_arrays(np.ravel(a), np.ravel(b))
    return WelchResult(float(t), float(df), float(p))


@dataclass(frozen=True)
class MarkerRow:
    gene: str
    index: int
    t: float
    df: float
    p: float
    mean_in: float
    frac_in: float


@dataclass(frozen=True)
class MarkerTable:
    cls: str
    rows: tuple

    def top(self, k: int) -> "MarkerTable":
        return MarkerTable(self.cls, self.rows[:k])

    def genes(self) -> list:
        return [r.gene for r in self.rows]

    def to_tsv(self, header: bool = True) -> str:
        out = ["gene\tclass\trank\tt\tdf\tp\tmean\tfraction"] if header else []
        for rank, r in enumerate(self.rows, start=1):
            out.append(f"{r.gene}\t{self.cls}\t{rank}\t{r.t:.12g}\t{r.df:.12g}\t{r.p:.12g}\t{r.mean_in:.12g}\t{r.frac_in:.12g}")
        return "\n".join(out) + "\n"


def rank_markers(d: Dataset, cls: str, top_k: int | None = 3, target_sum: float = 1e4,
                 expr: np.ndarray | None = None) -> MarkerTable:
    """Rank genes for ``cls`` against all other cells by Welch's test.

    Order: p ascending, then |t| descending, then gene index. ``expr`` may
    pass a precomputed log1p-normalized matrix.
    """
    labels = np.asarray(d.annotations.labels, dtype=object)
    sel = labels == cls
    if not sel.any():
        raise ValidationError(f"class {cls!r} is not present in the annotations")
    x = normalize_log1p(d.matrix, target_sum) if expr is None else expr
    # gene-major copies: each gene reduces over a contiguous row, exactly as a 1-D sample would
    a, b = np.ascontiguousarray(x[sel].T), np.ascontiguousarray(x[~sel].T)
    t, df, p = welch_arrays(a, b, axis=1)
    order = np.lexsort((np.arange(t.size), -np.abs(t), p))
    if top_k is not None:
        order = order[:top_k]
    genes = d.matrix.vocabulary.genes
    mean_in = a.mean(axis=1)
    frac_in = (a > 0).mean(axis=1)
    rows = tuple(
        MarkerRow(genes[j], int(j), float(t[j]), float(df[j]), float(p[j]), float(mean_in[j]), float(frac_in[j]))
        for j in order
    )
    return MarkerTable(cls, rows)
