"""Quality control, normalization, gene selection and dataset splitting."""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from ..errors import EmptyResultError, ValidationError
from ..numkit.rng import RngStream
from .matrix import SPLIT_TAGS, Dataset, ExpressionMatrix, GeneVocabulary

DEFAULT_MITO_PREFIXES = ("MT-", "mt-")


@dataclass
class QcReport:
    cells_in: int
    genes_in: int
    cells_removed_low_genes: int = 0
    cells_removed_aberrant: int = 0
    cells_removed_mito: int = 0
    cells_removed_total_counts: int = 0
    genes_removed: int = 0
    rounds: int = 0
    thresholds: dict = field(default_factory=dict)

    @property
    def cells_out(self) -> int:
        return self.cells_in - self.cells_removed_low_genes - self.cells_removed_aberrant

    @property
    def genes_out(self) -> int:
        return self.genes_in - self.genes_removed

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cells_out"] = self.cells_out
        d["genes_out"] = self.genes_out
        return d


def resolve_total_count_threshold(m: ExpressionMatrix, spec) -> float:
    """Turn a total-count threshold spec into a number.

    ``None`` disables the rule; a number is used as is; a string ``"pNN.N"``
    is the NN.N-th percentile of per-cell totals, taken as an observed value
    (``method="higher"``) so small inputs never lose their largest cell to
    interpolation.
    """
    if spec is None:
        return math.inf
    if isinstance(spec, str):
        s = spec.strip().lower()
        if s in ("none", "inf", ""):
            return math.inf
        if not s.startswith("p"):
            return float(s)
        q = float(s[1:])
        if not 0 <= q <= 100:
            raise ValidationError(f"percentile {q} outside [0, 100]")
        if m.n_cells == 0:
            return math.inf
        return float(np.percentile(m.totals(), q, method="higher"))
    return float(spec)


def qc_filter(
    m: ExpressionMatrix,
    min_genes_per_cell: int = 200,
    min_cells_per_gene: int = 8,
    mito_prefixes: Sequence[str] = DEFAULT_MITO_PREFIXES,
    max_mito_fraction: float = 0.2,
    max_total_counts="p99.5",
):
    """Remove low-quality cells, then rarely detected genes.

    Cell rules run first: fewer than ``min_genes_per_cell`` detected genes,
    then mitochondrial fraction above ``max_mito_fraction`` or total counts
    above ``max_total_counts``. Genes detected in fewer than
    ``min_cells_per_gene`` surviving cells are dropped afterwards. Dropping
    genes can push a cell back under the gene threshold, so the two passes
    repeat until nothing changes; the result is a fixed point of the rules.

    Returns:
        ``(filtered_matrix, QcReport)``.

    Raises:
        EmptyResultError: every cell was removed (``err.report`` is filled).
    """
    for name, v in (("min_genes_per_cell", min_genes_per_cell), ("min_cells_per_gene", min_cells_per_gene),
                    ("max_mito_fraction", max_mito_fraction)):
        if v < 0:
            raise ValidationError(f"{name} must be non-negative, got {v}")
    total_cap = resolve_total_count_threshold(m, max_total_counts)
    if total_cap < 0:
        raise ValidationError(f"max_total_counts must be non-negative, got {total_cap}")
    prefixes = tuple(mito_prefixes or ())
    report = QcReport(
        cells_in=m.n_cells,
        genes_in=m.n_genes,
        thresholds={
            "min_genes_per_cell": int(min_genes_per_cell),
            "min_cells_per_gene": int(min_cells_per_gene),
            "mito_prefixes": list(prefixes),
            "max_mito_fraction": float(max_mito_fraction),
            "max_total_counts": None if math.isinf(total_cap) else total_cap,
        },
    )

    cur = m
    while True:
        report.rounds += 1
        changed = False
        low = cur.genes_per_cell() < min_genes_per_cell
        if low.any():
            report.cells_removed_low_genes += int(low.sum())
            cur = cur.subset(cells=~low)
            changed = True
        if cur.n_cells == 0:
            raise EmptyResultError("quality control removed every cell", report)

        totals = cur.totals()
        mito_cols = np.array([g.startswith(prefixes) for g in cur.vocabulary], dtype=bool) if prefixes else None
        if mito_cols is not None and mito_cols.any():
            mito = np.asarray(cur.csr[:, np.flatnonzero(mito_cols)].sum(axis=1)).ravel()
            with np.errstate(invalid="ignore", divide="ignore"):
                frac = np.where(totals > 0, mito / np.maximum(totals, 1), 0.0)
            bad_mito = frac > max_mito_fraction
        else:
            bad_mito = np.zeros(cur.n_cells, dtype=bool)
        bad_total = totals > total_cap
        aberrant = bad_mito | bad_total
        if aberrant.any():
            report.cells_removed_mito += int(bad_mito.sum())
            report.cells_removed_total_counts += int((bad_total & ~bad_mito).sum())
            report.cells_removed_aberrant += int(aberrant.sum())
            cur = cur.subset(cells=~aberrant)
            changed = True
        if cur.n_cells == 0:
            raise EmptyResultError("quality control removed every cell", report)

        rare = cur.cells_per_gene() < min_cells_per_gene
        if rare.any():
            report.genes_removed += int(rare.sum())
            cur = cur.subset(genes=~rare)
            changed = True
        if not changed:
            break
    return cur, report


def normalize_log1p(m: ExpressionMatrix, target_sum: float = 1e4) -> np.ndarray:
    """Scale every cell to ``target_sum`` total counts, then apply log1p.

    Returns a dense float64 array of shape ``(n_cells, n_genes)``.
    """
    if not target_sum > 0:
        raise ValidationError(f"target_sum must be positive, got {target_sum}")
    totals = m.totals()
    zero = np.flatnonzero(totals == 0)
    if zero.size:
        raise ValidationError(f"cell {int(zero[0])} has zero total count and cannot be normalized")
    return log1p_scaled(m.to_dense(), totals, target_sum)


def log1p_scaled(dense: np.ndarray, totals: np.ndarray, target_sum: float) -> np.ndarray:
    dense = np.asarray(dense, dtype=np.float64)
    return np.log1p(dense * (target_sum / np.asarray(totals, dtype=np.float64))[:, None])


def hvg_scores(m: ExpressionMatrix, n_bins: int = 20, target_sum: float = 1e4) -> np.ndarray:
    """Binned normalized dispersion of every gene.

    Dispersion is variance over mean of the log1p-normalized values. Genes
    are placed into ``n_bins`` equal-frequency bins by mean (ranked by mean,
    ties by gene index) and dispersions are z-scored within each bin. Bins
    with fewer than two genes or zero spread score 0.
    """
    x = normalize_log1p(m, target_sum)
    n_genes = x.shape[1]
    mean = x.mean(axis=0)
    var = x.var(axis=0, ddof=1) if x.shape[0] > 1 else np.zeros(n_genes)
    disp = np.zeros(n_genes)
    pos = mean > 0
    disp[pos] = var[pos] / mean[pos]

    order = np.lexsort((np.arange(n_genes), mean))
    bins = np.empty(n_genes, dtype=np.int64)
    bins[order] = (np.arange(n_genes) * n_bins) // n_genes
    z = np.zeros(n_genes)
    for b in range(n_bins):
        members = np.flatnonzero(bins == b)
        if members.size < 2:
            continue
        d = disp[members]
        sd = d.std(ddof=1)
        if sd > 0:
            z[members] = (d - d.mean()) / sd
    return z


def select_hvg(m: ExpressionMatrix, n_top: int = 3600, n_bins: int = 20) -> list:
    """Indices of the ``n_top`` most variable genes, best first."""
    if n_top > m.n_genes:
        raise ValidationError(f"n_top={n_top} exceeds the {m.n_genes} available genes")
    if n_top < 0:
        raise ValidationError(f"n_top must be non-negative, got {n_top}")
    z = hvg_scores(m, n_bins)
    order = np.lexsort((np.arange(m.n_genes), -z))
    return [int(i) for i in order[:n_top]]


def build_vocabulary(hvg_sets: Iterable[Iterable[str]]) -> GeneVocabulary:
    """Sorted union of per-dataset gene identifier sets."""
    sets = [set(s) for s in hvg_sets]
    if not any(sets):
        raise ValidationError("at least one non-empty gene set is required")
    return GeneVocabulary(sorted(set().union(*sets)))


def apply_ortholog_map(m: ExpressionMatrix, mapping: Mapping[str, str]):
    """Rename genes through ``mapping``; unmapped genes keep their identifier.

    Columns that end up with the same identifier are summed per cell. The
    output keeps first-occurrence order of the new identifiers.

    Returns:
        ``(matrix, warnings)`` where ``warnings`` lists every merged target.
    """
    new_names = [mapping.get(g, g) for g in m.vocabulary]
    out_index: dict = {}
    for name in new_names:
        out_index.setdefault(name, len(out_index))
    notes = []
    if len(out_index) != len(new_names):
        groups: dict = {}
        for g, name in zip(m.vocabulary, new_names):
            groups.setdefault(name, []).append(g)
        for name, sources in groups.items():
            if len(sources) > 1:
                retained = [s for s in sources if s not in mapping]
                kind = "conflicts with retained gene" if retained else "merges mapped genes"
                notes.append(f"{name}: {kind}; summed counts of {', '.join(sources)}")
    col_map = np.array([out_index[n] for n in new_names], dtype=np.int64)
    proj = sp.csr_matrix(
        (np.ones(m.n_genes, dtype=np.int64), (np.arange(m.n_genes), col_map)),
        shape=(m.n_genes, len(out_index)),
    )
    merged = m.csr @ proj
    return ExpressionMatrix(merged, list(out_index), m.cell_ids), notes


def align_to_vocabulary(m: ExpressionMatrix, vocab: GeneVocabulary) -> ExpressionMatrix:
    """Reindex columns onto ``vocab``; genes missing from ``m`` become zero columns."""
    cols = [vocab.index_of(g) if g in vocab else -1 for g in m.vocabulary]
    keep = np.array([c >= 0 for c in cols], dtype=bool)
    src = np.flatnonzero(keep)
    dst = np.array([c for c in cols if c >= 0], dtype=np.int64)
    proj = sp.csr_matrix(
        (np.ones(src.size, dtype=np.int64), (src, dst)), shape=(m.n_genes, len(vocab))
    )
    return ExpressionMatrix(m.csr @ proj, vocab, m.cell_ids)


def _check_ratios(ratios) -> tuple:
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3:
        raise ValidationError(f"expected three split ratios, got {len(ratios)}")
    if any(not r > 0 for r in ratios):
        raise ValidationError(f"split ratios must all be positive, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError(f"split ratios must sum to 1, got {sum(ratios)!r}")
    return ratios


def split_counts(n: int, ratios) -> tuple:
    """Per-split sizes: floor for valid/test, remainder to train."""
    ratios = _check_ratios(ratios)
    n_valid = math.floor(n * ratios[1] + 1e-9)
    n_test = math.floor(n * ratios[2] + 1e-9)
    return n - n_valid - n_test, n_valid, n_test


def assign_splits(n: int, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> tuple:
    """Seeded shuffle of ``n`` items into train/valid/test tags."""
    if n < 3:
        raise ValidationError(f"need at least 3 items to split, got {n}")
    n_train, n_valid, _ = split_counts(n, ratios)
    perm = RngStream(seed).permutation(n)
    tags = np.empty(n, dtype=object)
    tags[perm[:n_train]] = SPLIT_TAGS[0]
    tags[perm[n_train:n_train + n_valid]] = SPLIT_TAGS[1]
    tags[perm[n_train + n_valid:]] = SPLIT_TAGS[2]
    return tuple(tags.tolist())


def split_dataset(d: Dataset, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> Dataset:
    return d.with_split(assign_splits(d.n_cells, ratios, seed))


def drop_rare_labels(d: Dataset, min_cells: int = 20) -> Dataset:
    """Drop cells whose label occurs fewer than ``min_cells`` times."""
    labels = d.annotations.labels
    counts: dict = {}
    for lab in labels:
        counts[lab] = counts.get(lab, 0) + 1
    rare = sorted(lab for lab, c in counts.items() if c < min_cells)
    if rare:
        warnings.warn(f"dropping rare labels (<{min_cells} cells): {', '.join(rare)}", stacklevel=2)
    keep = [i for i, lab in enumerate(labels) if counts[lab] >= min_cells]
    return d.subset(keep)
