"""Core single-cell data containers.

All containers are frozen after construction. Count matrices are held as
canonical CSR (sorted indices, no duplicates, no stored zeros) with the
backing arrays marked read-only.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from ..errors import ShapeError, ValidationError

SPLIT_TAGS = ("train", "valid", "test")


class GeneVocabulary:
    """Ordered, duplicate-free list of gene identifiers."""

    __slots__ = ("_genes", "_index")

    def __init__(self, genes: Iterable[str]):
        genes = tuple(str(g) for g in genes)
        index = {}
        for i, g in enumerate(genes):
            if g in index:
                raise ValidationError(f"duplicate gene identifier {g!r} at position {i}")
            index[g] = i
        self._genes = genes
        self._index = index

    @property
    def genes(self) -> tuple:
        return self._genes

    def index_of(self, gene: str) -> int:
        return self._index[gene]

    def __contains__(self, gene) -> bool:
        return gene in self._index

    def __len__(self) -> int:
        return len(self._genes)

    def __iter__(self):
        return iter(self._genes)

    def __getitem__(self, i):
        return self._genes[i]

    def __eq__(self, other) -> bool:
        return isinstance(other, GeneVocabulary) and self._genes == other._genes

    def __hash__(self):
        return hash(self._genes)

    def __repr__(self):
        return f"GeneVocabulary(n={len(self)})"

    def digest(self) -> str:
        """SHA-256 over the newline-joined identifiers."""
        return hashlib.sha256("\n".join(self._genes).encode("utf-8")).hexdigest()


def _canonical_csr(counts) -> sp.csr_matrix:
    if sp.issparse(counts):
        m = sp.csr_matrix(counts, copy=True)
    else:
        arr = np.asarray(counts)
        if arr.ndim != 2:
            raise ShapeError(f"count matrix must be 2-D, got shape {arr.shape}")
        m = sp.csr_matrix(arr)
    data = np.asarray(m.data)
    if data.size:
        if not np.all(np.isfinite(data)):
            raise ValidationError("count matrix contains non-finite values")
        if np.any(data < 0):
            raise ValidationError("count matrix contains negative values")
        if np.any(data != np.floor(data)):
            raise ValidationError("count matrix contains fractional values")
    m = sp.csr_matrix((data.astype(np.int64), m.indices, m.indptr), shape=m.shape)
    m.sum_duplicates()
    m.eliminate_zeros()
    m.sort_indices()
    m.indptr = m.indptr.astype(np.int64)
    m.indices = m.indices.astype(np.int64)
    for arr in (m.data, m.indices, m.indptr):
        arr.flags.writeable = False
    return m


class ExpressionMatrix:
    """Cell-by-gene matrix of non-negative integer counts.

    Args:
        counts: dense array or scipy sparse matrix, cells along rows.
        vocabulary: gene identifiers for the columns. Plain sequences are
            wrapped in a :class:`GeneVocabulary`.
        cell_ids: optional per-row identifiers.
    """

    __slots__ = ("_csr", "_vocab", "_cell_ids")

    def __init__(self, counts, vocabulary, cell_ids: Sequence[str] | None = None):
        csr = _canonical_csr(counts)
        if not isinstance(vocabulary, GeneVocabulary):
            vocabulary = GeneVocabulary(vocabulary)
        if csr.shape[1] != len(vocabulary):
            raise ShapeError(
                f"matrix has {csr.shape[1]} gene columns but vocabulary has {len(vocabulary)} genes"
            )
        if cell_ids is not None:
            cell_ids = tuple(str(c) for c in cell_ids)
            if len(cell_ids) != csr.shape[0]:
                raise ShapeError(f"{len(cell_ids)} cell ids for {csr.shape[0]} cells")
        self._csr = csr
        self._vocab = vocabulary
        self._cell_ids = cell_ids

    @property
    def n_cells(self) -> int:
        return self._csr.shape[0]

    @property
    def n_genes(self) -> int:
        return self._csr.shape[1]

    @property
    def nnz(self) -> int:
        return self._csr.nnz

    @property
    def vocabulary(self) -> GeneVocabulary:
        return self._vocab

    @property
    def cell_ids(self):
        return self._cell_ids

    @property
    def csr(self) -> sp.csr_matrix:
        """Read-only canonical CSR view."""
        return self._csr

    def row(self, i: int):
        """Return ``(gene_indices, counts)`` of the stored entries in cell ``i``."""
        lo, hi = self._csr.indptr[i], self._csr.indptr[i + 1]
        return self._csr.indices[lo:hi], self._csr.data[lo:hi]

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    def totals(self) -> np.ndarray:
        return np.asarray(self._csr.sum(axis=1)).ravel()

    def genes_per_cell(self) -> np.ndarray:
        return np.diff(self._csr.indptr)

    def cells_per_gene(self) -> np.ndarray:
        return np.bincount(self._csr.indices, minlength=self.n_genes)

    def subset(self, cells=None, genes=None) -> "ExpressionMatrix":
        """Select rows and/or columns by integer index or boolean mask."""
        m = self._csr
        ids = self._cell_ids
        vocab = self._vocab
        if cells is not None:
            cells = _as_index(cells, self.n_cells)
            m = m[cells]
            if ids is not None:
                ids = [ids[i] for i in cells]
        if genes is not None:
            genes = _as_index(genes, self.n_genes)
            m = m[:, genes]
            vocab = GeneVocabulary(vocab[i] for i in genes)
        return ExpressionMatrix(m, vocab, ids)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ExpressionMatrix):
            return NotImplemented
        a, b = self._csr, other._csr
        return (
            a.shape == b.shape
            and self._vocab == other._vocab
            and np.array_equal(a.indptr, b.indptr)
            and np.array_equal(a.indices, b.indices)
            and np.array_equal(a.data, b.data)
        )

    __hash__ = None

    def __repr__(self):
        return f"ExpressionMatrix(n_cells={self.n_cells}, n_genes={self.n_genes}, nnz={self.nnz})"


def _as_index(sel, n) -> np.ndarray:
    sel = np.asarray(sel)
    if sel.dtype == bool:
        if sel.shape != (n,):
            raise ShapeError(f"boolean mask of length {sel.shape} for axis of length {n}")
        return np.flatnonzero(sel)
    return sel.astype(np.int64).ravel()


@dataclass(frozen=True)
class CellAnnotations:
    labels: tuple
    species: tuple
    tissue: tuple
    cell_ids: tuple | None = None
    extra: tuple = ()  # per-cell dicts

    def __post_init__(self):
        n = len(self.labels)
        object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))
        for name in ("species", "tissue"):
            vals = tuple(str(x) for x in getattr(self, name))
            if len(vals) != n:
                raise ShapeError(f"{name} has {len(vals)} entries for {n} cells")
            object.__setattr__(self, name, vals)
        if self.cell_ids is not None:
            ids = tuple(str(x) for x in self.cell_ids)
            if len(ids) != n:
                raise ShapeError(f"cell_ids has {len(ids)} entries for {n} cells")
            object.__setattr__(self, "cell_ids", ids)
        if self.extra:
            if len(self.extra) != n:
                raise ShapeError(f"extra has {len(self.extra)} entries for {n} cells")
            object.__setattr__(self, "extra", tuple(dict(e) for e in self.extra))

    @classmethod
    def uniform(cls, labels, species="human", tissue="unknown", cell_ids=None):
        n = len(labels)
        return cls(tuple(labels), (species,) * n, (tissue,) * n, cell_ids)

    def __len__(self):
        return len(self.labels)

    def conditions(self) -> list:
        """Per-cell ``(label, species, tissue)`` tuples."""
        return list(zip(self.labels, self.species, self.tissue))

    def subset(self, idx) -> "CellAnnotations":
        idx = list(_as_index(idx, len(self)))
        pick = lambda seq: tuple(seq[i] for i in idx)
        return CellAnnotations(
            pick(self.labels),
            pick(self.species),
            pick(self.tissue),
            pick(self.cell_ids) if self.cell_ids is not None else None,
            pick(self.extra) if self.extra else (),
        )


@dataclass(frozen=True)
class Dataset:
    matrix: ExpressionMatrix
    annotations: CellAnnotations
    split: tuple | None = None

    def __post_init__(self):
        n = self.matrix.n_cells
        if len(self.annotations) != n:
            raise ShapeError(f"{len(self.annotations)} annotations for {n} cells")
        if self.split is not None:
            split = tuple(self.split)
            if len(split) != n:
                raise ShapeError(f"split has {len(split)} tags for {n} cells")
            bad = set(split) - set(SPLIT_TAGS)
            if bad:
                raise ValidationError(f"unknown split tags {sorted(bad)}")
            object.__setattr__(self, "split", split)

    @property
    def n_cells(self) -> int:
        return self.matrix.n_cells

    def subset(self, idx) -> "Dataset":
        idx = _as_index(idx, self.n_cells)
        split = None if self.split is None else tuple(self.split[i] for i in idx)
        return Dataset(self.matrix.subset(cells=idx), self.annotations.subset(idx), split)

    def select_split(self, tag: str) -> "Dataset":
        """Cells tagged ``tag``; a dataset without split tags counts as all-train."""
        if self.split is None:
            if tag == "train":
                return self
            return self.subset(np.zeros(0, dtype=np.int64))
        return self.subset([i for i, t in enumerate(self.split) if t == tag])

    def with_split(self, split) -> "Dataset":
        return Dataset(self.matrix, self.annotations, tuple(split))


def annotations_from_mapping(rows: Sequence[Mapping[str, str]]) -> CellAnnotations:
    core = {"cell_id", "label", "species", "tissue", "split"}
    return CellAnnotations(
        labels=[r["label"] for r in rows],
        species=[r.get("species", "") for r in rows],
        tissue=[r.get("tissue", "") for r in rows],
        cell_ids=[r["cell_id"] for r in rows] if rows and "cell_id" in rows[0] else None,
        extra=[{k: v for k, v in r.items() if k not in core} for r in rows]
        if rows and set(rows[0]) - core
        else (),
    )
