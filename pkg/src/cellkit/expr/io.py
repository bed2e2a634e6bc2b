"""Readers and writers for count matrices and cell annotations.

Supported matrix formats:

* ``matrix-market`` -- coordinate format, integer field, cells on rows.
  Gene identifiers come from an explicit list, a ``<path>.genes`` file, or a
  ``genes.tsv``/``features.tsv`` next to the matrix (first column).
* ``dense-csv`` -- header row of gene identifiers, first column cell ids.
* ``native`` -- the ``CFX1`` binary layout (little-endian): magic, header
  ``(n_cells u64, n_genes u64, nnz u64)``, CSR ``indptr`` (u64), ``indices``
  (u32), ``data`` (u32), then each gene id as ``u32`` byte length + UTF-8.
"""
from __future__ import annotations

import csv
import math
import struct
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from ..errors import ParseError, ValidationError
from .matrix import CellAnnotations, Dataset, ExpressionMatrix, annotations_from_mapping

FORMATS = ("matrix-market", "dense-csv", "native")
_FORMAT_ALIASES = {"mtx": "matrix-market", "csv": "dense-csv", "cfx": "native"}
NATIVE_MAGIC = b"CFX1"
_U32_MAX = 2**32 - 1


def resolve_format(fmt: str) -> str:
    fmt = _FORMAT_ALIASES.get(fmt, fmt)
    if fmt not in FORMATS:
        raise ValidationError(f"unknown matrix format {fmt!r}; expected one of {FORMATS}")
    return fmt


def load_matrix(path, format: str = "native", genes=None) -> ExpressionMatrix:
    """Read a count matrix from ``path``.

    Raises:
        FileNotFoundError: ``path`` does not exist.
        ParseError: the file is malformed; the message carries a line or byte offset.
        ValidationError: a count is negative or fractional.
    """
    path = Path(path)
    fmt = resolve_format(format)
    if not path.is_file():
        raise FileNotFoundError(f"no such matrix file: {path}")
    if fmt == "matrix-market":
        return _read_mtx(path, genes)
    if fmt == "dense-csv":
        return _read_dense_csv(path)
    return _read_native(path)


def save_matrix(m: ExpressionMatrix, path, format: str = "native") -> None:
    path = Path(path)
    fmt = resolve_format(format)
    if fmt == "matrix-market":
        _write_mtx(m, path)
    elif fmt == "dense-csv":
        _write_dense_csv(m, path)
    else:
        _write_native(m, path)


# -- matrix market -------------------------------------------------------------


def _parse_count(token: str, line_no: int, what: str) -> int:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"non-numeric value {token!r} for {what}", line=line_no) from None
    if not math.isfinite(value) or value < 0 or value != math.floor(value):
        raise ValidationError(f"invalid count {token!r} for {what} (line {line_no}): counts must be non-negative integers")
    return int(value)


def _read_mtx(path: Path, genes) -> ExpressionMatrix:
    with path.open("r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty matrix-market file", line=1)
    header = lines[0].split()
    if len(header) < 4 or header[0].lower() != "%%matrixmarket" or header[1].lower() != "matrix":
        raise ParseError("missing %%MatrixMarket matrix header", line=1)
    if header[2].lower() != "coordinate":
        raise ParseError(f"unsupported matrix-market layout {header[2]!r}", line=1)
    if header[3].lower() not in ("integer", "real"):
        raise ParseError(f"unsupported matrix-market field {header[3]!r}", line=1)
    if len(header) > 4 and header[4].lower() != "general":
        raise ParseError(f"unsupported matrix-market symmetry {header[4]!r}", line=1)

    i = 1
    while i < len(lines) and (not lines[i].strip() or lines[i].lstrip().startswith("%")):
        i += 1
    if i == len(lines):
        raise ParseError("missing size line", line=i + 1)
    size = lines[i].split()
    if len(size) != 3:
        raise ParseError("size line must hold 'rows cols nnz'", line=i + 1)
    try:
        n_rows, n_cols, nnz = (int(t) for t in size)
    except ValueError:
        raise ParseError("size line must hold integers", line=i + 1) from None

    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz, dtype=np.int64)
    seen = set()
    k = 0
    for j in range(i + 1, len(lines)):
        text = lines[j].strip()
        if not text or text.startswith("%"):
            continue
        parts = text.split()
        if len(parts) != 3:
            raise ParseError("entry must hold 'row col value'", line=j + 1)
        if k >= nnz:
            raise ParseError(f"more entries than the declared {nnz}", line=j + 1)
        try:
            r, c = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError("non-integer coordinate", line=j + 1) from None
        if not (1 <= r <= n_rows and 1 <= c <= n_cols):
            raise ParseError(f"coordinate ({r}, {c}) outside {n_rows}x{n_cols}", line=j + 1)
        if (r, c) in seen:
            raise ParseError(f"duplicate entry ({r}, {c})", line=j + 1)
        seen.add((r, c))
        rows[k], cols[k] = r - 1, c - 1
        vals[k] = _parse_count(parts[2], j + 1, f"cell {r}, gene {c}")
        k += 1
    if k != nnz:
        raise ParseError(f"declared {nnz} entries but found {k}", line=len(lines))
    m = sp.coo_matrix((vals, (rows, cols)), shape=(n_rows, n_cols))
    return ExpressionMatrix(m, _resolve_genes(path, genes, n_cols))


def _resolve_genes(path: Path, genes, n_cols: int):
    if genes is None:
        candidates = [
            Path(str(path) + ".genes"),
            path.parent / "genes.tsv",
            path.parent / "features.tsv",
        ]
        genes = next((c for c in candidates if c.is_file()), None)
    if genes is None:
        return [f"gene_{j}" for j in range(n_cols)]
    if isinstance(genes, (str, Path)):
        with Path(genes).open(encoding="utf-8") as fh:
            genes = [ln.rstrip("\n").split("\t")[0] for ln in fh if ln.strip()]
    genes = list(genes)
    if len(genes) != n_cols:
        raise ParseError(f"gene list has {len(genes)} entries for {n_cols} matrix columns")
    return genes


def _write_mtx(m: ExpressionMatrix, path: Path) -> None:
    coo = m.csr.tocoo()
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("%%MatrixMarket matrix coordinate integer general\n")
        fh.write(f"{m.n_cells} {m.n_genes} {m.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r + 1} {c + 1} {v}\n")
    with Path(str(path) + ".genes").open("w", encoding="utf-8", newline="\n") as fh:
        for g in m.vocabulary:
            fh.write(f"{g}\n")


# -- dense csv -----------------------------------------------------------------


def _read_dense_csv(path: Path) -> ExpressionMatrix:
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty CSV file", line=1) from None
        if len(header) < 2:
            raise ParseError("header must hold a cell-id column and at least one gene", line=1)
        genes = header[1:]
        cell_ids, rows = [], []
        for row in reader:
            line_no = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, found {len(row)}", line=line_no)
            cid = row[0]
            cell_ids.append(cid)
            rows.append([_parse_count(tok, line_no, f"cell {cid!r}, gene {g!r}") for tok, g in zip(row[1:], genes)])
    if not rows:
        raise ParseError("CSV holds a header but no cells", line=2)
    return ExpressionMatrix(np.asarray(rows, dtype=np.int64), genes, cell_ids)


def _write_dense_csv(m: ExpressionMatrix, path: Path) -> None:
    ids = m.cell_ids or [f"cell_{i}" for i in range(m.n_cells)]
    dense = m.to_dense()
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_id", *m.vocabulary])
        for cid, row in zip(ids, dense):
            w.writerow([cid, *row.tolist()])


# -- native --------------------------------------------------------------------


def _write_native(m: ExpressionMatrix, path: Path) -> None:
    csr = m.csr
    if csr.nnz and int(csr.data.max()) > _U32_MAX:
        raise ValidationError("count exceeds the u32 range of the native format")
    with path.open("wb") as fh:
        fh.write(NATIVE_MAGIC)
        fh.write(struct.pack("<QQQ", m.n_cells, m.n_genes, m.nnz))
        fh.write(csr.indptr.astype("<u8").tobytes())
        fh.write(csr.indices.astype("<u4").tobytes())
        fh.write(csr.data.astype("<u4").tobytes())
        for g in m.vocabulary:
            raw = g.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)


def _read_native(path: Path) -> ExpressionMatrix:
    buf = path.read_bytes()
    if len(buf) < 4 or buf[:4] != NATIVE_MAGIC:
        raise ParseError("missing CFX1 magic", offset=0)
    pos = 4

    def take(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise ParseError(f"truncated file while reading {what}", offset=pos)
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    n_cells, n_genes, nnz = struct.unpack("<QQQ", take(24, "header"))
    indptr = np.frombuffer(take(8 * (n_cells + 1), "row offsets"), dtype="<u8").astype(np.int64)
    indices = np.frombuffer(take(4 * nnz, "column indices"), dtype="<u4").astype(np.int64)
    data = np.frombuffer(take(4 * nnz, "values"), dtype="<u4").astype(np.int64)
    genes = []
    for _ in range(n_genes):
        (n,) = struct.unpack("<I", take(4, "gene id length"))
        try:
            genes.append(take(n, "gene id").decode("utf-8"))
        except UnicodeDecodeError:
            raise ParseError("gene id is not valid UTF-8", offset=pos - n) from None
    if pos != len(buf):
        raise ParseError("trailing bytes after gene identifiers", offset=pos)
    if indptr[0] != 0 or indptr[-1] != nnz or np.any(np.diff(indptr) < 0):
        raise ParseError("inconsistent row offsets", offset=28)
    if nnz and indices.max() >= n_genes:
        raise ParseError("column index out of range", offset=28 + 8 * (n_cells + 1))
    for r in range(n_cells):
        seg = indices[indptr[r]:indptr[r + 1]]
        if np.any(np.diff(seg) <= 0):
            raise ParseError(f"row {r} column indices not strictly increasing")
    m = sp.csr_matrix((data, indices, indptr), shape=(n_cells, n_genes))
    return ExpressionMatrix(m, genes)


# -- annotations ---------------------------------------------------------------

ANNOTATION_COLUMNS = ("cell_id", "label", "species", "tissue")


def load_annotations(path):
    """Read an annotation CSV.

    Returns ``(CellAnnotations, split)`` where ``split`` is a tuple of tags
    when the file carries a ``split`` column, else ``None``.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such annotation file: {path}")
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ParseError("empty annotation file", line=1)
        missing = [c for c in ANNOTATION_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise ParseError(f"annotation CSV lacks columns {missing}", line=1)
        rows = [dict(r) for r in reader]
    split = tuple(r["split"] for r in rows) if "split" in reader.fieldnames else None
    return annotations_from_mapping(rows), split


def save_annotations(ann: CellAnnotations, path, split=None) -> None:
    ids = ann.cell_ids or [f"cell_{i}" for i in range(len(ann))]
    extra_keys = sorted({k for e in ann.extra for k in e}) if ann.extra else []
    cols = list(ANNOTATION_COLUMNS) + (["split"] if split is not None else []) + extra_keys
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i in range(len(ann)):
            row = [ids[i], ann.labels[i], ann.species[i], ann.tissue[i]]
            if split is not None:
                row.append(split[i])
            if extra_keys:
                row.extend(ann.extra[i].get(k, "") for k in extra_keys)
            w.writerow(row)


def save_dataset(d: Dataset, directory) -> dict:
    """Write ``matrix.cfx`` and ``annotations.csv`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {"matrix": directory / "matrix.cfx", "annotations": directory / "annotations.csv"}
    _write_native(d.matrix, paths["matrix"])
    ann = d.annotations
    if ann.cell_ids is None and d.matrix.cell_ids is not None:
        ann = CellAnnotations(ann.labels, ann.species, ann.tissue, d.matrix.cell_ids, ann.extra)
    save_annotations(ann, paths["annotations"], d.split)
    return paths


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    m = _read_native_checked(directory / "matrix.cfx")
    ann, split = load_annotations(directory / "annotations.csv")
    if ann.cell_ids is not None:
        m = ExpressionMatrix(m.csr, m.vocabulary, ann.cell_ids)
    return Dataset(m, ann, split)


def _read_native_checked(path: Path) -> ExpressionMatrix:
    if not path.is_file():
        raise FileNotFoundError(f"no such matrix file: {path}")
    return _read_native(path)
