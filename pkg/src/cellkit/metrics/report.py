"""Evaluation of generated cells against real cells in a shared PCA space."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from ..expr.matrix import Dataset
from ..expr.preprocess import normalize_log1p
from .classification import ClassificationMetrics
from .knn import K_SWEEP, median_bandwidth, mmd, pknn, sknn
from .pca import Embedding, pca_fit, pca_transform

REPORT_DIGITS = 12


@dataclass
class EvalReport:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def to_dict(self) -> dict:
        return _round(self.values)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_json())

    def to_csv_rows(self) -> list:
        return [(k, v) for k, v in sorted(self.to_dict().items()) if isinstance(v, (int, float))]


def _round(obj):
    # Fixed significant digits keep the serialized report stable against
    # last-bit differences between BLAS/libm builds.
    if isinstance(obj, float):
        return float(f"{obj:.{REPORT_DIGITS}g}")
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    return obj


def embed_pair(real: Dataset, gen: Dataset, n_pcs: int = 50, dims: int = 2, target_sum: float = 1e4) -> tuple:
    """Fit PCA on normalized real cells, keep the first ``dims`` axes, project both sets."""
    if real.matrix.vocabulary != gen.matrix.vocabulary:
        raise ValidationError("real and generated data use different gene vocabularies")
    xr = normalize_log1p(real.matrix, target_sum)
    xg = normalize_log1p(gen.matrix, target_sum)
    k = min(n_pcs, real.n_cells - 1, real.matrix.n_genes)
    if dims > k:
        raise ValidationError(f"cannot embed in {dims} dimensions with {k} principal components")
    model = pca_fit(xr, k)
    er = Embedding(pca_transform(model, xr)[:, :dims], real.annotations.labels)
    eg = Embedding(pca_transform(model, xg)[:, :dims], gen.annotations.labels)
    info = {"method": "pca", "n_pcs": k, "dims": dims, "target_sum": target_sum}
    return er, eg, info


def evaluate_embeddings(real: Embedding, gen: Embedding, k_list=K_SWEEP, neighbors: int = 25) -> dict:
    out = {}
    omega = median_bandwidth(real, neighbors)
    out["omega"] = omega
    out["mmd"] = mmd(gen, real, omega)
    for k in k_list:
        s_real, s_gen = sknn(real, k), sknn(gen, k)
        out[f"sknn.K{k}"] = s_gen
        out[f"sknn_real.K{k}"] = s_real
        out[f"delta_sknn.K{k}"] = abs(s_gen - s_real)
        out[f"pknn.K{k}"] = pknn(real, gen, k)
    for name in ("sknn", "sknn_real", "delta_sknn", "pknn"):
        out[f"{name}.mean"] = float(np.mean([out[f"{name}.K{k}"] for k in k_list]))
    out["k_list"] = list(k_list)
    return out


def evaluate(real: Dataset, gen: Dataset, k_list=K_SWEEP, n_pcs: int = 50, dims: int = 2,
             target_sum: float = 1e4, neighbors: int = 25,
             classification: ClassificationMetrics | None = None) -> EvalReport:
    er, eg, info = embed_pair(real, gen, n_pcs, dims, target_sum)
    values = evaluate_embeddings(er, eg, k_list, neighbors)
    values["embedding"] = info
    values["n_real"], values["n_generated"] = len(er), len(eg)
    if classification is not None:
        values.update(classification_block(classification))
    return EvalReport(values)


def classification_block(m: ClassificationMetrics) -> dict:
    return m.to_dict()

