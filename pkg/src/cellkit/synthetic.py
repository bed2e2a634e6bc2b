"""Synthetic datasets with known generating parameters."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cvae.distributions import sample_zinb_chain
from .expr.matrix import CellAnnotations, Dataset, ExpressionMatrix
from .numkit.rng import RngStream


@dataclass(frozen=True)
class ZinbTruth:
    """Per-class mean proportions ``rho`` (classes x genes) and shared ``theta``/``pi``."""

    classes: tuple
    rho: np.ndarray
    theta: np.ndarray
    pi: np.ndarray
    log_lib_mean: float
    log_lib_sd: float


def zinb_truth(n_genes: int, n_classes: int, seed: int, *, markers_per_class: int = 8, fold: float = 6.0,
               log_lib_mean: float = 7.0, log_lib_sd: float = 0.3, pi_max: float = 0.3) -> ZinbTruth:
    r = RngStream(seed).spawn(0)
    base = r.gamma(np.full(n_genes, 2.0), 0.5)
    rho = np.tile(base, (n_classes, 1))
    for k in range(n_classes):
        start = (k * markers_per_class) % n_genes
        idx = (start + np.arange(markers_per_class)) % n_genes
        rho[k, idx] *= fold
    rho /= rho.sum(axis=1, keepdims=True)
    theta = 1.0 + 4.0 * r.uniform(n_genes)
    pi = pi_max * r.uniform(n_genes)
    return ZinbTruth(tuple(f"type_{k}" for k in range(n_classes)), rho, theta, pi, log_lib_mean, log_lib_sd)


def sample_from_truth(truth: ZinbTruth, labels, seed: int, species="human", tissue="synthetic") -> Dataset:
    """One cell per entry of ``labels`` (class names), each from its own stream."""
    labels = list(labels)
    index = {c: i for i, c in enumerate(truth.classes)}
    root = RngStream(seed)
    G = truth.rho.shape[1]
    counts = np.zeros((len(labels), G), dtype=np.int64)
    for i, lab in enumerate(labels):
        r = root.spawn(i)
        lib = np.exp(truth.log_lib_mean + truth.log_lib_sd * r.normal())
        counts[i] = sample_zinb_chain(truth.rho[index[lab]], lib, truth.theta, truth.pi, r)
    genes = [f"G{j:04d}" for j in range(G)]
    ids = [f"cell_{i:05d}" for i in range(len(labels))]
    return Dataset(ExpressionMatrix(counts, genes, ids), CellAnnotations.uniform(labels, species, tissue, ids))


def balanced_labels(classes, n: int, weights=None, seed: int = 0) -> list:
    """``n`` labels with class counts proportional to ``weights``, in shuffled order."""
    classes = list(classes)
    w = np.full(len(classes), 1.0 / len(classes)) if weights is None else np.asarray(weights, float) / np.sum(weights)
    counts = np.floor(w * n).astype(int)
    counts[0] += n - counts.sum()
    labels = [c for c, k in zip(classes, counts) for _ in range(k)]
    order = RngStream(seed).spawn(1).permutation(n)
    return [labels[i] for i in order]


def zinb_dataset(n_cells: int, n_genes: int, n_classes: int, seed: int, weights=None, **truth_kw) -> tuple:
    """Return ``(dataset, truth)`` drawn from a random class-conditional ZINB model."""
    truth = zinb_truth(n_genes, n_classes, seed, **truth_kw)
    labels = balanced_labels(truth.classes, n_cells, weights, seed)
    return sample_from_truth(truth, labels, seed + 1), truth


def separable_dataset(n_cells: int, n_genes: int, n_classes: int, seed: int, signal: int = 40,
                      background: float = 2.0) -> Dataset:
    """Counts where class ``k`` lights up its own block of genes.

    Background genes are Poisson(``background``); marker genes of the cell's
    class add Poisson(``signal``). Log-normalized, the classes are linearly
    separable with a wide margin.
    """
    r = RngStream(seed)
    labels = balanced_labels([f"class_{k}" for k in range(n_classes)], n_cells, seed=seed)
    block = max(1, n_genes // (2 * n_classes))
    counts = r.poisson(np.full((n_cells, n_genes), background)).astype(np.int64)
    for i, lab in enumerate(labels):
        k = int(lab.split("_")[1])
        counts[i, k * block:(k + 1) * block] += r.poisson(np.full(block, float(signal)))
    counts[:, 0] += (counts.sum(axis=1) == 0)  # keep every library positive
    genes = [f"G{j:04d}" for j in range(n_genes)]
    return Dataset(ExpressionMatrix(counts, genes), CellAnnotations.uniform(labels, "human", "synthetic"))
