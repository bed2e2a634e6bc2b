"""Training loop, pseudo-cell generation and checkpoint files for the CVAE."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import NumericalError, TrainingDivergedError, ValidationError
from ..expr.matrix import Dataset, ExpressionMatrix
from ..expr.preprocess import normalize_log1p
from ..numkit.checkpoint import load_params, save_params
from ..numkit.nn import ParamStore, backward
from ..numkit.optim import AdamState, adam_step
from ..numkit.rng import RngStream
from .distributions import sample_zinb_chain
from .model import (
    ConditionEncoder,
    CvaeArch,
    CvaeParams,
    LatentSample,
    condition_vector,
    decode,
    elbo_loss,
    init_cvae,
)

MIN_PRIOR_VAR = 1e-4


def estimate_library_prior(train: Dataset) -> tuple:
    """Mean and population variance of log total counts over the training cells."""
    d = train.select_split("train") if train.split is not None else train
    if d.n_cells == 0:
        raise ValidationError("training split is empty")
    totals = d.matrix.totals().astype(np.float64)
    if np.any(totals <= 0):
        raise ValidationError(f"cell {int(np.flatnonzero(totals <= 0)[0])} has zero total count")
    logs = np.log(totals)
    mu = float(logs.mean())
    return mu, float(np.mean((logs - mu) ** 2))


@dataclass
class CvaeConfig:
    lr: float = 1e-3
    epochs: int = 160
    batch_size: int = 64
    alpha: float = 1.0
    warmup_frac: float = 0.1
    seed: int = 0
    d_z: int = 256
    d_c: int = 256
    hidden: tuple = (128,)
    embed_dim: int = 16
    target_sum: float = 1e4

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class CvaeTrainResult:
    params: CvaeParams
    history: list
    valid_history: list = field(default_factory=list)
    best_epoch: int | None = None
    manifest: dict = field(default_factory=dict)


def _conditions_of(d: Dataset) -> list:
    return d.annotations.conditions()


def train_cvae(data: Dataset, cfg: CvaeConfig | None = None) -> CvaeTrainResult:
    """Fit the CVAE on the ``train`` cells of ``data``.

    Cells tagged ``valid`` (if any) are scored after every epoch with a fixed
    noise draw and full KL weight; the epoch with the lowest validation loss
    is returned. Without validation cells the final epoch is returned.

    Raises:
        TrainingDivergedError: a batch loss became non-finite. The error
            carries the parameters of the last finite step.
    """
    cfg = cfg or CvaeConfig()
    train = data.select_split("train")
    valid = data.select_split("valid") if data.split is not None else None
    if train.n_cells == 0:
        raise ValidationError("training split is empty")
    l_mu, l_var = estimate_library_prior(train)
    arch = CvaeArch(train.matrix.n_genes, cfg.d_z, cfg.d_c, tuple(cfg.hidden), cfg.embed_dim)
    conditions = ConditionEncoder.from_conditions(_conditions_of(train))
    params = init_cvae(arch, conditions, l_mu, max(l_var, MIN_PRIOR_VAR), cfg.seed, cfg.alpha,
                       genes=train.matrix.vocabulary.genes)

    counts = train.matrix.to_dense().astype(np.float64)
    inputs = normalize_log1p(train.matrix, cfg.target_sum)
    conds = _conditions_of(train)
    n = train.n_cells
    bs = max(1, min(cfg.batch_size, n))
    steps_per_epoch = math.ceil(n / bs)
    total_steps = max(1, cfg.epochs * steps_per_epoch)
    warmup = max(1, math.ceil(cfg.warmup_frac * total_steps)) if cfg.warmup_frac > 0 else 0

    if valid is not None and valid.n_cells:
        v_counts = valid.matrix.to_dense().astype(np.float64)
        v_inputs = normalize_log1p(valid.matrix, cfg.target_sum)
        v_conds = _conditions_of(valid)
        v_noise = RngStream(cfg.seed).spawn(3).normal((valid.n_cells, cfg.d_z + 1))
    else:
        valid = None

    root = RngStream(cfg.seed)
    state = AdamState()
    history, valid_history = [], []
    best_state, best_loss, best_epoch = None, math.inf, None
    step = 0
    for epoch in range(cfg.epochs):
        order = root.spawn(1, epoch).permutation(n)
        noise_rng = root.spawn(2, epoch)
        total = 0.0
        for b in range(steps_per_epoch):
            idx = order[b * bs:(b + 1) * bs]
            a = cfg.alpha * min(1.0, (step + 1) / warmup) if warmup else cfg.alpha
            noise = noise_rng.normal((idx.size, cfg.d_z + 1))
            last_good = params.store.state()
            try:
                terms = elbo_loss(params, counts[idx], inputs[idx], [conds[i] for i in idx], a, noise)
                backward(terms.loss, params.store)
                adam_step(params.store, cfg.lr, state=state)
            except NumericalError as exc:
                params.store.load_state(last_good)
                raise TrainingDivergedError(
                    f"training diverged at epoch {epoch}, step {step}: {exc}", checkpoint=params, history=history
                ) from exc
            total += terms.loss.item() * idx.size
            step += 1
        history.append(total / n)

        if valid is not None:
            v = elbo_loss(params, v_counts, v_inputs, v_conds, cfg.alpha, v_noise).loss.item()
            valid_history.append(v)
            if v < best_loss:
                best_loss, best_state, best_epoch = v, params.store.state(), epoch

    if best_state is not None:
        params.store.load_state(best_state)
    manifest = {
        "config": cfg.to_dict(),
        "n_train": n,
        "n_valid": 0 if valid is None else valid.n_cells,
        "prior_l_mu": l_mu,
        "prior_l_var": l_var,
        "best_epoch": best_epoch,
    }
    return CvaeTrainResult(params, history, valid_history, best_epoch, manifest)


def generate(p: CvaeParams, labels, seed: int) -> ExpressionMatrix:
    """Sample one pseudo-cell per condition tuple.

    Each cell ``i`` draws from its own stream derived from ``(seed, i)``:
    ``z_s ~ N(0, I)``, ``log l ~ N(l_mu, l_var)``, decode, then the
    Gamma -> Poisson -> Bernoulli chain per gene.

    Raises:
        UnknownConditionError: a label is not known to the condition encoder.
    """
    labels = list(labels)
    c = condition_vector(p, labels)  # validates every label before sampling
    n, dz = len(labels), p.arch.d_z
    root = RngStream(seed)
    streams = [root.spawn(i) for i in range(n)]
    z = np.empty((n, dz))
    log_l = np.empty((n, 1))
    sd = math.sqrt(p.prior_l_var)
    for i, r in enumerate(streams):
        z[i] = r.normal(dz)
        log_l[i, 0] = p.prior_l_mu + sd * r.normal()
    out = decode(p, LatentSample(_const(z), _const(log_l)), c)
    rho, lib, tau = out.rho, np.exp(out.log_lib.data), out.tau
    theta = out.theta.data
    counts = np.zeros((n, p.arch.n_genes), dtype=np.int64)
    for i, r in enumerate(streams):
        counts[i] = sample_zinb_chain(rho[i], lib[i, 0], theta, tau[i], r)
    genes = p.genes if p.genes is not None else [f"gene_{j}" for j in range(p.arch.n_genes)]
    return ExpressionMatrix(counts, genes)


def _const(x):
    from ..numkit.tensor import Tensor
    return Tensor(x)


# -- checkpoint files ----------------------------------------------------------


def save_cvae(p: CvaeParams, directory, extra: dict | None = None) -> dict:
    """Write ``model.cfp`` (parameters), ``model.json`` (sidecar) and ``model.genes``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {k: directory / f"model.{k}" for k in ("cfp", "json", "genes")}
    save_params(p.store.state(), paths["cfp"])
    genes = list(p.genes) if p.genes is not None else [f"gene_{j}" for j in range(p.arch.n_genes)]
    from ..expr.matrix import GeneVocabulary
    sidecar = {
        "d_z": p.arch.d_z,
        "d_c": p.arch.d_c,
        "vocabulary_hash": GeneVocabulary(genes).digest(),
        "l_mu": p.prior_l_mu,
        "l_sigma2": p.prior_l_var,
        "alpha": p.alpha,
        "arch": p.arch.to_dict(),
        "conditions": p.conditions.to_dict(),
    }
    sidecar.update(extra or {})
    paths["json"].write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths["genes"].write_text("".join(f"{g}\n" for g in genes), encoding="utf-8")
    return paths


def load_cvae(directory) -> CvaeParams:
    directory = Path(directory)
    meta = json.loads((directory / "model.json").read_text(encoding="utf-8"))
    genes = (directory / "model.genes").read_text(encoding="utf-8").splitlines()
    from ..expr.matrix import GeneVocabulary
    if GeneVocabulary(genes).digest() != meta["vocabulary_hash"]:
        raise ValidationError("gene list does not match the vocabulary hash in model.json")
    arch = CvaeArch.from_dict(meta["arch"])
    p = CvaeParams(arch, ConditionEncoder(meta["conditions"]), ParamStore.from_state(load_params(directory / "model.cfp")),
                   meta["l_mu"], meta["l_sigma2"], meta["alpha"], tuple(genes))
    return p
