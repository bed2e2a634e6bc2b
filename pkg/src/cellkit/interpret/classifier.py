"""MLP classifier over log1p-normalized expression, with input-gradient access."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from ..errors import NumericalError, ShapeError, ValidationError
from ..expr.matrix import Dataset
from ..expr.preprocess import normalize_log1p
from ..numkit import tensor as T
from ..numkit.checkpoint import load_params, save_params
from ..numkit.nn import MlpSpec, ParamStore, backward, init_mlp, mlp_forward
from ..numkit.optim import AdamState, adam_step
from ..numkit.rng import RngStream

PREFIX = "clf"


@dataclass
class ClassifierParams:
    spec: MlpSpec
    store: ParamStore
    classes: tuple
    genes: tuple | None = None
    target_sum: float = 1e4

    def __post_init__(self):
        self.classes = tuple(self.classes)
        if len(set(self.classes)) != len(self.classes):
            raise ValidationError("class names must be unique")
        if self.spec.layer_widths[-1] != len(self.classes):
            raise ShapeError(f"output width {self.spec.layer_widths[-1]} != {len(self.classes)} classes")

    @property
    def n_inputs(self) -> int:
        return self.spec.layer_widths[0]

    def class_index(self, label) -> int:
        try:
            return self.classes.index(label)
        except ValueError:
            raise ValidationError(f"unknown class {label!r}") from None

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_params(self.store.state(), directory / "classifier.cfp")
        meta = {"spec": self.spec.to_dict(), "classes": list(self.classes),
                "genes": None if self.genes is None else list(self.genes), "target_sum": self.target_sum}
        (directory / "classifier.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, directory) -> "ClassifierParams":
        directory = Path(directory)
        meta = json.loads((directory / "classifier.json").read_text(encoding="utf-8"))
        store = ParamStore.from_state(load_params(directory / "classifier.cfp"))
        genes = None if meta["genes"] is None else tuple(meta["genes"])
        return cls(MlpSpec.from_dict(meta["spec"]), store, tuple(meta["classes"]), genes, meta["target_sum"])


@dataclass
class ClassifierConfig:
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 32
    hidden: tuple = (64,)
    activation: str = "softplus"
    seed: int = 0
    target_sum: float = 1e4

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class ClassifierTrainResult:
    params: ClassifierParams
    history: list
    valid_history: list = field(default_factory=list)
    best_epoch: int | None = None


def init_classifier(n_inputs: int, classes, hidden=(64,), activation="softplus", seed: int = 0,
                    genes=None, target_sum: float = 1e4, init_scale: float = 1.0) -> ClassifierParams:
    classes = tuple(classes)
    widths = (n_inputs, *hidden, len(classes))
    spec = MlpSpec(widths, (activation,) * len(hidden) + ("identity",))
    store = ParamStore()
    init_mlp(spec, store, PREFIX, RngStream(seed).spawn(0), init_scale)
    return ClassifierParams(spec, store, classes, None if genes is None else tuple(genes), target_sum)


def logits(p: ClassifierParams, x) -> T.Tensor:
    x = T.as_tensor(x)
    if x.shape[-1] != p.n_inputs:
        raise ShapeError(f"expected {p.n_inputs} input features, got {x.shape[-1]}")
    return mlp_forward(p.spec, p.store, x, PREFIX)


def cross_entropy(p: ClassifierParams, x, targets) -> T.Tensor:
    """Mean negative log-softmax probability of the target class indices."""
    z = logits(p, x)
    if z.ndim == 1:
        z = T.reshape(z, (1, -1))
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    lp = T.log_softmax(z, axis=1)
    return -T.tmean(lp[np.arange(targets.size), targets])


def predict_proba(p: ClassifierParams, x) -> np.ndarray:
    return special.softmax(logits(p, x).data, axis=-1)


def predict(p: ClassifierParams, s) -> tuple:
    """``(label, probabilities)`` for one normalized expression vector."""
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 1:
        raise ShapeError(f"predict expects one expression vector, got shape {s.shape}")
    probs = predict_proba(p, s)
    return p.classes[int(np.argmax(probs))], probs


def predict_batch(p: ClassifierParams, x) -> tuple:
    probs = predict_proba(p, np.atleast_2d(np.asarray(x, dtype=np.float64)))
    return [p.classes[i] for i in np.argmax(probs, axis=1)], probs


def vanilla_gradient(p: ClassifierParams, s, target_label) -> np.ndarray:
    """Gradient of the target-class cross-entropy with respect to the input vector."""
    k = p.class_index(target_label)
    x = T.Tensor(np.array(s, dtype=np.float64), requires_grad=True)
    if x.ndim != 1:
        raise ShapeError(f"expected one expression vector, got shape {x.shape}")
    loss = cross_entropy(p, x, [k])
    T.backward(loss)
    return x.grad if x.grad is not None else np.zeros_like(x.data)


def dataset_inputs(p: ClassifierParams, d: Dataset) -> np.ndarray:
    if p.genes is not None and tuple(d.matrix.vocabulary.genes) != p.genes:
        raise ValidationError("dataset genes do not match the classifier vocabulary")
    return normalize_log1p(d.matrix, p.target_sum)


def train_classifier(data: Dataset, cfg: ClassifierConfig | None = None) -> ClassifierTrainResult:
    """Cross-entropy training with Adam; keeps the epoch with lowest validation loss when valid cells exist."""
    cfg = cfg or ClassifierConfig()
    train = data.select_split("train")
    classes = tuple(sorted(set(train.annotations.labels)))
    if len(classes) < 2:
        raise ValidationError(f"need at least two classes in the training labels, got {list(classes)}")
    p = init_classifier(train.matrix.n_genes, classes, tuple(cfg.hidden), cfg.activation, cfg.seed,
                        train.matrix.vocabulary.genes, cfg.target_sum)
    x = dataset_inputs(p, train)
    y = np.array([p.class_index(c) for c in train.annotations.labels])
    valid = data.select_split("valid") if data.split is not None else None
    if valid is not None and valid.n_cells and set(valid.annotations.labels) <= set(classes):
        xv = dataset_inputs(p, valid)
        yv = np.array([p.class_index(c) for c in valid.annotations.labels])
    else:
        valid = None

    n = train.n_cells
    bs = max(1, min(cfg.batch_size, n))
    root = RngStream(cfg.seed)
    state = AdamState()
    history, valid_history = [], []
    best, best_loss, best_epoch = None, math.inf, None
    for epoch in range(cfg.epochs):
        order = root.spawn(1, epoch).permutation(n)
        total = 0.0
        for b in range(0, n, bs):
            idx = order[b:b + bs]
            loss = cross_entropy(p, x[idx], y[idx])
            if not np.isfinite(loss.data):
                raise NumericalError(f"non-finite classifier loss at epoch {epoch}")
            backward(loss, p.store)
            adam_step(p.store, cfg.lr, state=state)
            total += loss.item() * idx.size
        history.append(total / n)
        if valid is not None:
            v = cross_entropy(p, xv, yv).item()
            valid_history.append(v)
            if v < best_loss:
                best, best_loss, best_epoch = p.store.state(), v, epoch
    if best is not None:
        p.store.load_state(best)
    return ClassifierTrainResult(p, history, valid_history, best_epoch)
