"""Parameter storage and multilayer perceptrons."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError, ValidationError
from . import tensor as T
from .rng import RngStream

ACTIVATIONS = ("relu", "softplus", "identity")
_ACT_FN = {"relu": T.relu, "softplus": T.softplus, "identity": lambda x: x}


class ParamStore:
    """Named trainable tensors, kept in insertion order."""

    def __init__(self):
        self._params: dict = {}

    def add(self, name: str, value) -> T.Tensor:
        if name in self._params:
            raise ValidationError(f"parameter {name!r} already exists")
        t = T.Tensor(np.array(value, dtype=np.float64, copy=True), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name) -> T.Tensor:
        return self._params[name]

    def __contains__(self, name) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list:
        return list(self._params)

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = np.zeros_like(t.data)

    def grads(self) -> dict:
        return {k: (np.zeros_like(t.data) if t.grad is None else t.grad) for k, t in self._params.items()}

    def state(self) -> dict:
        """Copy of every parameter value."""
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_state(self, state: dict) -> None:
        for k, v in state.items():
            if k not in self._params:
                raise ValidationError(f"unknown parameter {k!r}")
            v = np.asarray(v, dtype=np.float64)
            if v.shape != self._params[k].data.shape:
                raise ShapeError(f"parameter {k!r}: expected shape {self._params[k].data.shape}, got {v.shape}")
            self._params[k].data = v.copy()

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for k, t in self._params.items():
            out.add(k, t.data)
        return out

    @classmethod
    def from_state(cls, state: dict) -> "ParamStore":
        out = cls()
        for k, v in state.items():
            out.add(k, v)
        return out


def backward(loss: T.Tensor, store: ParamStore | None = None) -> dict:
    """Fill gradient slots with d(loss)/d(param).

    Parameters of ``store`` that the loss does not reach get an exact zero
    gradient. Returns ``store.grads()`` (or an empty dict without a store).
    """
    if store is not None:
        for _, t in store.items():
            t.grad = None
    T.backward(loss)
    if store is None:
        return {}
    for _, t in store.items():
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
    return store.grads()


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths, one activation per layer and optional residual sources.

    ``residual_from[i] = j`` adds the output of layer ``j`` (``0`` is the
    input) to the output of layer ``i + 1`` after its activation.
    """

    layer_widths: tuple
    activations: tuple | None = None
    residual_from: tuple | None = None

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2:
            raise ValidationError("an MLP needs at least two widths")
        if any(w <= 0 for w in widths):
            raise ValidationError(f"layer widths must be positive, got {widths}")
        n = len(widths) - 1
        acts = self.activations
        if acts is None:
            acts = ("relu",) * (n - 1) + ("identity",)
        elif isinstance(acts, str):
            acts = (acts,) * n
        acts = tuple(acts)
        if len(acts) != n or any(a not in ACTIVATIONS for a in acts):
            raise ValidationError(f"need {n} activations from {ACTIVATIONS}, got {acts}")
        res = self.residual_from
        if res is not None:
            res = tuple(None if r is None else int(r) for r in res)
            if len(res) != n:
                raise ValidationError(f"residual_from needs {n} entries, got {len(res)}")
            for i, r in enumerate(res):
                if r is None:
                    continue
                if not 0 <= r <= i:
                    raise ValidationError(f"layer {i} can only take a residual from 0..{i}, got {r}")
                if widths[r] != widths[i + 1]:
                    raise ValidationError(
                        f"residual width mismatch: layer {i} outputs {widths[i + 1]}, source {r} has {widths[r]}"
                    )
        object.__setattr__(self, "layer_widths", widths)
        object.__setattr__(self, "activations", acts)
        object.__setattr__(self, "residual_from", res)

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    def to_dict(self) -> dict:
        return {
            "layer_widths": list(self.layer_widths),
            "activations": list(self.activations),
            "residual_from": None if self.residual_from is None else list(self.residual_from),
        }

    @classmethod
    def from_dict(cls, d) -> "MlpSpec":
        return cls(tuple(d["layer_widths"]), tuple(d["activations"]),
                   None if d.get("residual_from") is None else tuple(d["residual_from"]))


def init_mlp(spec: MlpSpec, store: ParamStore, prefix: str, rng: RngStream, scale: float = 1.0) -> None:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases, times ``scale``."""
    for i in range(spec.n_layers):
        fan_in, fan_out = spec.layer_widths[i], spec.layer_widths[i + 1]
        bound = scale / np.sqrt(fan_in)
        store.add(f"{prefix}.W{i}", (2.0 * rng.uniform((fan_in, fan_out)) - 1.0) * bound)
        store.add(f"{prefix}.b{i}", (2.0 * rng.uniform(fan_out) - 1.0) * bound)


def mlp_forward(spec: MlpSpec, params: ParamStore, x, prefix: str = "mlp") -> T.Tensor:
    x = T.as_tensor(x)
    vector_in = x.ndim == 1
    if vector_in:
        x = T.reshape(x, (1, -1))
    if x.shape[-1] != spec.layer_widths[0]:
        raise ShapeError(f"{prefix} layer 0: expected input width {spec.layer_widths[0]}, got {x.shape[-1]}")
    outs = [x]
    h = x
    for i in range(spec.n_layers):
        W, b = params[f"{prefix}.W{i}"], params[f"{prefix}.b{i}"]
        if W.shape != (spec.layer_widths[i], spec.layer_widths[i + 1]):
            raise ShapeError(f"{prefix} layer {i}: weight shape {W.shape} does not match spec")
        h = _ACT_FN[spec.activations[i]](T.matmul(h, W) + b)
        if spec.residual_from is not None and spec.residual_from[i] is not None:
            h = h + outs[spec.residual_from[i]]
        outs.append(h)
    return T.reshape(h, (-1,)) if vector_in else h
