"""Central finite-difference gradient checking."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst: str
    n_checked: int

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error <= tol


def relative_error(analytic, numeric, floor: float = 1e-8) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor).

    ``floor`` keeps gradients that vanish to rounding level from producing
    unbounded ratios.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. the array ``x``, perturbed in place."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def resolution_floor(f0: float, h: float = 1e-5, tol: float = 1e-4) -> float:
    """Smallest gradient magnitude central differences resolve to ``tol``.

    Rounding in ``f`` contributes roughly ``eps * |f| / h`` to each
    difference quotient; below ``10x`` that divided by ``tol`` a relative
    comparison measures rounding, not the gradient.
    """
    return max(1e-8, 10.0 * np.finfo(np.float64).eps * max(abs(f0), 1.0) / (h * tol))


def check_gradients(loss_fn, arrays: dict, analytic: dict, h: float = 1e-5, floor: float | None = None,
                    tol: float = 1e-4) -> GradCheckResult:
    """Compare ``analytic[name]`` against finite differences of ``loss_fn()``.

    ``arrays`` maps names to the live numpy arrays ``loss_fn`` reads, so
    in-place perturbation is visible to it. ``floor=None`` picks
    :func:`resolution_floor` for the loss value at the unperturbed point.
    """
    if floor is None:
        floor = resolution_floor(loss_fn(), h, tol)
    worst, worst_name, n = 0.0, "", 0
    for name, arr in arrays.items():
        num = numeric_grad(loss_fn, arr, h)
        err = relative_error(analytic[name], num, floor)
        n += err.size
        if err.size and err.max() > worst:
            worst = float(err.max())
            worst_name = f"{name}[{np.unravel_index(int(err.argmax()), err.shape)}]"
    return GradCheckResult(worst, worst_name, n)
