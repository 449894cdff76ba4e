"""Central finite-difference oracle for analytic gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import Parameter, Tensor, backward


def numerical_grad(f: Callable[[], float], arr: np.ndarray, h: float = 1e-5,
                   indices=None) -> np.ndarray:
    """d f / d arr by central differences; ``f`` reads ``arr`` by reference.

    With ``indices`` (flat positions) only those entries are probed; the rest stay 0.
    """
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in (range(flat.size) if indices is None else indices):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    denom = max(np.abs(a).max(), np.abs(b).max(), floor)
    return float(np.abs(a - b).max() / denom)


def check_gradients(loss_fn: Callable[[], Tensor], params: Sequence[Parameter],
                    h: float = 1e-5, max_entries: int | None = None, seed: int = 0) -> float:
    """Worst relative error between backward() and finite differences over ``params``.

    ``max_entries`` caps the probed entries per parameter (drawn with ``seed``).
    """
    for p in params:
        p.grad = None
    backward(loss_fn())
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        idx = None
        if max_entries is not None and p.data.size > max_entries:
            idx = np.sort(rng.choice(p.data.size, size=max_entries, replace=False))
        numeric = numerical_grad(lambda: loss_fn().item(), p.data, h, idx)
        if idx is not None:
            analytic, numeric = analytic.reshape(-1)[idx], numeric.reshape(-1)[idx]
        worst = max(worst, rel_error(analytic, numeric))
    return worst
