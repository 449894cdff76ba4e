"""Training losses and depth evaluation metrics."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import Tensor, abs_, as_tensor, log, mean, square, sum_, take_rows

METRIC_NAMES = ("AbsRel", "SqRel", "RMSE", "d1", "d2", "d3")
CSV_COLUMNS = ("split", "step") + METRIC_NAMES


@dataclass(frozen=True)
class LossWeights:
    synthesis: float = 1.0
    virtual: float = 1.0

    def __post_init__(self):
        if self.synthesis < 0 or self.virtual < 0:
            raise ValueError("loss weights must be non-negative")


def _masked_rows(x: Tensor, mask) -> Tensor:
    """Rows of ``x`` (flattened to [N, C]) where ``mask`` is set; ``None`` keeps all."""
    x = as_tensor(x)
    if x.ndim == 1:
        x = x.reshape(x.shape[0], 1)
    if mask is None:
        return x
    idx = np.flatnonzero(np.asarray(mask).reshape(-1))
    if idx.size == 0:
        raise ValueError("empty mask")
    return take_rows(x, idx)


def depth_loss(pred, gt, mask=None) -> Tensor:
    """Mean over valid pixels of |log gt - log pred|."""
    gt_arr = np.asarray(gt.data if isinstance(gt, Tensor) else gt, dtype=np.float64)
    p = _masked_rows(pred, mask)
    g = gt_arr.reshape(-1, 1)
    if mask is not None:
        g = g[np.asarray(mask).reshape(-1)]
    if g.size == 0:
        raise ValueError("empty mask")
    if np.any(g <= 0):
        raise ValueError("ground-truth depth must be positive on the mask")
    return mean(abs_(log(p) - np.log(g)))


def rgb_loss(pred, gt, mask=None) -> Tensor:
    """Mean over valid pixels of the squared color error summed over channels."""
    p = _masked_rows(pred, mask)
    g = np.asarray(gt.data if isinstance(gt, Tensor) else gt, dtype=np.float64).reshape(-1, 3)
    if mask is not None:
        g = g[np.asarray(mask).reshape(-1)]
    if g.shape[0] == 0:
        raise ValueError("empty mask")
    return sum_(square(p - g)) * (1.0 / g.shape[0])


def total_loss(depth, synth, depth_virtual, synth_virtual, weights: LossWeights):
    """L_d + ls * L_s + lv * (L_dv + ls * L_sv); accepts floats or scalar tensors."""
    ls, lv = weights.synthesis, weights.virtual
    return depth + ls * synth + lv * (depth_virtual + ls * synth_virtual)


def _valid(pred, gt, mask):
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1)
    m = gt > 0 if mask is None else np.asarray(mask, dtype=bool).reshape(-1)
    if not m.any():
        raise ValueError("empty mask")
    if np.any(gt[m] <= 0):
        raise ValueError("ground-truth depth must be positive on the mask")
    return pred[m], gt[m]


def metrics(pred, gt, mask=None) -> dict[str, float]:
    """AbsRel, SqRel, RMSE and threshold accuracies over masked pixels."""
    p, g = _valid(pred, gt, mask)
    diff = g - p
    ratio = np.maximum(p / g, g / p)
    return {
        "AbsRel": float(np.mean(np.abs(diff) / g)),
        "SqRel": float(np.mean(diff * diff / g)),
        "RMSE": float(np.sqrt(np.mean(diff * diff))),
        "d1": float(np.mean(ratio < 1.25)),
        "d2": float(np.mean(ratio < 1.25**2)),
        "d3": float(np.mean(ratio < 1.25**3)),
    }


def median_scale(pred, gt, mask=None) -> np.ndarray:
    """``pred * median(gt) / median(pred)`` with medians over the mask; returns full-shape array."""
    pred = np.asarray(pred, dtype=np.float64)
    p, g = _valid(pred, gt, mask)
    return pred * (np.median(g) / np.median(p))


def average_metrics(rows: list[dict[str, float]]) -> dict[str, float]:
    return {k: float(np.mean([r[k] for r in rows])) for k in METRIC_NAMES}


def write_metrics_csv(path, rows, append: bool = False) -> None:
    """Rows are dicts with at least the standard columns; extra keys are appended as columns."""
    path = Path(path)
    rows = list(rows)
    extra = [k for k in (rows[0] if rows else {}) if k not in CSV_COLUMNS]
    columns = list(CSV_COLUMNS) + extra
    new = not (append and path.exists())
    with path.open("a" if append else "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        if new:
            writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k, "")) for k in columns})


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v
