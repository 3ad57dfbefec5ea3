"""Dice / Tanimoto overlap losses and confusion-count metrics.

The soft coefficients take ``yhat`` and ``y`` with classes on the last axis
and any leading axes (``[rows, cols, C]`` or ``[batch, rows, cols, C]``).
Sums run over every leading axis separately per class, and the per-class
values are averaged.  The functions are written against the operator
protocol shared by ``numpy.ndarray`` and :class:`~rescrnet.core.Tensor`:
numpy inputs give a float, tensor inputs give a differentiable scalar.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .core import Tensor
from .errors import ConfigError, ShapeError

DEFAULT_SMOOTHING = 1.0


def _check(yhat, y, s: float) -> tuple:
    if s <= 0:
        raise ConfigError(f"smoothing must be positive, got {s}", field="smoothing")
    if tuple(yhat.shape) != tuple(np.shape(y)):
        raise ShapeError(f"prediction shape {tuple(yhat.shape)} != label shape {tuple(np.shape(y))}", dim="shape")
    if len(yhat.shape) < 1:
        raise ShapeError("need a class axis", dim="classes")
    return tuple(range(len(yhat.shape) - 1))


def _finish(v):
    return v if isinstance(v, Tensor) else float(v)


def _labels(y, like):
    # labels are constants; match the prediction's float width so sums agree bitwise
    return np.asarray(y.data if isinstance(y, Tensor) else y, dtype=like.dtype)


def dice_coefficient(yhat, y, s: float = DEFAULT_SMOOTHING):
    """Per-class ``(2 sum yhat*y + s) / (sum yhat + sum y + s)``, averaged over classes."""
    axes = _check(yhat, y, s)
    y = _labels(y, yhat)
    d = (2 * (yhat * y).sum(axis=axes) + s) / (yhat.sum(axis=axes) + y.sum(axis=axes) + s)
    return _finish(d.mean())


def dice_loss(yhat, y, s: float = DEFAULT_SMOOTHING):
    return _finish(1 - dice_coefficient(yhat, y, s))


def _tanimoto_terms(yhat, y, s, w=None):
    axes = tuple(range(len(yhat.shape) - 1))
    if w is not None:
        p = (w * yhat * y).sum(axis=axes)
        q = (w * (yhat * yhat + y * y)).sum(axis=axes)
    else:
        p = (yhat * y).sum(axis=axes)
        q = (yhat * yhat + y * y).sum(axis=axes)
    return (p + s) / (q - p + s)


def tanimoto(yhat, y, s: float = DEFAULT_SMOOTHING):
    """``(sum yhat*y + s) / (sum (yhat^2 + y^2) - sum yhat*y + s)`` per class, class-averaged."""
    _check(yhat, y, s)
    return _finish(_tanimoto_terms(yhat, _labels(y, yhat), s).mean())


def _complement_mean(yhat, y, s, w):
    t = _tanimoto_terms(yhat, y, s, w)
    tc = _tanimoto_terms(1 - yhat, 1 - y, s, w)
    return ((t + tc) / 2).mean()


def tanimoto_with_complement(yhat, y, s: float = DEFAULT_SMOOTHING):
    """Mean of the Tanimoto coefficient on the masks and on their complements."""
    _check(yhat, y, s)
    return _finish(_complement_mean(yhat, _labels(y, yhat), s, None))


def tanimoto_loss(yhat, y, s: float = DEFAULT_SMOOTHING):
    return _finish(1 - tanimoto_with_complement(yhat, y, s))


def weighted_tanimoto_loss(yhat, y, w, s: float = DEFAULT_SMOOTHING):
    """``1 - T~_w`` where every pixel sum of the complemented Tanimoto carries weight ``w``.

    ``w`` has the shape of ``yhat`` without the class axis.  With ``w`` all
    ones the result is bitwise equal to :func:`tanimoto_loss`, since
    multiplying by 1.0 is exact and the summation order is unchanged.
    """
    _check(yhat, y, s)
    w = np.asarray(w, dtype=yhat.dtype)
    if tuple(w.shape) != tuple(yhat.shape[:-1]):
        raise ShapeError(f"weight map shape {w.shape} != {tuple(yhat.shape[:-1])}", dim="weights")
    if not np.all(w > 0):
        raise ConfigError("loss weights must be strictly positive", field="weights")
    y = _labels(y, yhat)
    return _finish(1 - _complement_mean(yhat, y, s, w[..., None]))


# -- hard metrics -------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def hard_labels(prob) -> np.ndarray:
    """Per-pixel argmax over the class axis; ties go to the lower class index."""
    return np.argmax(np.asarray(prob), axis=-1)


def confusion_counts(pred_hard, y, positive_class: int = 1) -> ConfusionCounts:
    """Pixel counts against one class.

    ``pred_hard`` and ``y`` may be one-hot stacks ``[..., C]`` or integer
    label maps of equal shape.
    """
    pred_hard, y = np.asarray(pred_hard), np.asarray(y)
    if pred_hard.shape != y.shape:
        raise ShapeError(f"prediction shape {pred_hard.shape} != label shape {y.shape}", dim="shape")
    if np.issubdtype(y.dtype, np.floating) or y.dtype == bool:
        n_classes = y.shape[-1]
        pred_hard, y = hard_labels(pred_hard), hard_labels(y)
    else:
        n_classes = int(max(pred_hard.max(initial=0), y.max(initial=0))) + 1
    if not 0 <= positive_class < max(n_classes, 2):
        raise ConfigError(f"class index {positive_class} out of range", field="positive_class")
    p, g = pred_hard == positive_class, y == positive_class
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp, fp, fn, int(p.size) - tp - fp - fn)


def metrics_from_counts(c: ConfusionCounts) -> dict[str, float]:
    """Dice, precision, recall and F1 from counts.

    A zero denominator gives 0 for that metric, except that an empty
    prediction of an empty class (TP = FP = FN = 0) scores 1 everywhere.
    """
    if c.tp == c.fp == c.fn == 0:
        return {"dice": 1.0, "precision": 1.0, "recall": 1.0, "f1": 1.0}
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    dice = 2 * c.tp / (2 * c.tp + c.fp + c.fn)
    return {"dice": dice, "precision": precision, "recall": recall, "f1": f1}


METRIC_COLUMNS = ("sample_id", "class", "dice", "precision", "recall", "f1")


def write_metrics_csv(path, rows: Iterable[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
