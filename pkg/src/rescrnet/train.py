"""Training loop, evaluation and prediction.

A run directory holds::

    config.txt      the configuration, echoed verbatim
    history.csv     one row per epoch (deterministic)
    timing.csv      wall-clock seconds per epoch (not deterministic)
    best.rcnw       checkpoint with the highest validation Tanimoto
    final.rcnw      checkpoint after the last epoch
    epoch_NNNN.rcnw checkpoints at the configured cadence
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import rng as rngmod
from .checkpoint import checkpoint_extra, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .core import Tensor, backward, no_grad
from .data import (
    DatasetManifest,
    PreprocessConfig,
    SampleStore,
    batch_iterator,
    histogram_equalize,
    read_image,
    read_manifest,
    write_image,
    write_mask,
)
from .errors import ConfigError, DataError, NumericalError
from .losses import (
    METRIC_COLUMNS,
    confusion_counts,
    hard_labels,
    metrics_from_counts,
    tanimoto_with_complement,
    weighted_tanimoto_loss,
    write_metrics_csv,
)
from .model import Model, build_res_cr_net

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "train_loss", "train_metric", "val_loss", "val_metric")


class Adam:
    """Adam with the bias correction folded into the step size.

    ``lr_t = lr * sqrt(1 - b2^t) / (1 - b1^t)`` and
    ``p -= lr_t * m / (sqrt(v) + eps)``.
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-7):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        if self.lr == 0:
            return
        lr_t = self.lr * np.sqrt(1 - self.beta2 ** self.t) / (1 - self.beta1 ** self.t)
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad.astype(p.data.dtype, copy=False)
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p.data -= (lr_t * m / (np.sqrt(v) + self.eps)).astype(p.data.dtype, copy=False)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


@dataclass
class TrainingHistory:
    rows: list[dict] = field(default_factory=list)
    wall_time: list[float] = field(default_factory=list)

    def column(self, name: str) -> list[float]:
        return [r[name] for r in self.rows]


def _fmt(v: float) -> str:
    return repr(float(v))


def _param_norms(model: Model) -> str:
    return "\n".join(f"  {n}: |w|={np.linalg.norm(t.data):.4g}"
                     + (f" |g|={np.linalg.norm(t.grad):.4g}" if t.grad is not None else "")
                     for n, t in model.named_parameters())


def train_step(model: Model, opt: Adam, images, masks, weights, s: float, rng) -> tuple[float, float]:
    """One forward/backward/update; returns (weighted loss, Tanimoto coefficient) before the update."""
    opt.zero_grad()
    yhat = model.forward(images, training=True, rng=rng)
    loss = weighted_tanimoto_loss(yhat, masks.astype(yhat.dtype), weights.astype(yhat.dtype), s)
    value = float(loss.data)
    if not np.isfinite(value):
        return value, float("nan")
    backward(loss)
    opt.step()
    return value, tanimoto_with_complement(yhat.data, masks, s)


def validate(model: Model, store: SampleStore, batch_size: int, s: float) -> tuple[float, float]:
    """Mean over validation samples of (weighted loss, Tanimoto coefficient) in inference mode."""
    losses, coeffs = [], []
    with no_grad():
        for b in batch_iterator(store, "val", batch_size, augment=False):
            prob = model.forward(b.images).data
            for i in range(len(b.sample_ids)):
                y = b.masks[i].astype(prob.dtype)
                losses.append(weighted_tanimoto_loss(prob[i], y, b.weights[i].astype(prob.dtype), s))
                coeffs.append(tanimoto_with_complement(prob[i], y, s))
    return float(np.mean(losses)), float(np.mean(coeffs))


def train(cfg: TrainConfig, manifest: DatasetManifest | None = None) -> TrainingHistory:
    cfg.validate()
    if manifest is None:
        if not cfg.manifest:
            raise ConfigError("no manifest given", field="manifest")
        manifest = read_manifest(cfg.manifest)
    manifest.validate()
    for split in ("train", "val"):
        if not manifest.split(split):
            raise DataError(f"manifest has no {split!r} samples")
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_text())

    model = build_res_cr_net(cfg.net, seed=cfg.seed)
    opt = Adam(model.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    store = SampleStore(manifest, cfg.preprocess)
    extra = {"preprocess": dataclasses.asdict(cfg.preprocess), "smoothing": cfg.smoothing}
    history = TrainingHistory()
    best = -np.inf

    hist_path, time_path = os.path.join(out, "history.csv"), os.path.join(out, "timing.csv")
    with open(hist_path, "w", encoding="utf-8", newline="\n") as hf, \
            open(time_path, "w", encoding="utf-8", newline="\n") as tf:
        hf.write(",".join(HISTORY_COLUMNS) + "\n")
        tf.write("epoch,wall_time\n")
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.perf_counter()
            batch_losses, batch_coeffs, sizes = [], [], []
            batches = batch_iterator(store, "train", cfg.batch_size, cfg.seed, epoch, cfg.augment, cfg.ranges,
                                     cfg.workers)
            for bi, b in enumerate(batches):
                rng = rngmod.stream(cfg.seed, rngmod.DROPOUT, epoch, bi)
                loss, coeff = train_step(model, opt, b.images, b.masks, b.weights, cfg.smoothing, rng)
                if not np.isfinite(loss):
                    raise NumericalError(f"non-finite loss {loss} at epoch {epoch}, batch {bi}; parameter norms:\n"
                                         + _param_norms(model))
                batch_losses.append(loss)
                batch_coeffs.append(coeff)
                sizes.append(len(b.sample_ids))
            val_loss, val_metric = validate(model, store, cfg.batch_size, cfg.smoothing)
            row = {"epoch": epoch,
                   "train_loss": float(np.average(batch_losses, weights=sizes)),
                   "train_metric": float(np.average(batch_coeffs, weights=sizes)),
                   "val_loss": val_loss, "val_metric": val_metric}
            history.rows.append(row)
            hf.write(",".join([str(epoch)] + [_fmt(row[c]) for c in HISTORY_COLUMNS[1:]]) + "\n")
            hf.flush()
            ep_extra = extra | {"epoch": epoch, "val_metric": val_metric}
            if val_metric > best:
                best = val_metric
                save_checkpoint(model, os.path.join(out, "best.rcnw"), ep_extra)
            if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
                save_checkpoint(model, os.path.join(out, f"epoch_{epoch:04d}.rcnw"), ep_extra)
            dt = time.perf_counter() - t0
            history.wall_time.append(dt)
            tf.write(f"{epoch},{dt:.3f}\n")
            tf.flush()
            log.info("epoch %d  loss %.4f  T %.4f  val_loss %.4f  val_T %.4f  (%.1fs)", epoch, row["train_loss"],
                     row["train_metric"], val_loss, val_metric, dt)
    save_checkpoint(model, os.path.join(out, "final.rcnw"), extra | {"epoch": cfg.epochs})
    return history


def read_history(path) -> TrainingHistory:
    """Parse history.csv; malformed lines raise DataError naming the line."""
    hist = TrainingHistory()
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or tuple(c.strip() for c in lines[0].split(",")[:len(HISTORY_COLUMNS)]) != HISTORY_COLUMNS:
        raise DataError(f"{path}:1: expected header {','.join(HISTORY_COLUMNS)}")
    header = [c.strip() for c in lines[0].split(",")]
    prev = 0
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(cells)}")
        try:
            rec = dict(zip(header, cells))
            row = {"epoch": int(rec["epoch"])} | {c: float(rec[c]) for c in HISTORY_COLUMNS[1:]}
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        if row["epoch"] <= prev:
            raise DataError(f"{path}:{lineno}: epoch {row['epoch']} is not increasing")
        prev = row["epoch"]
        hist.rows.append(row)
    if not hist.rows:
        raise DataError(f"{path}: no history rows")
    return hist


# -- evaluation and prediction -----------------------------------------------

Predictor = Callable[[np.ndarray], np.ndarray]


def model_predictor(model: Model) -> Predictor:
    def predict_fn(images: np.ndarray) -> np.ndarray:
        with no_grad():
            return model.forward(images).data
    return predict_fn


def evaluate(model_file: str | None, manifest: DatasetManifest, split: str = "val", out_csv: str | None = None,
             predictor: Predictor | None = None, batch_size: int = 8, positive_class: int = 1) -> dict:
    """Per-sample Dice/precision/recall/F1 of one class plus the mean Tanimoto coefficient.

    Aggregates are unweighted means over samples.  ``predictor`` replaces
    the checkpoint (used to inject an oracle in tests).  Returns
    ``{"rows": [...], "mean": {...}, "mean_tanimoto": float}``.
    """
    pre = PreprocessConfig()
    s = 1.0
    if predictor is None:
        if model_file is None:
            raise ConfigError("need a checkpoint or a predictor", field="model_file")
        model = load_checkpoint(model_file)
        extra = checkpoint_extra(model_file)
        pre = PreprocessConfig(**extra.get("preprocess", {}))
        s = extra.get("smoothing", 1.0)
        predictor = model_predictor(model)
    store = SampleStore(manifest, pre)
    rows, coeffs = [], []
    cls_name = "lung" if positive_class == 1 else str(positive_class)
    for b in batch_iterator(store, split, batch_size, augment=False):
        prob = np.asarray(predictor(b.images))
        for i, sid in enumerate(b.sample_ids):
            m = metrics_from_counts(confusion_counts(hard_labels(prob[i]), hard_labels(b.masks[i]), positive_class))
            rows.append({"sample_id": sid, "class": cls_name, **m})
            coeffs.append(tanimoto_with_complement(prob[i].astype(np.float64), b.masks[i].astype(np.float64), s))
    mean = {k: float(np.mean([r[k] for r in rows])) for k in METRIC_COLUMNS[2:]}
    result = {"rows": rows, "mean": mean, "mean_tanimoto": float(np.mean(coeffs))}
    if out_csv:
        write_metrics_csv(out_csv, rows + [{"sample_id": "mean", "class": cls_name, **mean}])
        with open(os.path.splitext(out_csv)[0] + "_summary.json", "w", encoding="utf-8") as fh:
            json.dump({"split": split, "samples": len(rows), "mean": mean, "mean_tanimoto": result["mean_tanimoto"]},
                      fh, indent=1, sort_keys=True)
    return result


def predict(model_file: str, images: Sequence[str], out_dir: str, probabilities: bool = False) -> dict[str, str]:
    """Write ``<stem>_mask.png`` ({0, 255} lung mask) for every image.

    With ``probabilities`` each class also gets ``<stem>_prob<k>.png``
    (16-bit).  Files that fail to decode are reported and skipped.
    Returns ``{image: mask path or "error: ..."}``.
    """
    model = load_checkpoint(model_file)
    pre = PreprocessConfig(**checkpoint_extra(model_file).get("preprocess", {}))
    fn = model_predictor(model)
    os.makedirs(out_dir, exist_ok=True)
    results = {}
    for path in images:
        try:
            img = read_image(path)
        except DataError as exc:
            log.error("%s: %s", path, exc)
            results[path] = f"error: {exc}"
            continue
        if pre.equalize:
            img = histogram_equalize(img)
        prob = fn(img[None, :, :, None].astype(np.float32))[0]
        stem = os.path.splitext(os.path.basename(path))[0]
        out = os.path.join(out_dir, f"{stem}_mask.png")
        write_mask(out, hard_labels(prob) == 1)
        if probabilities:
            for k in range(prob.shape[-1]):
                write_image(os.path.join(out_dir, f"{stem}_prob{k}.png"), prob[..., k], bits=16)
        results[path] = out
    return results


def write_history_csv(path, hist: TrainingHistory) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for r in hist.rows:
            w.writerow([r["epoch"]] + [_fmt(r[c]) for c in HISTORY_COLUMNS[1:]])
