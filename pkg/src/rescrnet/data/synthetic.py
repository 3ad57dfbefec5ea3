"""Synthetic chest-film-like images with exact lung masks.

Each image holds two bright elliptical "lung" fields on a textured
background, crossed by oblique rib stripes and dimmed by a few opacity
patches.  Blob positions and sizes are jittered so that predicting the
dataset's mean mask scores well below a trained model.
"""

from __future__ import annotations

import json
import os

import numpy as np
from scipy import ndimage

from .. import rng as rngmod
from ..errors import ConfigError, DataError
from ..losses import confusion_counts, metrics_from_counts
from .manifest import DatasetManifest, Entry, split_manifest, write_manifest
from .raster import write_image, write_mask

AREA_RANGE = (0.15, 0.55)
MIN_SIDE = 24


def _ellipse(h, w, cy, cx, ry, rx, angle):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    c, s = np.cos(angle), np.sin(angle)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def _lungs(rng, h, w):
    for _ in range(100):
        cy = h * (0.5 + rng.uniform(-0.08, 0.08))
        gap = w * rng.uniform(0.20, 0.27)
        cx0 = w * (0.5 + rng.uniform(-0.07, 0.07))
        ry = h * rng.uniform(0.22, 0.36)
        mask = np.zeros((h, w), bool)
        for side in (-1, 1):
            rx = w * rng.uniform(0.09, 0.16)
            mask |= _ellipse(h, w, cy + h * rng.uniform(-0.05, 0.05), cx0 + side * gap, ry * rng.uniform(0.85, 1.1),
                             rx, side * rng.uniform(0.0, 0.25))
        if AREA_RANGE[0] <= mask.mean() <= AREA_RANGE[1]:
            return mask
    raise DataError("could not place lung fields with an admissible area")


def synth_sample(rng: np.random.Generator, rows: int, cols: int) -> tuple[np.ndarray, np.ndarray]:
    """One (image in [0, 1], boolean lung mask) pair."""
    if rows < MIN_SIDE or cols < MIN_SIDE:
        raise ConfigError(f"synthetic images need at least {MIN_SIDE}x{MIN_SIDE} pixels", field="rows")
    h, w = rows, cols
    mask = _lungs(rng, h, w)
    bg = 0.30 + 0.10 * ndimage.gaussian_filter(rng.normal(size=(h, w)), 4) * 4
    bg += 0.08 * np.linspace(-1, 1, h)[:, None] * rng.uniform(-1, 1)
    lung_level = rng.uniform(0.62, 0.78)
    soft = ndimage.gaussian_filter(mask.astype(np.float64), 1.0)
    img = bg + (lung_level - 0.30) * soft
    # rib stripes: oblique sinusoidal bands
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    period = h * rng.uniform(0.10, 0.16)
    tilt = rng.uniform(-0.5, 0.5)
    ribs = np.clip(np.sin(2 * np.pi * (yy + tilt * np.abs(xx - w / 2)) / period + rng.uniform(0, 2 * np.pi)), 0, 1)
    img += rng.uniform(0.05, 0.12) * ribs ** 3
    # opacity patches pulling lung intensity toward the background
    for _ in range(rng.integers(1, 4)):
        py, px = rng.uniform(0.2, 0.8) * h, rng.uniform(0.15, 0.85) * w
        r = min(h, w) * rng.uniform(0.05, 0.11)
        blob = np.exp(-((yy - py) ** 2 + (xx - px) ** 2) / (2 * r * r))
        img -= rng.uniform(0.10, 0.22) * blob * soft
    img += rng.normal(scale=0.02, size=(h, w))
    return np.clip(img, 0.0, 1.0), mask


def mean_mask_baseline(masks: list[np.ndarray]) -> float:
    """Mean lung-class Dice of the thresholded pixelwise-average mask against every sample."""
    mean = np.mean([m.astype(np.float64) for m in masks], axis=0) >= 0.5
    scores = [metrics_from_counts(confusion_counts(mean.astype(np.int64), m.astype(np.int64)))["dice"]
              for m in masks]
    return float(np.mean(scores))


def generate_synthetic_dataset(out_dir: str, count: int, rows: int = 96, cols: int = 96, seed: int = 0,
                               val_fraction: float | None = None) -> DatasetManifest:
    """Write images/, masks/, manifest.tsv and summary.json under ``out_dir``.

    Every sample is its own group.  With ``val_fraction`` the manifest is
    split; otherwise every entry is in ``train``.
    """
    if count < 2:
        raise ConfigError(f"count must be >= 2, got {count}", field="count")
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    entries, masks = [], []
    width = max(3, len(str(count - 1)))
    for i in range(count):
        sid = f"synth{i:0{width}d}"
        img, mask = synth_sample(rngmod.stream(seed, rngmod.SYNTH, i), rows, cols)
        write_image(os.path.join(out_dir, "images", f"{sid}.png"), img)
        write_mask(os.path.join(out_dir, "masks", f"{sid}.png"), mask)
        entries.append(Entry(sid, f"images/{sid}.png", (f"masks/{sid}.png",), sid, "train"))
        masks.append(mask)
    baseline = mean_mask_baseline(masks)
    if baseline >= 0.9:
        raise DataError(f"mean-mask baseline Dice {baseline:.3f} leaves no headroom; increase jitter")
    if val_fraction:
        manifest = split_manifest(entries, val_fraction, seed, out_dir)
    else:
        manifest = DatasetManifest(entries, out_dir)
    write_manifest(os.path.join(out_dir, "manifest.tsv"), manifest)
    summary = {
        "count": count, "rows": rows, "cols": cols, "seed": seed,
        "lung_fraction": [round(float(m.mean()), 6) for m in masks],
        "mean_mask_baseline_dice": round(baseline, 6),
    }
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1)
    return manifest
