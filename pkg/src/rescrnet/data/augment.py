"""Deterministic geometric augmentation with reflecting borders.

One affine map per sample, applied identically to image, masks and weight
map::

    p' = R(rotation) . Shear(shear) . Scale(scale) . (p - centre) + centre + shift

followed by optional horizontal / vertical mirroring.  Coordinates are
``(x = col, y = row)`` with rows growing downward, so a positive rotation
turns the picture clockwise on screen.  The image is resampled bilinearly,
masks and weights by nearest neighbour; reads outside the frame reflect
about the border (``d c b a | a b c d | d c b a``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import rng as rngmod
from ..errors import ConfigError, DataError


@dataclass(frozen=True)
class AugmentRanges:
    rotation_deg: float = 15.0
    shear_deg: float = 8.0
    shift_frac: float = 0.10
    scale_min: float = 0.9
    scale_max: float = 1.1
    flip_h_prob: float = 0.5
    flip_v_prob: float = 0.5

    @classmethod
    def identity(cls) -> "AugmentRanges":
        return cls(0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0)


@dataclass(frozen=True)
class AugmentParams:
    """Shifts are fractions of the image height (rows) and width (cols)."""

    rotation_deg: float = 0.0
    shear_deg: float = 0.0
    shift_rows: float = 0.0
    shift_cols: float = 0.0
    flip_h: bool = False
    flip_v: bool = False
    scale: float = 1.0


@dataclass
class Sample:
    sample_id: str
    image: np.ndarray  # [rows, cols] float32 in [0, 1]
    masks: np.ndarray  # [rows, cols, C] one-hot float32
    weights: np.ndarray | None = None  # [rows, cols] float32


def augment_rng(seed: int, epoch: int, ordinal: int) -> np.random.Generator:
    return rngmod.stream(seed, rngmod.AUGMENT, epoch, ordinal)


def draw_augment_params(rng: np.random.Generator, ranges: AugmentRanges = AugmentRanges()) -> AugmentParams:
    # draw order is part of the reproducibility contract
    rot = rng.uniform(-ranges.rotation_deg, ranges.rotation_deg)
    shear = rng.uniform(-ranges.shear_deg, ranges.shear_deg)
    sr = rng.uniform(-ranges.shift_frac, ranges.shift_frac)
    sc = rng.uniform(-ranges.shift_frac, ranges.shift_frac)
    fh = rng.random() < ranges.flip_h_prob
    fv = rng.random() < ranges.flip_v_prob
    scale = rng.uniform(ranges.scale_min, ranges.scale_max)
    return AugmentParams(float(rot), float(shear), float(sr), float(sc), bool(fh), bool(fv), float(scale))


def reflect_index(i: np.ndarray, n: int) -> np.ndarray:
    """Map integer indices into [0, n) by half-sample symmetric reflection."""
    i = np.mod(i, 2 * n)
    return np.where(i >= n, 2 * n - 1 - i, i)


def source_coords(shape: tuple[int, int], p: AugmentParams) -> tuple[np.ndarray, np.ndarray]:
    """Source (row, col) sampled by every output pixel."""
    if abs(p.scale) < 1e-6:
        raise ConfigError(f"scale {p.scale} too close to zero", field="scale")
    h, w = shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    if p.flip_h:
        xs = (w - 1) - xs
    if p.flip_v:
        ys = (h - 1) - ys
    # inverse of R . Sh . S:  S^-1 . Sh^-1 . R^-1
    th, ph = math.radians(p.rotation_deg), math.radians(p.shear_deg)
    c, s, t = math.cos(th), math.sin(th), math.tan(ph)
    dx = xs - cx - p.shift_cols * w
    dy = ys - cy - p.shift_rows * h
    rx = c * dx + s * dy
    ry = -s * dx + c * dy
    ux = rx - t * ry
    return ry / p.scale + cy, ux / p.scale + cx


def _sample_nearest(a: np.ndarray, sy: np.ndarray, sx: np.ndarray) -> np.ndarray:
    iy = reflect_index(np.floor(sy + 0.5).astype(np.int64), a.shape[0])
    ix = reflect_index(np.floor(sx + 0.5).astype(np.int64), a.shape[1])
    return a[iy, ix]


def _sample_bilinear(a: np.ndarray, sy: np.ndarray, sx: np.ndarray) -> np.ndarray:
    h, w = a.shape
    y0, x0 = np.floor(sy), np.floor(sx)
    fy, fx = (sy - y0).astype(a.dtype), (sx - x0).astype(a.dtype)
    y0, x0 = y0.astype(np.int64), x0.astype(np.int64)
    ya, yb = reflect_index(y0, h), reflect_index(y0 + 1, h)
    xa, xb = reflect_index(x0, w), reflect_index(x0 + 1, w)
    top = a[ya, xa] * (1 - fx) + a[ya, xb] * fx
    bot = a[yb, xa] * (1 - fx) + a[yb, xb] * fx
    out = top * (1 - fy) + bot * fy
    return np.clip(out, a.min(), a.max())


def apply_augment(sample: Sample, p: AugmentParams) -> Sample:
    img = np.asarray(sample.image)
    if img.ndim != 2 or sample.masks.shape[:2] != img.shape:
        raise DataError(f"{sample.sample_id}: image {img.shape} and masks {sample.masks.shape} disagree")
    sy, sx = source_coords(img.shape, p)
    image = _sample_bilinear(img, sy, sx).astype(img.dtype)
    labels = _sample_nearest(np.argmax(sample.masks, axis=-1), sy, sx)
    masks = np.eye(sample.masks.shape[-1], dtype=sample.masks.dtype)[labels]
    weights = None if sample.weights is None else _sample_nearest(sample.weights, sy, sx)
    return Sample(sample.sample_id, image, masks, weights)
