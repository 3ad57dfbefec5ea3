"""Resizing, histogram equalisation, and one-hot mask construction."""

from __future__ import annotations

import numpy as np

from ..errors import DataError

TARGET_ROWS, TARGET_COLS = 300, 340


def _nearest_index(n_out: int, n_in: int) -> np.ndarray:
    # source index of each output pixel centre, in exact integer arithmetic
    return ((2 * np.arange(n_out) + 1) * n_in) // (2 * n_out)


def _linear_weights(n_out: int, n_in: int):
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize(image: np.ndarray, target_rows: int = TARGET_ROWS, target_cols: int = TARGET_COLS,
           mode: str = "bilinear") -> np.ndarray:
    """Resize the first two axes.  ``nearest`` keeps the input's value set (use for masks, weights)."""
    a = np.asarray(image)
    if a.ndim < 2 or a.shape[0] == 0 or a.shape[1] == 0 or target_rows < 1 or target_cols < 1:
        raise DataError(f"cannot resize shape {a.shape} to {target_rows}x{target_cols}")
    if mode == "nearest":
        return a[_nearest_index(target_rows, a.shape[0])][:, _nearest_index(target_cols, a.shape[1])]
    if mode != "bilinear":
        raise ValueError(f"mode must be 'bilinear' or 'nearest', got {mode!r}")
    r0, r1, fr = _linear_weights(target_rows, a.shape[0])
    c0, c1, fc = _linear_weights(target_cols, a.shape[1])
    extra = (1,) * (a.ndim - 2)
    fr = fr.reshape((-1, 1) + extra).astype(a.dtype)
    fc = fc.reshape((1, -1) + extra).astype(a.dtype)
    top = a[r0][:, c0] * (1 - fc) + a[r0][:, c1] * fc
    bot = a[r1][:, c0] * (1 - fc) + a[r1][:, c1] * fc
    return (top * (1 - fr) + bot * fr).astype(a.dtype)


def histogram_equalize(image: np.ndarray, bins: int = 256) -> np.ndarray:
    """Map each pixel to the cumulative fraction of pixels in its bin or below."""
    img = np.asarray(image, dtype=np.float64)
    idx = np.clip(np.floor(img * bins), 0, bins - 1).astype(np.int64)
    cdf = np.cumsum(np.bincount(idx.ravel(), minlength=bins)) / idx.size
    return cdf[idx].astype(np.float32)


def _binary(plane: np.ndarray, what: str) -> np.ndarray:
    p = np.asarray(plane)
    if p.dtype != bool:
        if not np.all((p == 0) | (p == 1)):
            raise DataError(f"{what} is not binary")
        p = p.astype(bool)
    return p


def complement_mask(lung_mask: np.ndarray) -> np.ndarray:
    """Two-channel one-hot stack ``[non-lung, lung]`` from a binary lung plane."""
    lung = _binary(lung_mask, "lung mask")
    return np.stack([~lung, lung], axis=-1).astype(np.float32)


def masks_to_onehot(planes: list[np.ndarray]) -> np.ndarray:
    """One-hot stack from foreground planes of classes 1..C-1; class 0 is everything else."""
    if len(planes) == 1:
        return complement_mask(planes[0])
    fg = np.stack([_binary(p, f"mask {i + 1}") for i, p in enumerate(planes)], axis=-1)
    if np.any(fg.sum(axis=-1) > 1):
        raise DataError("class masks overlap")
    return np.concatenate([~fg.any(axis=-1, keepdims=True), fg], axis=-1).astype(np.float32)


def onehot_to_planes(stack: np.ndarray) -> list[np.ndarray]:
    """Inverse of :func:`masks_to_onehot`: boolean planes for classes 1..C-1."""
    labels = np.argmax(stack, axis=-1)
    return [labels == c for c in range(1, stack.shape[-1])]
