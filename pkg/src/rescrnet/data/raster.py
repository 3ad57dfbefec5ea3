"""Grayscale raster I/O (8/16-bit PNG, plain and raw PGM) via Pillow."""

from __future__ import annotations

import os

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..errors import DataError


def read_raw(path) -> tuple[np.ndarray, int]:
    """Decode to an integer array and its full-scale value (255 or 65535).

    Pillow already rescales PGM files with a non-standard maxval to the
    full 8- or 16-bit range.
    """
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("1", "P", "RGB", "RGBA", "LA"):
                im = im.convert("L")
                mode = "L"
            arr = np.array(im)
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise DataError(f"cannot decode {path}: {exc}") from exc
    if arr.ndim != 2:
        raise DataError(f"{path}: expected a single-channel image, got shape {arr.shape}")
    return arr.astype(np.int64), 255 if mode == "L" else 65535


def read_image(path) -> np.ndarray:
    """Grayscale image as float32 in [0, 1]."""
    arr, maxval = read_raw(path)
    return (arr / float(maxval)).astype(np.float32)


def read_mask(path) -> np.ndarray:
    """Binary mask plane (bool).  Values must be 0 and at most one non-zero level."""
    arr, _ = read_raw(path)
    levels = np.unique(arr)
    if len(levels) > 2 or (len(levels) == 2 and levels[0] != 0):
        raise DataError(f"{path}: mask is not binary (levels {levels[:5].tolist()})")
    return arr > 0


def write_mask(path, plane: np.ndarray) -> None:
    """Binary plane as 8-bit {0, 255}; format from the extension (.png or .pgm)."""
    _save(path, np.where(np.asarray(plane).astype(bool), 255, 0).astype(np.uint8))


def write_image(path, image: np.ndarray, bits: int = 8) -> None:
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    if bits == 8:
        _save(path, np.rint(img * 255).astype(np.uint8))
    elif bits == 16:
        _save(path, np.rint(img * 65535).astype(np.uint16))
    else:
        raise ValueError(f"bits must be 8 or 16, got {bits}")


def _save(path, arr: np.ndarray) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    Image.fromarray(arr).save(path)
