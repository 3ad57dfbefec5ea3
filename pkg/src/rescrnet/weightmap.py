"""Contour-aware per-pixel loss weights.

``w(x) = w_c(x) + w0 * exp(-d(x)^2 / (2 sigma^2))`` where ``d`` is the
Euclidean distance to the nearest foreground boundary pixel and ``w_c`` an
optional inverse-class-frequency balance term.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy import ndimage

from .errors import ConfigError, ShapeError

log = logging.getLogger(__name__)

DEFAULT_W0 = 10.0
DEFAULT_SIGMA = 5.0


def boundary_pixels(plane: np.ndarray) -> np.ndarray:
    """Foreground pixels with at least one background 4-neighbour inside the image."""
    fg = np.asarray(plane).astype(bool)
    if fg.ndim != 2:
        raise ShapeError(f"expected a 2-D mask plane, got shape {fg.shape}", dim="rank")
    bg_nb = np.zeros_like(fg)
    bg_nb[1:, :] |= ~fg[:-1, :]
    bg_nb[:-1, :] |= ~fg[1:, :]
    bg_nb[:, 1:] |= ~fg[:, :-1]
    bg_nb[:, :-1] |= ~fg[:, 1:]
    return fg & bg_nb


def distance_to_boundary(plane: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance from every pixel to the nearest boundary pixel.

    A plane without boundary pixels (all foreground or all background) gives
    ``+inf`` everywhere.
    """
    b = boundary_pixels(plane)
    if not b.any():
        return np.full(b.shape, np.inf)
    return ndimage.distance_transform_edt(~b)


def balance_weights(plane: np.ndarray) -> np.ndarray:
    """Inverse class frequency, normalised so the weights average to 1 over the image."""
    fg = np.asarray(plane).astype(bool)
    n, nfg = fg.size, int(fg.sum())
    if nfg == 0 or nfg == n:
        log.warning("class balance undefined for a single-class mask; using weight 1")
        return np.ones(fg.shape)
    return np.where(fg, n / (2.0 * nfg), n / (2.0 * (n - nfg)))


def contour_weight_map(y: np.ndarray, w0: float = DEFAULT_W0, sigma: float = DEFAULT_SIGMA,
                       balance: bool = False, foreground_class: int = 1) -> np.ndarray:
    """Weights for one sample.

    ``y`` is a one-hot stack ``[rows, cols, C]`` (the contour is taken from
    channel ``foreground_class``) or a binary ``[rows, cols]`` plane.
    """
    if w0 < 0:
        raise ConfigError(f"w0 must be >= 0, got {w0}", field="w0")
    if sigma <= 0:
        raise ConfigError(f"sigma must be > 0, got {sigma}", field="sigma")
    y = np.asarray(y)
    plane = y[..., foreground_class] if y.ndim == 3 else y
    wc = balance_weights(plane) if balance else np.ones(plane.shape)
    if w0 == 0:
        return wc
    d = distance_to_boundary(plane)
    return wc + w0 * np.exp(-(d * d) / (2.0 * sigma * sigma))
