"""Sample loading and the deterministic batch stream."""

from __future__ import annotations

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from ..errors import ConfigError, DataError
from ..weightmap import DEFAULT_SIGMA, DEFAULT_W0, contour_weight_map
from .augment import AugmentRanges, Sample, apply_augment, augment_rng, draw_augment_params
from .manifest import DatasetManifest
from .preprocess import histogram_equalize, masks_to_onehot, resize
from .raster import read_image, read_mask


@dataclass(frozen=True)
class PreprocessConfig:
    resize_rows: int = 0  # 0 keeps the native size
    resize_cols: int = 0
    equalize: bool = True
    w0: float = DEFAULT_W0
    sigma: float = DEFAULT_SIGMA
    balance: bool = False


def load_sample(manifest: DatasetManifest, entry, pre: PreprocessConfig = PreprocessConfig()) -> Sample:
    """Decode, resize, equalise and attach a contour weight map."""
    image = read_image(manifest.resolve(entry.image_path))
    planes = [read_mask(manifest.resolve(p)) for p in entry.mask_paths]
    for p, path in zip(planes, entry.mask_paths):
        if p.shape != image.shape:
            raise DataError(f"{entry.sample_id}: mask {path} is {p.shape}, image is {image.shape}")
    if pre.resize_rows and pre.resize_cols:
        image = resize(image, pre.resize_rows, pre.resize_cols, "bilinear")
        planes = [resize(p, pre.resize_rows, pre.resize_cols, "nearest") for p in planes]
    if pre.equalize:
        image = histogram_equalize(image)
    masks = masks_to_onehot(planes)
    weights = contour_weight_map(masks, pre.w0, pre.sigma, pre.balance).astype(np.float32)
    return Sample(entry.sample_id, image.astype(np.float32), masks, weights)


class SampleStore:
    """Lazily loaded, cached samples of one manifest (thread-safe)."""

    def __init__(self, manifest: DatasetManifest, pre: PreprocessConfig = PreprocessConfig()):
        self.manifest = manifest
        self.pre = pre
        self._cache: dict[str, Sample] = {}
        self._lock = threading.Lock()
        self._by_id = {e.sample_id: e for e in manifest.entries}

    def get(self, sample_id: str) -> Sample:
        with self._lock:
            s = self._cache.get(sample_id)
        if s is None:
            s = load_sample(self.manifest, self._by_id[sample_id], self.pre)
            with self._lock:
                s = self._cache.setdefault(sample_id, s)
        return s

    def ids(self, split: str) -> list[str]:
        return [e.sample_id for e in self.manifest.split(split)]


@dataclass
class Batch:
    sample_ids: list[str]
    images: np.ndarray  # [B, rows, cols, 1]
    masks: np.ndarray  # [B, rows, cols, C]
    weights: np.ndarray  # [B, rows, cols]


def num_batches(n_samples: int, batch_size: int) -> int:
    return math.ceil(n_samples / batch_size)


def batch_iterator(store: SampleStore, split: str, batch_size: int, seed: int = 0, epoch: int = 0,
                   augment: bool = True, ranges: AugmentRanges = AugmentRanges(),
                   workers: int = 1) -> Iterator[Batch]:
    """Batches in manifest order (no shuffling); the last batch may be short.

    Sample ``k`` of the split in epoch ``e`` is augmented with parameters
    drawn from the stream keyed by ``(seed, e, k)``, so the output does not
    depend on ``workers``.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}", field="batch_size")
    ids = store.ids(split)
    if not ids:
        raise DataError(f"split {split!r} is empty")

    def prepare(k: int) -> Sample:
        s = store.get(ids[k])
        if augment:
            s = apply_augment(s, draw_augment_params(augment_rng(seed, epoch, k), ranges))
        return s

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for start in range(0, len(ids), batch_size):
            ks = range(start, min(start + batch_size, len(ids)))
            samples = list(pool.map(prepare, ks)) if pool else [prepare(k) for k in ks]
            yield collate(samples)
    finally:
        if pool:
            pool.shutdown()


def collate(samples: list[Sample]) -> Batch:
    shapes = {s.image.shape for s in samples}
    if len(shapes) != 1:
        raise DataError(f"samples in one batch differ in size: {sorted(shapes)}")
    return Batch(
        [s.sample_id for s in samples],
        np.stack([s.image for s in samples])[..., None],
        np.stack([s.masks for s in samples]),
        np.stack([s.weights if s.weights is not None else np.ones(s.image.shape, np.float32) for s in samples]),
    )
