"""Ingestion, preprocessing, splitting, augmentation, batching, synthetic data."""

from .augment import AugmentParams, AugmentRanges, Sample, apply_augment, augment_rng, draw_augment_params
from .batches import Batch, PreprocessConfig, SampleStore, batch_iterator, collate, load_sample, num_batches
from .manifest import DatasetManifest, Entry, read_manifest, split_manifest, write_manifest
from .preprocess import complement_mask, histogram_equalize, masks_to_onehot, onehot_to_planes, resize
from .raster import read_image, read_mask, write_image, write_mask
from .synthetic import generate_synthetic_dataset, mean_mask_baseline

__all__ = [
    "AugmentParams", "AugmentRanges", "Batch", "DatasetManifest", "Entry", "PreprocessConfig", "Sample",
    "SampleStore", "apply_augment", "augment_rng", "batch_iterator", "collate", "complement_mask",
    "draw_augment_params", "generate_synthetic_dataset", "histogram_equalize", "load_sample",
    "masks_to_onehot", "mean_mask_baseline", "num_batches", "onehot_to_planes", "read_image", "read_manifest",
    "read_mask", "resize", "split_manifest", "write_image", "write_manifest", "write_mask",
]
