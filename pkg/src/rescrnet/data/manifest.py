"""Dataset manifests and leakage-free train/validation splitting.

On disk a manifest is UTF-8, tab-separated, one record per line::

    sample_id  image_path  mask_path  group_id  split

with a header line.  Paths are relative to the manifest's directory.
``mask_path`` holds one foreground mask per non-background class, comma
separated (a single lung mask for the two-class case).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace

from .. import rng as rngmod
from ..errors import ConfigError, DataError

COLUMNS = ("sample_id", "image_path", "mask_path", "group_id", "split")
SPLITS = ("train", "val")


@dataclass(frozen=True)
class Entry:
    sample_id: str
    image_path: str
    mask_paths: tuple[str, ...]
    group_id: str = ""
    split: str = "train"

    def __post_init__(self):
        if not self.group_id:
            object.__setattr__(self, "group_id", f"unknown:{self.sample_id}")


@dataclass
class DatasetManifest:
    entries: list[Entry]
    root: str = "."

    def split(self, name: str) -> list[Entry]:
        return [e for e in self.entries if e.split == name]

    def resolve(self, rel: str) -> str:
        return rel if os.path.isabs(rel) else os.path.join(self.root, rel)

    def check_leakage(self) -> None:
        train = {e.group_id for e in self.split("train")}
        val = {e.group_id for e in self.split("val")}
        both = train & val
        if both:
            raise DataError(f"groups in both splits: {sorted(both)[:5]}")

    def validate(self, check_files: bool = True) -> "DatasetManifest":
        ids = [e.sample_id for e in self.entries]
        if len(ids) != len(set(ids)):
            raise DataError("duplicate sample_id in manifest")
        for e in self.entries:
            if e.split not in SPLITS:
                raise DataError(f"{e.sample_id}: unknown split {e.split!r}")
            if check_files:
                for p in (e.image_path, *e.mask_paths):
                    if not os.path.isfile(self.resolve(p)):
                        raise DataError(f"{e.sample_id}: missing file {p}")
        self.check_leakage()
        return self


def read_manifest(path) -> DatasetManifest:
    root = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split("\t")
            if tuple(cols) == COLUMNS:
                continue
            if len(cols) != len(COLUMNS):
                raise DataError(f"{path}:{lineno}: expected {len(COLUMNS)} tab-separated fields, got {len(cols)}")
            sid, img, masks, group, split = cols
            entries.append(Entry(sid, img, tuple(masks.split(",")), group, split))
    return DatasetManifest(entries, root)


def write_manifest(path, manifest: DatasetManifest) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(COLUMNS) + "\n")
        for e in manifest.entries:
            fh.write("\t".join((e.sample_id, e.image_path, ",".join(e.mask_paths), e.group_id, e.split)) + "\n")


def split_manifest(entries: list[Entry], val_fraction: float, seed: int = 0, root: str = ".") -> DatasetManifest:
    """Assign whole groups to train or val.

    The validation target is ``round(val_fraction * N)`` samples.  Groups are
    visited in a seeded random order and taken while they fit under the
    target, so the achieved size is within one group of it.
    """
    if not 0 < val_fraction < 1:
        raise ConfigError(f"val_fraction must be in (0, 1), got {val_fraction}", field="val_fraction")
    groups: dict[str, list[int]] = {}
    for i, e in enumerate(entries):
        groups.setdefault(e.group_id, []).append(i)
    if len(groups) < 2:
        raise DataError(f"need at least 2 groups to split, got {len(groups)}")
    target = math.floor(val_fraction * len(entries) + 0.5)
    order = sorted(groups)
    perm = rngmod.stream(seed, rngmod.SPLIT).permutation(len(order))
    val_groups: set[str] = set()
    n_val = 0
    for k in perm:
        g = order[k]
        if n_val + len(groups[g]) <= target and len(val_groups) < len(groups) - 1:
            val_groups.add(g)
            n_val += len(groups[g])
    if not val_groups:
        val_groups.add(min(order, key=lambda g: (len(groups[g]), g)))
    out = [replace(e, split="val" if e.group_id in val_groups else "train") for e in entries]
    m = DatasetManifest(out, root)
    m.check_leakage()
    return m
