"""Versioned weights container.

Layout (all integers little-endian)::

    b"RCNW"                 magic
    uint32                  format version
    uint64                  manifest length in bytes
    manifest                UTF-8 JSON: config echo, tensor table, extras
    data                    raw little-endian float buffers, in table order

The tensor table lists ``name``, ``shape``, ``dtype`` (``<f4`` or ``<f8``),
``kind`` (``param`` or ``buffer``), ``offset`` and ``nbytes`` into the data
section.  JSON is written with sorted keys so identical models give
identical files.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .errors import CheckpointError, ConfigError
from .model import Model, NetConfig, build_res_cr_net

MAGIC = b"RCNW"
VERSION = 1
_HEADER = struct.Struct("<4sIQ")


def save_checkpoint(model: Model, path, extra: dict | None = None) -> None:
    table, blobs, offset = [], [], 0
    tensors = [(n, t.data, "param") for n, t in model.named_parameters()]
    tensors += [(n, a, "buffer") for n, a in model.named_buffers()]
    for name, arr, kind in tensors:
        le = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        blob = le.tobytes()
        table.append({"name": name, "shape": list(arr.shape), "dtype": le.dtype.str, "kind": kind,
                      "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    manifest = {"format": "rescrnet-weights", "version": VERSION, "config": model.config.to_dict(),
                "tensors": table, "data_bytes": offset, "extra": extra or {}}
    mbytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = f"{path}.tmp"
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(mbytes)))
        fh.write(mbytes)
        for b in blobs:
            fh.write(b)
    os.replace(tmp, path)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse and verify a weights file; returns (manifest, name -> array)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, mlen = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a weights file (magic {magic!r})")
    if version != VERSION:
        raise CheckpointError(f"{path}: format version {version}, this build reads {VERSION}")
    start = _HEADER.size + mlen
    if len(raw) < start:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[_HEADER.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest: {exc}") from exc
    data = raw[start:]
    if len(data) != manifest["data_bytes"]:
        raise CheckpointError(f"{path}: data section is {len(data)} bytes, manifest says {manifest['data_bytes']}"
                              + (" (truncated)" if len(data) < manifest["data_bytes"] else ""))
    arrays = {}
    for t in manifest["tensors"]:
        if t["dtype"] not in ("<f4", "<f8"):
            raise CheckpointError(f"{path}: unsupported dtype {t['dtype']} for {t['name']}")
        dt = np.dtype(t["dtype"])
        if t["nbytes"] != int(np.prod(t["shape"], dtype=np.int64)) * dt.itemsize:
            raise CheckpointError(f"{path}: size of {t['name']} does not match its shape")
        buf = data[t["offset"]:t["offset"] + t["nbytes"]]
        arrays[t["name"]] = np.frombuffer(buf, dtype=dt).reshape(t["shape"]).astype(dt.newbyteorder("="))
    return manifest, arrays


def _assign(model: Model, manifest: dict, arrays: dict[str, np.ndarray], path) -> None:
    expected = [(n, t.data) for n, t in model.named_parameters()] + list(model.named_buffers())
    names = [e["name"] for e in manifest["tensors"]]
    for i, (name, target) in enumerate(expected):
        if i >= len(names) or names[i] != name:
            got = names[i] if i < len(names) else "<end of file>"
            raise CheckpointError(f"{path}: tensor #{i} is {got!r}, model expects {name!r}")
        if arrays[name].shape != target.shape:
            raise CheckpointError(f"{path}: {name} has shape {arrays[name].shape} in file, {target.shape} in model")
    if len(names) > len(expected):
        raise CheckpointError(f"{path}: unexpected extra tensor {names[len(expected)]!r}")
    for name, target in expected:
        target[...] = arrays[name]


def load_checkpoint(path, model: Model | None = None) -> Model:
    """Rebuild the model from the stored config (or fill ``model``) with the stored weights.

    Loading into an existing model checks every name and shape first and
    reports the first mismatch.
    """
    manifest, arrays = read_checkpoint(path)
    try:
        cfg = NetConfig.from_dict(manifest["config"]).validate()
    except (ConfigError, TypeError) as exc:
        raise CheckpointError(f"{path}: stored config is invalid: {exc}") from exc
    if model is None:
        model = build_res_cr_net(cfg, seed=None)
    _assign(model, manifest, arrays, path)
    return model


def checkpoint_extra(path) -> dict:
    return read_checkpoint(path)[0].get("extra", {})
