"""Single-file checkpoint container.

Layout: 8-byte magic, 8-byte little-endian manifest length, UTF-8 JSON
manifest, then one contiguous little-endian float32 payload holding every
array in manifest order. Writing the same state twice yields byte-identical
files.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import RunConfig
from .signal import NormStats

MAGIC = b"VAMPDIF1"


class CheckpointError(Exception):
    pass


def save_checkpoint(path, config: RunConfig, arrays: dict,
                    norm_stats: NormStats | None = None,
                    meta: dict | None = None) -> None:
    """Write config, named float arrays, and optional scalar metadata."""
    entries = []
    payload = bytearray()
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(np.asarray(arrays[name], dtype=np.float32))
        entries.append({"name": name, "shape": list(arr.shape),
                        "offset": offset})
        raw = arr.astype("<f4").tobytes()
        payload.extend(raw)
        offset += len(raw)
    manifest = {
        "config": config.to_dict(),
        "arrays": entries,
        "norm_stats": (None if norm_stats is None
                       else {"mu_train": norm_stats.mu_train,
                             "sigma_train": norm_stats.sigma_train}),
        "meta": meta or {},
    }
    blob = json.dumps(manifest, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(len(blob).to_bytes(8, "little"))
        f.write(blob)
        f.write(bytes(payload))


def load_checkpoint(path):
    """Read a container back; returns (config, arrays, norm_stats, meta)."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint container")
    blob_len = int.from_bytes(raw[8:16], "little")
    if 16 + blob_len > len(raw):
        raise CheckpointError("truncated manifest")
    try:
        manifest = json.loads(raw[16:16 + blob_len].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CheckpointError(f"corrupt manifest: {e}") from None
    config = RunConfig.from_dict(manifest["config"])
    payload = raw[16 + blob_len:]
    arrays = {}
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(payload):
            raise CheckpointError(f"truncated payload for {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(
            payload[start:end], dtype="<f4").reshape(shape).astype(np.float64)
    ns = manifest.get("norm_stats")
    norm_stats = None if ns is None else NormStats(ns["mu_train"],
                                                  ns["sigma_train"])
    return config, arrays, norm_stats, manifest.get("meta", {})


def save_model(path, model, meta: dict | None = None) -> None:
    save_checkpoint(path, model.config, model.state_arrays(),
                    norm_stats=model.norm_stats, meta=meta)


def load_model(path):
    """Rebuild a model from a container written by :func:`save_model`."""
    from .model import VampDiffModel
    config, arrays, norm_stats, meta = load_checkpoint(path)
    model = VampDiffModel(config)
    model.load_state_arrays(arrays)
    model.norm_stats = norm_stats
    return model, meta
