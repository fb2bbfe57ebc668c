"""Checkpoints: a JSON manifest plus one little-endian float32 blob.

Layout of a checkpoint directory::

    manifest.json   {"version", "model_config", "params": [{"name", "shape", "offset", "count"}], "rng_state", ...}
    params.bin      parameters concatenated in manifest order
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .model import ModelConfig, WavLMLite

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
BLOB = "params.bin"


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: WavLMLite, path, rng_state=None, train_config=None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    for name, p in model.params.items():
        arr = np.ascontiguousarray(p.data, dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        chunks.append(arr.tobytes())
        offset += arr.size * 4
    manifest = {
        "version": FORMAT_VERSION,
        "model_config": model.cfg.to_dict(),
        "params": entries,
        "total_bytes": offset,
        "rng_state": rng_state,
        "train_config": train_config,
    }
    (path / MANIFEST).write_text(json.dumps(manifest, indent=1, default=_json_default))
    (path / BLOB).write_bytes(b"".join(chunks))
    return path


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o)}")


def read_manifest(path) -> dict:
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST).read_text())
    except FileNotFoundError as e:
        raise CheckpointError(f"no {MANIFEST} in {path}") from e
    if manifest.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"unknown checkpoint version {manifest.get('version')!r}")
    return manifest


def load_checkpoint(path) -> WavLMLite:
    path = Path(path)
    manifest = read_manifest(path)
    model = WavLMLite(ModelConfig.from_dict(manifest["model_config"]))
    raw = (path / BLOB).read_bytes()
    names = {e["name"] for e in manifest["params"]}
    missing = set(model.params) - names
    if missing:
        raise CheckpointError(f"manifest lacks parameters: {sorted(missing)}")
    extra = names - set(model.params)
    if extra:
        raise CheckpointError(f"manifest has unknown parameters: {sorted(extra)}")
    for e in manifest["params"]:
        end = e["offset"] + 4 * e["count"]
        if end > len(raw):
            raise CheckpointError(f"blob truncated: parameter {e['name']} needs bytes "
                                  f"[{e['offset']}, {end}) but blob has {len(raw)}")
        p = model.params[e["name"]]
        if list(p.shape) != e["shape"]:
            raise CheckpointError(f"shape mismatch for {e['name']}: {e['shape']} vs model {list(p.shape)}")
        arr = np.frombuffer(raw, dtype="<f4", count=e["count"], offset=e["offset"]).reshape(e["shape"])
        p.data = arr.astype(model.dtype)
    if len(raw) != manifest.get("total_bytes", len(raw)):
        raise CheckpointError(f"blob has {len(raw)} bytes, manifest says {manifest['total_bytes']}")
    return model
