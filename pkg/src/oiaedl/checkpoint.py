"""Checkpoint container: a zip holding ``manifest.json`` and ``weights.bin``.

The manifest lists the model config, every parameter's name, shape and
offset, and provenance (training phase, strategies, master seed). The
weights are one flat little-endian float64 array in manifest order. Zip
entries carry a fixed timestamp so identical weights give identical files.
"""

from __future__ import annotations

import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ModelConfig, param_specs
from .nn import ParamStore

__all__ = ["CheckpointError", "Checkpoint", "save_checkpoint", "load_checkpoint"]

FORMAT = "oiaedl-checkpoint"
VERSION = 1
_STAMP = (1980, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: ParamStore
    config: ModelConfig
    provenance: dict = field(default_factory=dict)


def _entry(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=_STAMP)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    return info


def save_checkpoint(path, params: ParamStore, config: ModelConfig, provenance: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries, offset = [], 0
    for name, shape in params.specs():
        size = int(np.prod(shape, dtype=np.int64))
        entries.append({"name": name, "shape": list(shape), "offset": offset, "size": size})
        offset += size
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "dtype": "<f8",
        "model_config": config.to_dict(),
        "parameters": entries,
        "provenance": provenance or {},
    }
    blob = params.data.astype("<f8").tobytes()
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr(_entry("manifest.json"), json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        zf.writestr(_entry("weights.bin"), blob)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            blob = zf.read("weights.bin")
    except (OSError, KeyError, zipfile.BadZipFile, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from None
    if manifest.get("format") != FORMAT or manifest.get("dtype") != "<f8":
        raise CheckpointError(f"{path}: not an {FORMAT} file")
    try:
        config = ModelConfig.from_dict(manifest["model_config"])
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad model config ({exc})") from None
    specs = [(p["name"], tuple(p["shape"])) for p in manifest["parameters"]]
    if specs != [(n, tuple(s)) for n, s in param_specs(config)]:
        raise CheckpointError(f"{path}: parameter layout does not match the model config")
    data = np.frombuffer(blob, dtype="<f8")
    params = ParamStore(specs)
    if data.size != len(params):
        raise CheckpointError(f"{path}: expected {len(params)} weights, found {data.size}")
    params.data[:] = data
    return Checkpoint(params, config, manifest.get("provenance", {}))
