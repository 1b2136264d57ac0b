"""Checkpoint and run-manifest files.

A checkpoint is a single self-describing JSON object: model kind, model
config, free-form metadata and a flat list of named tensors with shapes
and float64 values. Python's JSON writer emits the shortest decimal that
round-trips each double, so save/load reproduces values bit for bit.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .baseline import BaselineConfig, RecurrentBaseline
from .errors import ConfigError
from .model import Dwm, DwmConfig

CHECKPOINT_FORMAT = "dwm-checkpoint-v1"


def save_checkpoint(path: str | Path, model, meta: dict | None = None) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "model": model.kind,
        "config": model.config.to_dict(),
        "meta": meta or {},
        "tensors": [
            {
                "name": name,
                "shape": list(p.data.shape),
                "data": p.data.reshape(-1).tolist(),
            }
            for name, p in model.params.items()
        ],
    }
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path: str | Path):
    """Returns (model, meta). The restored tensors require gradients, so
    a loaded model can resume training directly."""
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read checkpoint {path}: {err}") from err
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    params = {}
    for entry in payload["tensors"]:
        arr = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        params[entry["name"]] = Tensor(arr, requires_grad=True)
    kind = payload.get("model")
    if kind == "dwm":
        model = Dwm(DwmConfig(**payload["config"]), params=params)
    elif kind == "baseline":
        model = RecurrentBaseline(BaselineConfig(**payload["config"]), params=params)
    else:
        raise ConfigError(f"unknown model kind {kind!r} in {path}")
    return model, payload.get("meta", {})


def build_id() -> str:
    """Short content hash of the package sources, for run manifests."""
    digest = hashlib.sha256()
    for source in sorted(Path(__file__).parent.glob("*.py")):
        digest.update(source.name.encode())
        digest.update(source.read_bytes())
    return digest.hexdigest()[:12]


def write_manifest(path: str | Path, data: dict) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
