"""Model checkpoints: one ``.npz`` holding the config JSON and every parameter array."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .autodiff import ContractError
from .model import Forecaster, ModelConfig

FORMAT = "stode-checkpoint"
VERSION = 1


def save_checkpoint(model: Forecaster, path, extra: dict | None = None) -> Path:
    path = Path(path)
    header = {"format": FORMAT, "version": VERSION, "config": model.config.to_dict(),
              "extra": extra or {}}
    arrays = {f"param/{k}": p.data for k, p in model.parameters().items()}
    arrays["fixed_adjacency"] = model.fixed_adjacency
    with path.open("wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), **arrays)
    return path


def load_checkpoint(path) -> tuple[Forecaster, dict]:
    """Rebuild the model; returns (model, extra metadata)."""
    with np.load(Path(path), allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if header.get("format") != FORMAT:
            raise ContractError(f"{path}: not a checkpoint file")
        if header.get("version") != VERSION:
            raise ContractError(f"{path}: unsupported checkpoint version {header.get('version')}")
        model = Forecaster(ModelConfig.from_dict(header["config"]))
        params = model.parameters()
        stored = {k[len("param/"):] for k in z.files if k.startswith("param/")}
        if stored != set(params):
            raise ContractError(f"{path}: parameter set does not match its config")
        for k, p in params.items():
            arr = z[f"param/{k}"]
            if arr.shape != p.shape:
                raise ContractError(f"{path}: {k} has shape {arr.shape}, expected {p.shape}")
            p.data[...] = arr
        model.fixed_adjacency = z["fixed_adjacency"].copy()
    return model, header["extra"]
