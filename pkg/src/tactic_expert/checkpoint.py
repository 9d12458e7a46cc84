"""JSON checkpoint container.

Tensors are stored as base64 of their raw little-endian bytes together with
dtype and shape, so a load reproduces every parameter bit for bit.
"""
from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np
import torch

from .config import Config
from .errors import ConfigError, DataError
from .model import TacticExpertModel

FORMAT = "tactic-expert-checkpoint"
VERSION = 1


def encode_tensor(t: torch.Tensor) -> dict:
    a = t.detach().cpu().contiguous().numpy()
    a = a.astype(a.dtype.newbyteorder("<"), copy=False)
    return {"dtype": a.dtype.str, "shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_tensor(obj: dict) -> torch.Tensor:
    raw = base64.b64decode(obj["data"])
    a = np.frombuffer(raw, dtype=np.dtype(obj["dtype"])).reshape(obj["shape"])
    return torch.from_numpy(a.copy())


def save_checkpoint(path, model: TacticExpertModel, extra: dict | None = None):
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "config": model.cfg.to_dict(),
        "n_nodes": int(model.experts[0].patterns.shape[2]),
        "tensors": {k: encode_tensor(v) for k, v in model.state_dict().items()},
        "extra": extra or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True))
    return path


def load_checkpoint(path):
    """-> (model, extra).  Format problems raise DataError; config problems ConfigError."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    if doc.get("format") != FORMAT:
        raise DataError(f"{path} is not a checkpoint")
    if doc.get("version") != VERSION:
        raise DataError(f"unsupported checkpoint version {doc.get('version')}")
    cfg = Config.from_dict(doc["config"])
    model = TacticExpertModel(cfg, n_nodes=doc["n_nodes"])
    dtype = torch.float64 if cfg.dtype == "float64" else torch.float32
    model.to(dtype)
    state = {k: decode_tensor(v) for k, v in doc["tensors"].items()}
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise ConfigError(f"checkpoint tensors do not match its config: {exc}") from None
    model.eval()
    return model, doc.get("extra", {})
