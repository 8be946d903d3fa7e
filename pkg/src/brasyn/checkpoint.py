"""Self-describing model checkpoints (config + weights + epoch + RNG state)."""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Optional

import numpy as np
import torch

FORMAT_VERSION = 1


def save_checkpoint(path, kind: str, config: dict, model: torch.nn.Module, epoch: int = 0,
                    rng: Optional[np.random.Generator] = None, frozen: bool = False, **extra) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": FORMAT_VERSION,
        "kind": kind,
        "config": config,
        "state_dict": model.state_dict(),
        "epoch": epoch,
        "frozen": frozen,
        "torch_rng": torch.get_rng_state(),
        "numpy_rng": rng.bit_generator.state if rng is not None else None,
        **extra,
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path, kind: Optional[str] = None) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} not found")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if kind is not None and payload.get("kind") != kind:
        raise ValueError(f"{path} holds a {payload.get('kind')!r} checkpoint, expected {kind!r}")
    return payload


def parameter_checksum(model: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
