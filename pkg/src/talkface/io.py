"""Serialization shared by every artifact: float32 tensors with JSON sidecars and
single-file checkpoints (little-endian float32 blob behind a JSON manifest)."""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import torch

CHECKPOINT_MAGIC = b"TFCK"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj: Any) -> str:
    if hasattr(obj, "to_dict"):
        obj = obj.to_dict()
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


def save_tensor(path: str | Path, array, **meta) -> Path:
    """Write ``array`` as raw little-endian float32 at ``path`` plus ``path.json``."""
    path = Path(path)
    arr = np.ascontiguousarray(_to_numpy(array), dtype="<f4")
    path.write_bytes(arr.tobytes())
    sidecar = {"dtype": "float32", "byte_order": "little", "shape": list(arr.shape), **meta}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, sort_keys=True, indent=2) + "\n")
    return path


def load_tensor(path: str | Path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    arr = np.frombuffer(path.read_bytes(), dtype="<f4").reshape(meta["shape"])
    return arr.astype(np.float32), meta


def save_checkpoint(path: str | Path, state: Mapping[str, torch.Tensor], config: Any = None,
                    metadata: Mapping[str, Any] | None = None) -> Path:
    path = Path(path)
    entries = []
    blobs = []
    offset = 0
    for name in sorted(state):
        arr = np.ascontiguousarray(_to_numpy(state[name]), dtype="<f4")
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    cfg = config.to_dict() if hasattr(config, "to_dict") else config
    manifest = {
        "version": CHECKPOINT_VERSION,
        "dtype": "float32",
        "byte_order": "little",
        "tensors": entries,
        "config": cfg,
        "config_hash": config_hash(cfg) if cfg is not None else None,
        "metadata": dict(metadata or {}),
    }
    header = canonical_json(manifest).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)
    return path


def read_checkpoint(path: str | Path) -> tuple[dict[str, torch.Tensor], dict]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    (hlen,) = struct.unpack("<I", data[4:8])
    manifest = json.loads(data[8:8 + hlen])
    base = 8 + hlen
    state = {}
    for entry in manifest["tensors"]:
        start = base + entry["offset"]
        arr = np.frombuffer(data[start:start + entry["nbytes"]], dtype="<f4").reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(arr.copy())
    return state, manifest


def state_digest(module: torch.nn.Module | Mapping[str, torch.Tensor]) -> str:
    """SHA-256 over parameter names and raw bytes; used to prove a module stayed frozen."""
    state = module.state_dict() if isinstance(module, torch.nn.Module) else module
    h = hashlib.sha256()
    for name in sorted(state):
        h.update(name.encode())
        h.update(np.ascontiguousarray(_to_numpy(state[name])).tobytes())
    return h.hexdigest()


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _to_numpy(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy()
    return np.asarray(x)
