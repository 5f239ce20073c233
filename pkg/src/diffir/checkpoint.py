"""On-disk checkpoint: ``manifest.json`` + ``weights.bin``.

``weights.bin`` holds little-endian float32 tensors, row-major, concatenated
in manifest order. The manifest records each tensor's name, shape, dtype,
byte offset and length, the run metadata and a SHA-256 of the blob.
"""

from __future__ import annotations

import hashlib
import json
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import torch

MANIFEST_VERSION = 1
DTYPE = "<f4"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    tensors: "OrderedDict[str, np.ndarray]"
    config: Dict = field(default_factory=dict)
    schedule: Optional[Dict] = None
    seed: int = 0
    stage: str = "s1"
    mode: Optional[str] = None
    step: int = 0

    def state_dict(self, prefix: str = "") -> Dict[str, torch.Tensor]:
        return {
            k[len(prefix):]: torch.from_numpy(v.astype(np.float32))
            for k, v in self.tensors.items()
            if k.startswith(prefix)
        }

    def blob(self) -> bytes:
        return b"".join(np.ascontiguousarray(v, dtype=DTYPE).tobytes() for v in self.tensors.values())


def from_module(module: torch.nn.Module, **meta) -> Checkpoint:
    tensors = OrderedDict(
        (k, v.detach().cpu().numpy().astype(np.float32)) for k, v in module.state_dict().items()
    )
    return Checkpoint(tensors, **meta)


def load_into(module: torch.nn.Module, ckpt: Checkpoint, prefix: str = "", strict: bool = True) -> None:
    module.load_state_dict(ckpt.state_dict(prefix), strict=strict)


def _manifest(ckpt: Checkpoint, blob: bytes) -> Dict:
    records, offset = [], 0
    for name, arr in ckpt.tensors.items():
        n = int(arr.size) * 4
        records.append({"name": name, "shape": list(arr.shape), "dtype": "float32", "offset": offset, "length": n})
        offset += n
    return {
        "version": MANIFEST_VERSION,
        "stage": ckpt.stage,
        "mode": ckpt.mode,
        "step": ckpt.step,
        "seed": ckpt.seed,
        "config": ckpt.config,
        "schedule": ckpt.schedule,
        "tensors": records,
        "checksum": "sha256:" + hashlib.sha256(blob).hexdigest(),
    }


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blob = ckpt.blob()
    (path / "weights.bin").write_bytes(blob)
    text = json.dumps(_manifest(ckpt, blob), indent=1, sort_keys=True)
    (path / "manifest.json").write_text(text + "\n", encoding="utf-8")
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
        blob = (path / "weights.bin").read_bytes()
    except FileNotFoundError as e:
        raise CheckpointError(f"missing checkpoint file: {e.filename}") from e
    if manifest.get("version") != MANIFEST_VERSION:
        raise CheckpointError(f"unknown manifest version {manifest.get('version')!r}")
    tensors = OrderedDict()
    for rec in manifest["tensors"]:
        start, n = rec["offset"], rec["length"]
        if start < 0 or start + n > len(blob) or n != 4 * int(np.prod(rec["shape"], dtype=np.int64)):
            raise CheckpointError(f"tensor {rec['name']} extent outside blob (truncated?)")
        tensors[rec["name"]] = np.frombuffer(blob, DTYPE, n // 4, start).reshape(rec["shape"]).copy()
    digest = "sha256:" + hashlib.sha256(blob).hexdigest()
    if digest != manifest["checksum"]:
        raise CheckpointError("checksum mismatch: weights.bin is corrupted")
    return Checkpoint(
        tensors,
        config=manifest["config"],
        schedule=manifest["schedule"],
        seed=manifest["seed"],
        stage=manifest["stage"],
        mode=manifest["mode"],
        step=manifest["step"],
    )
