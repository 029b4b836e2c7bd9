"""Binary checkpoint container.

Layout (all integers little-endian)::

    bytes 0..7    magic  b"MEMTOCKP"
    bytes 8..9    uint16 format version
    bytes 10..13  uint32 header length H
    next H bytes  UTF-8 JSON header
    rest          tensor payload, tensors back to back in header order

The header holds ``model_config``, ``norm_stats``, ``phase``, free-form
``meta``, ``payload_len``, ``payload_sha256`` and a ``tensors`` list whose
entries give ``name``, ``dtype`` (numpy dtype string, e.g. ``<f4``),
``shape``, ``offset`` and ``nbytes`` relative to the payload start.
See docs/checkpoint_format.md.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .config import ModelConfig
from .data import NormalizationStats

MAGIC = b"MEMTOCKP"
FORMAT_VERSION = 1
PHASES = ("phase1", "phase2")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model_config: ModelConfig
    tensors: dict[str, np.ndarray]
    norm_stats: Optional[NormalizationStats] = None
    phase: str = "phase2"
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model, norm_stats=None, phase="phase2", meta=None) -> "Checkpoint":
        tensors = {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}
        return cls(model.cfg, tensors, norm_stats, phase, dict(meta or {}))

    def load_into(self, model) -> None:
        if asdict(model.cfg) != asdict(self.model_config):
            raise CheckpointError(
                f"model config mismatch: checkpoint {asdict(self.model_config)} vs model {asdict(model.cfg)}"
            )
        dtype = next(model.parameters()).dtype
        state = {k: torch.from_numpy(v.copy()).to(dtype) for k, v in self.tensors.items()}
        try:
            missing, unexpected = model.load_state_dict(state, strict=False)
        except RuntimeError as e:
            raise CheckpointError(f"tensor shape mismatch: {e}") from None
        if missing or unexpected:
            raise CheckpointError(f"tensor set mismatch: missing={missing}, unexpected={unexpected}")
        model.memory.items = state["memory.items"]

    def build_model(self, dtype=torch.float32):
        from .model import MEMTO

        model = MEMTO(ModelConfig(**asdict(self.model_config))).to(dtype)
        self.load_into(model)
        model.eval()
        return model

    @property
    def memory(self) -> np.ndarray:
        return self.tensors["memory.items"]

    def digest(self) -> str:
        return hashlib.sha256(to_bytes(self)).hexdigest()


def to_bytes(ckpt: Checkpoint) -> bytes:
    if ckpt.phase not in PHASES:
        raise CheckpointError(f"unknown phase marker {ckpt.phase!r}")
    entries = []
    chunks = []
    offset = 0
    for name in sorted(ckpt.tensors):
        arr = np.ascontiguousarray(ckpt.tensors[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = arr.tobytes()
        entries.append(
            {"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        )
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "model_config": asdict(ckpt.model_config),
        "norm_stats": None if ckpt.norm_stats is None else ckpt.norm_stats.to_dict(),
        "phase": ckpt.phase,
        "meta": ckpt.meta,
        "tensors": entries,
        "payload_len": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<HI", FORMAT_VERSION, len(hbytes)) + hbytes + payload


def from_bytes(blob: bytes) -> Checkpoint:
    if len(blob) < 14 or blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic or truncated prefix)")
    version, hlen = struct.unpack("<HI", blob[8:14])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    if len(blob) < 14 + hlen:
        raise CheckpointError("corrupt checkpoint: truncated header")
    try:
        header = json.loads(blob[14 : 14 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint header: {e}") from None
    payload = blob[14 + hlen :]
    if len(payload) != header["payload_len"]:
        raise CheckpointError(
            f"corrupt checkpoint: payload is {len(payload)} bytes, header says {header['payload_len']}"
        )
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointError("corrupt checkpoint: payload hash mismatch")
    tensors = {}
    for e in header["tensors"]:
        raw = payload[e["offset"] : e["offset"] + e["nbytes"]]
        tensors[e["name"]] = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    norm = header["norm_stats"]
    return Checkpoint(
        ModelConfig(**header["model_config"]),
        tensors,
        None if norm is None else NormalizationStats.from_dict(norm),
        header["phase"],
        header["meta"],
    )


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
