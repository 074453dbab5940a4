"""Single-file checkpoint container.

Layout: an 8-byte little-endian header length, a JSON header (format name,
version, configs, tensor manifest with byte offsets), the raw float32
little-endian tensor payload, and a trailing 8-byte blake2b digest of that
payload. The manifest makes the file self-describing; the digest catches
truncation and bit rot without re-reading the header.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import (
    model_config_from_dict,
    model_config_to_dict,
    train_config_from_dict,
    train_config_to_dict,
)
from .model import RealismModel
from .training import OptimizerState, TrainConfig

FORMAT_NAME = "shaperealism-checkpoint"
FORMAT_VERSION = 1
_DIGEST_SIZE = 8


class CheckpointError(ValueError):
    """Unreadable or inconsistent checkpoint file."""


class ChecksumMismatchError(CheckpointError):
    """Payload bytes do not match the stored digest."""


def _payload_digest(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=_DIGEST_SIZE).digest()


def _tensor_bytes(t: torch.Tensor) -> bytes:
    arr = t.detach().cpu().to(torch.float32).numpy()
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


@dataclass
class Checkpoint:
    header: dict
    tensors: dict[str, np.ndarray]  # float32 arrays keyed by manifest name


def save_checkpoint(path: str | Path, model: RealismModel, *,
                    optimizer_state: OptimizerState | None = None,
                    train_config: TrainConfig | None = None,
                    metadata: dict | None = None) -> None:
    """Serialize model weights (and optionally optimizer state) atomically."""
    named: list[tuple[str, torch.Tensor]] = [(f"model.{n}", p) for n, p in model.state_dict().items()]
    optim_header = None
    if optimizer_state is not None:
        optim_header = {"step": optimizer_state.step, "params": sorted(optimizer_state.exp_avg)}
        for group, tensors in (("exp_avg", optimizer_state.exp_avg),
                               ("exp_avg_sq", optimizer_state.exp_avg_sq)):
            for n in sorted(tensors):
                named.append((f"optimizer.{group}.{n}", tensors[n]))

    manifest = []
    chunks = []
    offset = 0
    for name, t in named:
        raw = _tensor_bytes(t)
        manifest.append({
            "name": name,
            "dtype": "float32",
            "shape": list(t.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)

    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "config": {
            "model": model_config_to_dict(model.config),
            "train": train_config_to_dict(train_config) if train_config else None,
        },
        "optimizer": optim_header,
        "metadata": metadata or {},
        "tensors": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        f.write(payload)
        f.write(_payload_digest(payload))
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Read and verify a checkpoint file; raises on any inconsistency."""
    blob = Path(path).read_bytes()
    if len(blob) < 8:
        raise CheckpointError(f"{path}: too short to hold a header length")
    (header_len,) = struct.unpack("<Q", blob[:8])
    header_end = 8 + header_len
    if len(blob) < header_end + _DIGEST_SIZE:
        raise CheckpointError(f"{path}: truncated header or missing digest")
    try:
        header = json.loads(blob[8:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: header is not valid JSON: {exc}") from exc
    if header.get("format") != FORMAT_NAME:
        raise CheckpointError(f"{path}: not a {FORMAT_NAME} file")
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: version {header.get('version')} unsupported (expected {FORMAT_VERSION})"
        )

    payload = blob[header_end:-_DIGEST_SIZE]
    stored = blob[-_DIGEST_SIZE:]
    if _payload_digest(payload) != stored:
        raise ChecksumMismatchError(f"{path}: payload digest mismatch")

    tensors: dict[str, np.ndarray] = {}
    for entry in header.get("tensors", []):
        name, off, nbytes = entry["name"], entry["offset"], entry["nbytes"]
        shape = tuple(entry["shape"])
        if entry["dtype"] != "float32":
            raise CheckpointError(f"{path}: tensor {name} has unsupported dtype {entry['dtype']}")
        if off + nbytes > len(payload):
            raise CheckpointError(f"{path}: tensor {name} extends past the payload")
        arr = np.frombuffer(payload[off:off + nbytes], dtype="<f4")
        if arr.size != int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"{path}: tensor {name} size does not match shape {shape}")
        tensors[name] = arr.reshape(shape).copy()
    return Checkpoint(header=header, tensors=tensors)


def restore_model(path: str | Path) -> tuple[RealismModel, OptimizerState | None, TrainConfig | None]:
    """Rebuild a model (and optimizer state, when saved) from a checkpoint."""
    ckpt = load_checkpoint(path)
    model_cfg = model_config_from_dict(ckpt.header["config"]["model"])
    model = RealismModel(model_cfg)
    state_dict = {}
    for name, arr in ckpt.tensors.items():
        if name.startswith("model."):
            state_dict[name[len("model."):]] = torch.from_numpy(arr)
    model.load_state_dict(state_dict, strict=True)

    optim = None
    if ckpt.header.get("optimizer"):
        oh = ckpt.header["optimizer"]
        exp_avg, exp_avg_sq = {}, {}
        for pname in oh["params"]:
            try:
                exp_avg[pname] = torch.from_numpy(ckpt.tensors[f"optimizer.exp_avg.{pname}"])
                exp_avg_sq[pname] = torch.from_numpy(ckpt.tensors[f"optimizer.exp_avg_sq.{pname}"])
            except KeyError as exc:
                raise CheckpointError(f"{path}: optimizer tensors missing for {pname}") from exc
        optim = OptimizerState(step=oh["step"], exp_avg=exp_avg, exp_avg_sq=exp_avg_sq)

    train_cfg = None
    if ckpt.header["config"].get("train"):
        train_cfg = train_config_from_dict(ckpt.header["config"]["train"])
    return model, optim, train_cfg
