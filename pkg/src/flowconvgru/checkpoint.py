"""Checkpoint files: trained parameters plus everything needed to rerun.

Layout (little-endian): magic `FCGRU1`, u16 version, u32 JSON length, JSON
metadata (model spec, scaler, seed, epoch, extras, array count), then per
array: u32 name length, name bytes, u8 rank, u32 dims, row-major f64
payload. Serialization is canonical (sorted JSON keys, insertion-ordered
arrays), so identical checkpoints are byte-identical files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .ingest import MinMaxScaler
from .model import ModelSpec

MAGIC = b"FCGRU1"
VERSION = 1


@dataclass
class Checkpoint:
    spec: ModelSpec
    params: dict
    scaler: MinMaxScaler | None = None
    seed: int = 0
    epoch: int = 0
    extra: dict = field(default_factory=dict)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    meta = {
        "spec": ckpt.spec.to_dict(),
        "scaler": None if ckpt.scaler is None else ckpt.scaler.to_dict(),
        "seed": int(ckpt.seed),
        "epoch": int(ckpt.epoch),
        "extra": ckpt.extra,
        "n_arrays": len(ckpt.params),
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name, arr in ckpt.params.items():
            arr = np.asarray(arr, dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8").tobytes(order="C"))


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ValueError("truncated checkpoint file")
    return data


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC)) != MAGIC:
            raise ValueError("not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<H", _read_exact(fh, 2))
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (json_len,) = struct.unpack("<I", _read_exact(fh, 4))
        meta = json.loads(_read_exact(fh, json_len).decode("utf-8"))
        params = {}
        for _ in range(int(meta["n_arrays"])):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
            name = _read_exact(fh, name_len).decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1))
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
            count = int(np.prod(dims)) if rank else 1
            payload = _read_exact(fh, 8 * count)
            params[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
        if fh.read(1):
            raise ValueError("trailing bytes after the last array")
    scaler = None if meta["scaler"] is None else MinMaxScaler.from_dict(meta["scaler"])
    return Checkpoint(
        spec=ModelSpec.from_dict(meta["spec"]),
        params=params,
        scaler=scaler,
        seed=int(meta["seed"]),
        epoch=int(meta["epoch"]),
        extra=meta.get("extra", {}),
    )
