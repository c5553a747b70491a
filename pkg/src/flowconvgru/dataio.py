"""Binary dataset files: aggregated volumes and flows for one grid.

Layout (all little-endian): magic `FCDS1`, u32 JSON length, JSON metadata
(grid, interval count, rejected-trip count), then per interval the volume
tensor as row-major f64 and the flow matrix as a u32 entry count followed
by (u32 src, u32 dst, f64 weight) triples sorted by (src, dst). Writing is
deterministic: the same inputs produce byte-identical files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .flowgraph import SparseFlowMatrix
from .ingest import GridSpec
from .validation import check_flow_sequence, check_volume_sequence

MAGIC = b"FCDS1"


@dataclass
class Dataset:
    """In-memory form of a dataset file."""

    grid: GridSpec
    volumes: np.ndarray  # n_intervals x m x k x 2
    flows: list
    rejected: int = 0

    @property
    def n_intervals(self) -> int:
        return self.volumes.shape[0]


def _dump_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_dataset(path, dataset: Dataset) -> None:
    volumes = check_volume_sequence(dataset.volumes, dataset.grid.m, dataset.grid.k)
    flows = check_flow_sequence(dataset.flows, dataset.grid.n_regions, volumes.shape[0])
    meta = {
        "grid": dataset.grid.to_dict(),
        "n_intervals": int(volumes.shape[0]),
        "rejected": int(dataset.rejected),
    }
    blob = _dump_json(meta)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for t in range(volumes.shape[0]):
            fh.write(volumes[t].astype("<f8").tobytes(order="C"))
            f = flows[t]
            order = np.lexsort((f.dst, f.src))
            fh.write(struct.pack("<I", f.nnz))
            for idx in order:
                fh.write(
                    struct.pack("<IId", int(f.src[idx]), int(f.dst[idx]), float(f.weight[idx]))
                )


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ValueError("truncated dataset file")
    return data


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC)) != MAGIC:
            raise ValueError("not a dataset file (bad magic)")
        (json_len,) = struct.unpack("<I", _read_exact(fh, 4))
        meta = json.loads(_read_exact(fh, json_len).decode("utf-8"))
        grid = GridSpec.from_dict(meta["grid"])
        n_intervals = int(meta["n_intervals"])
        m, k, n = grid.m, grid.k, grid.n_regions
        volumes = np.zeros((n_intervals, m, k, 2))
        flows = []
        for t in range(n_intervals):
            raw = _read_exact(fh, m * k * 2 * 8)
            volumes[t] = np.frombuffer(raw, dtype="<f8").reshape(m, k, 2)
            (count,) = struct.unpack("<I", _read_exact(fh, 4))
            src = np.zeros(count, dtype=np.int64)
            dst = np.zeros(count, dtype=np.int64)
            weight = np.zeros(count)
            for e in range(count):
                src[e], dst[e], weight[e] = struct.unpack("<IId", _read_exact(fh, 16))
            flows.append(SparseFlowMatrix(n, src, dst, weight))
        if fh.read(1):
            raise ValueError("trailing bytes after the last interval")
    return Dataset(grid=grid, volumes=volumes, flows=flows, rejected=int(meta["rejected"]))
