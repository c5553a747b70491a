"""Input validation helpers.

Volume sequences are float64 arrays of shape (n_intervals, m, k, 2); flow
sequences are lists of SparseFlowMatrix aligned with the volume axis. These
helpers normalise inputs to those conventions and fail loudly otherwise.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def as_float_array(x, name: str = "array") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_volume_sequence(volumes, m: int | None = None, k: int | None = None) -> np.ndarray:
    arr = as_float_array(volumes, "volumes")
    if arr.ndim != 4 or arr.shape[-1] != 2:
        raise ShapeError(
            f"volume sequence must have shape (n_intervals, m, k, 2), got {arr.shape}"
        )
    if m is not None and arr.shape[1] != m:
        raise ShapeError(f"volume sequence has {arr.shape[1]} rows, grid expects {m}")
    if k is not None and arr.shape[2] != k:
        raise ShapeError(f"volume sequence has {arr.shape[2]} cols, grid expects {k}")
    return arr


def check_flow_sequence(flows, n: int, length: int | None = None) -> list:
    flows = list(flows)
    if length is not None and len(flows) != length:
        raise ShapeError(f"flow sequence has length {len(flows)}, expected {length}")
    for i, f in enumerate(flows):
        if f.n != n:
            raise ShapeError(f"flow matrix {i} is over {f.n} regions, expected {n}")
    return flows


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "arrays") -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what} have mismatched shapes {a.shape} vs {b.shape}")
