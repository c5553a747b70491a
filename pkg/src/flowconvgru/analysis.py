"""Evaluation metrics, the historical-average baseline, and flow-dynamics
analysis: receptive-field churn (Jaccard), in-flow churn (earth mover's
distance), hour-of-day aggregation, high-churn filtering, and the
layer-count sweep.

Metrics are computed on original-scale values over all regions and both
channels. Churn between intervals t and t+1 is recorded under t; a
prediction window is considered high-churn when the flows changed sharply
right at its target boundary, i.e. the churn entry at target - 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .flowgraph import SparseFlowMatrix, receptive_field
from .ingest import GridSpec, WindowSubset
from .train import TrainConfig, predict_windows, train
from .transport import min_cost_transport
from .validation import as_float_array, check_same_shape


def rmse(preds, targets) -> float:
    preds = as_float_array(preds, "predictions")
    targets = as_float_array(targets, "targets")
    check_same_shape(preds, targets, "predictions and targets")
    return float(np.sqrt(np.mean((preds - targets) ** 2)))


def mae(preds, targets) -> float:
    preds = as_float_array(preds, "predictions")
    targets = as_float_array(targets, "targets")
    check_same_shape(preds, targets, "predictions and targets")
    return float(np.mean(np.abs(preds - targets)))


def ha_predict(history) -> np.ndarray:
    """Historical average: the elementwise mean of the input tensors."""
    history = as_float_array(history, "history")
    if history.ndim < 1 or history.shape[0] < 1:
        raise ValueError("historical average needs at least one input tensor")
    return history.mean(axis=0)


@dataclass(frozen=True)
class EvalReport:
    rmse: float
    mae: float
    n: int
    hourly: dict | None = None


@dataclass(frozen=True)
class FlowChurn:
    """Flow-graph change from interval t to t+1. emd_regions counts the
    regions with in-flow mass on both sides; 0 flags an undefined (and
    zero-valued) EMD."""

    t: int
    jaccard: float
    emd: float
    emd_regions: int = 0


def jaccard_churn(f_t: SparseFlowMatrix, f_t1: SparseFlowMatrix) -> float:
    """Mean per-region Jaccard similarity of receptive fields between two
    consecutive flow graphs; two empty fields count as similarity 1."""
    if f_t.n != f_t1.n:
        raise ValueError(f"flow matrices over {f_t.n} vs {f_t1.n} regions")
    total = 0.0
    for i in range(f_t.n):
        a = receptive_field(f_t, i)
        b = receptive_field(f_t1, i)
        if not a and not b:
            total += 1.0
        else:
            total += len(a & b) / len(a | b)
    return total / f_t.n


def cost_matrix(grid: GridSpec) -> np.ndarray:
    """Euclidean distances between grid-cell centers, in cell units."""
    rows, cols = np.divmod(np.arange(grid.n_regions), grid.k)
    dr = rows[:, None] - rows[None, :]
    dc = cols[:, None] - cols[None, :]
    return np.sqrt(dr.astype(np.float64) ** 2 + dc.astype(np.float64) ** 2)


def emd_churn(f_t: SparseFlowMatrix, f_t1: SparseFlowMatrix, grid: GridSpec, return_count=False):
    """Mean earth mover's distance between each region's unit-normalized
    in-flow vectors at t and t+1. Regions with zero in-flow mass on either
    side are excluded; if every region is excluded the value is 0 (with
    count 0 when return_count is set)."""
    if f_t.n != f_t1.n or f_t.n != grid.n_regions:
        raise ValueError("flow matrices and grid disagree on the region count")
    cost = cost_matrix(grid)
    dense_t = f_t.to_dense()
    dense_t1 = f_t1.to_dense()
    total, included = 0.0, 0
    for i in range(grid.n_regions):
        p = dense_t[:, i]
        q = dense_t1[:, i]
        mass_p, mass_q = p.sum(), q.sum()
        if mass_p <= 0 or mass_q <= 0:
            continue
        value, _ = min_cost_transport(p / mass_p, q / mass_q, cost)
        total += value
        included += 1
    mean = total / included if included else 0.0
    if return_count:
        return mean, included
    return mean


def compute_churns(flows, grid: GridSpec, first_interval: int = 1) -> list:
    """FlowChurn entries for every consecutive pair in a flow sequence."""
    out = []
    for idx in range(len(flows) - 1):
        value, count = emd_churn(flows[idx], flows[idx + 1], grid, return_count=True)
        out.append(
            FlowChurn(
                t=first_interval + idx,
                jaccard=jaccard_churn(flows[idx], flows[idx + 1]),
                emd=value,
                emd_regions=count,
            )
        )
    return out


def filter_high_churn(dataset, churns, w: float, key: str = "emd") -> WindowSubset:
    """Windows whose target boundary shows strong flow change: EMD churn
    above w, or (key="jaccard") receptive-field similarity below w."""
    if key not in ("emd", "jaccard"):
        raise ValueError(f"filter key must be emd or jaccard, got {key!r}")
    by_t = {c.t: c for c in churns}
    keep = []
    for w_idx in range(len(dataset)):
        boundary = dataset.target_interval(w_idx) - 1
        churn = by_t.get(boundary)
        if churn is None:
            raise ValueError(f"no churn entry for interval {boundary}")
        if (key == "emd" and churn.emd > w) or (key == "jaccard" and churn.jaccard < w):
            keep.append(w_idx)
    return WindowSubset(dataset, keep)


@dataclass(frozen=True)
class HourlyChurn:
    hour: int
    jaccard: float
    emd: float
    count: int


def hourly_aggregate(churns, grid: GridSpec) -> list:
    """Mean churn by hour of day (24 rows; empty hours hold NaN)."""
    if 86400 % grid.interval_seconds != 0:
        raise ValueError("interval length must divide a day for hourly grouping")
    buckets: dict[int, list] = {h: [] for h in range(24)}
    for c in churns:
        buckets[grid.hour_of(c.t)].append(c)
    out = []
    for h in range(24):
        rows = buckets[h]
        if rows:
            out.append(
                HourlyChurn(
                    hour=h,
                    jaccard=float(np.mean([c.jaccard for c in rows])),
                    emd=float(np.mean([c.emd for c in rows])),
                    count=len(rows),
                )
            )
        else:
            out.append(HourlyChurn(hour=h, jaccard=math.nan, emd=math.nan, count=0))
    return out


def _gather_targets(dataset, indices):
    return np.stack([dataset.target(w) for w in indices])


def evaluate_model(dataset, spec, params, scaler, indices=None) -> EvalReport:
    """RMSE/MAE of the model on a raw (unscaled) dataset; inputs are
    scaled with the fitted scaler, predictions are inverted back to
    original counts before comparing. Accepts a WindowSubset directly."""
    if isinstance(dataset, WindowSubset):
        sub = dataset
        dataset = sub.base
        indices = sub.indices if indices is None else [sub.indices[i] for i in indices]
    if indices is None:
        indices = list(range(len(dataset)))
    if len(indices) == 0:
        return EvalReport(rmse=math.nan, mae=math.nan, n=0)
    preds_scaled = predict_windows(dataset.scaled(scaler), spec, params, indices)
    preds = scaler.invert(preds_scaled)
    targets = _gather_targets(dataset, indices)
    return EvalReport(rmse=rmse(preds, targets), mae=mae(preds, targets), n=len(indices))


def evaluate_ha(dataset, indices=None) -> EvalReport:
    """RMSE/MAE of the historical-average baseline on a raw dataset."""
    if isinstance(dataset, WindowSubset):
        sub = dataset
        dataset = sub.base
        indices = sub.indices if indices is None else [sub.indices[i] for i in indices]
    if indices is None:
        indices = list(range(len(dataset)))
    if len(indices) == 0:
        return EvalReport(rmse=math.nan, mae=math.nan, n=0)
    preds = np.stack([ha_predict(dataset.input_volumes(w)) for w in indices])
    targets = _gather_targets(dataset, indices)
    return EvalReport(rmse=rmse(preds, targets), mae=mae(preds, targets), n=len(indices))


def layer_sweep(train_ds, val_ds, test_ds, base_spec, layer_counts, config: TrainConfig, scaler):
    """Train and evaluate one model per layer count under a shared seed;
    datasets are raw, scaling happens inside. Returns a list of
    (layers, EvalReport, Checkpoint)."""
    results = []
    for layers in layer_counts:
        spec = replace(base_spec, layers=int(layers))
        val_scaled = val_ds.scaled(scaler) if val_ds is not None and len(val_ds) else None
        ckpt, _ = train(train_ds.scaled(scaler), spec, config, val_scaled, scaler)
        report = evaluate_model(test_ds, spec, ckpt.params, scaler)
        results.append((int(layers), report, ckpt))
    return results
