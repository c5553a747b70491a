"""Training: squared-error loss, exact gradients, Adam, mini-batch loop.

The forward pass used for gradients is recorded on the autodiff tape with
the whole mini-batch stacked into one computation: graph signals become
(B*n, c) arrays multiplied by block-diagonal transition matrices, grid
tensors become (B, m, k, c) arrays. Per-window results are identical to
the plain forward pass in model.py; batching only changes array shapes.

Everything is float64 and seeded, so two runs with the same config produce
bit-identical parameter trajectories and checkpoints.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .checkpoint import Checkpoint
from .convops import patch_indices
from .errors import NumericError, ShapeError
from .flowgraph import make_transitions
from .model import CHANNELS, GATES, ModelSpec, check_params, init_params, param_fans
from .validation import check_same_shape


def loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Sum of squared entrywise differences for one window; a batch's loss
    is the mean of this over its windows."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    check_same_shape(pred, target, "prediction and target")
    diff = pred - target
    return float(np.sum(diff * diff))


@dataclass
class _Blocks:
    """Block-diagonal transition matrices for one time step of a batch,
    with precomputed transposes for the backward pass."""

    out: sp.csr_matrix
    in_: sp.csr_matrix
    out_t: sp.csr_matrix
    in_t: sp.csr_matrix


def _make_blocks(pairs) -> _Blocks:
    out = sp.block_diag([p.out_transition for p in pairs], format="csr")
    in_ = sp.block_diag([p.in_transition for p in pairs], format="csr")
    return _Blocks(out, in_, out.T.tocsr(), in_.T.tocsr())


def _ensure_finite(value: np.ndarray, stage: str):
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite values at {stage}")


class _TapedModel:
    """Builds the batched taped forward pass for a fixed spec."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.rows, self.cols = patch_indices(spec.m, spec.k, spec.kernel_size, spec.kernel_size)
        self.pad = (spec.kernel_size - 1) // 2
        self.taps = spec.kernel_size * spec.kernel_size

    def _gate_pre(self, x_g, h_g, gate_vars, blocks, batch, layer_c, step_tag):
        spec = self.spec
        n, d, K = spec.n_regions, spec.hidden, spec.diffusion_steps
        c_tot = layer_c + d
        if spec.variant == "fc":
            flat = ad.reshape(ad.concat([x_g, h_g], 1), (batch, n * c_tot))
            pre = ad.add_bias(ad.matmul(flat, gate_vars["dense"]), gate_vars["bias"])
            pre = ad.reshape(pre, (batch * n, d))
            _ensure_finite(pre.value, step_tag)
            return pre
        parts = None
        if spec.variant in ("full", "nc"):
            inp = ad.concat([x_g, h_g], 1)
            walks = [inp, inp]  # the k=0 identity term, both directions
            cur_out, cur_in = inp, inp
            for _ in range(1, K):
                cur_out = ad.sparse_mm(blocks.out, blocks.out_t, cur_out)
                cur_in = ad.sparse_mm(blocks.in_, blocks.in_t, cur_in)
                walks.extend([cur_out, cur_in])
            stacked = ad.concat(walks, 1)  # (B*n, K*2*c_tot)
            theta_mat = ad.reshape(
                ad.transpose(gate_vars["theta"], (2, 3, 0, 1)), (K * 2 * c_tot, d)
            )
            parts = ad.matmul(stacked, theta_mat)
        if spec.variant in ("full", "nf"):
            grid = ad.reshape(ad.concat([x_g, h_g], 1), (batch, spec.m, spec.k, c_tot))
            padded = ad.pad2d(grid, self.pad, self.pad)
            patches = ad.reshape(
                ad.gather_patches(padded, self.rows, self.cols),
                (batch * n, self.taps * c_tot),
            )
            kernel_mat = ad.reshape(gate_vars["kernel"], (self.taps * c_tot, d))
            conv = ad.matmul(patches, kernel_mat)
            parts = conv if parts is None else ad.add(parts, conv)
        pre = ad.add_bias(parts, gate_vars["bias"])
        _ensure_finite(pre.value, step_tag)
        return pre

    def _cell(self, x_g, h, gate_vars, blocks, batch, layer_c, layer, step):
        tag = f"layer {layer}, step {step}"
        r = ad.sigmoid(self._gate_pre(x_g, h, gate_vars["r"], blocks, batch, layer_c, f"{tag}, reset gate"))
        u = ad.sigmoid(self._gate_pre(x_g, h, gate_vars["u"], blocks, batch, layer_c, f"{tag}, update gate"))
        rh = ad.mul(r, h)
        cand = ad.tanh(self._gate_pre(x_g, rh, gate_vars["h"], blocks, batch, layer_c, f"{tag}, candidate"))
        return ad.add(ad.mul(u, h), ad.mul(ad.one_minus(u), cand))

    def forward(self, volumes: np.ndarray, step_blocks, leaves) -> ad.Var:
        """volumes: (B, T, m, k, 2) in model space; step_blocks: per-step
        _Blocks (None for variants without graph convolution); leaves: Var
        per parameter name. Returns the (B*n, 2) prediction Var."""
        spec = self.spec
        batch, n, d = volumes.shape[0], spec.n_regions, spec.hidden
        xs = [
            ad.constant(volumes[:, t].reshape(batch * n, CHANNELS))
            for t in range(spec.history)
        ]
        for layer in range(1, spec.layers + 1):
            gate_vars = {
                g: {
                    kind: leaves[f"layer{layer}.{g}.{kind}"]
                    for kind in ("theta", "kernel", "bias", "dense")
                    if f"layer{layer}.{g}.{kind}" in leaves
                }
                for g in GATES
            }
            layer_c = spec.in_channels(layer)
            h = ad.constant(np.zeros((batch * n, d)))
            hs = []
            for t in range(spec.history):
                blocks = step_blocks[t] if step_blocks is not None else None
                h = self._cell(xs[t], h, gate_vars, blocks, batch, layer_c, layer, t + 1)
                hs.append(h)
            xs = hs
        stacked = ad.concat(xs, 1)  # (B*n, T*d)
        pred = ad.add_bias(ad.matmul(stacked, leaves["head.weight"]), leaves["head.bias"])
        _ensure_finite(pred.value, "output head")
        return pred


def _window_blocks(spec: ModelSpec, flows, pair_cache) -> list | None:
    if spec.variant not in ("full", "nc"):
        return None
    step_pairs = []
    for step_flows in flows:
        pairs = []
        for f in step_flows:
            pair = pair_cache.get(id(f))
            if pair is None:
                pair = make_transitions(f)
                pair_cache[id(f)] = pair
            pairs.append(pair)
        step_pairs.append(_make_blocks(pairs))
    return step_pairs


def _batch_arrays(dataset, indices):
    volumes = np.stack([dataset.input_volumes(w) for w in indices])
    targets = np.stack([dataset.target(w) for w in indices])
    # flows transposed to per-step lists across the batch
    per_window = [dataset.input_flows(w) for w in indices]
    flows = [[wf[t] for wf in per_window] for t in range(dataset.history)]
    return volumes, targets, flows


def _loss_and_grads(taped, volumes, targets, flows, leaves, pair_cache):
    step_blocks = _window_blocks(taped.spec, flows, pair_cache)
    batch = volumes.shape[0]
    pred = taped.forward(volumes, step_blocks, leaves)
    spec = taped.spec
    pred_grid = ad.reshape(pred, (batch, spec.m, spec.k, CHANNELS))
    loss_var = ad.sse_mean(pred_grid, targets, float(batch))
    grads = ad.grads_for(loss_var, leaves)
    return loss_var.value, grads


def backward(window, target, spec: ModelSpec, params: dict) -> dict:
    """Exact gradients of loss(forward(window), target) for every named
    parameter; matches central finite differences to high accuracy."""
    volumes, flows = window[0], window[1]
    volumes = np.asarray(volumes, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if volumes.shape != (spec.history, spec.m, spec.k, CHANNELS):
        raise ShapeError(f"window volumes {volumes.shape} do not match the spec")
    if target.shape != (spec.m, spec.k, CHANNELS):
        raise ShapeError(f"target {target.shape} does not match the spec")
    params = check_params(spec, params)
    leaves = {name: ad.leaf(arr) for name, arr in params.items()}
    taped = _TapedModel(spec)
    step_flows = [[f] for f in flows]
    _, grads = _loss_and_grads(taped, volumes[None], target[None], step_flows, leaves, {})
    return grads


def predict_windows(dataset, spec: ModelSpec, params: dict, indices=None, batch_size: int = 64):
    """Model-space predictions for the given windows (default all), as an
    (n_windows, m, k, 2) array. Runs the batched forward pass with
    parameters held constant, so no tape is recorded."""
    params = check_params(spec, params)
    if indices is None:
        indices = range(len(dataset))
    indices = list(indices)
    consts = {name: ad.constant(arr) for name, arr in params.items()}
    taped = _TapedModel(spec)
    pair_cache: dict = {}
    out = np.zeros((len(indices), spec.m, spec.k, CHANNELS))
    for lo in range(0, len(indices), batch_size):
        chunk = indices[lo : lo + batch_size]
        volumes, _, flows = _batch_arrays(dataset, chunk)
        blocks = _window_blocks(spec, flows, pair_cache)
        pred = taped.forward(volumes, blocks, consts)
        out[lo : lo + len(chunk)] = pred.value.reshape(len(chunk), spec.m, spec.k, CHANNELS)
    return out


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 8
    lr: float = 2e-4
    seed: int = 0
    clip_norm: float | None = None

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "seed": self.seed,
            "clip_norm": self.clip_norm,
        }


@dataclass
class AdamState:
    """First/second moment estimates per parameter plus the step count."""

    m: dict
    v: dict
    step: int = 0
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict, lr: float = 2e-4) -> "AdamState":
        return cls(
            m={k: np.zeros_like(v) for k, v in params.items()},
            v={k: np.zeros_like(v) for k, v in params.items()},
            lr=lr,
        )


def adam_step(params: dict, grads: dict, state: AdamState):
    """One bias-corrected Adam update; returns (new params, new state)."""
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        check_same_shape(p, g, f"param and grad for {name}")
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_params[name] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name], new_v[name] = m, v
    return new_params, replace(state, m=new_m, v=new_v, step=t)


def clip_gradients(grads: dict, max_norm: float) -> dict:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return grads
    factor = max_norm / total
    return {k: g * factor for k, g in grads.items()}


@dataclass
class EpochLoss:
    epoch: int
    train_loss: float
    val_loss: float = math.nan


def _mean_loss(taped, dataset, consts, pair_cache, batch_size=64) -> float:
    total = 0.0
    spec = taped.spec
    for lo in range(0, len(dataset), batch_size):
        chunk = list(range(lo, min(lo + batch_size, len(dataset))))
        volumes, targets, flows = _batch_arrays(dataset, chunk)
        blocks = _window_blocks(spec, flows, pair_cache)
        pred = taped.forward(volumes, blocks, consts)
        diff = pred.value.reshape(targets.shape) - targets
        total += float(np.sum(diff * diff))
    return total / len(dataset)


def train(dataset, spec: ModelSpec, config: TrainConfig, val_dataset=None, scaler=None):
    """Mini-batch Adam training; returns (Checkpoint, per-epoch losses).

    The dataset must already be in model space (scaler-transformed); the
    scaler rides along into the checkpoint so predictions can be
    denormalized later. When a validation set is given, the checkpoint
    keeps the parameters from the epoch with the lowest validation loss;
    otherwise it keeps the final epoch. The last incomplete batch is used,
    and shuffling comes from the same seeded PCG64 stream as the
    parameter initialization.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng(config.seed)
    params = init_params(spec, rng)
    state = AdamState.for_params(params, lr=config.lr)
    taped = _TapedModel(spec)
    pair_cache: dict = {}

    select_by_val = val_dataset is not None and len(val_dataset) > 0
    best_params = {k: v.copy() for k, v in params.items()}
    best_epoch = 0
    best_metric = math.inf
    log: list[EpochLoss] = []

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(dataset))
        epoch_sse = 0.0
        for lo in range(0, len(order), config.batch_size):
            chunk = [int(w) for w in order[lo : lo + config.batch_size]]
            volumes, targets, flows = _batch_arrays(dataset, chunk)
            leaves = {name: ad.leaf(arr) for name, arr in params.items()}
            batch_loss, grads = _loss_and_grads(taped, volumes, targets, flows, leaves, pair_cache)
            if not math.isfinite(batch_loss):
                raise NumericError(
                    f"non-finite training loss {batch_loss} at epoch {epoch}, "
                    f"batch starting at window {lo}"
                )
            if config.clip_norm is not None:
                grads = clip_gradients(grads, config.clip_norm)
            params, state = adam_step(params, grads, state)
            epoch_sse += batch_loss * len(chunk)
        train_loss = epoch_sse / len(dataset)

        val_loss = math.nan
        if select_by_val:
            consts = {name: ad.constant(arr) for name, arr in params.items()}
            val_loss = _mean_loss(taped, val_dataset, consts, pair_cache)
            if val_loss < best_metric:
                best_metric = val_loss
                best_epoch = epoch
                best_params = {k: v.copy() for k, v in params.items()}
        log.append(EpochLoss(epoch, train_loss, val_loss))

    if not select_by_val and config.epochs > 0:
        best_params = params
        best_epoch = config.epochs

    ckpt = Checkpoint(
        spec=spec,
        params=best_params,
        scaler=scaler,
        seed=config.seed,
        epoch=best_epoch,
        extra={"train_config": config.to_dict()},
    )
    return ckpt, log


def write_loss_log(path, log) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for row in log:
            val = "" if math.isnan(row.val_loss) else repr(row.val_loss)
            writer.writerow([row.epoch, repr(row.train_loss), val])


def parameter_count(spec: ModelSpec) -> int:
    return sum(int(np.prod(shape)) for shape, _, _ in param_fans(spec).values())
