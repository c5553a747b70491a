"""Convolution kernels: K-step diffusion over flow graphs and same-shape
2D convolution over grid tensors.

Diffusion convolution walks a signal K-1 steps along and against the flow
direction using the row-normalised transition pair, weighting each (step,
direction) by a learned coefficient. Matrix powers are never materialised;
each step is one sparse mat-vec. The 2D path is plain zero-padded
cross-correlation with stride 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .flowgraph import SparseFlowMatrix, TransitionPair, make_transitions, spmv


@dataclass(frozen=True)
class DiffusionFilter:
    """theta[p, q, k, d]: input channel, output channel, step, direction
    (0 walks along flows, 1 against them)."""

    theta: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64)
        if theta.ndim != 4 or theta.shape[3] != 2 or theta.shape[2] < 1:
            raise ShapeError(f"diffusion filter must be P x Q x K x 2 with K >= 1, got {theta.shape}")
        object.__setattr__(self, "theta", theta)

    @property
    def p(self) -> int:
        return self.theta.shape[0]

    @property
    def q(self) -> int:
        return self.theta.shape[1]

    @property
    def steps(self) -> int:
        return self.theta.shape[2]


@dataclass(frozen=True)
class ConvFilter:
    """kernel[kh, kw, c_in, c_out] with odd spatial dims; bias per c_out,
    None meaning no bias term."""

    kernel: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self):
        kernel = np.asarray(self.kernel, dtype=np.float64)
        if kernel.ndim != 4:
            raise ShapeError(f"conv kernel must be kh x kw x c_in x c_out, got {kernel.shape}")
        if kernel.shape[0] % 2 == 0 or kernel.shape[1] % 2 == 0:
            raise ShapeError("conv kernel spatial dims must be odd for same-shape padding")
        object.__setattr__(self, "kernel", kernel)
        if self.bias is not None:
            bias = np.asarray(self.bias, dtype=np.float64)
            if bias.shape != (kernel.shape[3],):
                raise ShapeError(f"conv bias must have shape ({kernel.shape[3]},), got {bias.shape}")
            object.__setattr__(self, "bias", bias)


def diffusion_powers(s: np.ndarray, trans: TransitionPair, steps: int) -> np.ndarray:
    """Stack of walk iterates, shape (steps, 2, n, c); index 0 is s itself
    for both directions."""
    s = np.asarray(s, dtype=np.float64)
    squeeze = s.ndim == 1
    if squeeze:
        s = s[:, None]
    if s.shape[0] != trans.n:
        raise ShapeError(f"signal has {s.shape[0]} rows, transitions expect {trans.n}")
    powers = np.zeros((steps, 2, s.shape[0], s.shape[1]))
    powers[0, 0] = s
    powers[0, 1] = s
    for k in range(1, steps):
        powers[k, 0] = spmv(trans.out_transition, powers[k - 1, 0])
        powers[k, 1] = spmv(trans.in_transition, powers[k - 1, 1])
    return powers[:, :, :, 0] if squeeze else powers


def diffusion_conv(s: np.ndarray, trans: TransitionPair, theta_slice: np.ndarray) -> np.ndarray:
    """Sum over steps k and directions d of theta_slice[k, d] times the
    k-step walk of the single-channel signal s; the k=0 term is s itself."""
    theta_slice = np.asarray(theta_slice, dtype=np.float64)
    if theta_slice.ndim != 2 or theta_slice.shape[1] != 2:
        raise ShapeError(f"theta slice must be K x 2, got {theta_slice.shape}")
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 1:
        raise ShapeError(f"diffusion_conv takes a single-channel signal, got shape {s.shape}")
    powers = diffusion_powers(s, trans, theta_slice.shape[0])
    return np.einsum("kd,kdn->n", theta_slice, powers)


def flow_aware_gconv(
    x: np.ndarray,
    f: SparseFlowMatrix,
    filt: DiffusionFilter,
    trans: TransitionPair | None = None,
) -> np.ndarray:
    """Diffusion convolution of an n x P signal against transitions built
    from the interval's flow matrix; returns n x Q. Passing trans skips
    rebuilding the transitions when the caller already has them."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"graph signal must be n x P, got shape {x.shape}")
    if x.shape != (f.n, filt.p):
        raise ShapeError(
            f"signal {x.shape} does not match {f.n} regions x {filt.p} input channels"
        )
    if trans is None:
        trans = make_transitions(f)
    powers = diffusion_powers(x, trans, filt.steps)  # (K, 2, n, P)
    return np.einsum("kdnp,pqkd->nq", powers, filt.theta)


def patch_indices(m: int, k: int, kh: int, kw: int):
    """Row/col gather indices into the zero-padded grid for im2col.

    Both have shape (m*k, kh*kw); flattening the tap axis row-major as
    (dy, dx) matches kernel.reshape(kh*kw*c_in, c_out). In padded
    coordinates, tap (dy, dx) of cell (i, j) sits at (i + dy, j + dx).
    """
    base_r = np.repeat(np.arange(m), k)
    base_c = np.tile(np.arange(k), m)
    off_r = np.repeat(np.arange(kh), kw)
    off_c = np.tile(np.arange(kw), kh)
    rows = base_r[:, None] + off_r[None, :]
    cols = base_c[:, None] + off_c[None, :]
    return rows, cols


def conv2d_same(x: np.ndarray, filt: ConvFilter) -> np.ndarray:
    """Zero-padded stride-1 cross-correlation; output keeps the m x k
    spatial shape, with the filter bias (if any) added per channel."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"grid tensor must be m x k x c_in, got shape {x.shape}")
    kh, kw, c_in, c_out = filt.kernel.shape
    if x.shape[2] != c_in:
        raise ShapeError(f"input has {x.shape[2]} channels, kernel expects {c_in}")
    m, k = x.shape[0], x.shape[1]
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    padded = np.pad(x, ((ph, ph), (pw, pw), (0, 0)))
    rows, cols = patch_indices(m, k, kh, kw)
    patches = padded[rows, cols, :].reshape(m * k, kh * kw * c_in)
    out = patches @ filt.kernel.reshape(kh * kw * c_in, c_out)
    if filt.bias is not None:
        out = out + filt.bias
    return out.reshape(m, k, c_out)
