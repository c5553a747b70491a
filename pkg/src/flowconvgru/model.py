"""The flow-convolutional GRU: cell, stacking, output head, and variants.

Each gate's pre-activation sums a diffusion graph convolution over the
interval's flow graph (input-to-state, on graph signals) and a same-shape
2D convolution (state-to-state, on grid tensors), plus a bias. Variants:
`nc` drops the 2D convolution, `nf` drops the graph convolution, and `fc`
replaces both with one affine map over the flattened concatenation (a
plain fully connected GRU).

Layer 1 consumes the 2-channel volume tensors; deeper layers consume the
previous layer's hidden states. All layers share the window's flow
sequence. The head concatenates the last layer's hidden states over the
window per region and maps them affinely to the 2 output channels, with
no output activation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .convops import ConvFilter, DiffusionFilter, conv2d_same, flow_aware_gconv
from .errors import ShapeError
from .flowgraph import make_transitions

CHANNELS = 2
VARIANTS = ("full", "nc", "nf", "fc")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture hyperparameters; m and k tie the model to a grid."""

    m: int
    k: int
    layers: int = 3
    hidden: int = 64
    diffusion_steps: int = 2
    history: int = 6
    variant: str = "full"
    kernel_size: int = 3

    def __post_init__(self):
        if self.m < 1 or self.k < 1:
            raise ValueError("grid dims must be positive")
        if self.layers < 1 or self.hidden < 1 or self.diffusion_steps < 1 or self.history < 1:
            raise ValueError("layers, hidden, diffusion_steps, history must be >= 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd and positive")

    @property
    def n_regions(self) -> int:
        return self.m * self.k

    def in_channels(self, layer: int) -> int:
        return CHANNELS if layer == 1 else self.hidden

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "k": self.k,
            "layers": self.layers,
            "hidden": self.hidden,
            "diffusion_steps": self.diffusion_steps,
            "history": self.history,
            "variant": self.variant,
            "kernel_size": self.kernel_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**{k: (v if k == "variant" else int(v)) for k, v in d.items()})


@dataclass
class GateParams:
    theta: np.ndarray | None = None  # P x d x K x 2
    kernel: np.ndarray | None = None  # ks x ks x P x d
    bias: np.ndarray | None = None  # (d,) or (n*d,) for fc
    dense: np.ndarray | None = None  # n*P x n*d, fc only


@dataclass
class CellParams:
    r: GateParams = field(default_factory=GateParams)
    u: GateParams = field(default_factory=GateParams)
    h: GateParams = field(default_factory=GateParams)

    def gate(self, name: str) -> GateParams:
        return getattr(self, name)


GATES = ("r", "u", "h")


def param_fans(spec: ModelSpec) -> dict:
    """Ordered map of parameter name -> (shape, fan_in, fan_out)."""
    d, ks, K, n = spec.hidden, spec.kernel_size, spec.diffusion_steps, spec.n_regions
    out: dict[str, tuple] = {}
    for layer in range(1, spec.layers + 1):
        c = spec.in_channels(layer) + d
        for g in GATES:
            key = f"layer{layer}.{g}"
            if spec.variant == "fc":
                out[f"{key}.dense"] = ((n * c, n * d), n * c, n * d)
                out[f"{key}.bias"] = ((n * d,), n * d, n * d)
                continue
            if spec.variant in ("full", "nc"):
                out[f"{key}.theta"] = ((c, d, K, 2), c * K * 2, d)
            if spec.variant in ("full", "nf"):
                out[f"{key}.kernel"] = ((ks, ks, c, d), ks * ks * c, ks * ks * d)
            out[f"{key}.bias"] = ((d,), d, d)
    out["head.weight"] = ((spec.history * d, CHANNELS), spec.history * d, CHANNELS)
    out["head.bias"] = ((CHANNELS,), CHANNELS, CHANNELS)
    return out


def init_params(spec: ModelSpec, seed) -> dict:
    """Glorot-uniform draws, one array at a time in a fixed name order,
    from a seeded PCG64 stream so initialization is reproducible."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params = {}
    for name, (shape, fan_in, fan_out) in param_fans(spec).items():
        a = math.sqrt(6.0 / (fan_in + fan_out))
        params[name] = rng.uniform(-a, a, size=shape)
    return params


def check_params(spec: ModelSpec, params: dict) -> dict:
    expected = param_fans(spec)
    missing = [name for name in expected if name not in params]
    if missing:
        raise ValueError(f"params missing arrays: {missing}")
    for name, (shape, _, _) in expected.items():
        arr = np.asarray(params[name], dtype=np.float64)
        if arr.shape != shape:
            raise ShapeError(f"param {name} has shape {arr.shape}, expected {shape}")
    return {name: np.asarray(params[name], dtype=np.float64) for name in expected}


def cell_params(params: dict, layer: int) -> CellParams:
    cp = CellParams()
    for g in GATES:
        gp = cp.gate(g)
        for kind in ("theta", "kernel", "bias", "dense"):
            arr = params.get(f"layer{layer}.{g}.{kind}")
            if arr is not None:
                setattr(gp, kind, np.asarray(arr, dtype=np.float64))
    return cp


def reshape_to_grid(x: np.ndarray, m: int, k: int) -> np.ndarray:
    """Graph signal (n, c) -> grid tensor (m, k, c); region r maps to cell
    (r // k, r % k)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != m * k:
        raise ShapeError(f"signal {x.shape} does not reshape to {m}x{k} grid")
    return x.reshape(m, k, x.shape[1])


def reshape_to_graph(x: np.ndarray) -> np.ndarray:
    """Grid tensor (m, k, c) -> graph signal (m*k, c); inverse of
    reshape_to_grid."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"grid tensor must be m x k x c, got {x.shape}")
    return x.reshape(x.shape[0] * x.shape[1], x.shape[2])


def _gate_pre(x_grid, x_graph, h_graph, f, gp: GateParams, variant, trans, m, k):
    """Pre-activation of one gate as an (m, k, d) tensor."""
    if variant == "fc":
        flat = np.concatenate([x_graph, h_graph], axis=1).reshape(-1)
        return (flat @ gp.dense + gp.bias).reshape(m, k, -1)
    parts = None
    if variant in ("full", "nc"):
        inp = np.concatenate([x_graph, h_graph], axis=1)
        parts = reshape_to_grid(flow_aware_gconv(inp, f, DiffusionFilter(gp.theta), trans), m, k)
    if variant in ("full", "nf"):
        inp = np.concatenate([x_grid, reshape_to_grid(h_graph, m, k)], axis=2)
        conv = conv2d_same(inp, ConvFilter(gp.kernel, gp.bias))
        parts = conv if parts is None else parts + conv
    else:
        parts = parts + gp.bias
    return parts


def cell_step(x, f, h_prev, p: CellParams, variant: str = "full", trans=None, return_gates=False):
    """One recurrent update: returns the new (m, k, d) hidden state.

    With return_gates=True also returns the reset and update gates, which
    live strictly in (0, 1).
    """
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if x.ndim != 3 or h_prev.ndim != 3 or x.shape[:2] != h_prev.shape[:2]:
        raise ShapeError(f"inputs {x.shape} and hidden {h_prev.shape} do not share a grid")
    m, k = x.shape[0], x.shape[1]
    if f.n != m * k:
        raise ShapeError(f"flow matrix over {f.n} regions does not match {m}x{k} grid")
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if trans is None and variant in ("full", "nc"):
        trans = make_transitions(f)

    x_graph = reshape_to_graph(x)
    h_graph = reshape_to_graph(h_prev)
    r = expit(_gate_pre(x, x_graph, h_graph, f, p.r, variant, trans, m, k))
    u = expit(_gate_pre(x, x_graph, h_graph, f, p.u, variant, trans, m, k))
    rh = r * h_prev
    cand = np.tanh(_gate_pre(x, x_graph, reshape_to_graph(rh), f, p.h, variant, trans, m, k))
    h = u * h_prev + (1.0 - u) * cand
    if return_gates:
        return h, r, u
    return h


def unroll(inputs, flows, p: CellParams, variant: str = "full", trans_seq=None, d=None):
    """Run cell_step over a window starting from a zero hidden state;
    returns all hidden states as a (T, m, k, d) array."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 4:
        raise ShapeError(f"inputs must be (T, m, k, c), got {inputs.shape}")
    if len(flows) != inputs.shape[0]:
        raise ShapeError(f"{inputs.shape[0]} input steps but {len(flows)} flow matrices")
    if d is None:
        d = p.r.bias.shape[-1] if variant != "fc" else p.r.bias.shape[-1] // flows[0].n
    T, m, k = inputs.shape[0], inputs.shape[1], inputs.shape[2]
    hs = np.zeros((T, m, k, d))
    h = np.zeros((m, k, d))
    for t in range(T):
        trans = trans_seq[t] if trans_seq is not None else None
        h = cell_step(inputs[t], flows[t], h, p, variant, trans)
        hs[t] = h
    return hs


def forward(window, spec: ModelSpec, params: dict) -> np.ndarray:
    """Predict the next interval's (m, k, 2) volume tensor from one window
    of T volume tensors and T flow matrices."""
    volumes, flows = window[0], window[1]
    volumes = np.asarray(volumes, dtype=np.float64)
    if volumes.shape != (spec.history, spec.m, spec.k, CHANNELS):
        raise ShapeError(
            f"window volumes {volumes.shape} do not match spec "
            f"({spec.history}, {spec.m}, {spec.k}, {CHANNELS})"
        )
    if len(flows) != spec.history:
        raise ShapeError(f"window has {len(flows)} flow matrices, spec expects {spec.history}")
    for f in flows:
        if f.n != spec.n_regions:
            raise ShapeError(f"flow matrix over {f.n} regions, spec expects {spec.n_regions}")
    params = check_params(spec, params)

    trans_seq = None
    if spec.variant in ("full", "nc"):
        trans_seq = [make_transitions(f) for f in flows]
    xs = volumes
    for layer in range(1, spec.layers + 1):
        xs = unroll(xs, flows, cell_params(params, layer), spec.variant, trans_seq, d=spec.hidden)

    n, d = spec.n_regions, spec.hidden
    stacked = xs.reshape(spec.history, n, d).transpose(1, 0, 2).reshape(n, spec.history * d)
    pred = stacked @ params["head.weight"] + params["head.bias"]
    return reshape_to_grid(pred, spec.m, spec.k)
