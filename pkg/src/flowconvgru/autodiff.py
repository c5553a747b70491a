"""Minimal reverse-mode differentiation over float64 numpy arrays.

Every operation builds a Var holding its value, its parent Vars, and one
vector-Jacobian closure per parent. backward() walks the recorded graph
once in reverse topological order and accumulates gradients with a fixed
summation order, so results are bit-reproducible. Subgraphs that cannot
reach a trainable leaf are pruned at construction time.

The op set is deliberately small: exactly what the gated recurrent model
needs (dense and sparse matmul, patch gathering for convolution, pointwise
gates, concatenation and reshapes, and the squared-error loss).
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit


class Var:
    __slots__ = ("value", "parents", "vjps", "needs_grad")

    def __init__(self, value, parents=(), vjps=(), needs_grad=False):
        self.value = value
        self.parents = parents
        self.vjps = vjps
        self.needs_grad = needs_grad or any(p.needs_grad for p in parents)


def leaf(value) -> Var:
    return Var(np.asarray(value, dtype=np.float64), needs_grad=True)


def constant(value) -> Var:
    return Var(np.asarray(value, dtype=np.float64))


def _make(value, parents, vjps) -> Var:
    # drop the graph when nothing upstream is trainable
    if not any(p.needs_grad for p in parents):
        return Var(value)
    return Var(value, tuple(parents), tuple(vjps))


def add(a: Var, b: Var) -> Var:
    if a.value.shape != b.value.shape:
        raise ValueError(f"add shape mismatch {a.value.shape} vs {b.value.shape}")
    return _make(a.value + b.value, (a, b), (lambda g: g, lambda g: g))


def add_bias(x: Var, b: Var) -> Var:
    """x[..., c] + b[c]; the bias gradient sums over all leading axes."""
    if x.value.shape[-1:] != b.value.shape:
        raise ValueError(f"bias {b.value.shape} does not match trailing dim of {x.value.shape}")
    axes = tuple(range(x.value.ndim - 1))
    return _make(x.value + b.value, (x, b), (lambda g: g, lambda g: g.sum(axis=axes)))


def mul(a: Var, b: Var) -> Var:
    if a.value.shape != b.value.shape:
        raise ValueError(f"mul shape mismatch {a.value.shape} vs {b.value.shape}")
    av, bv = a.value, b.value
    return _make(av * bv, (a, b), (lambda g: g * bv, lambda g: g * av))


def scale(x: Var, c: float) -> Var:
    return _make(x.value * c, (x,), (lambda g: g * c,))


def one_minus(x: Var) -> Var:
    return _make(1.0 - x.value, (x,), (lambda g: -g,))


def sigmoid(x: Var) -> Var:
    y = expit(x.value)
    return _make(y, (x,), (lambda g: g * y * (1.0 - y),))


def tanh(x: Var) -> Var:
    y = np.tanh(x.value)
    return _make(y, (x,), (lambda g: g * (1.0 - y * y),))


def matmul(a: Var, b: Var) -> Var:
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ValueError(f"matmul needs compatible 2-D operands, got {av.shape} @ {bv.shape}")
    return _make(av @ bv, (a, b), (lambda g: g @ bv.T, lambda g: av.T @ g))


def sparse_mm(mat, mat_t, x: Var) -> Var:
    """Constant sparse matrix @ x. mat_t must be mat's transpose (the
    caller precomputes it once per matrix)."""
    return _make(mat @ x.value, (x,), (lambda g: mat_t @ g,))


def concat(xs, axis: int) -> Var:
    xs = list(xs)
    values = [x.value for x in xs]
    sizes = [v.shape[axis] for v in values]
    offsets = np.cumsum([0] + sizes)
    ndim = values[0].ndim

    def slicer(i):
        idx = [slice(None)] * ndim
        idx[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
        return tuple(idx)

    vjps = tuple((lambda g, i=i: g[slicer(i)]) for i in range(len(xs)))
    return _make(np.concatenate(values, axis=axis), xs, vjps)


def reshape(x: Var, shape) -> Var:
    old = x.value.shape
    return _make(x.value.reshape(shape), (x,), (lambda g: g.reshape(old),))


def transpose(x: Var, axes) -> Var:
    inverse = tuple(np.argsort(axes))
    return _make(np.transpose(x.value, axes), (x,), (lambda g: np.transpose(g, inverse),))


def pad2d(x: Var, ph: int, pw: int) -> Var:
    """Zero-pad axes 1 and 2 of a (B, m, k, c) tensor."""
    m, k = x.value.shape[1], x.value.shape[2]
    padded = np.pad(x.value, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    return _make(padded, (x,), (lambda g: g[:, ph : ph + m, pw : pw + k, :],))


def gather_patches(xp: Var, rows: np.ndarray, cols: np.ndarray) -> Var:
    """im2col gather on a padded (B, Hp, Wp, c) tensor using the index
    arrays from convops.patch_indices; returns (B, m*k, taps, c)."""
    batch, hp, wp, c = xp.value.shape
    value = xp.value[:, rows, cols, :]

    def vjp(g):
        out = np.zeros((batch, hp, wp, c))
        np.add.at(out, (np.arange(batch)[:, None, None], rows[None], cols[None]), g)
        return out

    return _make(value, (xp,), (vjp,))


def sse_mean(pred: Var, target: np.ndarray, denom: float) -> Var:
    """Sum of squared errors divided by denom (the batch size)."""
    target = np.asarray(target, dtype=np.float64)
    if pred.value.shape != target.shape:
        raise ValueError(f"loss shape mismatch {pred.value.shape} vs {target.shape}")
    resid = pred.value - target
    value = float(np.sum(resid * resid) / denom)
    return _make(value, (pred,), (lambda g: g * (2.0 / denom) * resid,))


def _topo_order(root: Var):
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.needs_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def backward(root: Var) -> dict:
    """Gradients of a scalar root w.r.t. every reachable Var, keyed by
    id(); pair with the Var objects you kept references to."""
    order = _topo_order(root)
    grads = {id(root): np.float64(1.0)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None:
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            if not parent.needs_grad:
                continue
            pg = vjp(g)
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg
    return grads


def grads_for(root: Var, named: dict) -> dict:
    """Gradient arrays for a dict of named leaf Vars; leaves the loss
    never touched get zeros."""
    table = backward(root)
    out = {}
    for name, var in named.items():
        g = table.get(id(var))
        out[name] = np.zeros_like(var.value) if g is None else np.asarray(g)
    return out
