"""The operator set.

Shapes follow numpy broadcasting where noted.  Integer arguments
(embedding ids, class targets, boolean masks) are plain ndarrays, not
Tensors; gradients flow only through real-valued inputs.
"""

from __future__ import annotations

import numpy as np

from .rng import philox
from .tensor import EngineError, ShapeError, Tensor, accumulate, make_node


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: shapes {a.data.shape} x {b.data.shape} do not conform")

    if b.data.ndim == 2 and a.data.ndim >= 2:
        # linear-layer case: collapse leading dims into one GEMM per side
        k, n = b.data.shape

        def bwd(g):
            g2 = g.reshape(-1, n)
            accumulate(a, np.matmul(g2, b.data.T).reshape(a.data.shape))
            accumulate(b, np.matmul(a.data.reshape(-1, k).T, g2))
    else:

        def bwd(g):
            accumulate(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape))
            accumulate(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape))

    return make_node(out, "matmul", (a, b), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.data.shape} + {b.data.shape} do not broadcast")

    def bwd(g):
        ga = _unbroadcast(g, a.data.shape)
        accumulate(a, ga, own=ga is not g)
        gb = _unbroadcast(g, b.data.shape)
        accumulate(b, gb, own=gb is not g)

    return make_node(out, "add", (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.data.shape} * {b.data.shape} do not broadcast")

    def bwd(g):
        accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return make_node(out, "mul", (a, b), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    a = _as_tensor(a)
    s = float(s)

    def bwd(g):
        accumulate(a, g * s)

    return make_node(a.data * s, "scale", (a,), bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: empty input list")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: shapes {[t.data.shape for t in tensors]} on axis {axis}")
    sizes = [t.data.shape[axis] for t in tensors]
    edges = np.cumsum(sizes)[:-1]

    def bwd(g):
        for t, piece in zip(tensors, np.split(g, edges, axis=axis)):
            accumulate(t, piece)

    return make_node(out, "concat", tuple(tensors), bwd)


def slice_(a: Tensor, key) -> Tensor:
    """Basic slicing only (slices and ints); the backward pass scatters."""
    a = _as_tensor(a)
    out = a.data[key]

    def bwd(g):
        full = np.zeros_like(a.data)
        full[key] = g
        accumulate(a, full)

    return make_node(np.ascontiguousarray(out), "slice", (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: {a.data.shape} -> {tuple(shape)}")

    def bwd(g):
        accumulate(a, g.reshape(a.data.shape))

    return make_node(out, "reshape", (a,), bwd)


def transpose(a: Tensor, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    if sorted(axes) != list(range(a.data.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {a.data.shape}")
    inv = tuple(np.argsort(axes))

    def bwd(g):
        accumulate(a, np.ascontiguousarray(g.transpose(inv)))

    return make_node(np.ascontiguousarray(a.data.transpose(axes)), "transpose", (a,), bwd)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    table = _as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ShapeError(
            f"embedding_lookup: id out of range for table with {table.data.shape[0]} rows"
        )
    out = table.data[ids]

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
        accumulate(table, gt)

    return make_node(out, "embedding_lookup", (table,), bwd)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def bwd(g):
        dot = np.sum(g * y, axis=axis, keepdims=True)
        accumulate(a, y * (g - dot))

    return make_node(y, "softmax", (a,), bwd)


def layer_norm(a: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalization only; any affine gain/bias is applied by the caller."""
    a = _as_tensor(a)
    mu = np.mean(a.data, axis=axis, keepdims=True)
    var = np.var(a.data, axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv

    def bwd(g):
        gm = np.mean(g, axis=axis, keepdims=True)
        gx = np.mean(g * xhat, axis=axis, keepdims=True)
        accumulate(a, inv * (g - gm - xhat * gx))

    return make_node(xhat, "layer_norm", (a,), bwd)


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.maximum(a.data, 0.0)

    def bwd(g):
        accumulate(a, g * (a.data > 0))

    return make_node(out, "relu", (a,), bwd)


def dropout(a: Tensor, p: float, key: tuple, training: bool = True) -> Tensor:
    """Inverted dropout with a counter-based mask.

    ``key`` is a tuple of ints, conventionally (run seed, dropout-site id,
    step); the mask is a pure function of it, so replaying a step
    reproduces the mask exactly.  Identity in eval mode.
    """
    a = _as_tensor(a)
    if not training or p == 0.0:
        return a
    if not 0.0 <= p < 1.0:
        raise EngineError(f"dropout: p={p} outside [0, 1)")
    draws = philox(*key).random(a.data.shape, dtype=np.float32)
    mask = (draws >= p).astype(a.data.dtype)
    mask *= 1.0 / (1.0 - p)

    def bwd(g):
        accumulate(a, g * mask)

    return make_node(a.data * mask, "dropout", (a,), bwd)


def masked_fill(a: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is True with ``value`` (often -inf)."""
    a = _as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    try:
        out = np.where(mask, a.data.dtype.type(value), a.data)
    except ValueError:
        raise ShapeError(f"masked_fill: mask {mask.shape} does not broadcast to {a.data.shape}")

    def bwd(g):
        accumulate(a, _unbroadcast(np.where(mask, 0.0, g), a.data.shape))

    return make_node(out, "masked_fill", (a,), bwd)


def cross_entropy(logits: Tensor, targets: np.ndarray, ignore_index: int = 0) -> Tensor:
    """Mean token-level cross entropy over positions whose target is not
    ``ignore_index``; those positions contribute nothing, gradient included.

    ``logits``: (..., V); ``targets``: integer array of shape ``logits.shape[:-1]``.
    """
    logits = _as_tensor(logits)
    targets = np.asarray(targets)
    if targets.shape != logits.data.shape[:-1]:
        raise ShapeError(
            f"cross_entropy: targets {targets.shape} vs logits {logits.data.shape}"
        )
    keep = targets != ignore_index
    count = int(keep.sum())
    if count == 0:
        raise EngineError("cross_entropy: every target position is ignored")
    x = logits.data
    m = np.max(x, axis=-1, keepdims=True)
    lse = m[..., 0] + np.log(np.sum(np.exp(x - m), axis=-1))
    safe_targets = np.where(keep, targets, 0)
    picked = np.take_along_axis(x, safe_targets[..., None], axis=-1)[..., 0]
    nll = (lse - picked) * keep
    loss = np.array(nll.sum() / count)

    def bwd(g):
        p = np.exp(x - m)
        p /= p.sum(axis=-1, keepdims=True)
        np.put_along_axis(
            p, safe_targets[..., None],
            np.take_along_axis(p, safe_targets[..., None], axis=-1) - 1.0, axis=-1,
        )
        p *= (keep / count)[..., None]
        accumulate(logits, p * g)

    return make_node(loss, "cross_entropy", (logits,), bwd)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            accumulate(a, np.broadcast_to(g, a.data.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            accumulate(a, np.broadcast_to(gg, a.data.shape).copy())

    return make_node(out, "sum", (a,), bwd)


OP_KINDS = (
    "matmul", "add", "mul", "scale", "concat", "slice", "reshape", "transpose",
    "embedding_lookup", "softmax", "layer_norm", "relu", "dropout",
    "masked_fill", "cross_entropy", "sum",
)

_DISPATCH = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "scale": scale,
    "concat": concat,
    "slice": slice_,
    "reshape": reshape,
    "transpose": transpose,
    "embedding_lookup": embedding_lookup,
    "softmax": softmax,
    "layer_norm": layer_norm,
    "relu": relu,
    "dropout": dropout,
    "masked_fill": masked_fill,
    "cross_entropy": cross_entropy,
    "sum": sum_,
}


def apply(kind: str, inputs, **attrs) -> Tensor:
    """Uniform dispatcher over the operator set (used by the grad-check CLI)."""
    if kind not in _DISPATCH:
        raise EngineError(f"unknown op kind {kind!r}")
    fn = _DISPATCH[kind]
    if kind == "concat":
        return fn(inputs, **attrs)
    return fn(*inputs, **attrs)
