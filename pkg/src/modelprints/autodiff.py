"""Minimal dense-tensor core with reverse-mode automatic differentiation.

The op set is exactly what the set encoder and the attribution classifier
need: elementwise arithmetic, matmul, strided conv2d, relu, the two pooling
reductions, row softmax, pairwise squared distances, log/sum/scalar scaling.
Graphs are rebuilt on every forward pass (define-by-run), storage is float32
by default, and all reductions accumulate in float64 so finite-difference
gradient checks are stable at desk scale.
"""

from __future__ import annotations

import numpy as np

_DEFAULT_DTYPE = np.float32


class Tensor:
    """A dense n-d array with an optional gradient buffer.

    ``grad`` is allocated (as zeros, in float64) exactly when
    ``requires_grad`` is true, so parameters that never participate in a
    graph still report a well-defined zero gradient.
    """

    __slots__ = ("data", "requires_grad", "grad", "_inputs", "_vjp", "_op", "_consumed")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        # storage is float32 unless a wider float is asked for explicitly
        # (gradient checks construct float64 graphs to isolate the math)
        arr = np.asarray(data, dtype=dtype if dtype is not None else _DEFAULT_DTYPE)
        if arr.dtype not in (np.float32, np.float64):
            raise TypeError(f"tensors store float32/float64, got {arr.dtype}")
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros(self.data.shape, dtype=np.float64) if requires_grad else None
        self._inputs = ()
        self._vjp = None
        self._op = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def item(self):
        if self.data.size != 1:
            raise ValueError(f"item: tensor has {self.data.size} elements, expected 1")
        return float(self.data.reshape(()))

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}{flag})"


def _as_f64(t):
    return t.data.astype(np.float64, copy=False)


def _storage_dtype(inputs):
    return np.result_type(*(t.data.dtype for t in inputs))


def _check_finite(arr, op_kind):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{op_kind}: non-finite values in output")


# Each op returns (out_f64, vjp) where vjp maps the float64 upstream gradient
# to one float64 gradient per input (or None for inputs that get none).

_OPS = {}


def _op(name):
    def register(fn):
        _OPS[name] = fn
        return fn
    return register


def _bias_axes(out_shape, b_shape):
    # bias-add: b matches the trailing dims of out; leading dims are summed out
    return tuple(range(len(out_shape) - len(b_shape)))


@_op("add")
def _add(inputs, attrs):
    a, b = inputs
    if a.shape != b.shape and b.shape != a.shape[-len(b.shape):]:
        raise ValueError(f"add: incompatible shapes {a.shape} and {b.shape}")
    out = _as_f64(a) + _as_f64(b)

    def vjp(g):
        if a.shape == b.shape:
            return g, g
        return g, g.sum(axis=_bias_axes(a.shape, b.shape))

    return out, vjp


@_op("sub")
def _sub(inputs, attrs):
    a, b = inputs
    if a.shape != b.shape:
        raise ValueError(f"sub: incompatible shapes {a.shape} and {b.shape}")
    out = _as_f64(a) - _as_f64(b)
    return out, lambda g: (g, -g)


@_op("mul")
def _mul(inputs, attrs):
    a, b = inputs
    if a.shape != b.shape:
        raise ValueError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    a64, b64 = _as_f64(a), _as_f64(b)
    return a64 * b64, lambda g: (g * b64, g * a64)


@_op("matmul")
def _matmul(inputs, attrs):
    a, b = inputs
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    a64, b64 = _as_f64(a), _as_f64(b)
    return a64 @ b64, lambda g: (g @ b64.T, a64.T @ g)


def _im2col(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols, ho, wo


def _col2im(cols, x_shape, kh, kw, stride, pad, ho, wo):
    n, c, h, w = x_shape
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, i, j]
    return xp[:, :, pad:pad + h, pad:pad + w]


@_op("conv2d")
def _conv2d(inputs, attrs):
    x, w = inputs[0], inputs[1]
    b = inputs[2] if len(inputs) > 2 else None
    stride = int(attrs.get("stride", 1))
    pad = int(attrs.get("pad", 0))
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError(f"conv2d: expected 4-d input and kernel, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"conv2d: channel mismatch {x.shape} vs kernel {w.shape}")
    kh, kw = w.shape[2], w.shape[3]
    if x.shape[2] + 2 * pad < kh or x.shape[3] + 2 * pad < kw:
        raise ValueError(f"conv2d: kernel {w.shape} larger than padded input {x.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ValueError(f"conv2d: bias shape {b.shape} does not match {w.shape[0]} filters")

    x64, w64 = _as_f64(x), _as_f64(w)
    n, c = x.shape[0], x.shape[1]
    o = w.shape[0]
    cols, ho, wo = _im2col(x64, kh, kw, stride, pad)
    # (n*ho*wo, c*kh*kw) @ (c*kh*kw, o)
    cols2 = cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * ho * wo, c * kh * kw)
    wmat = w64.reshape(o, c * kh * kw).T
    out = (cols2 @ wmat).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + _as_f64(b)[None, :, None, None]

    def vjp(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        gw = (cols2.T @ g2).T.reshape(w.shape)
        gcols = (g2 @ wmat.T).reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
        gx = _col2im(gcols, x.shape, kh, kw, stride, pad, ho, wo)
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return out, vjp


@_op("relu")
def _relu(inputs, attrs):
    (x,) = inputs
    x64 = _as_f64(x)
    mask = x64 > 0.0
    return np.where(mask, x64, 0.0), lambda g: (g * mask,)


@_op("mean_pool_spatial")
def _mean_pool_spatial(inputs, attrs):
    (x,) = inputs
    if x.data.ndim != 4:
        raise ValueError(f"mean_pool_spatial: expected 4-d input, got {x.shape}")
    n, c, h, w = x.shape
    out = _as_f64(x).mean(axis=(2, 3))

    def vjp(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),)

    return out, vjp


@_op("mean_over_set_axis")
def _mean_over_set_axis(inputs, attrs):
    (x,) = inputs
    mode = attrs.get("mode", "mean")
    if x.data.ndim != 3:
        raise ValueError(f"mean_over_set_axis: expected (groups, set, features), got {x.shape}")
    if mode not in ("mean", "sum"):
        raise ValueError(f"mean_over_set_axis: unknown mode {mode!r}")
    groups, n, feats = x.shape
    # Summing value-sorted addends makes the reduction a function of the
    # multiset only, so any permutation of the set axis is bitwise identical.
    ordered = np.sort(_as_f64(x), axis=1)
    out = ordered.sum(axis=1)
    if mode == "mean":
        out = out / n

    def vjp(g):
        scale = 1.0 / n if mode == "mean" else 1.0
        return (np.broadcast_to(g[:, None, :] * scale, x.shape).copy(),)

    return out, vjp


@_op("reshape")
def _reshape(inputs, attrs):
    (x,) = inputs
    shape = tuple(int(s) for s in attrs["shape"])
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise ValueError(f"reshape: cannot view {x.shape} as {shape}")
    return _as_f64(x).reshape(shape), lambda g: (g.reshape(x.shape),)


@_op("softmax_rows")
def _softmax_rows(inputs, attrs):
    (x,) = inputs
    if x.data.ndim != 2:
        raise ValueError(f"softmax_rows: expected 2-d input, got {x.shape}")
    logits = _as_f64(x)
    mask = attrs.get("mask")
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape != x.shape:
            raise ValueError(f"softmax_rows: mask shape {mask.shape} != input {x.shape}")
        logits = logits + mask
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return p, vjp


@_op("squared_euclidean_rowpair")
def _squared_euclidean_rowpair(inputs, attrs):
    (z,) = inputs
    if z.data.ndim != 2:
        raise ValueError(f"squared_euclidean_rowpair: expected 2-d input, got {z.shape}")
    z64 = _as_f64(z)
    diff = z64[:, None, :] - z64[None, :, :]
    out = np.einsum("ijk,ijk->ij", diff, diff)

    def vjp(g):
        s = g + g.T
        return (2.0 * (s.sum(axis=1)[:, None] * z64 - s @ z64),)

    return out, vjp


@_op("log")
def _log(inputs, attrs):
    (x,) = inputs
    x64 = _as_f64(x)
    if np.any(x64 <= 0.0):
        raise ValueError("log: non-positive input")
    return np.log(x64), lambda g: (g / x64,)


@_op("sum")
def _sum(inputs, attrs):
    (x,) = inputs
    out = np.asarray(_as_f64(x).sum())
    return out, lambda g: (np.broadcast_to(np.asarray(g, dtype=np.float64), x.shape).copy(),)


@_op("scalar_mul")
def _scalar_mul(inputs, attrs):
    (x,) = inputs
    c = float(attrs["value"])
    return _as_f64(x) * c, lambda g: (g * c,)


def forward_op(op_kind, inputs, attributes=None):
    """Apply one primitive op, recording a graph node if any input needs grad.

    ``inputs`` is a sequence of Tensors, ``attributes`` a dict of plain
    (non-differentiable) parameters such as conv stride or reshape target.
    """
    if op_kind not in _OPS:
        raise ValueError(f"unknown op kind {op_kind!r}")
    inputs = tuple(inputs)
    out64, vjp = _OPS[op_kind](inputs, attributes or {})
    _check_finite(out64, op_kind)
    storage = _storage_dtype(inputs)
    out = Tensor(out64.astype(storage, copy=False), dtype=storage)
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._inputs = inputs
        out._vjp = vjp
        out._op = op_kind
    return out


def backward(loss):
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf of the graph."""
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss._consumed:
        raise RuntimeError("backward: graph already consumed")
    loss._consumed = True

    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._inputs:
            if parent._vjp is not None or parent.requires_grad:
                stack.append((parent, False))

    grads = {id(loss): np.ones(loss.shape, dtype=np.float64)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            if node.requires_grad:
                _check_finite(g, "backward")
                node.grad += g
            continue
        for parent, pg in zip(node._inputs, node._vjp(g)):
            if pg is None:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg
    # anything left unpopped is a leaf reached only through untracked paths
    for node in order:
        g = grads.pop(id(node), None)
        if g is not None and node._vjp is None and node.requires_grad:
            node.grad += g


# convenience wrappers used throughout the package

def add(a, b):
    return forward_op("add", (a, b))


def sub(a, b):
    return forward_op("sub", (a, b))


def mul(a, b):
    return forward_op("mul", (a, b))


def matmul(a, b):
    return forward_op("matmul", (a, b))


def conv2d(x, w, b=None, stride=1, pad=0):
    inputs = (x, w) if b is None else (x, w, b)
    return forward_op("conv2d", inputs, {"stride": stride, "pad": pad})


def relu(x):
    return forward_op("relu", (x,))


def mean_pool_spatial(x):
    return forward_op("mean_pool_spatial", (x,))


def mean_over_set_axis(x, mode="mean"):
    return forward_op("mean_over_set_axis", (x,), {"mode": mode})


def reshape(x, shape):
    return forward_op("reshape", (x,), {"shape": shape})


def softmax_rows(x, mask=None):
    return forward_op("softmax_rows", (x,), {"mask": mask})


def squared_euclidean_rowpair(z):
    return forward_op("squared_euclidean_rowpair", (z,))


def log(x):
    return forward_op("log", (x,))


def sum_all(x):
    return forward_op("sum", (x,))


def scalar_mul(x, value):
    return forward_op("scalar_mul", (x,), {"value": value})
