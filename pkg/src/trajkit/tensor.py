"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a row-major numpy array plus a gradient slot. Operations
build a graph of closures; Tensor.backward() walks it in reverse
topological order and accumulates dL/dx into every reachable node that
requires gradients.

Conventions kept deliberately strict so the gradient code stays auditable:

* float64 by default; float32 only if the caller passes float32 data.
* broadcasting is limited to leading-axis expansion: the smaller operand's
  shape must equal a trailing suffix of the larger one.
* every public operation checks its result for NaN/Inf and raises
  NumericError instead of propagating poison (disable via no_finite_checks
  for micro-benchmarks only).

Ops are pure with respect to their inputs; one forward/backward graph
belongs to a single thread.
"""

import math
from contextlib import contextmanager

import numpy as np
from scipy.special import expit

from .errors import ConfigError, NumericError, ShapeError, VocabError

FLOAT_DTYPES = (np.float32, np.float64)

_finite_checks = True
_grad_enabled = True

MASK_FILL = -1e9  # substituted for masked logits before exponentiation


@contextmanager
def no_finite_checks():
    global _finite_checks
    prev, _finite_checks = _finite_checks, False
    try:
        yield
    finally:
        _finite_checks = prev


@contextmanager
def no_grad():
    """Skip graph construction; forward values only."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None, _op="tensor"):
        arr = np.asarray(data)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        if _finite_checks and not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite values produced by {_op}"
                               + (f" in tensor {name!r}" if name else ""))
        self.data = arr
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self.grad = np.zeros_like(arr) if self.requires_grad and not _parents else None
        self.name = name
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def backward(self):
        """Reverse-mode pass from a scalar output."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar output, got shape {self.shape}")
        order = _toposort(self)
        self.accumulate_grad(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name=None):
    return Tensor(data, requires_grad=True, name=name)


def _toposort(root):
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def _result(data, parents, backward, op):
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, _parents=tuple(parents) if req else (),
                  _backward=backward if req else None, _op=op)


def _check_leading_broadcast(a_shape, b_shape):
    """Return the output shape; only leading-axis expansion is legal."""
    if a_shape == b_shape:
        return a_shape
    small, big = (a_shape, b_shape) if len(a_shape) < len(b_shape) else (b_shape, a_shape)
    if len(small) == len(big) or (small and big[-len(small):] != small):
        raise ShapeError(f"shapes {a_shape} and {b_shape} are not "
                         "leading-broadcast compatible")
    return big


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    return g.sum(axis=tuple(range(g.ndim - len(shape)))).reshape(shape)


# ---------------------------------------------------------------------------
# elementwise operations
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_leading_broadcast(a.shape, b.shape)
    out_data = a.data + b.data
    parents = (a, b)

    def backward():
        g = out.grad
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.shape))

    out = _result(out_data, parents, backward, "add")
    return out


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_leading_broadcast(a.shape, b.shape)
    out_data = a.data * b.data
    parents = (a, b)

    def backward():
        g = out.grad
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.shape))

    out = _result(out_data, parents, backward, "mul")
    return out


def scale(a, s):
    a = as_tensor(a)
    s = float(s)
    out_data = a.data * s

    def backward():
        if a.requires_grad:
            a.accumulate_grad(out.grad * s)

    out = _result(out_data, (a,), backward, "scale")
    return out


def sigmoid(a):
    a = as_tensor(a)
    out_data = expit(a.data)

    def backward():
        if a.requires_grad:
            a.accumulate_grad(out.grad * out_data * (1.0 - out_data))

    out = _result(out_data, (a,), backward, "sigmoid")
    return out


def tanh(a):
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def backward():
        if a.requires_grad:
            a.accumulate_grad(out.grad * (1.0 - out_data * out_data))

    out = _result(out_data, (a,), backward, "tanh")
    return out


def relu(a):
    a = as_tensor(a)
    out_data = np.maximum(a.data, 0.0)

    def backward():
        if a.requires_grad:
            a.accumulate_grad(out.grad * (a.data > 0.0))

    out = _result(out_data, (a,), backward, "relu")
    return out


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise NumericError("log of non-positive value")
    out_data = np.log(a.data)

    def backward():
        if a.requires_grad:
            a.accumulate_grad(out.grad / a.data)

    out = _result(out_data, (a,), backward, "log")
    return out


def exp(a):
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def backward():
        if a.requires_grad:
            a.accumulate_grad(out.grad * out_data)

    out = _result(out_data, (a,), backward, "exp")
    return out


# ---------------------------------------------------------------------------
# matrix product
# ---------------------------------------------------------------------------

def matmul(a, b):
    """Matrix product for 2-D x 2-D, 3-D x 2-D, and 3-D x 3-D operands."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (2, 3) or b.ndim not in (2, 3):
        raise ShapeError(f"matmul supports 2-D/3-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2] or (a.ndim == 3 and b.ndim == 3 and a.shape[0] != b.shape[0]):
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    if a.ndim == 2 and b.ndim == 3:
        raise ShapeError(f"matmul does not broadcast a 2-D lhs over a batched rhs: "
                         f"{a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward():
        g = out.grad
        if a.requires_grad:
            a.accumulate_grad(g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            if a.ndim == 3 and b.ndim == 2:
                k = a.shape[-1]
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
            b.accumulate_grad(gb)

    out = _result(out_data, (a, b), backward, "matmul")
    return out


# ---------------------------------------------------------------------------
# softmax family
# ---------------------------------------------------------------------------

def softmax(x, mask=None):
    """Softmax over the final axis; masked entries come out exactly 0.

    mask is boolean with True = keep. Masked logits are replaced by a large
    negative constant before exponentiation and any residual mass is zeroed,
    so each surviving row is a proper distribution over its unmasked entries.
    A fully masked row is degenerate and raises NumericError.
    """
    x = as_tensor(x)
    if mask is None:
        m = None
        logits = x.data
    else:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not m.any(axis=-1).all():
            raise NumericError("softmax row with every entry masked")
        logits = np.where(m, x.data, MASK_FILL)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    if m is not None:
        e = e * m
    out_data = e / e.sum(axis=-1, keepdims=True)

    def backward():
        g = out.grad
        inner = (g * out_data).sum(axis=-1, keepdims=True)
        gx = out_data * (g - inner)
        x.accumulate_grad(gx)

    out = _result(out_data, (x,), backward, "softmax")
    return out


def log_softmax(x):
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    out_data = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def backward():
        g = out.grad
        gx = g - np.exp(out_data) * g.sum(axis=-1, keepdims=True)
        x.accumulate_grad(gx)

    out = _result(out_data, (x,), backward, "log_softmax")
    return out


# ---------------------------------------------------------------------------
# regularization and normalization
# ---------------------------------------------------------------------------

def dropout(x, rate, rng, training):
    """Inverted dropout: zero with probability rate, scale survivors."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    keep = rng.keep_mask(rate, x.shape)
    out_data = x.data * keep

    def backward():
        if x.requires_grad:
            x.accumulate_grad(out.grad * keep)

    out = _result(out_data, (x,), backward, "dropout")
    return out


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize over the final axis, then apply gain and bias."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gain.data + bias.data

    def backward():
        g = out.grad
        if gain.requires_grad:
            gain.accumulate_grad(_unbroadcast(g * xhat, gain.shape))
        if bias.requires_grad:
            bias.accumulate_grad(_unbroadcast(g, bias.shape))
        if x.requires_grad:
            gxhat = g * gain.data
            m1 = gxhat.mean(axis=-1, keepdims=True)
            m2 = (gxhat * xhat).mean(axis=-1, keepdims=True)
            x.accumulate_grad(inv * (gxhat - m1 - xhat * m2))

    out = _result(out_data, (x, gain, bias), backward, "layer_norm")
    return out


# ---------------------------------------------------------------------------
# lookup, selection, and shape plumbing
# ---------------------------------------------------------------------------

def embedding_lookup(table, tokens):
    """Gather rows of table by integer token ID; grads scatter-add back."""
    table = as_tensor(table)
    idx = np.asarray(tokens)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise VocabError(f"token id out of range [0, {table.shape[0]}): "
                         f"min={idx.min()}, max={idx.max()}")
    out_data = table.data[idx]

    def backward():
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, out.grad)
        table.accumulate_grad(gt)

    out = _result(out_data, (table,), backward, "embedding_lookup")
    return out


def gather_last(x, idx):
    """Pick one entry per row along the final axis: out[..] = x[.., idx[..]]."""
    x = as_tensor(x)
    idx = np.asarray(idx)
    if idx.shape != x.shape[:-1]:
        raise ShapeError(f"gather_last index shape {idx.shape} does not match "
                         f"leading shape of {x.shape}")
    out_data = np.take_along_axis(x.data, idx[..., None], axis=-1)[..., 0]

    def backward():
        flat = np.zeros((idx.size, x.shape[-1]), dtype=x.dtype)
        flat[np.arange(idx.size), idx.ravel()] = out.grad.ravel()
        x.accumulate_grad(flat.reshape(x.shape))

    out = _result(out_data, (x,), backward, "gather_last")
    return out


def slice_last(x, lo, hi):
    x = as_tensor(x)
    out_data = x.data[..., lo:hi]

    def backward():
        gx = np.zeros_like(x.data)
        gx[..., lo:hi] = out.grad
        x.accumulate_grad(gx)

    out = _result(out_data, (x,), backward, "slice_last")
    return out


def concat_last(tensors):
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=-1)
    widths = [t.shape[-1] for t in tensors]

    def backward():
        g = out.grad
        off = 0
        for t, w in zip(tensors, widths):
            if t.requires_grad:
                t.accumulate_grad(g[..., off:off + w])
            off += w

    out = _result(out_data, tuple(tensors), backward, "concat_last")
    return out


def swap_last_axes(x):
    x = as_tensor(x)
    out_data = np.swapaxes(x.data, -1, -2)

    def backward():
        x.accumulate_grad(np.swapaxes(out.grad, -1, -2))

    out = _result(out_data, (x,), backward, "swap_last_axes")
    return out


def transpose2d(x):
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"transpose2d needs a 2-D tensor, got {x.shape}")
    out_data = x.data.T

    def backward():
        x.accumulate_grad(out.grad.T)

    out = _result(out_data, (x,), backward, "transpose2d")
    return out


def index_time(x, t):
    """x[:, t, :] for a (batch, time, feat) tensor."""
    x = as_tensor(x)
    out_data = x.data[:, t, :]

    def backward():
        gx = np.zeros_like(x.data)
        gx[:, t, :] = out.grad
        x.accumulate_grad(gx)

    out = _result(out_data, (x,), backward, "index_time")
    return out


def stack_time(tensors):
    """Stack per-step (batch, feat) tensors into (batch, time, feat)."""
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.stack([t.data for t in tensors], axis=1)

    def backward():
        g = out.grad
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t.accumulate_grad(g[:, i, :])

    out = _result(out_data, tuple(tensors), backward, "stack_time")
    return out


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum_all(x):
    x = as_tensor(x)
    out_data = np.asarray(x.data.sum())

    def backward():
        x.accumulate_grad(np.full_like(x.data, float(out.grad)))

    out = _result(out_data, (x,), backward, "sum_all")
    return out


def sum_last(x):
    x = as_tensor(x)
    out_data = x.data.sum(axis=-1)

    def backward():
        x.accumulate_grad(np.broadcast_to(out.grad[..., None], x.shape))

    out = _result(out_data, (x,), backward, "sum_last")
    return out


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def uniform_init(rng, shape, fan_in, fan_out, name=None):
    """Variance-preserving uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return parameter(rng.uniform(-a, a, size=shape), name=name)


def zeros_init(shape, name=None):
    return parameter(np.zeros(shape), name=name)
