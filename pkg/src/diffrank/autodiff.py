"""Reverse-mode automatic differentiation over dense numpy arrays.

Scope is deliberately small: exactly the operations the denoise network
and the ranking losses need, nothing else. Tensors wrap numpy arrays and
remember their parents, so a backward pass is a reverse topological walk
over the graph built by the forward pass.

Conventions:
  * add/mul/sub broadcast only when one operand is a single element;
    all other shape mismatches raise ShapeError naming both shapes.
  * softmax normalizes the last axis.
  * backward(loss) requires a single-element tensor and consumes the
    graph: closures are released as they run, so a graph is traversed
    exactly once. Gradients accumulate into .grad across separate
    graphs until the caller resets them.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

from .errors import DomainError, ShapeError

# Graph recording is a per-thread property: a worker pool may run many
# inference contexts concurrently, and a shared flag could be restored
# out of order across threads.
_GRAD_STATE = threading.local()


def _grad_enabled() -> bool:
    return getattr(_GRAD_STATE, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the context (inference mode)."""
    prev = _grad_enabled()
    _GRAD_STATE.enabled = False
    try:
        yield
    finally:
        _GRAD_STATE.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    # Sugar used throughout the network and loss code.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def sum(self, axis=None):
        return tensor_sum(self, axis=axis)

    def mean(self, axis=None):
        return tensor_mean(self, axis=axis)

    def backward(self):
        backward(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    tracked = _grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = tracked
    out._parents = tuple(parents) if tracked else ()
    out._backward = backward_fn if tracked else None
    return out


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    """Collapse a gradient onto a single-element operand's shape."""
    if g.shape == tuple(shape):
        return g
    return np.asarray(g.sum()).reshape(shape)


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


def backward(loss: Tensor) -> None:
    """Run reverse-mode accumulation from a single-element tensor."""
    if loss.data.size != 1:
        raise ShapeError(
            f"backward requires a single-element tensor, got shape {loss.data.shape}"
        )
    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)
            node._backward = None
            node._parents = ()


# ---------------------------------------------------------------------------
# binary ops


def _binary_shapes(a: Tensor, b: Tensor, opname: str):
    if a.data.shape == b.data.shape:
        return
    if a.data.size == 1 or b.data.size == 1:
        return
    raise ShapeError(
        f"{opname}: incompatible shapes {a.data.shape} and {b.data.shape}"
    )


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "add")
    data = a.data + b.data

    def back(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(g, b.data.shape))

    return _result(data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "sub")
    data = a.data - b.data

    def back(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(-g, b.data.shape))

    return _result(data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "mul")
    data = a.data * b.data

    def back(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(g * a.data, b.data.shape))

    return _result(data, (a, b), back)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}"
        )
    data = a.data @ b.data

    def back(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _result(data, (a, b), back)


def scale(x, c: float) -> Tensor:
    x = _as_tensor(x)
    c = float(c)
    data = x.data * c

    def back(g):
        if x.requires_grad:
            x._accumulate(g * c)

    return _result(data, (x,), back)


# ---------------------------------------------------------------------------
# shape ops


def concat(tensors) -> Tensor:
    """Concatenate along the last axis."""
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: empty input list")
    lead = ts[0].data.shape[:-1]
    for t in ts[1:]:
        if t.data.shape[:-1] != lead:
            raise ShapeError(
                f"concat: incompatible shapes {ts[0].data.shape} and {t.data.shape}"
            )
    data = np.concatenate([t.data for t in ts], axis=-1)
    widths = [t.data.shape[-1] for t in ts]

    def back(g):
        off = 0
        for t, w in zip(ts, widths):
            if t.requires_grad:
                t._accumulate(g[..., off : off + w])
            off += w

    return _result(data, tuple(ts), back)


def slice_cols(x, start: int, stop: int) -> Tensor:
    """Take columns [start, stop) of the last axis."""
    x = _as_tensor(x)
    if not (0 <= start < stop <= x.data.shape[-1]):
        raise ShapeError(
            f"slice_cols: range [{start}, {stop}) invalid for shape {x.data.shape}"
        )
    data = x.data[..., start:stop].copy()

    def back(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[..., start:stop] = g
            x._accumulate(full)

    return _result(data, (x,), back)


def transpose(x) -> Tensor:
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"transpose: expected a 2-d tensor, got shape {x.data.shape}")
    data = x.data.T.copy()

    def back(g):
        if x.requires_grad:
            x._accumulate(g.T)

    return _result(data, (x,), back)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    data = x.data.reshape(shape)

    def back(g):
        if x.requires_grad:
            x._accumulate(g.reshape(x.data.shape))

    return _result(data, (x,), back)


def broadcast_rows(v, n: int) -> Tensor:
    """Repeat a (1, d) row n times to give (n, d)."""
    v = _as_tensor(v)
    if v.data.ndim != 2 or v.data.shape[0] != 1:
        raise ShapeError(f"broadcast_rows: expected shape (1, d), got {v.data.shape}")
    data = np.broadcast_to(v.data, (n, v.data.shape[1])).copy()

    def back(g):
        if v.requires_grad:
            v._accumulate(g.sum(axis=0, keepdims=True))

    return _result(data, (v,), back)


def embedding_lookup(table, indices) -> Tensor:
    """Gather rows of a 2-d table; backward scatter-adds into those rows."""
    table = _as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)
    if table.data.ndim != 2 or idx.ndim != 1:
        raise ShapeError(
            f"embedding_lookup: table shape {table.data.shape}, index shape {idx.shape}"
        )
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise ShapeError(
            f"embedding_lookup: index out of range for table shape {table.data.shape}"
        )
    data = table.data[idx].copy()

    def back(g):
        if table.requires_grad:
            full = np.zeros_like(table.data)
            np.add.at(full, idx, g)
            table._accumulate(full)

    return _result(data, (table,), back)


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def softplus(x) -> Tensor:
    x = _as_tensor(x)
    data = np.logaddexp(np.zeros_like(x.data), x.data)

    def back(g):
        if x.requires_grad:
            x._accumulate(g * _sigmoid(x.data))

    return _result(data, (x,), back)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form stays finite for large |z|
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    data = _sigmoid(x.data)

    def back(g):
        if x.requires_grad:
            x._accumulate(g * data * (1.0 - data))

    return _result(data, (x,), back)


def log(x) -> Tensor:
    x = _as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log: input has non-positive entries")
    data = np.log(x.data)

    def back(g):
        if x.requires_grad:
            x._accumulate(g / x.data)

    return _result(data, (x,), back)


def exp(x) -> Tensor:
    x = _as_tensor(x)
    data = np.exp(x.data)

    def back(g):
        if x.requires_grad:
            x._accumulate(g * data)

    return _result(data, (x,), back)


def sqrt(x) -> Tensor:
    x = _as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("sqrt: input has non-positive entries")
    data = np.sqrt(x.data)

    def back(g):
        if x.requires_grad:
            x._accumulate(g * 0.5 / data)

    return _result(data, (x,), back)


def reciprocal(x) -> Tensor:
    x = _as_tensor(x)
    if np.any(x.data == 0):
        raise DomainError("reciprocal: input has zero entries")
    data = 1.0 / x.data

    def back(g):
        if x.requires_grad:
            x._accumulate(-g * data * data)

    return _result(data, (x,), back)


def softmax(x) -> Tensor:
    """Softmax over the last axis."""
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        if x.requires_grad:
            inner = (g * data).sum(axis=-1, keepdims=True)
            x._accumulate((g - inner) * data)

    return _result(data, (x,), back)


# ---------------------------------------------------------------------------
# reductions


def tensor_sum(x, axis=None) -> Tensor:
    x = _as_tensor(x)
    if axis is None:
        data = np.asarray(x.data.sum())
    else:
        data = x.data.sum(axis=axis, keepdims=True)

    def back(g):
        if x.requires_grad:
            x._accumulate(np.broadcast_to(g, x.data.shape).copy())

    return _result(data, (x,), back)


def tensor_mean(x, axis=None) -> Tensor:
    x = _as_tensor(x)
    if axis is None:
        count = x.data.size
        data = np.asarray(x.data.mean())
    else:
        count = x.data.shape[axis]
        data = x.data.mean(axis=axis, keepdims=True)

    def back(g):
        if x.requires_grad:
            x._accumulate(np.broadcast_to(g, x.data.shape) / count)

    return _result(data, (x,), back)


# ---------------------------------------------------------------------------
# structured ops


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize each row of a 2-d tensor, then apply a learned affine map.

    gain and bias have shape (1, d); statistics use the population variance.
    """
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    if x.data.ndim != 2:
        raise ShapeError(f"layer_norm: expected a 2-d input, got shape {x.data.shape}")
    d = x.data.shape[1]
    if gain.data.shape != (1, d) or bias.data.shape != (1, d):
        raise ShapeError(
            f"layer_norm: affine shapes {gain.data.shape}/{bias.data.shape} "
            f"do not match input {x.data.shape}"
        )
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = gain.data * xhat + bias.data

    def back(g):
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=0, keepdims=True))
        if gain.requires_grad:
            gain._accumulate((g * xhat).sum(axis=0, keepdims=True))
        if x.requires_grad:
            gx_hat = g * gain.data
            row_mean = gx_hat.mean(axis=1, keepdims=True)
            row_proj = (gx_hat * xhat).mean(axis=1, keepdims=True)
            x._accumulate(inv * (gx_hat - row_mean - xhat * row_proj))

    return _result(data, (x, gain, bias), back)


def dropout(x, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: kept entries are scaled by 1/(1-p) during training.

    With p = 0 or training disabled this is the identity and returns the
    input tensor unchanged.
    """
    x = _as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise DomainError(f"dropout: p must lie in [0, 1), got {p}")
    if p == 0.0 or not training:
        return x
    if rng is None:
        raise ValueError("dropout: an rng is required when training with p > 0")
    keep = (rng.random(x.data.shape) >= p).astype(x.data.dtype)
    factor = 1.0 / (1.0 - p)
    data = x.data * keep * factor

    def back(g):
        if x.requires_grad:
            x._accumulate(g * keep * factor)

    return _result(data, (x,), back)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w plus a row-broadcast bias. Composition of primitive ops."""
    y = matmul(x, w)
    return add(y, broadcast_rows(b, y.data.shape[0]))
