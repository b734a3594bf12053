"""Dense float64 tensors with reverse-mode automatic differentiation.

A `Tensor` wraps a C-contiguous float64 numpy array (row-major storage)
together with an optional gradient buffer and an optional graph node.
Each differentiable primitive records the operation tag, its parent
tensors, and a closure computing parent gradients from the output
gradient. `Tensor.backward` walks the recorded graph exactly once in
reverse topological order and accumulates (never overwrites) into
`.grad`, so shared subexpressions receive the sum of their uses.

All computation is numpy on float64, so results are bitwise
reproducible for a fixed input and platform.
"""

import contextlib

import numpy as np

from .errors import (
    CheckpointError,
    ConfigurationError,
    EmptyWindowError,
    NumericalError,
    ShapeMismatchError,
)

# Global switch consulted at node-creation time; `no_grad()` clears it so
# evaluation passes skip graph construction entirely.
_GRAD_ENABLED = [True]


@contextlib.contextmanager
def no_grad():
    """Context manager that disables graph recording inside the block."""
    prev = _GRAD_ENABLED[0]
    _GRAD_ENABLED[0] = False
    try:
        yield
    finally:
        _GRAD_ENABLED[0] = prev


class _Node:
    """Backpropagation record: operation tag, parents, gradient closure."""

    __slots__ = ("op", "parents", "grad_fn")

    def __init__(self, op, parents, grad_fn):
        self.op = op
        self.parents = parents
        self.grad_fn = grad_fn


class Tensor:
    """Multi-dimensional float64 value tracked by the autodiff graph.

    Attributes:
        data: numpy float64 array, C-contiguous (row-major).
        grad: accumulated gradient of the same shape, or None.
        requires_grad: whether backward should deliver a gradient here.
        node: backpropagation record for non-leaf tensors, else None.
    """

    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        """Same values, outside the graph."""
        return Tensor(self.data)

    def backward(self, grad=None):
        """Reverse-mode sweep from this tensor.

        `grad` defaults to ones (the usual scalar-loss case). Each graph
        node is visited exactly once; parent gradients accumulate.
        """
        if grad is None:
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.data.shape:
                raise ShapeMismatchError(
                    f"backward seed shape {grad.shape} != tensor shape {self.data.shape}"
                )
        # Consumers precede producers in `order`, so by the time a tensor is
        # visited every downstream contribution has been accumulated.
        order = _topo_order(self)
        grads = {id(self): grad}
        for t in order:
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t.requires_grad and t.node is None:
                t.grad = g if t.grad is None else t.grad + g
            if t.node is None:
                continue
            parent_grads = t.node.grad_fn(g)
            for p, pg in zip(t.node.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg

    # Operator sugar; scalars are promoted to constant tensors.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, axis1, axis2):
        return swap_axes(self, axis1, axis2)

    def transpose_last_two(self):
        return swap_axes(self, -1, -2)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


def _topo_order(root):
    """Iterative post-order over reachable graph nodes, returned reversed."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in visited:
            continue
        visited.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.parents:
                if id(p) not in visited:
                    stack.append((p, False))
    order.reverse()
    return order


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, op, parents, grad_fn):
    """Wrap raw output; attach a node only when recording is on and useful."""
    out = Tensor(data)
    if _GRAD_ENABLED[0] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.node = _Node(op, tuple(parents), grad_fn)
    return out


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_elementwise(a, b, op):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeMismatchError(
            f"{op}: shapes {a.data.shape} and {b.data.shape} do not broadcast"
        ) from None


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise(a, b, "add")

    def grad_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(a.data + b.data, "add", (a, b), grad_fn)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise(a, b, "sub")

    def grad_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(a.data - b.data, "sub", (a, b), grad_fn)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise(a, b, "mul")

    def grad_fn(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _make(a.data * b.data, "mul", (a, b), grad_fn)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise(a, b, "div")

    def grad_fn(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    return _make(a.data / b.data, "div", (a, b), grad_fn)


def neg(a):
    a = _as_tensor(a)

    def grad_fn(g):
        return (-g,)

    return _make(-a.data, "neg", (a,), grad_fn)


def matmul(a, b):
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatchError(
            f"matmul: operands must have ndim >= 2, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeMismatchError(
            f"matmul: inner dimensions differ, {a.data.shape} @ {b.data.shape}"
        )
    try:
        np.broadcast_shapes(a.data.shape[:-2], b.data.shape[:-2])
    except ValueError:
        raise ShapeMismatchError(
            f"matmul: batch dimensions do not broadcast, {a.data.shape} @ {b.data.shape}"
        ) from None

    def grad_fn(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)
        return ga, gb

    return _make(a.data @ b.data, "matmul", (a, b), grad_fn)


def exp(a):
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def grad_fn(g):
        return (g * out_data,)

    return _make(out_data, "exp", (a,), grad_fn)


def log(a):
    a = _as_tensor(a)

    def grad_fn(g):
        return (g / a.data,)

    return _make(np.log(a.data), "log", (a,), grad_fn)


def sqrt(a):
    a = _as_tensor(a)
    out_data = np.sqrt(a.data)

    def grad_fn(g):
        # Zero output would make the true derivative infinite; emit 0 there so
        # a floored downstream consumer (zero upstream grad) stays NaN-free.
        denom = 2.0 * out_data
        return (np.divide(g, denom, out=np.zeros_like(g), where=denom != 0.0),)

    return _make(out_data, "sqrt", (a,), grad_fn)


def relu(a):
    a = _as_tensor(a)

    def grad_fn(g):
        return (g * (a.data > 0.0),)

    return _make(np.maximum(a.data, 0.0), "relu", (a,), grad_fn)


def absolute(a):
    a = _as_tensor(a)

    def grad_fn(g):
        return (g * np.sign(a.data),)

    return _make(np.abs(a.data), "abs", (a,), grad_fn)


def clamp_min(a, floor):
    """Elementwise max(a, floor) for scalar floor; gradient passes where a >= floor."""
    a = _as_tensor(a)
    floor = float(floor)

    def grad_fn(g):
        return (g * (a.data >= floor),)

    return _make(np.maximum(a.data, floor), "clamp_min", (a,), grad_fn)


def _normalize_axes(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def reduce_sum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)

    def grad_fn(g):
        if axes is None:
            return (np.broadcast_to(g, a.data.shape),)
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axes)
        return (np.broadcast_to(gg, a.data.shape),)

    return _make(a.data.sum(axis=axes, keepdims=keepdims), "sum", (a,), grad_fn)


def reduce_mean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)
    if axes is None:
        count = a.size
    else:
        count = 1
        for ax in axes:
            count *= a.data.shape[ax]
    if count == 0:
        raise EmptyWindowError("mean over zero elements")

    def grad_fn(g):
        if axes is None:
            return (np.broadcast_to(g / count, a.data.shape),)
        gg = g / count
        if not keepdims:
            gg = np.expand_dims(gg, axes)
        return (np.broadcast_to(gg, a.data.shape),)

    return _make(a.data.mean(axis=axes, keepdims=keepdims), "mean", (a,), grad_fn)


def reshape(a, shape):
    a = _as_tensor(a)
    old_shape = a.data.shape

    def grad_fn(g):
        return (g.reshape(old_shape),)

    return _make(a.data.reshape(shape), "reshape", (a,), grad_fn)


def swap_axes(a, axis1, axis2):
    a = _as_tensor(a)

    def grad_fn(g):
        return (np.swapaxes(g, axis1, axis2),)

    return _make(np.swapaxes(a.data, axis1, axis2), "swapaxes", (a,), grad_fn)


def getitem(a, key):
    """Basic slicing/indexing; backward scatters into a zero buffer."""
    a = _as_tensor(a)

    def grad_fn(g):
        buf = np.zeros_like(a.data)
        buf[key] = g
        return (buf,)

    return _make(a.data[key], "getitem", (a,), grad_fn)


def concat(tensors, axis=0):
    """Concatenate along `axis`; backward splits the gradient."""
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeMismatchError("concat: need at least one tensor")
    axis_n = axis % tensors[0].ndim
    sizes = [t.data.shape[axis_n] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, offsets, axis=axis_n))

    try:
        data = np.concatenate([t.data for t in tensors], axis=axis_n)
    except ValueError as e:
        raise ShapeMismatchError(f"concat: {e}") from None
    return _make(data, "concat", tuple(tensors), grad_fn)


def softmax_rows(a):
    """Row-wise softmax over the last axis, stabilized by max subtraction."""
    a = _as_tensor(a)
    if np.isnan(a.data).any():
        raise NumericalError("softmax_rows: NaN in input")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        return (out_data * (g - dot),)

    return _make(out_data, "softmax_rows", (a,), grad_fn)


def layer_norm(x, gain, bias, eps=1e-5):
    """Per-position normalization over the last (feature) axis.

    eps sits inside the square root; gain and bias broadcast over the
    normalized axis.
    """
    x = _as_tensor(x)
    m = reduce_mean(x, axis=-1, keepdims=True)
    d = sub(x, m)
    var = reduce_mean(mul(d, d), axis=-1, keepdims=True)
    xhat = div(d, sqrt(add(var, eps)))
    return add(mul(xhat, gain), bias)


def reduce_mean_std(x, axis=-2, keepdims=False):
    """Mean and population standard deviation along `axis`.

    Returns `(mu, sigma)`. With the default axis, a `[S, C]` window
    reduces over time to per-variable statistics; batched inputs reduce
    the same axis. Population variance (divisor = count) throughout.
    """
    x = _as_tensor(x)
    ax = axis % x.ndim
    if x.data.shape[ax] == 0:
        raise EmptyWindowError("reduce_mean_std over an empty axis")
    mu = reduce_mean(x, axis=ax, keepdims=True)
    d = sub(x, mu)
    var = reduce_mean(mul(d, d), axis=ax, keepdims=True)
    sigma = sqrt(var)
    if not keepdims:
        shape = tuple(s for i, s in enumerate(x.data.shape) if i != ax)
        mu = reshape(mu, shape)
        sigma = reshape(sigma, shape)
    return mu, sigma


def mse_loss(pred, target):
    """Mean squared error over all elements."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    d = sub(pred, target)
    return reduce_mean(mul(d, d))


def mae_loss(pred, target):
    """Mean absolute error over all elements."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    return reduce_mean(absolute(sub(pred, target)))


class ParameterSet:
    """Ordered, uniquely named collection of trainable tensors.

    Paths are dotted strings; iteration order is insertion order, which
    keeps optimizer state and checkpoints aligned across runs.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, path, data):
        if path in self._params:
            raise ConfigurationError(f"duplicate parameter path: {path!r}")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=True)
        self._params[path] = t
        return t

    def __getitem__(self, path):
        return self._params[path]

    def __contains__(self, path):
        return path in self._params

    def __len__(self):
        return len(self._params)

    def paths(self):
        return list(self._params.keys())

    def items(self):
        return self._params.items()

    def tensors(self):
        return list(self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def count(self, prefix=None):
        """Total element count, optionally restricted to a path prefix."""
        total = 0
        for path, t in self._params.items():
            if prefix is None or path.startswith(prefix):
                total += t.size
        return total

    def state_arrays(self):
        """Copy of every parameter value, keyed by path."""
        return {path: t.data.copy() for path, t in self._params.items()}

    def load_arrays(self, arrays):
        """Load values by path; shapes must match exactly."""
        missing = [p for p in self._params if p not in arrays]
        if missing:
            raise CheckpointError(f"missing parameter values for: {missing[:5]}")
        for path, t in self._params.items():
            arr = np.asarray(arrays[path], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise CheckpointError(
                    f"parameter {path!r}: stored shape {arr.shape} != model shape {t.data.shape}"
                )
            t.data = np.ascontiguousarray(arr)
