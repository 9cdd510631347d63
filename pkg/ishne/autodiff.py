# ishne/autodiff.py
"""
Dense float64 tensors (0-D, 1-D, 2-D) with tape-based reverse-mode autodiff.

Ops are recorded on the active GradientTape only while a tape is entered
with `with GradientTape() as tape:`; outside a tape every op is a plain
numpy evaluation. A tape belongs to the thread (context) that entered it.
"""

import contextvars
import logging
from typing import Union

import numpy as np

from .errors import (
    EmptyInput,
    NonFiniteValue,
    NonScalarLoss,
    ShapeMismatch,
    TapeConsumed,
)

logger = logging.getLogger(__name__)

LEAKY_SLOPE = 0.01

_ACTIVE_TAPE = contextvars.ContextVar("ishne_active_tape", default=None)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "tape", "tape_id")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim > 2:
            raise ShapeMismatch(f"tensors are at most 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name
        self.tape = None
        self.tape_id = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return transpose(self)

    def item(self):
        if self.data.size != 1:
            raise ShapeMismatch(f"item() needs a single-element tensor, got shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data.copy()

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor) and other.ndim > 0:
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class _Op:
    __slots__ = ("name", "inputs", "output", "backward")

    def __init__(self, name, inputs, output, backward):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.backward = backward


class GradientTape:
    """Ordered record of ops; each op's inputs precede it by construction."""

    def __init__(self, debug=False):
        self.ops = []
        self.debug = debug
        self._consumed = False
        self._token = None

    def __enter__(self):
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _ACTIVE_TAPE.reset(self._token)
        self._token = None
        return False

    def __len__(self):
        return len(self.ops)

    def tracks(self, t):
        return t.requires_grad or t.tape is self

    def record(self, name, inputs, output, backward):
        output.tape = self
        output.tape_id = len(self.ops)
        self.ops.append(_Op(name, inputs, output, backward))

    def backward(self, loss):
        """Replay the tape once in reverse order, accumulating into leaf `.grad`."""
        if self._consumed:
            raise TapeConsumed("gradient tape has already been replayed")
        if loss.size != 1:
            raise NonScalarLoss(f"loss must be a scalar, got shape {loss.shape}")
        self._consumed = True
        grads = {id(loss): np.ones_like(loss.data)}
        for op in reversed(self.ops):
            g = grads.pop(id(op.output), None)
            if g is None:
                continue
            op.output.grad = g
            for t, gi in zip(op.inputs, op.backward(g)):
                if gi is None or not self.tracks(t):
                    continue
                if t.tape is self:
                    key = id(t)
                    grads[key] = grads[key] + gi if key in grads else gi
                else:
                    if t.grad is None:
                        t.grad = np.zeros_like(t.data)
                    t.grad += gi
        # loss that is itself a leaf parameter
        if loss.requires_grad and loss.tape is not self:
            loss.grad += np.ones_like(loss.data)
        logger.debug("replayed %d ops", len(self.ops))


TensorLike = Union[Tensor, np.ndarray]


def active_tape():
    return _ACTIVE_TAPE.get()


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(name, data, inputs, backward):
    out = Tensor(data)
    tape = _ACTIVE_TAPE.get()
    if tape is not None:
        if tape.debug and not np.all(np.isfinite(out.data)):
            raise NonFiniteValue(f"op '{name}' produced non-finite values")
        if any(tape.tracks(t) for t in inputs):
            tape.record(name, inputs, out, backward)
    return out


def _same_shape(name, a, b):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{name}: shapes {a.shape} and {b.shape} differ")


# ---------------- Linear algebra ----------------
def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0 or a.shape[-1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data

    def backward(g):
        if A.ndim == 2 and B.ndim == 2:
            return g @ B.T, A.T @ g
        if A.ndim == 2:
            return np.outer(g, B), A.T @ g
        if B.ndim == 2:
            return B @ g, np.outer(A, g)
        return g * B, g * A

    return _make("matmul", A @ B, (a, b), backward)


def transpose(a):
    a = as_tensor(a)
    if a.ndim < 2:
        return a
    return _make("transpose", a.data.T.copy(), (a,), lambda g: (g.T,))


# ---------------- Elementwise ----------------
def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return _make("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sub", a, b)
    return _make("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("mul", a, b)
    A, B = a.data, b.data
    return _make("mul", A * B, (a, b), lambda g: (g * B, g * A))


def scale(a, s):
    """Multiply by a Python number or a 0-D tensor."""
    a = as_tensor(a)
    if isinstance(s, Tensor):
        if s.size != 1:
            raise ShapeMismatch(f"scale: factor must be scalar, got shape {s.shape}")
        A, S = a.data, float(s.data.reshape(-1)[0])
        sshape = s.shape

        def backward(g):
            return g * S, np.full(sshape, np.sum(g * A))

        return _make("scale", A * S, (a, s), backward)
    s = float(s)
    return _make("scale", a.data * s, (a,), lambda g: (g * s,))


def mul_rows(m, v):
    """Scale row r of an (E, F) matrix by v[r]."""
    m, v = as_tensor(m), as_tensor(v)
    if m.ndim != 2 or v.ndim != 1 or m.shape[0] != v.shape[0]:
        raise ShapeMismatch(f"mul_rows: {m.shape} rows vs weights {v.shape}")
    M, V = m.data, v.data

    def backward(g):
        return g * V[:, None], np.sum(g * M, axis=1)

    return _make("mul_rows", M * V[:, None], (m, v), backward)


# ---------------- Structure ----------------
def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise EmptyInput("concat: no tensors given")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeMismatch(f"concat: {e}")
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make("concat", data, tuple(tensors), backward)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise EmptyInput("stack: no tensors given")
    if len({t.shape for t in tensors}) != 1:
        raise ShapeMismatch(f"stack: shapes differ {[t.shape for t in tensors]}")
    data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.take(g, k, axis=axis) for k in range(len(tensors)))

    return _make("stack", data, tuple(tensors), backward)


def gather(a, index):
    """Numpy fancy indexing `a[index]`; repeated indices accumulate gradient."""
    a = as_tensor(a)
    data = a.data[index]
    shape = a.shape

    def backward(g):
        z = np.zeros(shape)
        np.add.at(z, index, g)
        return (z,)

    return _make("gather", data, (a,), backward)


# ---------------- Reductions ----------------
def total(a):
    a = as_tensor(a)
    shape = a.shape
    return _make("sum", np.sum(a.data), (a,), lambda g: (np.full(shape, g),))


def mean(a):
    a = as_tensor(a)
    if a.size == 0:
        raise EmptyInput("mean of an empty tensor")
    n, shape = a.size, a.shape
    return _make("mean", np.sum(a.data) / n, (a,), lambda g: (np.full(shape, g / n),))


def rowsum(a):
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeMismatch(f"rowsum needs a 2-D tensor, got {a.shape}")
    cols = a.shape[1]
    return _make("rowsum", a.data.sum(axis=1), (a,), lambda g: (np.repeat(g[:, None], cols, axis=1),))


def rowdot(a, b):
    """Row-wise inner products of two equal-shape matrices."""
    return rowsum(mul(a, b))


def segment_sum(x, segments, num_segments):
    x = as_tensor(x)
    segments = np.asarray(segments, dtype=np.int64)
    if x.ndim == 0 or x.shape[0] != segments.shape[0]:
        raise ShapeMismatch(f"segment_sum: {x.shape} vs {segments.shape[0]} segment ids")
    out = np.zeros((num_segments,) + x.shape[1:])
    np.add.at(out, segments, x.data)
    return _make("segment_sum", out, (x,), lambda g: (g[segments],))


# ---------------- Softmax family ----------------
def _softmax_np(v):
    z = np.exp(v - np.max(v))
    return z / np.sum(z)


def softmax(v):
    v = as_tensor(v)
    if v.ndim != 1:
        raise ShapeMismatch(f"softmax expects a 1-D tensor, got {v.shape}")
    if v.size == 0:
        raise EmptyInput("softmax of an empty vector")
    y = _softmax_np(v.data)
    return _make("softmax", y, (v,), lambda g: (y * (g - np.dot(g, y)),))


def softmax_rows(m):
    m = as_tensor(m)
    if m.ndim != 2:
        raise ShapeMismatch(f"softmax_rows expects a 2-D tensor, got {m.shape}")
    if m.shape[1] == 0:
        raise EmptyInput("softmax over zero columns")
    z = np.exp(m.data - m.data.max(axis=1, keepdims=True))
    y = z / z.sum(axis=1, keepdims=True)
    return _make("softmax_rows", y, (m,), lambda g: (y * (g - np.sum(g * y, axis=1, keepdims=True)),))


def log_softmax_rows(m):
    m = as_tensor(m)
    if m.ndim != 2:
        raise ShapeMismatch(f"log_softmax_rows expects a 2-D tensor, got {m.shape}")
    shifted = m.data - m.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    y = np.exp(out)
    return _make("log_softmax_rows", out, (m,), lambda g: (g - y * g.sum(axis=1, keepdims=True),))


def segment_softmax(v, segments, num_segments):
    """Softmax of `v` within each group of entries sharing a segment id."""
    v = as_tensor(v)
    segments = np.asarray(segments, dtype=np.int64)
    if v.ndim != 1 or v.shape[0] != segments.shape[0]:
        raise ShapeMismatch(f"segment_softmax: {v.shape} vs {segments.shape[0]} segment ids")
    if v.size == 0:
        raise EmptyInput("segment_softmax of an empty vector")
    seg_max = np.full(num_segments, -np.inf)
    np.maximum.at(seg_max, segments, v.data)
    z = np.exp(v.data - seg_max[segments])
    denom = np.zeros(num_segments)
    np.add.at(denom, segments, z)
    y = z / denom[segments]

    def backward(g):
        dot = np.zeros(num_segments)
        np.add.at(dot, segments, g * y)
        return (y * (g - dot[segments]),)

    return _make("segment_softmax", y, (v,), backward)


# ---------------- Activations ----------------
def _leaky(x):
    return np.where(x > 0, x, LEAKY_SLOPE * x)


def _elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def activation(v, kind):
    """Elementwise nonlinearity: 'leaky_relu' (slope 0.01), 'elu' or 'tanh'."""
    v = as_tensor(v)
    x = v.data
    if kind == "leaky_relu":
        y = _leaky(x)
        return _make(kind, y, (v,), lambda g: (np.where(x > 0, g, LEAKY_SLOPE * g),))
    if kind == "elu":
        y = _elu(x)
        return _make(kind, y, (v,), lambda g: (np.where(x > 0, g, g * (y + 1.0)),))
    if kind == "tanh":
        y = np.tanh(x)
        return _make(kind, y, (v,), lambda g: (g * (1.0 - y * y),))
    raise ValueError(f"unknown activation '{kind}'")


def dropout(v, rate, rng):
    """Inverted dropout; identity when rate is 0."""
    v = as_tensor(v)
    if rate <= 0.0:
        return v
    keep = (rng.random(v.shape) >= rate) / (1.0 - rate)
    return _make("dropout", v.data * keep, (v,), lambda g: (g * keep,))
