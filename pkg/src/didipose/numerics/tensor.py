"""Dense tensors with a reverse-mode tape.

Every differentiable op records a node carrying a monotone sequence number.
``Tensor.backward`` collects the reachable nodes into a ``ComputationTape``
and replays their backward rules in exact reverse recording order, adding
each contribution into ``.grad`` of the leaves that require it.

Backward rules have the signature ``rule(grad_out) -> tuple(grad_per_parent)``
(``None`` for parents that need no gradient) so a custom op only has to supply
that closure; see ``make_op``.
"""
from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np

from ..errors import NonFiniteError, ShapeError

DEFAULT_DTYPE = np.float64

_seq = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_rule", "_seq", "op")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._rule = None
        self._seq = -1
        self.op = "leaf"

    # ---- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def check_finite(self, name: str = "tensor") -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            bad = int(np.size(self.data) - np.isfinite(self.data).sum())
            raise NonFiniteError(f"{name} ({self.op}) has {bad} non-finite entries")
        return self

    # ---- backward ----------------------------------------------------------
    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        ComputationTape.from_output(self).run(self, np.asarray(grad, dtype=self.dtype))

    # ---- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


class ComputationTape:
    """Recorded ops reachable from one output, in recording order."""

    def __init__(self, entries):
        self.entries = entries

    @classmethod
    def from_output(cls, out: Tensor) -> "ComputationTape":
        seen, stack, nodes = set(), [out], []
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            if t._rule is not None:
                nodes.append(t)
                stack.extend(t._parents)
        nodes.sort(key=lambda t: t._seq)
        return cls(nodes)

    def __len__(self):
        return len(self.entries)

    def run(self, out: Tensor, seed: np.ndarray):
        grads = {id(out): seed}
        if out._rule is None:
            if out.requires_grad:
                _accumulate(out, seed)
            return
        for node in reversed(self.entries):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            parent_grads = node._rule(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise ShapeError(f"backward of {node.op} produced grad {pg.shape} "
                                     f"for input {parent.shape}")
                if parent._rule is None:
                    _accumulate(parent, pg)
                elif id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg


def _accumulate(leaf: Tensor, g: np.ndarray):
    leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


def _pair(a, b):
    """Coerce operands; bare constants adopt the dtype of the tensor operand."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, as_tensor(b, a.dtype)
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return as_tensor(a, b.dtype), b
    return as_tensor(a), as_tensor(b)


def make_op(data: np.ndarray, parents, rule, op: str) -> Tensor:
    """Wrap a forward result, recording ``rule`` if any parent needs gradients."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._rule = rule
        out._seq = next(_seq)
        out.op = op
    else:
        out.op = op
    return out


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary_shapes(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---- elementwise -----------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _binary_shapes("add", a, b)
    return make_op(a.data + b.data, (a, b),
                   lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _binary_shapes("sub", a, b)
    return make_op(a.data - b.data, (a, b),
                   lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _binary_shapes("mul", a, b)
    return make_op(a.data * b.data, (a, b),
                   lambda g: (unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                              unbroadcast(g * a.data, b.shape) if b.requires_grad else None),
                   "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _binary_shapes("div", a, b)
    out = a.data / b.data
    return make_op(out, (a, b),
                   lambda g: (unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                              unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None),
                   "div")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    return make_op(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),), "pow")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_op(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a) -> Tensor:
    """GELU, tanh approximation."""
    a = as_tensor(a)
    x = a.data
    x2 = x * x
    inner = _GELU_C * x * (1.0 + 0.044715 * x2)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def rule(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return make_op(out, (a,), rule, "gelu")


def logaddexp(a, b) -> Tensor:
    a, b = _pair(a, b)
    _binary_shapes("logaddexp", a, b)
    out = np.logaddexp(a.data, b.data)

    def rule(g):
        wa = np.exp(a.data - out)
        wb = np.exp(b.data - out)
        return (unbroadcast(g * wa, a.shape) if a.requires_grad else None,
                unbroadcast(g * wb, b.shape) if b.requires_grad else None)

    return make_op(out, (a, b), rule, "logaddexp")


def round_ste(a) -> Tensor:
    """Round to nearest integer; backward treats rounding as the identity."""
    a = as_tensor(a)
    return make_op(np.round(a.data), (a,), lambda g: (g,), "round_ste")


# ---- linear algebra ----------------------------------------------------------
def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    flat = b.ndim == 2 and a.ndim > 2
    if flat:
        out = (a.data.reshape(-1, a.shape[-1]) @ b.data).reshape(a.shape[:-1] + b.shape[-1:])
    else:
        out = a.data @ b.data

    def rule(g):
        ga = gb = None
        if a.requires_grad:
            if flat:
                ga = (g.reshape(-1, g.shape[-1]) @ b.data.T).reshape(a.shape)
            else:
                ga = unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            if a.ndim == 1:
                gb = np.outer(a.data, g)
            elif b.ndim == 2:
                # Shared weight: fold the batch axes into one GEMM.
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return make_op(out, (a, b), rule, "matmul")


# ---- reductions and shape ----------------------------------------------------
def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_op(out, (a,), rule, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return mul(sum_(a, axis, keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None
    return make_op(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return make_op(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(a, ax1, ax2) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return transpose(a, tuple(axes))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    out = a.data[idx]

    def rule(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return make_op(np.array(out), (a,), rule, "getitem")


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    ax = axis % out.ndim
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def rule(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=ax) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return make_op(out, tensors, rule, "concat")


def embedding_lookup(table, indices) -> Tensor:
    """Rows of ``table`` (V, D) selected by an integer array of any shape."""
    table = as_tensor(table)
    indices = np.asarray(indices)
    if not np.issubdtype(indices.dtype, np.integer):
        raise ShapeError("embedding_lookup: indices must be integers")
    if indices.size and (indices.min() < 0 or indices.max() >= table.shape[0]):
        raise ShapeError(f"embedding_lookup: index out of range for table of {table.shape[0]} rows")
    out = table.data[indices]

    def rule(g):
        full = np.zeros_like(table.data)
        np.add.at(full, indices.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return make_op(out, (table,), rule, "embedding_lookup")


# ---- normalisations ----------------------------------------------------------
def logsumexp(a, axis=-1, keepdims=False) -> Tensor:
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = np.log(np.sum(np.exp(a.data - m), axis=axis, keepdims=True)) + m
    out = s if keepdims else np.squeeze(s, axis=axis)

    def rule(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        return (gk * np.exp(a.data - s),)

    return make_op(out, (a,), rule, "logsumexp")


def log_softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    shifted = a.data - m
    out = shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))

    def rule(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_op(out, (a,), rule, "log_softmax")


def softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.data - np.max(a.data, axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def rule(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_op(out, (a,), rule, "softmax")


def layer_norm(x, gain=None, bias=None, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply optional ``gain``/``bias``."""
    x = as_tensor(x)
    n = x.shape[-1]
    for p, label in ((gain, "gain"), (bias, "bias")):
        if p is not None and as_tensor(p).shape != (n,):
            raise ShapeError(f"layer_norm: {label} shape {as_tensor(p).shape} != ({n},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * rstd

    def rule(g):
        return (rstd * (g - g.mean(axis=-1, keepdims=True)
                        - xhat * (g * xhat).mean(axis=-1, keepdims=True)),)

    out = make_op(xhat, (x,), rule, "layer_norm")
    if gain is not None:
        out = mul(out, gain)
    if bias is not None:
        out = add(out, bias)
    return out
