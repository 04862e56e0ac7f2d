"""Dense float64 tensors with reverse-mode differentiation.

Every differentiable primitive records an :class:`Operation` on its output
tensor.  :class:`Tape` recovers the recorded operations reachable from an
output, orders them by recording sequence, and runs the backward pass in
exact reverse order.

Only the primitives the sheaf networks need are provided.  Binary
elementwise ops broadcast with numpy rules; ``matmul`` batches over leading
axes.
"""

from __future__ import annotations

import itertools
import threading
from collections.abc import Callable, Iterable, Sequence
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError, ValidationError

_sequence = itertools.count()
_state = threading.local()

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable operation recording on the current thread."""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


@dataclass(eq=False)
class Operation:
    name: str
    inputs: tuple["Tensor", ...]
    backward: BackwardFn
    seq: int = field(default_factory=lambda: next(_sequence))


class Tensor:
    """A float64 array that optionally tracks gradients."""

    __slots__ = ("data", "requires_grad", "grad", "_op", "name")
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._op: Operation | None = None
        self.name = name

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._op is None

    @property
    def T(self) -> "Tensor":
        return matrix_transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __float__(self):
        return self.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        Tape.from_output(self).backward(self, grad)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

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

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return getitem(self, key)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def custom_op(name: str, inputs: Sequence[Tensor], data: np.ndarray, backward: BackwardFn) -> Tensor:
    """Wrap a forward result and its vector-Jacobian rule as a recorded op.

    ``backward`` receives the output gradient and returns one gradient (or
    None) per input, each shaped like that input.
    """
    out = Tensor(data)
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._op = Operation(name, tuple(inputs), backward)
    return out


class Tape:
    """Operations reachable from one output, in recording order."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    def __len__(self):
        return len(self.nodes)

    @property
    def operations(self) -> list[Operation]:
        return [t._op for t in self.nodes]

    @classmethod
    def from_output(cls, output: Tensor) -> "Tape":
        seen: set[int] = set()
        nodes = []
        stack = [output]
        while stack:
            t = stack.pop()
            if t._op is None or id(t) in seen:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack.extend(t._op.inputs)
        nodes.sort(key=lambda t: t._op.seq)
        return cls(nodes)

    def backward(self, output: Tensor, grad=None):
        if grad is None:
            if output.size != 1:
                raise DimensionError(f"backward() without a seed needs a scalar output, got shape {output.shape}")
            grad = np.ones_like(output.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != output.shape:
            raise DimensionError(f"seed gradient shape {grad.shape} != output shape {output.shape}")
        if output._op is None:
            _accumulate_leaf(output, grad)
            return
        pending = {id(output): grad}
        for node in reversed(self.nodes):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            op = node._op
            for t, gi in zip(op.inputs, op.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                if t._op is None:
                    _accumulate_leaf(t, gi)
                elif id(t) in pending:
                    pending[id(t)] = pending[id(t)] + gi
                else:
                    pending[id(t)] = gi


def _accumulate_leaf(t: Tensor, g: np.ndarray):
    g = np.asarray(g, dtype=np.float64)
    if g.shape != t.shape:
        g = _unbroadcast(g, t.shape)
    t.grad = np.array(g) if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(name: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{name}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# Binary elementwise ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return custom_op(
        "add", (a, b), a.data + b.data,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return custom_op(
        "sub", (a, b), a.data - b.data,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return custom_op(
        "mul", (a, b), a.data * b.data,
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data

    def backward(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return custom_op("div", (a, b), out, backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return custom_op("neg", (a,), -a.data, lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, batching over the rest.

    Gradients are ``g @ b^T`` and ``a^T @ g``, summed over broadcast batch
    axes.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not chain")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: batch axes of {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return custom_op("matmul", (a, b), out, backward)


# ---------------------------------------------------------------------------
# Unary elementwise ops
# ---------------------------------------------------------------------------


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def elu(x) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    out = np.where(pos, x.data, np.expm1(np.minimum(x.data, 0.0)))
    slope = np.where(pos, 1.0, out + 1.0)
    return custom_op("elu", (x,), out, lambda g: (g * slope,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = _stable_sigmoid(x.data)
    return custom_op("sigmoid", (x,), s, lambda g: (g * s * (1.0 - s),))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.data)
    return custom_op("tanh", (x,), t, lambda g: (g * (1.0 - t * t),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    e = np.exp(x.data)
    return custom_op("exp", (x,), e, lambda g: (g * e,))


def log(x) -> Tensor:
    x = as_tensor(x)
    return custom_op("log", (x,), np.log(x.data), lambda g: (g / x.data,))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    r = np.sqrt(x.data)
    return custom_op("sqrt", (x,), r, lambda g: (g * 0.5 / r,))


def softplus(x) -> Tensor:
    """``log(1 + exp(x))`` evaluated without overflow."""
    x = as_tensor(x)
    return custom_op(
        "softplus", (x,), np.logaddexp(0.0, x.data),
        lambda g: (g * _stable_sigmoid(x.data),),
    )


def identity(x) -> Tensor:
    return as_tensor(x)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    soft = np.exp(out)

    def backward(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return custom_op("log_softmax", (x,), out, backward)


def dropout(x, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; retained entries are scaled by ``1/(1-p)``.

    Identity (the same tensor object) when not training or when ``p == 0``.
    """
    if not 0.0 <= p < 1.0:
        raise ValidationError(f"dropout rate must lie in [0, 1), got {p}")
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValidationError("dropout in training mode needs an explicit rng")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return custom_op("dropout", (x,), x.data * mask, lambda g: (g * mask,))


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "elu": elu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "identity": identity,
    "linear": identity,
}


def activation(name: str) -> Callable[[Tensor], Tensor]:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValidationError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None


# ---------------------------------------------------------------------------
# Reductions and shape ops
# ---------------------------------------------------------------------------


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)
    axes = _normalize_axes(axis, x.ndim)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape),)

    return custom_op("sum", (x,), out, backward)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = int(np.prod([x.shape[a] for a in _normalize_axes(axis, x.ndim)]))
    return sum_(x, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {x.shape} into {tuple(shape)}") from None
    return custom_op("reshape", (x,), out, lambda g: (g.reshape(x.shape),))


def matrix_transpose(x) -> Tensor:
    """Swap the last two axes."""
    x = as_tensor(x)
    return custom_op("transpose", (x,), np.swapaxes(x.data, -1, -2), lambda g: (np.swapaxes(g, -1, -2),))


def getitem(x, key) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        full = np.zeros(x.shape)
        np.add.at(full, key, g)
        return (full,)

    return custom_op("getitem", (x,), x.data[key], backward)


def take(x, index, axis: int = 0) -> Tensor:
    """Gather along ``axis``; repeated indices accumulate in the backward pass."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    axis = axis % x.ndim

    def backward(g):
        full = np.zeros(x.shape)
        np.add.at(full, (slice(None),) * axis + (index,), g)
        return (full,)

    return custom_op("take", (x,), np.take(x.data, index, axis=axis), backward)


def index_add(values, index, size: int) -> Tensor:
    """Scatter-sum rows of ``values`` into a zero tensor with ``size`` rows."""
    values = as_tensor(values)
    index = np.asarray(index, dtype=np.int64)
    if index.shape != values.shape[:1]:
        raise DimensionError(f"index_add: index shape {index.shape} vs values shape {values.shape}")
    out = np.zeros((size,) + values.shape[1:])
    np.add.at(out, index, values.data)
    return custom_op("index_add", (values,), out, lambda g: (g[index],))


def concat(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of an empty sequence")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return custom_op("concat", tensors, out, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stop_gradient(x) -> Tensor:
    return as_tensor(x).detach()


# ---------------------------------------------------------------------------
# Finite-difference verification
# ---------------------------------------------------------------------------


@dataclass
class ParamCheck:
    name: str
    max_rel_error: float
    max_abs_error: float
    worst_index: tuple[int, ...]
    passed: bool


@dataclass
class GradcheckReport:
    params: list[ParamCheck]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.params)

    @property
    def failures(self) -> list[str]:
        return [p.name for p in self.params if not p.passed]

    @property
    def max_rel_error(self) -> float:
        failing = [p.max_rel_error for p in self.params]
        return max(failing, default=0.0)

    def summary(self) -> str:
        lines = [f"gradcheck {'PASS' if self.passed else 'FAIL'} (tol={self.tolerance:g})"]
        for p in self.params:
            mark = "ok  " if p.passed else "FAIL"
            lines.append(
                f"  {mark} {p.name}: max_rel={p.max_rel_error:.3e} max_abs={p.max_abs_error:.3e} at {p.worst_index}"
            )
        return "\n".join(lines)


def gradcheck(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    tolerance: float = 1e-4,
    h: float = 1e-5,
    atol: float = 1e-7,
) -> GradcheckReport:
    """Compare tape gradients of ``loss_fn()`` with central differences.

    Every entry of every parameter is perturbed.  An entry passes when its
    relative error is below ``tolerance`` or its absolute error is below
    ``atol`` (for gradients that are essentially zero).
    """
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    if loss.size != 1:
        raise DimensionError(f"gradcheck needs a scalar loss, got shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise NumericError("gradcheck: loss is not finite at the base point")
    loss.backward()
    analytic = {name: (np.zeros(p.shape) if p.grad is None else p.grad.copy()) for name, p in params.items()}

    checks = []
    for name, p in params.items():
        numeric = np.zeros(p.shape)
        p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            with no_grad():
                flat[i] = orig + h
                plus = loss_fn().item()
                flat[i] = orig - h
                minus = loss_fn().item()
            flat[i] = orig
            if not (np.isfinite(plus) and np.isfinite(minus)):
                raise NumericError(f"gradcheck: non-finite loss while perturbing {name}")
            numeric.reshape(-1)[i] = (plus - minus) / (2.0 * h)
        diff = np.abs(analytic[name] - numeric)
        scale = np.maximum(np.abs(analytic[name]), np.abs(numeric))
        rel = np.where(scale > 0, diff / np.where(scale > 0, scale, 1.0), 0.0)
        ok = (diff < atol) | (rel < tolerance)
        rel_counted = np.where(scale < atol, 0.0, rel)
        worst = np.unravel_index(int(np.argmax(rel_counted)), p.shape) if p.size else ()
        checks.append(ParamCheck(
            name=name,
            max_rel_error=float(rel_counted.max(initial=0.0)),
            max_abs_error=float(diff.max(initial=0.0)),
            worst_index=tuple(int(i) for i in worst),
            passed=bool(ok.all()),
        ))
    for p in params.values():
        p.grad = None
    return GradcheckReport(checks, tolerance)
