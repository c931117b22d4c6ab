"""Dense tensors with tape-based reverse-mode differentiation.

A :class:`Tensor` wraps a row-major numpy array. Operations executed while a
:class:`Tape` is active (``with Tape() as tape:``) are recorded on it whenever
at least one input requires a gradient; :meth:`Tape.gradient` then walks the
records in reverse to produce gradients.

Training runs in float32. Verification code can switch the default dtype to
float64 with :func:`precision`.
"""

from __future__ import annotations

import contextlib
import contextvars
import itertools
from collections.abc import Callable, Iterable, Iterator, Sequence
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import DomainError, NumericError, ShapeError, TraceError

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "precision",
    "default_dtype",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "log",
    "exp",
    "sigmoid",
    "tanh",
    "relu",
    "leaky_relu",
    "clip",
    "mean",
    "sum",
    "reshape",
    "flatten",
]

_ids = itertools.count(1)
_active_tape: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar(
    "ganforge_active_tape", default=None
)
_dtype: contextvars.ContextVar[np.dtype] = contextvars.ContextVar(
    "ganforge_dtype", default=np.dtype(np.float32)
)

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]


def default_dtype() -> np.dtype:
    return _dtype.get()


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily change the dtype new tensors are created with."""
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported precision {dtype}")
    token = _dtype.set(dtype)
    try:
        yield
    finally:
        _dtype.reset(token)


class Tensor:
    """N-dimensional array of reals with a unique id for tape lookup."""

    __slots__ = ("data", "id", "requires_grad", "name", "__weakref__")
    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        dtype = np.dtype(dtype) if dtype is not None else _dtype.get()
        arr = np.asarray(data)
        if arr.dtype != dtype:
            arr = arr.astype(dtype)
        self.data: np.ndarray = arr
        self.id: int = next(_ids)
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.id = next(_ids)
        t.requires_grad = requires_grad
        t.name = None
        return t

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
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def __len__(self) -> int:
        return self.shape[0]

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{grad}{label})"

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

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum(self, axis=axis, keepdims=keepdims)


def as_tensor(x: ArrayLike, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


# Backward rules receive the upstream gradient and a tuple of flags telling
# which parents actually need a gradient; they return one entry per parent
# (None where no gradient is needed).
BackwardFn = Callable[[np.ndarray, tuple[bool, ...]], Sequence[Optional[np.ndarray]]]


@dataclass
class _Node:
    out_id: int
    out_shape: tuple[int, ...]
    parents: tuple[Tensor, ...]
    backward: BackwardFn
    op: str


class Tape:
    """Ordered record of differentiable operations.

    Usable as a context manager; while active, every operation with at least
    one gradient-requiring input appends a node. Node order is execution
    order, hence a valid topological order.
    """

    def __init__(self) -> None:
        self.nodes: list[_Node] = []
        self.grads: dict[int, np.ndarray] = {}
        self._produced: set[int] = set()
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, t: Tensor) -> bool:
        return t.id in self._produced

    def record(self, out: Tensor, parents: tuple[Tensor, ...], fn: BackwardFn, op: str) -> None:
        self.nodes.append(_Node(out.id, out.shape, parents, fn, op))
        self._produced.add(out.id)

    def gradient(self, loss: Tensor, sources: Union[dict, Iterable[Tensor]]):
        """Gradients of ``loss`` with respect to ``sources``.

        ``sources`` is either a mapping name -> Tensor (a dict of gradients is
        returned, same keys) or an iterable of tensors (a list is returned).
        Sources the loss does not depend on get zero gradients.
        """
        grads = backward(loss, self)
        if isinstance(sources, dict):
            return {
                k: grads.get(t.id, np.zeros_like(t.data)) for k, t in sources.items()
            }
        return [grads.get(t.id, np.zeros_like(t.data)) for t in sources]


def backward(loss: Tensor, tape: Tape) -> dict[int, np.ndarray]:
    """Propagate d(loss)/d(.) through ``tape``; returns gradients keyed by tensor id.

    Every gradient-requiring leaf that took part in the recorded computation
    gets a buffer of its own shape, zero if the loss does not reach it.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.id not in tape._produced:
        raise TraceError(f"tensor {loss.id} was not produced on this tape")
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(node.out_id, None)
        for p in node.parents:
            if p.requires_grad and p.id not in tape._produced:
                leaves.setdefault(p.id, p)
        if g is None:
            continue
        needs = tuple(p.requires_grad for p in node.parents)
        parent_grads = node.backward(g, needs)
        for p, pg, need in zip(node.parents, parent_grads, needs):
            if not need or pg is None:
                continue
            if pg.shape != p.shape:
                raise ShapeError(
                    f"{node.op} backward produced gradient {pg.shape} for input {p.shape}"
                )
            if p.id in grads:
                grads[p.id] = grads[p.id] + pg
            else:
                grads[p.id] = pg
    for pid, leaf in leaves.items():
        if pid not in grads:
            grads[pid] = np.zeros_like(leaf.data)
    tape.grads = grads
    return grads


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(arr))[0])
        raise NumericError(f"{op}: non-finite value at index {bad}")


def _result(op: str, arr: np.ndarray, parents: tuple[Tensor, ...], fn: BackwardFn) -> Tensor:
    _check_finite(arr, op)
    requires_grad = any(p.requires_grad for p in parents)
    out = Tensor._wrap(arr, requires_grad)
    tape = _active_tape.get()
    if tape is not None and requires_grad:
        tape.record(out, parents, fn, op)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not broadcast-compatible") from None


def _pair(a: ArrayLike, b: ArrayLike) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


# -- elementwise ----------------------------------------------------------

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "add")

    def bw(g, needs):
        return (
            _unbroadcast(g, a.shape) if needs[0] else None,
            _unbroadcast(g, b.shape) if needs[1] else None,
        )

    return _result("add", a.data + b.data, (a, b), bw)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "sub")

    def bw(g, needs):
        return (
            _unbroadcast(g, a.shape) if needs[0] else None,
            _unbroadcast(-g, b.shape) if needs[1] else None,
        )

    return _result("sub", a.data - b.data, (a, b), bw)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "mul")

    def bw(g, needs):
        return (
            _unbroadcast(g * b.data, a.shape) if needs[0] else None,
            _unbroadcast(g * a.data, b.shape) if needs[1] else None,
        )

    return _result("mul", a.data * b.data, (a, b), bw)


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "div")
    if (b.data == 0).any():
        bad = tuple(int(i) for i in np.argwhere(b.data == 0)[0])
        raise DomainError(f"div: zero divisor at index {bad}")
    out = a.data / b.data

    def bw(g, needs):
        return (
            _unbroadcast(g / b.data, a.shape) if needs[0] else None,
            _unbroadcast(-g * out / b.data, b.shape) if needs[1] else None,
        )

    return _result("div", out, (a, b), bw)


def neg(x: Tensor) -> Tensor:
    return _result("neg", -x.data, (x,), lambda g, needs: (-g,))


def log(x: Tensor) -> Tensor:
    """Natural logarithm; raises :class:`DomainError` on non-positive entries."""
    bad = x.data <= 0
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise DomainError(f"log of non-positive value {x.data[idx]!r} at index {idx}")
    return _result("log", np.log(x.data), (x,), lambda g, needs: (g / x.data,))


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # overflow is reported as NumericError
        out = np.exp(x.data)
    return _result("exp", out, (x,), lambda g, needs: (g * out,))


def sigmoid(x: Tensor) -> Tensor:
    # tanh form does not overflow for large |x|
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result("sigmoid", out, (x,), lambda g, needs: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _result("tanh", out, (x,), lambda g, needs: (g * (1.0 - out * out),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result("relu", np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g, needs: (g * mask,))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    scale = np.where(x.data >= 0, 1.0, slope).astype(x.dtype)
    return _result("leaky_relu", x.data * scale, (x,), lambda g, needs: (g * scale,))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; the gradient is zero where clamping took effect."""
    inside = (x.data >= lo) & (x.data <= hi)
    out = np.clip(x.data, lo, hi).astype(x.dtype)
    return _result("clip", out, (x,), lambda g, needs: (g * inside,))


# -- reductions and shape -------------------------------------------------

def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axes(axis, x.ndim)
    out = np.asarray(x.data.sum(axis=axes, keepdims=keepdims), dtype=x.dtype)

    def bw(g, needs):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result("sum", out, (x,), bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if count == 0:
        raise ShapeError("mean over an empty extent")
    out = np.asarray(x.data.mean(axis=axes, keepdims=keepdims), dtype=x.dtype)

    def bw(g, needs):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).astype(x.dtype),)

    return _result("mean", out, (x,), bw)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} into {tuple(shape)}") from None
    return _result("reshape", out, (x,), lambda g, needs: (g.reshape(x.shape),))


def flatten(x: Tensor, start: int = 1) -> Tensor:
    """Collapse every axis from ``start`` on into one."""
    return reshape(x, x.shape[:start] + (-1,))
