"""Minimal float32 tensor engine with a reverse-mode gradient tape.

Tensors wrap read-only ``numpy`` float32 arrays. Operations run eagerly; while
a :class:`GradTape` is active, every operation touching a tensor that requires
gradients is appended to the tape, so the tape order is a topological order of
the graph and :func:`backward` simply walks it in reverse.

Accumulation order: elementwise ops are order-free, ``sum``/``mean`` use
numpy's pairwise reduction over a fixed axis layout and ``matmul`` uses the BLAS
gemm kernel, which accumulates each output element over the inner axis in the
same order regardless of thread count or the number of rows in the call.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float32


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


class ShapeError(ValueError):
    pass


def _check_finite(arr: np.ndarray, op: str) -> None:
    # min/max propagate NaN and expose +-Inf
    if arr.size and not (np.isfinite(arr.min()) and np.isfinite(arr.max())):
        raise NonFiniteError(f"{op} produced non-finite values")


class Tensor:
    """Immutable dense float32 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=DTYPE)
        _check_finite(arr, "Tensor")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad

    @classmethod
    def _wrap(cls, arr: np.ndarray, op: str) -> "Tensor":
        if arr.dtype != DTYPE:
            arr = arr.astype(DTYPE)
        _check_finite(arr, op)
        if arr.flags.writeable:
            arr.flags.writeable = False
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


# ---------------------------------------------------------------------------
# tape


@dataclass
class _Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    grad_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class GradTape:
    """Ordered record of the primitive operations run while it is active.

    Use as a context manager::

        with GradTape() as tape:
            loss = model_loss(params)
        grads = backward(tape, loss, params)
    """

    nodes: list[_Node] = field(default_factory=list)

    def __enter__(self) -> "GradTape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)


_ACTIVE: list[GradTape] = []


def _emit(op: str, arr: np.ndarray, inputs: tuple[Tensor, ...], grad_fn) -> Tensor:
    out = Tensor._wrap(arr, op)
    if _ACTIVE and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _ACTIVE[-1].nodes.append(_Node(op, inputs, out, grad_fn))
    return out


def backward(tape: GradTape, loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of the scalar ``loss`` with respect to each of ``params``.

    Parameters that do not influence the loss get an all-zero gradient.
    """
    if loss.data.ndim != 0:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {}
    if loss.requires_grad:
        grads[id(loss)] = np.ones((), dtype=DTYPE)
    for node in reversed(tape.nodes):
        g = grads.get(id(node.output))
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.grad_fn(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    out = []
    for p in params:
        g = grads.get(id(p))
        out.append(np.zeros(p.shape, dtype=DTYPE) if g is None else np.asarray(g, dtype=DTYPE).reshape(p.shape))
    return out


# ---------------------------------------------------------------------------
# random numbers


@dataclass
class RngStream:
    """Counter-based random stream: ``(seed, counter)`` fully determines a draw.

    Each draw keys a fresh Philox generator from ``(seed, counter)`` and then
    bumps ``counter`` by one, so any draw can be replayed in isolation.
    """

    seed: int
    counter: int = 0

    def _generator(self) -> np.random.Generator:
        key = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, self.counter & 0xFFFFFFFFFFFFFFFF])
        self.counter += 1
        return np.random.Generator(np.random.Philox(key))

    def uniform(self, size) -> np.ndarray:
        return self._generator().random(size)

    def integers(self, low: int, high: int, size) -> np.ndarray:
        """Uniform integers in ``[low, high]`` inclusive."""
        return self._generator().integers(low, high, size=size, endpoint=True)


def gaussian(shape, stream: RngStream) -> Tensor:
    """I.i.d. standard normal float32 tensor; advances ``stream`` by one."""
    arr = stream._generator().standard_normal(tuple(shape), dtype=DTYPE)
    return Tensor._wrap(arr, "gaussian")


# ---------------------------------------------------------------------------
# primitives


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary_operands(a, b) -> tuple[Tensor, Tensor]:
    return as_tensor(a), as_tensor(b)


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    sa, sb = a.shape, b.shape
    return _emit("add", a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    sa, sb = a.shape, b.shape
    return _emit("sub", a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    if isinstance(b, (int, float)) and not isinstance(a, (int, float)):
        a = as_tensor(a)
        s = DTYPE(b)
        return _emit("scale", a.data * s, (a,), lambda g: (g * s,))
    a, b = _binary_operands(a, b)
    ad, bd = a.data, b.data
    return _emit(
        "mul",
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, batched over leading axes."""
    a, b = _binary_operands(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs at least 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul inner dimensions differ: {a.shape} @ {b.shape} "
            f"({a.shape[-1]} != {b.shape[-2]})"
        )
    ad, bd = a.data, b.data
    if bd.ndim == 2:
        # weight matrix: one gemm over all leading rows
        out = (ad.reshape(-1, ad.shape[-1]) @ bd).reshape(*ad.shape[:-1], bd.shape[-1])
    else:
        try:
            out = np.matmul(ad, bd)
        except ValueError as exc:
            raise ShapeError(f"matmul batch dimensions incompatible: {a.shape} @ {b.shape}") from exc

    def grad_fn(g):
        if bd.ndim == 2:
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ bd.T).reshape(ad.shape)
            gb = ad.reshape(-1, ad.shape[-1]).T @ g2
        else:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)
            gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return ga, gb

    return _emit("matmul", out, (a, b), grad_fn)


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return _emit("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    return _emit("swapaxes", np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def index(a: Tensor, idx) -> Tensor:
    """Basic (slice/integer) indexing."""
    src = a.shape

    def grad_fn(g):
        full = np.zeros(src, dtype=DTYPE)
        full[idx] = g
        return (full,)

    return _emit("index", a.data[idx], (a,), grad_fn)


def take(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]`` (embedding gather)."""
    ids = np.asarray(ids, dtype=np.int64)
    rows = table.shape[0]

    def grad_fn(g):
        full = np.zeros(table.shape, dtype=DTYPE)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    if ids.size and (ids.min() < 0 or ids.max() >= rows):
        raise IndexError(f"token id out of range for table with {rows} rows")
    return _emit("take", table.data[ids], (table,), grad_fn)


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = a.shape

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).astype(DTYPE),)

    return _emit("sum", a.data.sum(axis=axis, keepdims=keepdims), (a,), grad_fn)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tensor_sum(a, axis, keepdims), 1.0 / float(n))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax along ``axis``."""
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for {x.ndim}-D tensor")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", y, (x,), grad_fn)


def silu(x: Tensor) -> Tensor:
    xd = x.data
    sig = 1.0 / (1.0 + np.exp(-xd))

    def grad_fn(g):
        return (g * (sig * (1.0 + xd * (1.0 - sig))),)

    return _emit("silu", xd * sig, (x,), grad_fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply ``gain`` and ``bias``."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + DTYPE(eps))
    xhat = xc * inv
    gd = gain.data
    d = xd.shape[-1]

    def grad_fn(g):
        g_gain = (g * xhat).reshape(-1, d).sum(axis=0)
        g_bias = g.reshape(-1, d).sum(axis=0)
        gx_hat = g * gd
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True) - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, g_gain, g_bias

    return _emit("layer_norm", xhat * gd + bias.data, (x, gain, bias), grad_fn)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add(y, b)


def stack(arrays: Sequence[np.ndarray]) -> Tensor:
    """Stack untracked arrays into one tensor (no gradient)."""
    return Tensor._wrap(np.stack([np.asarray(a, dtype=DTYPE) for a in arrays]), "stack")
