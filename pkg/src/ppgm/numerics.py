"""Dense float64 tensors with a reverse-mode tape and an Adam optimizer.

Every op records a closure mapping the output gradient to input gradients,
but only when at least one input requires grad, so inference-only passes
carry no tape overhead.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)

_ids = itertools.count()

NORM_EPS = 1e-9


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name if name is not None else (f"t{next(_ids)}" if requires_grad else None)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    for p in parents:
        if p.requires_grad:
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
            return out
    out.requires_grad = False
    out._parents = ()
    out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape == b.data.shape:
        return
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# --- primitives -------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim == 0 or b.data.ndim == 0 or a.shape[-1] != b.shape[0] or b.data.ndim > 2 or a.data.ndim > 2:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    A, B = a.data, b.data
    out = A @ B

    def backward(g):
        if A.ndim == 2 and B.ndim == 2:
            return g @ B.T, A.T @ g
        if A.ndim == 1 and B.ndim == 2:
            return B @ g, np.outer(A, g)
        if A.ndim == 2 and B.ndim == 1:
            return np.outer(g, B), A.T @ g
        return g * B, g * A

    return _make(np.asarray(out, dtype=np.float64), (a, b), backward)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("elementwise_mul", a, b)
    A, B = a.data, b.data
    return _make(A * B, (a, b), lambda g: (_unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def concat(tensors: Sequence) -> Tensor:
    """Concatenate along the last axis."""
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: no inputs")
    lead = ts[0].shape[:-1]
    for t in ts[1:]:
        if t.data.ndim != ts[0].data.ndim or t.shape[:-1] != lead:
            raise ShapeError(f"concat: incompatible shapes {ts[0].shape} and {t.shape}")
    widths = [t.shape[-1] for t in ts]
    bounds = np.cumsum([0] + widths)

    def backward(g):
        return [g[..., bounds[i]:bounds[i + 1]] for i in range(len(ts))]

    return _make(np.concatenate([t.data for t in ts], axis=-1), tuple(ts), backward)


def stack_rows(tensors: Sequence) -> Tensor:
    """Stack equal-length vectors into a matrix (one vector per row)."""
    ts = [as_tensor(t) for t in tensors]
    shape = ts[0].shape
    for t in ts:
        if t.shape != shape or t.data.ndim != 1:
            raise ShapeError(f"stack_rows: incompatible shapes {shape} and {t.shape}")
    return _make(np.stack([t.data for t in ts]), tuple(ts), lambda g: list(g))


def row(a, i: int) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        full[i] = g
        return (full,)

    return _make(a.data[i].copy(), (a,), backward)


def rows(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return _make(a.data[start:stop].copy(), (a,), backward)


def take_rows(a, index) -> Tensor:
    """Gather rows ``a[index]``; indices must be distinct."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.intp)
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return _make(a.data[index], (a,), backward)


def vstack(tensors: Sequence) -> Tensor:
    """Concatenate matrices along the first axis."""
    ts = [as_tensor(t) for t in tensors]
    width = ts[0].shape[1:]
    for t in ts:
        if t.data.ndim != 2 or t.shape[1:] != width:
            raise ShapeError(f"vstack: incompatible shapes {ts[0].shape} and {t.shape}")
    bounds = np.cumsum([0] + [t.shape[0] for t in ts])
    return _make(np.concatenate([t.data for t in ts], axis=0), tuple(ts), lambda g: [g[bounds[i]:bounds[i + 1]] for i in range(len(ts))])


def columns(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        full[..., start:stop] = g
        return (full,)

    return _make(a.data[..., start:stop].copy(), (a,), backward)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got shape {a.shape}")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,))


def softmax_lastdim(a) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _make(s, (a,), backward)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    s[~pos] = ex / (1.0 + ex)
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _make(t, (a,), lambda g: (g * (1.0 - t * t),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def mean_rows(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2 or a.shape[0] == 0:
        raise ShapeError(f"mean_rows: expected a non-empty matrix, got shape {a.shape}")
    n = a.shape[0]
    return _make(a.data.mean(axis=0), (a,), lambda g: (np.broadcast_to(g / n, a.shape).copy(),))


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return _make(np.asarray(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def l2_normalize(a) -> Tensor:
    """Unit-normalize along the last axis; rows with norm <= 1e-9 map to zero."""
    a = as_tensor(a)
    x = a.data
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    small = norm <= NORM_EPS
    if small.any():
        log.debug("l2_normalize: %d near-zero vector(s) mapped to zero", int(small.sum()))
    safe = np.where(small, 1.0, norm)
    y = np.where(small, 0.0, x / safe)

    def backward(g):
        gx = (g - y * (g * y).sum(axis=-1, keepdims=True)) / safe
        return (np.where(small, 0.0, gx),)

    return _make(y, (a,), backward)


def log_sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = -np.logaddexp(0.0, -x)
    s = np.exp(out)
    return _make(out, (a,), lambda g: (g * (1.0 - s),))


def cosine(u, v) -> Tensor:
    return sum_all(mul(l2_normalize(u), l2_normalize(v)))


_KINDS = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "elementwise_mul": mul,
    "concat": lambda *xs: concat(xs),
    "softmax_lastdim": softmax_lastdim,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "mean_rows": mean_rows,
    "l2_normalize": l2_normalize,
    "scale": scale,
}


def tensor_op(kind: str, *inputs) -> Tensor:
    try:
        fn = _KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown tensor op {kind!r}") from None
    return fn(*inputs)


# --- reverse pass -----------------------------------------------------------

def backward(loss: Tensor) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` w.r.t. every grad-requiring leaf on its tape."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    out: dict[str, np.ndarray] = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            out[node.name] = out[node.name] + g if node.name in out else g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            grads[key] = grads[key] + pg if key in grads else pg
    return out


# --- optimizer --------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState):
    """One bias-corrected Adam update, in place. Returns ``(params, state)``."""
    unknown = set(grads) - set(params)
    if unknown:
        raise KeyError(f"adam_step: gradients for unknown parameters {sorted(unknown)}")
    state.t += 1
    t = state.t
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name in sorted(grads):
        p, g = params[name], grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: gradient shape {g.shape} does not match parameter {name!r} {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params, state
