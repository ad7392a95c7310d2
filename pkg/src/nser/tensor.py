"""Dense tensors with a recorded reverse-mode tape.

Each operation returns a new ``Tensor`` holding its parents and a closure
that maps the output gradient to parent gradients. ``backward`` walks the
recorded graph in reverse topological order and accumulates into the
``grad`` buffers of parameter leaves. Intermediate gradients are not kept,
so the same graph can be differentiated repeatedly.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

DTYPE = np.float32


class BackwardError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(
        self,
        data,
        parents: Sequence["Tensor"] = (),
        backward: Callable | None = None,
        requires_grad: bool = False,
        name: str | None = None,
        dtype=None,
    ):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DTYPE)
        self.data = arr
        self._parents = tuple(parents)
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in self._parents)
        self.grad = None
        self.name = name

    @classmethod
    def param(cls, data, name: str | None = None, dtype=DTYPE) -> "Tensor":
        t = cls(np.array(data, dtype=dtype), requires_grad=True, name=name)
        t.grad = np.zeros_like(t.data)
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, c: float):
        return scale(self, c)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=like.dtype if like is not None else None)


def _op(data, parents, backward) -> Tensor:
    return Tensor(data, parents, backward, dtype=data.dtype)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into every reachable parameter's ``grad``."""
    if not isinstance(loss, Tensor) or loss.is_leaf:
        raise BackwardError("backward without forward: tensor was not produced by a recorded op")
    if loss.data.size != 1:
        raise BackwardError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

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
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg


# -- operations --------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix-matrix or vector-matrix product."""
    if a.data.ndim not in (1, 2) or b.data.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.shape} x {b.shape}")
    A, B = a.data, b.data

    def bw(g):
        if A.ndim == 1:
            return g @ B.T, np.outer(A, g)
        return g @ B.T, A.T @ g

    return _op(A @ B, (a, b), bw)


def matmul_t(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b.T`` for a: [n, d] (or [d]) and b: [m, d]."""
    if b.data.ndim != 2 or a.shape[-1] != b.shape[1]:
        raise ValueError(f"matmul_t shape mismatch {a.shape} x {b.shape}^T")
    A, B = a.data, b.data

    def bw(g):
        if A.ndim == 1:
            return g @ B, np.outer(g, A)
        return g @ B, g.T @ A

    return _op(A @ B.T, (a, b), bw)


def add(a, b) -> Tensor:
    """Elementwise sum; ``b`` may be a vector broadcast over the rows of ``a``."""
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    rowwise = a.data.ndim == 2 and b.data.ndim == 1
    if a.shape != b.shape and not (rowwise and a.shape[1] == b.shape[0]):
        raise ValueError(f"add shape mismatch {a.shape} + {b.shape}")

    def bw(g):
        return g, (g.sum(axis=0) if rowwise else g)

    return _op(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    if a.shape != b.shape:
        raise ValueError(f"sub shape mismatch {a.shape} - {b.shape}")
    return _op(a.data - b.data, (a, b), lambda g: (g, -g))


def scale(a: Tensor, c: float) -> Tensor:
    c = a.dtype.type(c)
    return _op(a.data * c, (a,), lambda g: (g * c,))


def affine_forward(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """``x @ W + b`` for x: [n, in] (or [in]), W: [in, out], b: [out]."""
    if W.data.ndim != 2 or b.shape != (W.shape[1],) or x.shape[-1] != W.shape[0]:
        raise ValueError(f"affine shape mismatch x{x.shape} W{W.shape} b{b.shape}")
    X, Wd = x.data, W.data

    def bw(g):
        if X.ndim == 1:
            return g @ Wd.T, np.outer(X, g), g
        return g @ Wd.T, X.T @ g, g.sum(axis=0)

    return _op(X @ Wd + b.data, (x, W, b), bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _op(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return _op(s, (x,), lambda g: (g * s * (1 - s),))


def log_softmax(x: Tensor) -> Tensor:
    """Log-probabilities along the last axis, stabilized by max subtraction."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _op(out, (x,), bw)


softmax_logprobs = log_softmax


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    sizes = [p.shape[-1] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=-1))

    data = np.concatenate([p.data for p in parts], axis=-1)
    return _op(data, tuple(parts), bw)


def take_rows(t: Tensor, idx) -> Tensor:
    """Gather rows ``t[idx]``; repeated indices accumulate in the backward pass."""
    idx = np.asarray(idx, dtype=np.int64)
    T = t.data

    def bw(g):
        out = np.zeros_like(T)
        np.add.at(out, idx, g)
        return (out,)

    return _op(T[idx], (t,), bw)


def pick(t: Tensor, cols) -> Tensor:
    """Per-row selection ``t[i, cols[i]]`` from a matrix, or ``t[cols]`` from a vector."""
    cols = np.asarray(cols, dtype=np.int64)
    T = t.data
    if T.ndim == 1:
        def bw1(g):
            out = np.zeros_like(T)
            np.add.at(out, cols, g)
            return (out,)

        return _op(T[cols], (t,), bw1)
    rows = np.arange(T.shape[0])
    if cols.shape != rows.shape:
        raise ValueError(f"pick needs one column per row, got {cols.shape} for {T.shape}")

    def bw(g):
        out = np.zeros_like(T)
        out[rows, cols] = g
        return (out,)

    return _op(T[rows, cols], (t,), bw)


def rowdot(a: Tensor, b: Tensor) -> Tensor:
    """Inner product along the last axis."""
    if a.shape != b.shape:
        raise ValueError(f"rowdot shape mismatch {a.shape} . {b.shape}")
    A, B = a.data, b.data

    def bw(g):
        g = np.expand_dims(g, -1)
        return g * B, g * A

    return _op((A * B).sum(axis=-1), (a, b), bw)


def tsum(t: Tensor) -> Tensor:
    shape = t.shape
    return _op(np.asarray(t.data.sum(), dtype=t.dtype), (t,), lambda g: (np.full(shape, g, dtype=g.dtype),))


def mean(t: Tensor) -> Tensor:
    n = t.data.size
    return scale(tsum(t), 1.0 / n)


def weighted_sum(t: Tensor, w) -> Tensor:
    """Scalar ``sum(t * w)`` with constant weights ``w``."""
    w = np.asarray(w, dtype=t.dtype)
    if w.shape != t.shape:
        raise ValueError(f"weight shape {w.shape} does not match {t.shape}")
    return _op(np.asarray((t.data * w).sum(), dtype=t.dtype), (t,), lambda g: (g * w,))


def reshape(t: Tensor, shape) -> Tensor:
    old = t.shape
    return _op(t.data.reshape(shape), (t,), lambda g: (g.reshape(old),))


def constant(data, dtype=DTYPE) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype))
