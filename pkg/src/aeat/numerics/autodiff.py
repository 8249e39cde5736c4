"""Small reverse-mode automatic differentiation over dense float64 arrays.

Tensors are rank-2 in the common case ``(rows, cols)``; a leading batch axis is
allowed so that a minibatch of blocks runs through one graph. Only the operator
set needed by the transformer autoencoder and the Q-network is provided.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class Tensor:
    """Array value plus the bookkeeping needed for one reverse sweep."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = _parents
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Iterable[Tensor], fn) -> Tensor:
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, fn)
    # no tracked input: record nothing, evaluation stays cheap
    return Tensor(data)


def _row_sum(x: np.ndarray) -> np.ndarray:
    # sum over the last axis as a BLAS matvec; much faster than ufunc.reduce
    return (x @ np.ones(x.shape[-1]))[..., None]


def _row_max(x: np.ndarray) -> np.ndarray:
    # pairwise halving; ufunc.reduce over a short last axis is very slow
    m = x
    while m.shape[-1] > 1:
        n = m.shape[-1]
        h = n // 2
        top = np.maximum(m[..., :h], m[..., h:2 * h])
        if n % 2:
            top[..., :1] = np.maximum(top[..., :1], m[..., -1:])
        m = top
    return m


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if len(shape) == 2 and shape[0] == 1 and grad.shape[-1] == shape[1]:
        # bias-style (1, n) parameter broadcast over all leading axes
        g2 = grad.reshape(-1, shape[1])
        return (np.ones(g2.shape[0]) @ g2).reshape(shape)
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# linear algebra and arithmetic


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    A, B = a.data, b.data
    out = A @ B

    def fn(g):
        if B.ndim == 2 and A.ndim > 2:
            # fold the batch axes: one large GEMM beats numpy's batched loop
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ B.T).reshape(A.shape)
            gb = A.reshape(-1, A.shape[-1]).T @ g2
        else:
            ga = g @ np.swapaxes(B, -1, -2)
            gb = np.swapaxes(A, -1, -2) @ g
        return _unbroadcast(ga, A.shape), _unbroadcast(gb, B.shape)

    return _node(out, (a, b), fn)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _node(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    A, B = a.data, b.data
    return _node(A * B, (a, b), lambda g: (_unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _node(a.data * c, (a,), lambda g: (g * c,))


def square(a) -> Tensor:
    a = as_tensor(a)
    A = a.data
    return _node(A * A, (a,), lambda g: (2.0 * A * g,))


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    inv = tuple(np.argsort(axes))
    return _node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def fn(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _node(np.concatenate([p.data for p in parts], axis=axis), parts, fn)


def take_rows(a, index: np.ndarray) -> Tensor:
    """Pick ``a[i, index[i]]`` for every row; result has shape ``(rows, 1)``."""
    a = as_tensor(a)
    idx = np.asarray(index, dtype=np.int64)
    rows = np.arange(a.shape[0])
    shape = a.shape

    def fn(g):
        out = np.zeros(shape)
        out[rows, idx] = g[:, 0]
        return (out,)

    return _node(a.data[rows, idx][:, None], (a,), fn)


def total(a) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return _node(np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    return scale(total(a), 1.0 / n)


# ---------------------------------------------------------------------------
# nonlinearities


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)
    return _node(out, (a,), lambda g: (g * (out > 0),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # tanh form never overflows
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _node(s, (a,), lambda g: (g * s * (1.0 - s),))


def row_softmax(a, scale: float = 1.0) -> Tensor:
    """Softmax along the last axis of ``scale * a`` (max-subtracted)."""
    a = as_tensor(a)
    z = a.data * scale
    z -= _row_max(z)
    s = np.exp(z, out=z)
    s *= 1.0 / _row_sum(s)

    def fn(g):
        d = g - _row_sum(g * s)
        d *= s
        d *= scale
        return (d,)

    return _node(s, (a,), fn)


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    a, gain, bias = as_tensor(a), as_tensor(gain), as_tensor(bias)
    x = a.data
    n = x.shape[-1]
    if gain.data.size != n or bias.data.size != n:
        raise ShapeError(f"layer_norm affine size mismatch for width {n}")
    xc = x - _row_sum(x) / n
    inv = 1.0 / np.sqrt(_row_sum(xc * xc) / n + eps)
    xhat = np.multiply(xc, inv, out=xc)
    G = gain.data.reshape(-1)
    out = xhat * G
    out += bias.data.reshape(-1)

    def fn(g):
        gx = g * G
        dx = xhat * (_row_sum(gx * xhat) / n)
        np.subtract(gx, dx, out=dx)
        dx -= _row_sum(gx) / n
        dx *= inv
        g2 = g.reshape(-1, n)
        ones = np.ones(g2.shape[0])
        dg = (ones @ (g2 * xhat.reshape(-1, n))).reshape(gain.shape)
        db = (ones @ g2).reshape(bias.shape)
        return dx, dg, db

    return _node(out, (a, gain, bias), fn)


# ---------------------------------------------------------------------------
# losses

BCE_CLAMP = 1e-7


def bce_loss(pred, target) -> Tensor:
    """Mean binary cross entropy; predictions clamped to ``[1e-7, 1 - 1e-7]``."""
    pred = as_tensor(pred)
    t = np.asarray(target, dtype=np.float64)
    if t.shape != pred.shape:
        raise ShapeError(f"bce shapes differ: {pred.shape} vs {t.shape}")
    p = np.clip(pred.data, BCE_CLAMP, 1.0 - BCE_CLAMP)
    n = p.size
    value = -np.mean(t * np.log(p) + (1.0 - t) * np.log1p(-p))
    inside = (pred.data >= BCE_CLAMP) & (pred.data <= 1.0 - BCE_CLAMP)

    def fn(g):
        return (g * inside * (p - t) / (p * (1.0 - p)) / n,)

    return _node(np.array(value), (pred,), fn)


def mse_loss(pred, target) -> Tensor:
    pred = as_tensor(pred)
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if t.shape != pred.shape:
        raise ShapeError(f"mse shapes differ: {pred.shape} vs {t.shape}")
    d = pred.data - t
    n = d.size
    return _node(np.array(np.mean(d * d)), (pred,), lambda g: (g * 2.0 * d / n,))


# ---------------------------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every tracked leaf's ``grad``.

    Intermediate adjoints are discarded after the sweep; leaf gradients add up
    across calls until zeroed.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    adj: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = adj.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            adj[key] = pg if key not in adj else adj[key] + pg
