"""Dense tensors with reverse-mode automatic differentiation.

Every network operation in this package is built from the primitives here.
Arrays are numpy; the graph is define-by-run. backward() ACCUMULATES into
``.grad`` (call ``zero_grads`` before each optimizer step).

Precision is a process-wide switch: float64 for gradient checking (the
default), float32 for faster training. Set it once, before building
parameters, via :func:`set_dtype`.
"""

from __future__ import annotations

import math
from typing import Callable, Optional

import numpy as np

_DTYPE = np.float64


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


def set_dtype(dtype) -> None:
    """Select the default float dtype for newly created tensors."""
    global _DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}; use float32 or float64")
    _DTYPE = dtype.type


def get_dtype():
    return _DTYPE


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to `shape` by summing the
    broadcast axes."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """N-d array plus the bookkeeping needed for reverse-mode autodiff.

    `grad` is populated by :func:`backward` for every tensor with
    ``requires_grad`` reachable from the loss; repeated backward calls
    without :func:`zero_grads` add up.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        arr = np.asarray(data)
        if arr.dtype.kind in "fiu":
            if arr.dtype != _DTYPE:
                arr = arr.astype(_DTYPE)
        else:
            raise TypeError(f"tensor data must be numeric, got dtype {arr.dtype}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = _parents
        self._backward: Optional[Callable] = _backward

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    # -- graph plumbing ------------------------------------------------

    @staticmethod
    def _result(data, parents, backward) -> "Tensor":
        requires = any(p.requires_grad for p in parents)
        return Tensor(
            data,
            requires_grad=requires,
            _parents=tuple(parents) if requires else (),
            _backward=backward if requires else None,
        )

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        if not isinstance(other, Tensor):
            other_data = np.asarray(other, dtype=self.data.dtype)
            out = self.data + other_data
            return Tensor._result(out, (self,), lambda g: (_unbroadcast(g, self.shape),))
        out = self.data + other.data

        def back(g):
            return _unbroadcast(g, self.shape), _unbroadcast(g, other.shape)

        return Tensor._result(out, (self, other), back)

    __radd__ = __add__

    def __neg__(self):
        return Tensor._result(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        if not isinstance(other, Tensor):
            return self + (-np.asarray(other))
        out = self.data - other.data

        def back(g):
            return _unbroadcast(g, self.shape), _unbroadcast(-g, other.shape)

        return Tensor._result(out, (self, other), back)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Tensor):
            factor = np.asarray(other, dtype=self.data.dtype)
            out = self.data * factor
            return Tensor._result(
                out, (self,), lambda g: (_unbroadcast(g * factor, self.shape),)
            )
        out = self.data * other.data
        a, b = self, other

        def back(g):
            return (
                _unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape),
            )

        return Tensor._result(out, (self, other), back)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not an engine primitive")
        return self * (1.0 / float(other))

    # -- shape ops -------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        out = self.data.reshape(shape)
        return Tensor._result(out, (self,), lambda g: (g.reshape(old),))

    def swapaxes(self, a: int, b: int):
        out = self.data.swapaxes(a, b)
        return Tensor._result(out, (self,), lambda g: (g.swapaxes(a, b),))

    def __getitem__(self, idx):
        """Basic indexing only (ints and slices); integer-array indices are
        not supported because their scatter-add would alias."""
        out = self.data[idx]
        shape = self.shape

        def back(g):
            full = np.zeros(shape, dtype=g.dtype)
            full[idx] += g
            return (full,)

        return Tensor._result(out, (self,), back)

    def sum(self, axis=None, keepdims: bool = False):
        out = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.shape

        def back(g):
            if axis is None:
                return (np.broadcast_to(g, shape).copy(),)
            axes = axis if isinstance(axis, tuple) else (axis,)
            if not keepdims:
                for ax in sorted(a % len(shape) for a in axes):
                    g = np.expand_dims(g, ax)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._result(out, (self,), back)

    def mean(self, axis=None, keepdims: bool = False):
        count = self.size if axis is None else np.prod(
            [self.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(count))


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batch semantics ([..., m, k] @ [..., k, n])."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ: {a.shape} x {b.shape}")
    out = a.data @ b.data

    def back(g):
        ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape)
        gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape)
        return ga, gb

    return Tensor._result(out, (a, b), back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-12) -> Tensor:
    """Standardize over the last axis, then scale and shift."""
    d = x.shape[-1]
    if d < 1:
        raise ShapeError("layer_norm: empty last axis")
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm: gamma/beta must have shape ({d},), got {gamma.shape}/{beta.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    out = xhat * gamma.data + beta.data

    def back(g):
        dgamma = _unbroadcast(g * xhat, gamma.shape)
        dbeta = _unbroadcast(g, beta.shape)
        dxhat = g * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, dgamma, dbeta

    return Tensor._result(out, (x, gamma, beta), back)


# tanh-approximation constants; fixed so runs are reproducible bit-for-bit
_GELU_K = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715


def gelu(x: Tensor) -> Tensor:
    """Gaussian-error linear unit, tanh approximation:
    0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))."""
    xd = x.data
    u = _GELU_K * (xd + _GELU_C * (xd * xd * xd))
    t = np.tanh(u)
    out = 0.5 * xd * (1.0 + t)

    def back(g):
        du = _GELU_K * (1.0 + 3.0 * _GELU_C * xd * xd)
        dx = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du
        return (g * dx,)

    return Tensor._result(out, (x,), back)


def embedding_gather(table: Tensor, ids) -> Tensor:
    """Rows of `table` at `ids`; gradients of repeated ids sum into the row."""
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        ids = ids.astype(np.int64)
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        bad = int(ids.reshape(-1)[np.argmax((ids < 0) | (ids >= vocab))])
        raise IndexError(f"embedding id {bad} out of range for table of {vocab} rows")
    out = table.data[ids]

    def back(g):
        gt = np.zeros(table.shape, dtype=g.dtype)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return Tensor._result(out, (table,), back)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((g - dot) * y,)

    return Tensor._result(y, (x,), back)


def softmax_cross_entropy(logits: Tensor, targets, ignore_label: int = -100) -> Tensor:
    """Mean negative log-softmax probability over positions whose target is
    not `ignore_label`. All positions ignored -> 0 with zero gradient.

    `logits` may have any leading shape; the class axis is last. `targets`
    must have the matching leading shape.
    """
    num_classes = logits.shape[-1]
    targets = np.asarray(targets)
    if targets.dtype.kind not in "iu":
        targets = targets.astype(np.int64)
    if targets.shape != logits.shape[:-1]:
        raise ShapeError(
            f"targets shape {targets.shape} does not match logits {logits.shape}"
        )
    flat_t = targets.reshape(-1)
    valid = flat_t != ignore_label
    bad = valid & ((flat_t < 0) | (flat_t >= num_classes))
    if bad.any():
        raise IndexError(
            f"target {int(flat_t[np.argmax(bad)])} out of range for {num_classes} classes"
        )

    flat = logits.data.reshape(-1, num_classes)
    n = int(valid.sum())
    if n == 0:
        return Tensor._result(
            np.zeros((), dtype=logits.data.dtype),
            (logits,),
            lambda g: (np.zeros(logits.shape, dtype=g.dtype),),
        )

    m = flat.max(axis=-1, keepdims=True)
    z = flat - m
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    rows = np.nonzero(valid)[0]
    loss = -logp[rows, flat_t[rows]].sum() / n

    def back(g):
        # d/dlogits = (softmax - onehot)/n on valid rows, 0 elsewhere
        grad = np.zeros_like(flat)
        p = np.exp(logp[rows])
        grad[rows] = p
        grad[rows, flat_t[rows]] -= 1.0
        grad *= float(g) / n
        return (grad.reshape(logits.shape),)

    return Tensor._result(np.asarray(loss), (logits,), back)


def dropout(x: Tensor, p: float, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout; p == 0 returns the input tensor unchanged."""
    if p == 0.0:
        return x
    if not 0.0 < p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if rng is None:
        raise ValueError("dropout with p > 0 needs an explicit rng for determinism")
    mask = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    out = x.data * mask
    return Tensor._result(out, (x,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# backward driver
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate `.grad` on every requires_grad tensor reachable from `loss`.

    Accumulates: each call adds the full dLoss/dTensor on top of whatever is
    already in `.grad`.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {
        id(loss): np.ones(loss.shape, dtype=loss.data.dtype)
    }
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        # g is exclusively ours after the pop; accumulations below build new
        # arrays, so aliasing it into .grad is safe
        if node.grad is None:
            node.grad = g
        else:
            node.grad = node.grad + g
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg


def zero_grads(params) -> None:
    """Clear grads on a dict or iterable of tensors."""
    values = params.values() if hasattr(params, "values") else params
    for t in values:
        t.grad = None
