"""Reverse-mode autodiff over dense numpy arrays.

A :class:`Tensor` wraps a float32 ndarray (float64 in shadow mode, used by the
finite-difference checker) plus an optional gradient buffer. Operations build
a graph of backward closures; ``Tensor.backward()`` runs them in reverse
topological order. The op inventory is exactly what the grounding model
needs: matmul, masked softmax, layer norm, embeddings, pooling, slicing and
the loss primitives. Most ops accept leading batch dimensions.

Tensors are treated as immutable once produced by an op; the training loop is
single-threaded, so no locking is done anywhere.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, ValidationError

_FLOAT_DTYPES = (np.float32, np.float64)

# Module-level switch: with grads disabled no backward graph is built,
# which roughly halves evaluation cost.
_grad_enabled = True


class no_grad:
    """Context manager that disables graph construction."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype not in _FLOAT_DTYPES:
        return arr.astype(np.float32)
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple = ()
        self._backward_fn = None

    # -- introspection ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def check_finite(self) -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise ValidationError("tensor contains NaN/Inf")
        return self

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    # -- graph plumbing ----------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph."""
        if self.data.size != 1:
            raise DimensionError("backward() requires a scalar tensor")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    def __radd__(self, other):
        return add(_wrap(other, self.dtype), self)

    def __sub__(self, other):
        return add(self, neg(_wrap(other, self.dtype)))

    def __rsub__(self, other):
        return add(_wrap(other, self.dtype), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    def __rmul__(self, other):
        return mul(_wrap(other, self.dtype), self)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _make(data: np.ndarray, parents: tuple, backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.grad = None  # allocated lazily during backward
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise ------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(-g)

    return _make(-a.data, (a,), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backward)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0))

    return _make(data, (a,), backward)


def log_clamp(a: Tensor, eps: float = 1e-9) -> Tensor:
    """log(max(a, eps)); zero gradient where the clamp is active."""
    clipped = np.maximum(a.data, eps)
    data = np.log(clipped)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > eps) / clipped)

    return _make(data, (a,), backward)


# -- linear algebra ----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise DimensionError(
            f"matmul inner dims disagree: {a.data.shape} @ {b.data.shape}"
        )
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape))

    return _make(data, (a, b), backward)


def swap_last2(a: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(g.swapaxes(-1, -2))

    return _make(a.data.swapaxes(-1, -2), (a,), backward)


# -- shape ops ---------------------------------------------------------------


def reshape(a: Tensor, shape: tuple) -> Tensor:
    orig = a.data.shape

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(orig))

    return _make(a.data.reshape(shape), (a,), backward)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward(g):
        if a.requires_grad:
            local = np.zeros_like(a.data)
            local[index] = g
            a._accumulate(local)

    return _make(a.data[index], (a,), backward)


def concat_axis(tensors: list[Tensor], axis: int) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def backward(g):
        offset = 0
        for t, size in zip(tensors, sizes):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(offset, offset + size)
                t._accumulate(g[tuple(index)])
            offset += size

    return _make(data, tuple(tensors), backward)


def stack0(tensors: list[Tensor]) -> Tensor:
    data = np.stack([t.data for t in tensors], axis=0)

    def backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accumulate(g[i])

    return _make(data, tuple(tensors), backward)


def expand0(a: Tensor, n: int) -> Tensor:
    """Repeat a tensor along a new leading axis."""
    data = np.broadcast_to(a.data, (n,) + a.data.shape).copy()

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.sum(axis=0))

    return _make(data, (a,), backward)


# -- reductions ---------------------------------------------------------------


def sum_axis(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if a.requires_grad:
            gg = g if keepdims else np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(gg, a.data.shape).copy())

    return _make(data, (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(np.full_like(a.data, float(g)))

    return _make(np.asarray(a.data.sum()), (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.full_like(a.data, float(g) / n))

    return _make(np.asarray(a.data.mean()), (a,), backward)


def max_axis(a: Tensor, axis: int) -> Tensor:
    """Max over one axis; gradient flows to the (first) argmax only."""
    idx = np.argmax(a.data, axis=axis)
    data = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def backward(g):
        if a.requires_grad:
            local = np.zeros_like(a.data)
            np.put_along_axis(
                local, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis
            )
            a._accumulate(local)

    return _make(data, (a,), backward)


def max_pool_over_set(a: Tensor) -> Tensor:
    """Reduce an N x D set to 1 x D by per-channel maximum."""
    if a.data.ndim != 2:
        raise DimensionError(f"max_pool_over_set expects N x D, got {a.shape}")
    pooled = max_axis(a, 0)
    return reshape(pooled, (1, a.data.shape[1]))


def gather_last(a: Tensor, idx: np.ndarray) -> Tensor:
    """Pick one entry per row along the last axis; idx shape = a.shape[:-1]."""
    idx = np.asarray(idx)
    data = np.take_along_axis(a.data, idx[..., None], axis=-1).squeeze(-1)

    def backward(g):
        if a.requires_grad:
            local = np.zeros_like(a.data)
            np.put_along_axis(local, idx[..., None], g[..., None], axis=-1)
            a._accumulate(local)

    return _make(data, (a,), backward)


# -- lookup -------------------------------------------------------------------


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ValidationError(
            f"embedding id out of range [0, {table.data.shape[0]})"
        )
    data = table.data[ids]

    def backward(g):
        if table.requires_grad:
            local = np.zeros_like(table.data)
            np.add.at(local, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
            table._accumulate(local)

    return _make(data, (table,), backward)


# -- normalization / attention math -------------------------------------------


def softmax_last(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row-stochastic softmax over the last axis.

    ``mask`` is a boolean array broadcastable to ``x.shape``; masked entries
    get probability exactly 0 and receive no gradient. Every row must keep at
    least one valid entry. Stabilized by max subtraction.
    """
    if mask is None:
        shifted = x.data - x.data.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.data.shape)
        neg_inf = np.where(mask, x.data, -np.inf)
        shifted = neg_inf - neg_inf.max(axis=-1, keepdims=True)
        e = np.exp(shifted)  # exp(-inf) == 0 exactly
    total = e.sum(axis=-1, keepdims=True)
    a = (e / total).astype(x.dtype)

    def backward(g):
        if x.requires_grad:
            inner = (g * a).sum(axis=-1, keepdims=True)
            x._accumulate(a * (g - inner))

    return _make(a, (x,), backward)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over each row of a 2-D tensor."""
    if x.data.ndim != 2:
        raise DimensionError(f"softmax_rows expects a 2-D tensor, got {x.shape}")
    return softmax_last(x)


def log_softmax_last(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Log-softmax over the last axis; masked entries output 0 and are inert."""
    if mask is None:
        m = x.data.max(axis=-1, keepdims=True)
        shifted = x.data - m
        e = np.exp(shifted)
        lse = np.log(e.sum(axis=-1, keepdims=True))
        data = (shifted - lse).astype(x.dtype)
        soft = (e / e.sum(axis=-1, keepdims=True)).astype(x.dtype)
        valid = None
    else:
        valid = np.broadcast_to(np.asarray(mask, dtype=bool), x.data.shape)
        neg_inf = np.where(valid, x.data, -np.inf)
        m = neg_inf.max(axis=-1, keepdims=True)
        shifted = neg_inf - m
        e = np.exp(shifted)
        lse = np.log(e.sum(axis=-1, keepdims=True))
        data = np.where(valid, shifted - lse, 0.0).astype(x.dtype)
        soft = (e / e.sum(axis=-1, keepdims=True)).astype(x.dtype)

    def backward(g):
        if x.requires_grad:
            gm = g if valid is None else g * valid
            x._accumulate(gm - soft * gm.sum(axis=-1, keepdims=True))

    return _make(data, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the learned affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = (xhat * gamma.data + beta.data).astype(x.dtype)
    d = x.data.shape[-1]

    def backward(g):
        if beta.requires_grad:
            beta._accumulate(_unbroadcast(g, beta.shape))
        if gamma.requires_grad:
            gamma._accumulate(_unbroadcast(g * xhat, gamma.shape))
        if x.requires_grad:
            dxhat = g * gamma.data
            term = dxhat - dxhat.mean(axis=-1, keepdims=True)
            term -= xhat * (dxhat * xhat).sum(axis=-1, keepdims=True) / d
            x._accumulate(term * inv)

    return _make(data, (x, gamma, beta), backward)


# -- losses -------------------------------------------------------------------


def cross_entropy_soft(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean over rows of -sum(target * log(pred)).

    ``pred`` holds probabilities (clamped at 1e-9 inside the log) and
    ``target`` rows must each sum to 1 within 1e-6.
    """
    target = np.asarray(target, dtype=pred.dtype)
    if target.shape != pred.data.shape:
        raise DimensionError(
            f"target shape {target.shape} != prediction shape {pred.data.shape}"
        )
    row_sums = target.sum(axis=-1)
    if not np.allclose(row_sums, 1.0, atol=1e-6):
        raise ValidationError("cross_entropy_soft: target rows must sum to 1")
    rows = int(np.prod(pred.data.shape[:-1]))
    picked = mul(log_clamp(pred), Tensor(target))
    return mul(sum_all(picked), Tensor(np.asarray(-1.0 / rows, dtype=pred.dtype)))


def bce_with_logits(
    logits: Tensor, targets: np.ndarray, mask: np.ndarray | None = None
) -> Tensor:
    """Mean binary cross entropy on logits; stable log1p(exp) form."""
    t = np.asarray(targets, dtype=logits.dtype)
    x = logits.data
    per = np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))
    if mask is not None:
        valid = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        count = max(int(valid.sum()), 1)
        data = np.asarray((per * valid).sum() / count, dtype=logits.dtype)
    else:
        valid = None
        count = x.size
        data = np.asarray(per.mean(), dtype=logits.dtype)

    def backward(g):
        if logits.requires_grad:
            sig = 1.0 / (1.0 + np.exp(-x))
            grad = (sig - t) * (float(g) / count)
            if valid is not None:
                grad = grad * valid
            logits._accumulate(grad.astype(logits.dtype))

    return _make(data, (logits,), backward)
