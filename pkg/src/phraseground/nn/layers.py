"""Parameter management and the layer zoo used by the grounding model.

Layers are thin wrappers over the tensor ops: they own named parameters in a
shared :class:`ParamStore` and are callable on 2-D inputs (sequence x dim) or
on inputs with extra leading batch axes.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ConfigurationError, StateError
from . import tensor as T
from .rng import Rng
from .tensor import Tensor


class Parameter:
    """A named trainable tensor plus its Adam moment buffers."""

    __slots__ = ("name", "tensor", "m", "v", "step")

    def __init__(self, name: str, tensor: Tensor):
        self.name = name
        self.tensor = tensor
        self.m = np.zeros_like(tensor.data)
        self.v = np.zeros_like(tensor.data)
        self.step = 0


class ParamStore:
    """Registry of uniquely named parameters, in insertion order."""

    def __init__(self, dtype=np.float32):
        self.dtype = dtype
        self._params: dict[str, Parameter] = {}

    def create(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ConfigurationError(f"duplicate parameter name: {name}")
        t = Tensor(np.asarray(data, dtype=self.dtype), requires_grad=True)
        self._params[name] = Parameter(name, t)
        return t

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def get(self, name: str) -> Parameter:
        try:
            return self._params[name]
        except KeyError:
            raise StateError(f"unknown parameter: {name}") from None

    def names(self) -> list[str]:
        return list(self._params)

    def num_values(self) -> int:
        return sum(p.tensor.data.size for p in self)

    def zero_grad(self) -> None:
        for p in self:
            p.tensor.grad = np.zeros_like(p.tensor.data)

    def tensors(self) -> list[Tensor]:
        return [p.tensor for p in self]


def xavier_normal(rng: Rng, fan_in: int, fan_out: int) -> np.ndarray:
    std = math.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(fan_in * fan_out, sigma=std).reshape(fan_in, fan_out)


class Linear:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int, rng: Rng):
        self.weight = store.create(f"{name}.weight", xavier_normal(rng, d_in, d_out))
        self.bias = store.create(f"{name}.bias", np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        return T.matmul(x, self.weight) + self.bias


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, dim: int):
        self.gamma = store.create(f"{name}.gamma", np.ones(dim))
        self.beta = store.create(f"{name}.beta", np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta)


class Embedding:
    def __init__(self, store: ParamStore, name: str, count: int, dim: int, rng: Rng):
        table = rng.normal(count * dim, sigma=0.02).reshape(count, dim)
        self.table = store.create(f"{name}.table", table)

    def __call__(self, ids: np.ndarray) -> Tensor:
        return T.embedding_lookup(self.table, ids)


class MultiHeadAttention:
    """Scaled dot-product attention with learned Q/K/V/output projections.

    Returns both the attended output and the per-head attention maps
    (stacked, heads first) so a loss can be applied to the maps directly.
    """

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int, rng: Rng):
        if dim % heads != 0:
            raise ConfigurationError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.d_head = dim // heads
        self.wq = Linear(store, f"{name}.q", dim, dim, rng.child("q"))
        self.wk = Linear(store, f"{name}.k", dim, dim, rng.child("k"))
        self.wv = Linear(store, f"{name}.v", dim, dim, rng.child("v"))
        self.wo = Linear(store, f"{name}.o", dim, dim, rng.child("o"))

    def __call__(
        self,
        query: Tensor,
        key: Tensor,
        value: Tensor,
        key_mask: np.ndarray | None = None,
    ) -> tuple[Tensor, Tensor]:
        """key_mask: bool over key positions, broadcastable to (`...`, Lq, Lk)."""
        q = self.wq(query)
        k = self.wk(key)
        v = self.wv(value)
        scale = 1.0 / math.sqrt(self.d_head)
        if key_mask is not None:
            key_mask = np.asarray(key_mask, dtype=bool)
            if key_mask.ndim == 1:
                key_mask = key_mask[None, :]
        head_outs = []
        head_maps = []
        for h in range(self.heads):
            lo, hi = h * self.d_head, (h + 1) * self.d_head
            qh = T.slice_axis(q, -1, lo, hi)
            kh = T.slice_axis(k, -1, lo, hi)
            vh = T.slice_axis(v, -1, lo, hi)
            logits = T.matmul(qh, T.swap_last2(kh)) * scale
            attn = T.softmax_last(logits, mask=key_mask)
            head_maps.append(attn)
            head_outs.append(T.matmul(attn, vh))
        out = self.wo(T.concat_axis(head_outs, axis=-1))
        return out, T.stack0(head_maps)


class FeedForward:
    def __init__(self, store: ParamStore, name: str, dim: int, hidden: int, rng: Rng):
        self.fc1 = Linear(store, f"{name}.fc1", dim, hidden, rng.child("fc1"))
        self.fc2 = Linear(store, f"{name}.fc2", hidden, dim, rng.child("fc2"))

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(x)))


class TransformerBlock:
    """Pre-layer-norm self-attention block with a 4x feed-forward."""

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int, rng: Rng):
        self.norm1 = LayerNorm(store, f"{name}.norm1", dim)
        self.attn = MultiHeadAttention(store, f"{name}.attn", dim, heads, rng.child("attn"))
        self.norm2 = LayerNorm(store, f"{name}.norm2", dim)
        self.ffn = FeedForward(store, f"{name}.ffn", dim, 4 * dim, rng.child("ffn"))

    def __call__(self, x: Tensor, key_mask: np.ndarray | None = None) -> Tensor:
        h = self.norm1(x)
        attended, _ = self.attn(h, h, h, key_mask=key_mask)
        x = x + attended
        return x + self.ffn(self.norm2(x))
