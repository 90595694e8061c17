"""Minimal dense-tensor numerical core with reverse-mode gradients."""

from .rng import Rng, derive_seed
from .tensor import Tensor, no_grad

__all__ = ["Rng", "Tensor", "derive_seed", "no_grad"]
