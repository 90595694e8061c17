"""Deterministic random number generation.

Every stochastic choice in the project (scene layout, point jitter, weight
init, batch shuffling, mask draws) flows from a single 64-bit seed through
SplitMix64. The generator is counter-based: draw ``i`` of stream ``s`` is
``mix64(s + (i+1) * GOLDEN)`` with all arithmetic mod 2**64, so identical
seeds produce identical streams on every platform, and batches of draws can
be produced vectorized without touching hidden state.

Child streams are derived by hashing a label path into the parent seed
(FNV-1a followed by the same mixer), which keeps independent subsystems
decoupled from each other's consumption order.
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = np.uint64(0xBF58476D1CE4E5B9)
_MIX_B = np.uint64(0x94D049BB133111EB)
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

_TWO_NEG_53 = 2.0 ** -53


def _mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer on an uint64 array (wrapping arithmetic)."""
    z = (z ^ (z >> np.uint64(30))) * _MIX_A
    z = (z ^ (z >> np.uint64(27))) * _MIX_B
    return z ^ (z >> np.uint64(31))


def derive_seed(seed: int, *labels: str | int) -> int:
    """Derive an independent child seed from a parent seed and a label path."""
    h = _FNV_OFFSET
    for label in labels:
        if isinstance(label, str):
            data = label.encode("utf-8")
        else:
            data = (int(label) & _MASK).to_bytes(8, "little")
        for byte in data:
            h = ((h ^ byte) * _FNV_PRIME) & _MASK
    state = np.array([(((seed & _MASK) ^ h) + _GOLDEN) & _MASK], dtype=np.uint64)
    return int(_mix64(state)[0])


class Rng:
    """Counter-based SplitMix64 stream."""

    def __init__(self, seed: int):
        self.seed = seed & _MASK
        self._count = 0

    def child(self, *labels: str | int) -> "Rng":
        """A fresh, independent stream; does not consume from this one."""
        return Rng(derive_seed(self.seed, *labels))

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
        self._count += n
        states = np.uint64(self.seed) + idx * np.uint64(_GOLDEN)
        return _mix64(states)

    def u64(self) -> int:
        return int(self._raw(1)[0])

    def uniform(self, n: int | None = None, lo: float = 0.0, hi: float = 1.0):
        """Uniform floats in [lo, hi); scalar when ``n`` is None."""
        m = 1 if n is None else n
        u = (self._raw(m) >> np.uint64(11)).astype(np.float64) * _TWO_NEG_53
        out = lo + (hi - lo) * u
        return float(out[0]) if n is None else out

    def normal(self, n: int | None = None, mu: float = 0.0, sigma: float = 1.0):
        """Gaussian draws via Box-Muller; scalar when ``n`` is None."""
        m = 1 if n is None else n
        pairs = (m + 1) // 2
        raw = self._raw(2 * pairs)
        # u1 in (0, 1] so the log is finite.
        u1 = ((raw[:pairs] >> np.uint64(11)).astype(np.float64) + 1.0) * _TWO_NEG_53
        u2 = (raw[pairs:] >> np.uint64(11)).astype(np.float64) * _TWO_NEG_53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:m]
        out = mu + sigma * z
        return float(out[0]) if n is None else out

    def randint(self, lo: int, hi: int) -> int:
        """Integer in [lo, hi). Modulo draw; bias is < range/2**64."""
        if hi <= lo:
            raise ValueError(f"empty range [{lo}, {hi})")
        return lo + self.u64() % (hi - lo)

    def choice(self, seq):
        return seq[self.randint(0, len(seq))]

    def shuffle(self, seq: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(seq) - 1, 0, -1):
            j = self.randint(0, i + 1)
            seq[i], seq[j] = seq[j], seq[i]
