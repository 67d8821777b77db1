"""Deterministic seeding utilities.

Parameter initialization derives an independent stream from (seed, name) so
that the order in which modules are constructed can never change the weights.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def derive_seed(seed: int, name: str) -> int:
    """Mix a base seed with a label into a 64-bit stream seed."""
    state = seed & _MASK64
    for byte in name.encode("utf-8"):
        state, out = splitmix64(state ^ byte)
        state ^= out
    state, out = splitmix64(state)
    return out


class SplitMix:
    """Tiny deterministic PRNG over splitmix64 outputs."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state, out = splitmix64(self._state)
        return out

    def uniform(self, shape: tuple[int, ...], low: float = 0.0, high: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        raw = np.array([self.next_u64() for _ in range(n)], dtype=np.uint64)
        # 53 high bits -> double in [0, 1)
        unit = (raw >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return (low + (high - low) * unit).reshape(shape)

    def normal(self, shape: tuple[int, ...], std: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        m = (n + 1) // 2
        u1 = np.clip(self.uniform((m,)), 1e-300, None)
        u2 = self.uniform((m,))
        r = np.sqrt(-2.0 * np.log(u1))
        pairs = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
        return (std * pairs[:n]).reshape(shape)
