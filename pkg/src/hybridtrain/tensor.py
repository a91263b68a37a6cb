"""Dense float64 arrays and seeded random streams.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. The helpers here
add the shape and finiteness checks the rest of the package relies on, and
never mutate their inputs.

Random numbers come from ``RngStream``: PCG64 seeded through ``SeedSequence``.
A stream can derive independent sub-streams keyed by integers, which is how
per-generation / per-individual randomness is kept independent of evaluation
order. Normal draws use numpy's ziggurat sampler on top of PCG64, uniform
draws are ``lo + (hi - lo) * u`` with ``u`` in [0, 1).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError, NumericError

DTYPE = np.float64


def as_tensor(data, shape: Sequence[int] | None = None) -> np.ndarray:
    arr = np.array(data, dtype=DTYPE)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if any(s <= 0 for s in shape):
            raise DimensionError(f"shape must be positive, got {shape}")
        if int(np.prod(shape)) != arr.size:
            raise DimensionError(f"cannot view {arr.size} values as shape {shape}")
        arr = arr.reshape(shape)
    return check_finite(arr)


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{what} contains non-finite values")
    return x


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise DimensionError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return check_finite(a + b)


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise DimensionError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    return check_finite(a * b)


def scale(a: np.ndarray, s: float) -> np.ndarray:
    return check_finite(a * float(s))


def slice1d(x: np.ndarray, start: int, stop: int) -> np.ndarray:
    if x.ndim != 1:
        raise DimensionError("slice1d expects a rank-1 tensor")
    if not 0 <= start <= stop <= x.shape[0]:
        raise DimensionError(f"slice [{start}:{stop}] out of range for length {x.shape[0]}")
    return x[start:stop].copy()


def concatenate(parts: Sequence[np.ndarray]) -> np.ndarray:
    if any(p.ndim != 1 for p in parts):
        raise DimensionError("concatenate expects rank-1 tensors")
    return np.concatenate(parts).astype(DTYPE, copy=False)


def reshape(x: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}")
    return x.reshape(shape).copy()


def argmax_last(x: np.ndarray) -> np.ndarray:
    """Index of the largest entry along the last axis (first one on ties)."""
    return np.argmax(x, axis=-1)


class RngStream:
    """Deterministic, splittable random stream.

    ``RngStream(seed).substream(3, 7)`` always yields the same sequence, no
    matter what was drawn from the parent first.
    """

    def __init__(self, seed: int, key: Sequence[int] = ()):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self.key = tuple(int(k) for k in key)
        seq = np.random.SeedSequence(seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def substream(self, *key: int) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(key))

    def normal(self, n: int) -> np.ndarray:
        return self._gen.standard_normal(int(n))

    def random(self, n: int | None = None):
        return self._gen.random() if n is None else self._gen.random(int(n))

    def uniform(self, lo, hi, n: int) -> np.ndarray:
        u = self._gen.random(int(n))
        lo = np.asarray(lo, dtype=DTYPE)
        hi = np.asarray(hi, dtype=DTYPE)
        return lo + (hi - lo) * u

    def integers(self, high: int) -> int:
        return int(self._gen.integers(high))

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def categorical(self, probs: Sequence[float]) -> int:
        return int(self._gen.choice(len(probs), p=np.asarray(probs, dtype=DTYPE)))

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, key={self.key})"


def draw_normal(rng: RngStream, n: int) -> np.ndarray:
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    return rng.normal(n)


def draw_uniform(rng: RngStream, lo, hi, n: int) -> np.ndarray:
    """Uniform draws on [lo, hi]. ``lo``/``hi`` may be arrays of length n."""
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    if np.any(np.asarray(lo) > np.asarray(hi)):
        raise ConfigError("uniform interval has lo > hi")
    return rng.uniform(lo, hi, n)
