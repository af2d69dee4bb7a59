"""Deterministic random number generation.

All randomness in this project flows through :class:`Rng`, a counter-based
generator built on the SplitMix64 mixing function.  The i-th raw draw of a
stream with key ``k`` is ``mix64(k + i * GOLDEN)`` where ``mix64`` is the
SplitMix64 finalizer and ``GOLDEN`` is the 64-bit golden-ratio constant.
Because every output is a pure function of (key, index), streams are
bit-identical across platforms and independent child streams can be derived
by re-keying.  The platform default generator is never used.

Uniform floats take the top 53 bits of a raw word; normal deviates map a
uniform draw through the inverse standard-normal CDF, so every sample of
any distribution consumes exactly one 64-bit word.
"""

from __future__ import annotations

import hashlib

import numpy as np
from scipy.special import ndtri

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15   # SplitMix64 stream increment
_SPLIT_SALT = 0xD1B54A32D192ED03  # re-keying constant for child streams


def _mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer, vectorized over uint64 arrays (wrapping)."""
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _mix64_int(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


def _tag_to_int(tag) -> int:
    """Map a child-stream tag (int or str) to a stable 64-bit integer."""
    if isinstance(tag, (int, np.integer)):
        return int(tag) & _MASK
    if isinstance(tag, str):
        digest = hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    raise TypeError(f"rng tag must be int or str, got {type(tag).__name__}")


class Rng:
    """Seeded deterministic stream with cheap splitting.

    ``Rng(seed)`` always yields the same sequence for the same seed.
    ``child(tag)`` derives an independent stream whose output never
    overlaps the parent's, keyed by ``tag`` (an int or a short string).
    """

    def __init__(self, seed: int, _key: int | None = None):
        self.seed = int(seed)
        self._key = _mix64_int(self.seed ^ _GOLDEN) if _key is None else _key
        self._counter = 0

    def child(self, tag) -> "Rng":
        t = _tag_to_int(tag)
        key = _mix64_int((self._key ^ _SPLIT_SALT) + _mix64_int(t + _SPLIT_SALT))
        rng = Rng(self.seed, _key=key)
        return rng

    def _raw(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit words."""
        if n < 0:
            raise ValueError("draw count must be >= 0")
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        return _mix64(np.uint64(self._key) + idx * np.uint64(_GOLDEN))

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> np.ndarray | float:
        """Uniform draws in [low, high); one word per sample."""
        if not low < high:
            raise ValueError(f"uniform requires low < high, got [{low}, {high})")
        n = int(np.prod(size)) if size is not None else 1
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        out = low + (high - low) * u
        if size is None:
            return float(out[0])
        return out.reshape(size)

    def normal(self, mean: float = 0.0, std: float = 1.0, size=None) -> np.ndarray | float:
        """Normal draws via inverse-CDF; one word per sample."""
        if std < 0:
            raise ValueError(f"normal requires std >= 0, got {std}")
        n = int(np.prod(size)) if size is not None else 1
        u = ((self._raw(n) >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
        out = mean + std * ndtri(u)
        if size is None:
            return float(out[0])
        return out.reshape(size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray | int:
        """Integer draws in [low, high). Modulo mapping; bias is negligible
        for ranges far below 2**64, which covers every use in this project."""
        if not low < high:
            raise ValueError(f"integers requires low < high, got [{low}, {high})")
        n = int(np.prod(size)) if size is not None else 1
        span = np.uint64(high - low)
        out = (self._raw(n) % span).astype(np.int64) + low
        if size is None:
            return int(out[0])
        return out.reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n); consumes n words."""
        return np.argsort(self._raw(n), kind="stable")

    def choice(self, n: int, k: int, replace: bool = True) -> np.ndarray:
        """k indices from range(n), with or without replacement."""
        if not replace:
            if k > n:
                raise ValueError(f"cannot choose {k} from {n} without replacement")
            return self.permutation(n)[:k]
        return self.integers(0, n, size=(k,))

    def __repr__(self) -> str:  # pragma: no cover
        return f"Rng(seed={self.seed}, key={self._key:#x}, counter={self._counter})"
