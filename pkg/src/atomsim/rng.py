"""Deterministic, forkable random state.

Every stochastic operation in the package draws from an explicit
:class:`RandomState`.  The generator is a counter-based Philox engine keyed
by ``(seed, stream)``, so equal keys reproduce bit-identical sequences on
every platform and forked sub-streams are independent of their parent by
construction (distinct keys select disjoint counter spaces).
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError

_MASK64 = (1 << 64) - 1
# SplitMix64 golden-ratio increment and finalizer, used to derive child
# stream identifiers.  Pure 64-bit integer arithmetic: platform independent.
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(z: int) -> int:
    z = (z + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


class RandomState:
    """Owns one Philox stream; not safe to share across concurrent tasks."""

    __slots__ = ("seed", "stream", "_gen")

    def __init__(self, seed: int, stream: int = 0):
        if not (0 <= int(seed) <= _MASK64):
            raise ParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
        if not (0 <= int(stream) <= _MASK64):
            raise ParameterError(f"stream must be a 64-bit unsigned integer, got {stream}")
        self.seed = int(seed)
        self.stream = int(stream)
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def fork(self, k: int) -> "RandomState":
        """Return the k-th child stream.

        Children never overlap the parent sequence (they use a different
        Philox key), and distinct ``k`` give statistically independent
        streams.  Forking does not advance this state.
        """
        if k < 0 or k > _MASK64:
            raise ParameterError(f"fork index must be in [0, 2**64), got {k}")
        child = _splitmix64((self.stream + (_GOLDEN * (k + 1))) & _MASK64)
        return RandomState(self.seed, child)

    def uniform(self, size: int | tuple | None = None):
        """Next uniform deviate(s) in [0, 1); advances the stream."""
        if size is None:
            return float(self._gen.random())
        return self._gen.random(size)

    def __repr__(self) -> str:  # pragma: no cover
        return f"RandomState(seed={self.seed}, stream={self.stream})"


def uniform_next(state: RandomState) -> float:
    """Single uniform draw in [0, 1)."""
    return state.uniform()
