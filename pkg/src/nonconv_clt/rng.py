"""Counter-based random access randomness.

Sampling at polynomial time indices needs the value of "the n-th random
draw" without generating the n-1 draws before it, so instead of a stateful
generator every draw is a pure hash of (seed, replicate_id, substream,
counter).  The mixer is the splitmix64 finalizer, applied twice around a
golden-ratio counter step; it is vectorized over numpy uint64 arrays.

Discrete atoms with exact rational probabilities are drawn without bias by
rejection: a 64-bit word is accepted only below the largest multiple of the
common denominator, and the remainder is then exactly uniform on it.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import ModelError

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_REJECT_SALT = 0xD6E8FEB86659FD93

_U = np.uint64


def _mix_scalar(x: int) -> int:
    x &= _MASK
    x ^= x >> 30
    x = (x * _MIX1) & _MASK
    x ^= x >> 27
    x = (x * _MIX2) & _MASK
    x ^= x >> 31
    return x


def _mix_array(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.uint64, copy=True)
    x ^= x >> _U(30)
    x *= _U(_MIX1)
    x ^= x >> _U(27)
    x *= _U(_MIX2)
    x ^= x >> _U(31)
    return x


def stream_key(seed: int, replicate_id: int, substream: int) -> int:
    """Key identifying one independent substream of one replicate."""
    key = _mix_scalar(seed & _MASK)
    key = _mix_scalar(key ^ _mix_scalar((replicate_id + 1) * _GOLDEN))
    return _mix_scalar(key ^ _mix_scalar((substream + 1) * _MIX1))


def words_at(key: int, counters: np.ndarray) -> np.ndarray:
    """64-bit words at the given counters of the keyed stream."""
    with np.errstate(over="ignore"):
        x = counters.astype(np.uint64) * _U(_GOLDEN) + _U(key)
        return _mix_array(_mix_array(x))


class ExactCategorical:
    """Bias-free sampler for finitely many atoms with rational weights."""

    def __init__(self, probabilities: Sequence[Fraction]):
        probs = [Fraction(p) for p in probabilities]
        if any(p < 0 for p in probs) or sum(probs) != 1:
            raise ModelError("probabilities must be nonnegative and sum to 1 exactly")
        denominator = math.lcm(*(p.denominator for p in probs))
        if denominator > 1 << 40:
            raise ModelError(
                f"common probability denominator {denominator} too large for "
                "exact sampling (limit 2**40)")
        weights = [int(p * denominator) for p in probs]
        self.denominator = denominator
        self.cumulative = np.cumsum(np.array(weights, dtype=np.uint64))

    def draw(self, key: int, counters: np.ndarray) -> np.ndarray:
        """Atom indices at the given counters (uint64 -> int64)."""
        words = words_at(key, counters)
        d = self.denominator
        if d == 1:
            return np.zeros(len(words), dtype=np.int64)
        limit = _U((_MASK + 1) // d * d - 1)  # accept words <= limit
        rejected = words > limit
        while rejected.any():
            with np.errstate(over="ignore"):
                words[rejected] = _mix_array(words[rejected] ^ _U(_REJECT_SALT))
            rejected = words > limit
        residues = words % _U(d)
        return np.searchsorted(self.cumulative, residues, side="right").astype(np.int64)


def uniform01(key: int, counters: np.ndarray) -> np.ndarray:
    """float64 uniforms on [0, 1) (53 significant bits)."""
    return (words_at(key, counters) >> _U(11)).astype(np.float64) * (2.0 ** -53)
