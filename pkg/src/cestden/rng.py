"""Counter-based pseudorandom generator with cross-platform bit-reproducibility.

All randomness in the toolkit (noise injection, phantom parameter draws,
network initialization) flows through :class:`SplitMix64` so that a seed fully
determines every output, independent of platform, thread count, or call
interleaving elsewhere.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = 0xFFFFFFFFFFFFFFFF

_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)

_INV53 = 2.0**-53


def _finalize(z: np.ndarray) -> np.ndarray:
    """SplitMix64 output function (Steele/Lea/Flood finalizer) on uint64 arrays."""
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


class SplitMix64:
    """SplitMix64 stream in counter form: output i is finalize(seed + (i+1)*golden).

    Equivalent to the sequential public-domain reference, but each block of
    outputs is computed as a pure function of (seed, index range), so draws
    vectorize and never depend on evaluation order.
    """

    def __init__(self, seed: int):
        if not 0 <= seed <= _MASK64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self._seed = np.uint64(seed)
        self._count = 0

    @property
    def count(self) -> int:
        """Number of raw 64-bit values consumed so far."""
        return self._count

    def uint64(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError("n must be non-negative")
        idx = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
        self._count += n
        return _finalize(self._seed + idx * _GOLDEN)

    def uniform(self, n: int) -> np.ndarray:
        """i.i.d. uniforms in [0, 1), from the top 53 bits of each raw value."""
        return (self.uint64(n) >> _S11).astype(np.float64) * _INV53

    def uniform_open(self, n: int) -> np.ndarray:
        """i.i.d. uniforms in (0, 1]; safe as a log argument."""
        return ((self.uint64(n) >> _S11) + np.uint64(1)).astype(np.float64) * _INV53

    def normal(self, n: int) -> np.ndarray:
        """i.i.d. standard normals via Box-Muller (consumes 2*ceil(n/2) raws)."""
        if n < 0:
            raise ValueError("n must be non-negative")
        pairs = (n + 1) // 2
        u1 = self.uniform_open(pairs)
        u2 = self.uniform(pairs)
        r = np.sqrt(-2.0 * np.log(u1))
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(2.0 * np.pi * u2)
        out[1::2] = r * np.sin(2.0 * np.pi * u2)
        return out[:n]
