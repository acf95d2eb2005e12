"""Deterministic 64-bit mixing generator (splitmix64).

Scenes and layer initialisations must be bit-reproducible across runs and
across independent implementations, so the generator is fully specified here
rather than delegated to a library PRNG:

state update   s_{n+1} = (s_n + 0x9E3779B97F4A7C15) mod 2^64
output         z = s_{n+1}
               z = (z XOR (z >> 30)) * 0xBF58476D1CE4E5B9   mod 2^64
               z = (z XOR (z >> 27)) * 0x94D049BB133111EB   mod 2^64
               out = z XOR (z >> 31)

Derived draws (all consume the raw u64 stream in order):

* ``next_below(m)``: rejection sampling. With lim = 2^64 - (2^64 mod m),
  draw u64 values until one is < lim, then return it mod m. Unbiased and
  reproducible regardless of batching.
* unit floats: (u >> 11) * 2^-53, uniform in [0, 1).
* symmetric floats: 2 * unit - 1, uniform in [-1, 1).

Because the state advances by a fixed increment, the n-th raw output is a
pure function of (seed, n); the array methods exploit that to vectorise
without changing the stream.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """splitmix64 stream over python ints, with vectorised batch draws."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK64
        return _mix(self._state)

    def u64_array(self, n: int) -> np.ndarray:
        """The next `n` raw outputs as uint64, advancing the state by n."""
        if n == 0:
            return np.empty(0, dtype=np.uint64)
        idx = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(self._state) + idx * np.uint64(_GAMMA)  # wraps mod 2^64
        self._state = (self._state + n * _GAMMA) & _MASK64
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))

    def next_below(self, m: int) -> int:
        """Unbiased integer in [0, m) via rejection sampling."""
        if m <= 0:
            raise ValueError("m must be positive")
        lim = (1 << 64) - ((1 << 64) % m)
        while True:
            u = self.next_u64()
            if u < lim:
                return u % m

    def unit_array(self, n: int) -> np.ndarray:
        """`n` float64 values uniform in [0, 1)."""
        return (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def symmetric_array(self, n: int) -> np.ndarray:
        """`n` float64 values uniform in [-1, 1)."""
        return self.unit_array(n) * 2.0 - 1.0


def sample_without_replacement(rng: SplitMix64, volume: int, n: int) -> np.ndarray:
    """Uniform sample of `n` distinct integers from [0, volume).

    Partial Fisher-Yates over the virtual array 0..volume-1 with a sparse
    swap table, so memory is O(n) even for huge volumes. Draw i swaps slot i
    with slot i + next_below(volume - i); the emitted values are the slots'
    current occupants, in draw order.
    """
    if n > volume:
        raise ValueError("sample larger than population")
    swap: dict[int, int] = {}
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        j = i + rng.next_below(volume - i)
        vi = swap.get(i, i)
        vj = swap.get(j, j)
        out[i] = vj
        swap[j] = vi
    return out
