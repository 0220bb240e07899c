"""Seedable xoshiro256** generator with vectorized lanes.

Every random number in the package comes from here, so runs are reproducible
bit-for-bit on any platform with IEEE doubles. A ``Prng`` owns one or more
independent *lanes*; lane ``j`` of ``Prng(seed, lanes=n)`` is seeded with
``mix_seed(seed, j)``, which is also how child streams are derived.

Scalar draws step a single lane with plain Python integers. Bulk draws
(``bits``/``random``/``normal`` with many values) take one 64-bit key from the
stream and fan it out over a temporary multi-lane generator, which keeps
large draws cheap while staying a pure function of the seed.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_SM_MUL1 = 0xBF58476D1CE4E5B9
_SM_MUL2 = 0x94D049BB133111EB

_BULK_THRESHOLD = 64
_MAX_LANES = 1 << 15


def _sm_mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _SM_MUL1) & MASK64
    z = ((z ^ (z >> 27)) * _SM_MUL2) & MASK64
    return z ^ (z >> 31)


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns (new_state, output)."""
    state = (state + GOLDEN) & MASK64
    return state, _sm_mix(state)


def mix_seed(seed: int, index: int) -> int:
    """Derive the seed of child stream ``index`` from ``seed``."""
    a = _sm_mix((seed + GOLDEN) & MASK64)
    b = _sm_mix(((index & MASK64) + 2 * GOLDEN) & MASK64)
    return _sm_mix((a ^ ((b << 1) | (b >> 63))) & MASK64)


def _seed_state(seed: int) -> tuple[int, int, int, int]:
    s = seed & MASK64
    out = []
    for _ in range(4):
        s, v = splitmix64(s)
        out.append(v)
    if not any(out):
        out[0] = 1
    return tuple(out)


# vectorized helpers on uint64 arrays; numpy wraps on overflow for arrays
def _v_sm_mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_SM_MUL1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_SM_MUL2)
    return z ^ (z >> np.uint64(31))


def _v_mix_seed(seed: int, index: np.ndarray) -> np.ndarray:
    a = np.uint64(_sm_mix((seed + GOLDEN) & MASK64))
    b = _v_sm_mix(index.astype(np.uint64) + np.uint64(2 * GOLDEN & MASK64))
    return _v_sm_mix(a ^ ((b << np.uint64(1)) | (b >> np.uint64(63))))


def _v_seed_state(seeds: np.ndarray) -> np.ndarray:
    s = seeds.astype(np.uint64).copy()
    state = np.empty((4, s.size), dtype=np.uint64)
    g = np.uint64(GOLDEN)
    for k in range(4):
        s += g
        state[k] = _v_sm_mix(s)
    zero = ~state.any(axis=0)
    state[0, zero] = 1
    return state


def _v_rotl(x: np.ndarray, k: int) -> np.ndarray:
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


def _v_next(state: np.ndarray) -> np.ndarray:
    s0, s1, s2, s3 = state
    result = _v_rotl(s1 * np.uint64(5), 7) * np.uint64(9)
    t = s1 << np.uint64(17)
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    state[3] = _v_rotl(s3, 45)
    return result


class LaneGenerator:
    """Many independent xoshiro256** streams stepped in lockstep."""

    def __init__(self, seed: int, indices):
        idx = np.asarray(indices, dtype=np.uint64).ravel()
        self.state = _v_seed_state(_v_mix_seed(seed, idx))

    @property
    def lanes(self) -> int:
        return self.state.shape[1]

    def next_u64(self) -> np.ndarray:
        return _v_next(self.state)

    def random(self) -> np.ndarray:
        """One uniform double in [0, 1) per lane."""
        return (self.next_u64() >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)

    def normal(self) -> np.ndarray:
        """One standard normal per lane (Box-Muller, cosine branch)."""
        u1 = 1.0 - self.random()
        u2 = self.random()
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)

    def fill_bits(self, n: int) -> np.ndarray:
        steps = -(-n // self.lanes)
        out = np.empty((steps, self.lanes), dtype=np.uint64)
        for k in range(steps):
            out[k] = self.next_u64()
        return out.ravel()[:n]


class Prng:
    """A single seeded xoshiro256** stream.

    >>> a, b = Prng(7), Prng(7)
    >>> a.next_u64() == b.next_u64()
    True
    """

    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed) & MASK64
        self._s = list(_seed_state(mix_seed(self.seed, 0)))

    def spawn(self, index: int) -> "Prng":
        """Independent child stream; depends only on (seed, index)."""
        return Prng(mix_seed(self.seed, index))

    def lanes(self, indices) -> LaneGenerator:
        """Lane ``j`` is seeded with ``mix_seed(seed, indices[j])``."""
        return LaneGenerator(self.seed, indices)

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = ((((s1 * 5) & MASK64) << 7 | ((s1 * 5) & MASK64) >> 57) & MASK64) * 9 & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & MASK64
        self._s = [s0, s1, s2, s3]
        return result

    def random_scalar(self) -> float:
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError("n must be positive")
        return min(int(self.random_scalar() * n), n - 1)

    def bits(self, n: int) -> np.ndarray:
        if n <= _BULK_THRESHOLD:
            return np.array([self.next_u64() for _ in range(n)], dtype=np.uint64)
        key = self.next_u64()
        lanes = min(_MAX_LANES, max(1, -(-n // 8)))
        return LaneGenerator(key, np.arange(lanes)).fill_bits(n)

    def random(self, size) -> np.ndarray:
        n = int(np.prod(size))
        u = (self.bits(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        return u.reshape(size)

    def uniform(self, low: float, high: float, size) -> np.ndarray:
        return low + (high - low) * self.random(size)

    def normal(self, size) -> np.ndarray:
        n = int(np.prod(size))
        u = self.random(2 * n)
        z = np.sqrt(-2.0 * np.log(1.0 - u[:n])) * np.cos(2.0 * math.pi * u[n:])
        return z.reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        out = np.arange(n)
        if n < 2:
            return out
        u = self.random(n - 1)
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = min(int(u[k] * (i + 1)), i)
            out[i], out[j] = out[j], out[i]
        return out

    def choice(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices from ``range(n)``, uniformly."""
        if k > n:
            raise ValueError(f"cannot choose {k} of {n} without replacement")
        return self.permutation(n)[:k]
