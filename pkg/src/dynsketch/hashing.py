"""64-bit hashing and deterministic PRNG primitives.

Everything here operates on unsigned 64-bit words represented as
``np.uint64`` (inside jitted code) or plain Python ints masked to 64 bits
(at the API boundary).  All functions are pure and thread-safe.
"""

from __future__ import annotations

import numpy as np
from numba import njit

U64_MASK = 0xFFFFFFFFFFFFFFFF

# SplitMix64 increment (golden gamma) and the Mix13 finalizer multipliers.
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX13_MUL1 = 0xBF58476D1CE4E5B9
MIX13_MUL2 = 0x94D049BB133111EB

# Stored difference values 2^(63-nlz) must stay nonzero, so the leading-zero
# count is capped at 62.
MAX_NLZ = 62


def u64(x: int) -> int:
    """Clamp a Python int into the unsigned 64-bit domain."""
    return x & U64_MASK


@njit(cache=True, nogil=True, inline="always")
def mix13(z):
    """Stafford Mix13 finalizer; bijective on 64-bit words."""
    z = np.uint64(z)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX13_MUL1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX13_MUL2)
    return z ^ (z >> np.uint64(31))


def mix13_py(x: int) -> int:
    """Python-int convenience wrapper around :func:`mix13`."""
    return int(mix13(np.uint64(u64(x))))


@njit(cache=True, nogil=True, inline="always")
def clz64(x):
    """Number of leading zero bits of a 64-bit word (64 for x == 0)."""
    x = np.uint64(x)
    if x == np.uint64(0):
        return 64
    n = 0
    if x <= np.uint64(0x00000000FFFFFFFF):
        n += 32
        x <<= np.uint64(32)
    if x <= np.uint64(0x0000FFFFFFFFFFFF):
        n += 16
        x <<= np.uint64(16)
    if x <= np.uint64(0x00FFFFFFFFFFFFFF):
        n += 8
        x <<= np.uint64(8)
    if x <= np.uint64(0x0FFFFFFFFFFFFFFF):
        n += 4
        x <<= np.uint64(4)
    if x <= np.uint64(0x3FFFFFFFFFFFFFFF):
        n += 2
        x <<= np.uint64(2)
    if x <= np.uint64(0x7FFFFFFFFFFFFFFF):
        n += 1
    return n


@njit(cache=True, nogil=True, inline="always")
def popcount64(x):
    x = np.uint64(x)
    x = x - ((x >> np.uint64(1)) & np.uint64(0x5555555555555555))
    x = (x & np.uint64(0x3333333333333333)) + (
        (x >> np.uint64(2)) & np.uint64(0x3333333333333333)
    )
    x = (x + (x >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    return np.int64((x * np.uint64(0x0101010101010101)) >> np.uint64(56))


@njit(cache=True, nogil=True, inline="always")
def split_bitmask(key, k):
    """Split a hash into (bucket, absNlz) with the low-k-bits selector.

    The selector bits are cleared before counting so the rank never depends
    on them; when the whole non-bucket portion is zero the rank is the full
    remaining width 64-k.  Capped at MAX_NLZ.
    """
    key = np.uint64(key)
    bucket = np.int64(key & ((np.uint64(1) << np.uint64(k)) - np.uint64(1)))
    w = key >> np.uint64(k)
    if w == np.uint64(0):
        nlz = 64 - k
    else:
        nlz = clz64(w) - k
    if nlz > MAX_NLZ:
        nlz = MAX_NLZ
    return bucket, nlz


@njit(cache=True, nogil=True, inline="always")
def split_modulo(key, bucket_count):
    """Split with an arbitrary bucket count; rank uses the whole word."""
    key = np.uint64(key)
    bucket = np.int64(key % np.uint64(bucket_count))
    nlz = clz64(key)
    if nlz > MAX_NLZ:
        nlz = MAX_NLZ
    return bucket, nlz


def split(key: int, bucket_count: int, bitmask: bool) -> tuple[int, int]:
    """Python-facing hash split; see :func:`split_bitmask` / :func:`split_modulo`."""
    key = u64(key)
    if bitmask:
        k = bucket_count.bit_length() - 1
        if (1 << k) != bucket_count:
            raise ValueError("bitmask addressing requires a power-of-two bucket count")
        b, nlz = split_bitmask(np.uint64(key), k)
    else:
        b, nlz = split_modulo(np.uint64(key), bucket_count)
    return int(b), int(nlz)


@njit(cache=True, nogil=True, inline="always")
def splitmix64(state):
    """One SplitMix64 step; returns (output, next_state)."""
    state = np.uint64(state) + np.uint64(GOLDEN_GAMMA)
    return mix13(state), state


@njit(cache=True, nogil=True, inline="always")
def xoshiro_seed(seed, s):
    """Fill the 4-word xoshiro256++ state from a 64-bit seed via SplitMix64."""
    st = np.uint64(seed)
    for i in range(4):
        out, st = splitmix64(st)
        s[i] = out


@njit(cache=True, nogil=True, inline="always")
def xoshiro_next(s):
    """Advance xoshiro256++ in place and return the next 64-bit output."""
    s0 = s[0]
    s3 = s[3]
    tmp = s0 + s3
    result = ((tmp << np.uint64(23)) | (tmp >> np.uint64(41))) + s0
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = (s[3] << np.uint64(45)) | (s[3] >> np.uint64(19))
    return result


@njit(cache=True, nogil=True, inline="always")
def instance_seed(master_seed, index):
    """Derive the per-instance seed from a master seed and instance index.

    SplitMix64 keyed by the index keeps instances independent and lets any
    worker seed any instance directly, so the streams do not depend on how
    instances are partitioned across threads.
    """
    x = np.uint64(master_seed) + np.uint64(index + 1) * np.uint64(GOLDEN_GAMMA)
    return mix13(x)


class Xoshiro256pp:
    """Small stateful wrapper for the xoshiro256++ generator.

    >>> rng = Xoshiro256pp(12345)
    >>> a = rng.next()
    >>> Xoshiro256pp(12345).next() == a
    True
    """

    def __init__(self, seed: int):
        self._s = np.empty(4, dtype=np.uint64)
        xoshiro_seed(np.uint64(u64(seed)), self._s)

    @classmethod
    def from_state(cls, s0: int, s1: int, s2: int, s3: int) -> "Xoshiro256pp":
        rng = cls.__new__(cls)
        rng._s = np.array([u64(s0), u64(s1), u64(s2), u64(s3)], dtype=np.uint64)
        return rng

    @property
    def state(self) -> tuple[int, int, int, int]:
        return tuple(int(x) for x in self._s)

    def next(self) -> int:
        return int(xoshiro_next(self._s))
