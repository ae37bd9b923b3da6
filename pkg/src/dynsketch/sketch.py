"""Sketch structures: packed registers, shared exponent, merge, snapshots."""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels as K
from .hashing import U64_MASK, popcount64
from .profiles import NLZ_SLOTS, NlzProfile, make_profile

SNAPSHOT_MAGIC = b"DSK1"

_VARIANTS = {
    "ll6": (6, 0),
    "dll4": (4, 0),
    "dll3": (3, 0),
    "udll5": (5, 1),
    "udll6": (6, 2),
    "udll7": (7, 3),
}


@dataclass(frozen=True)
class SketchConfig:
    """Structure parameters; see :meth:`for_type` for the named variants."""

    bucket_count: int
    bits_per_register: int = 4
    history_bits: int = 0
    addressing: str = "bitmask"
    promotion_mode: str = "early"
    micro_index: bool = True
    ee_mask: bool = True
    lazy_allocation: bool = False

    def __post_init__(self):
        if self.bucket_count < 64:
            raise ValueError("bucket_count must be at least 64")
        if self.addressing not in ("bitmask", "modulo"):
            raise ValueError(f"unknown addressing mode {self.addressing!r}")
        if self.addressing == "bitmask" and self.bucket_count & (self.bucket_count - 1):
            raise ValueError("bitmask addressing requires a power-of-two bucket count")
        if self.promotion_mode != "early":
            raise ValueError("only early promotion is supported")
        key = (self.nlz_bits, self.history_bits)
        if key not in K.PACKING:
            raise ValueError(
                f"unsupported register layout: {self.bits_per_register} bits with "
                f"{self.history_bits} history bits"
            )
        if self.lazy_allocation and not self.micro_index:
            raise ValueError("lazy allocation requires the micro index")

    @classmethod
    def for_type(cls, type_name: str, bucket_count: int, **kw) -> "SketchConfig":
        try:
            bits, hist = _VARIANTS[type_name.lower()]
        except KeyError:
            raise ValueError(f"unknown estimator type {type_name!r}") from None
        return cls(bucket_count=bucket_count, bits_per_register=bits, history_bits=hist, **kw)

    @property
    def type_name(self) -> str:
        for name, (bits, hist) in _VARIANTS.items():
            if (bits, hist) == (self.bits_per_register, self.history_bits):
                return name
        return f"custom{self.bits_per_register}b{self.history_bits}h"

    @property
    def nlz_bits(self) -> int:
        return self.bits_per_register - self.history_bits

    @property
    def selector_bits(self) -> int:
        if self.addressing == "bitmask":
            return self.bucket_count.bit_length() - 1
        return 0

    @property
    def dynamic(self) -> bool:
        """Shared-exponent variants; the 6-bit/0-history baseline is static."""
        return (self.nlz_bits, self.history_bits) != (6, 0)

    @property
    def overflow_log(self) -> bool:
        return self.nlz_bits == 3

    @property
    def max_stored(self) -> int:
        return (1 << self.nlz_bits) - 1

    @property
    def register_bytes(self) -> int:
        dtype, rpw, _ = K.PACKING[(self.nlz_bits, self.history_bits)]
        return -(-self.bucket_count // rpw) * np.dtype(dtype).itemsize


@dataclass
class MergeResult:
    merged: "Sketch"
    instances_merged: int


class Sketch:
    """A streaming cardinality sketch.

    Single-writer: adds must be externally serialized.  Estimation reads may
    run concurrently once writing has stopped.
    """

    def __init__(self, cfg: SketchConfig, allocate: bool | None = None):
        self.cfg = cfg
        self._cc = K.build_cc(cfg)
        self.words = K.alloc_words(cfg)
        self.state = K.alloc_state()
        self.overflow = K.alloc_overflow()
        prealloc = (not cfg.lazy_allocation) if allocate is None else allocate
        K.reset_state(self.words, self.state, self.overflow, self._cc, prealloc)

    # -- streaming -----------------------------------------------------------

    def add(self, raw: int) -> None:
        K.add_one(self.words, self.state, self.overflow, self._cc, np.uint64(raw & U64_MASK))

    def add_many(self, values) -> None:
        arr = np.ascontiguousarray(values, dtype=np.uint64)
        K.add_many(self.words, self.state, self.overflow, self._cc, arr)

    def count_and_decrement(self) -> int:
        """Raise the shared floor; chains until some register is empty."""
        if self.min_zero_count != 0:
            raise ValueError("count_and_decrement requires min_zero_count == 0")
        K.promote_until_stable(self.words, self.state, self.overflow, self._cc)
        return self.min_zero_count

    # -- state views ---------------------------------------------------------

    @property
    def min_zeros(self) -> int:
        return int(self.state[K.ST_MINZ])

    @property
    def min_zero_count(self) -> int:
        """Registers whose rank portion is <= 1 (empty or at the floor).

        Promotion fires when this reaches zero, i.e. when every register
        sits strictly above the floor, so raising the floor never erases a
        register's rank.
        """
        return int(self.state[K.ST_MZCOUNT])

    @property
    def micro_index(self) -> int:
        return int(self.state[K.ST_MICRO])

    @property
    def micro_popcount(self) -> int:
        return int(popcount64(self.state[K.ST_MICRO]))

    @property
    def adds(self) -> int:
        return int(self.state[K.ST_ADDS])

    @property
    def early_rejects(self) -> int:
        return int(self.state[K.ST_EEREJ])

    @property
    def allocated(self) -> bool:
        return bool(self.state[K.ST_ALLOC])

    @property
    def ee_mask_value(self) -> int:
        return int(self.state[K.ST_EEMASK])

    def register_values(self) -> np.ndarray:
        """Raw per-register field values (helper for tests and merge)."""
        _, rpw, fbits = K.PACKING[(self.cfg.nlz_bits, self.cfg.history_bits)]
        b = self.cfg.bucket_count
        j = np.arange(b)
        w = self.words.astype(np.uint64)[j // rpw]
        sh = ((j % rpw) * fbits).astype(np.uint64)
        return (w >> sh) & np.uint64((1 << fbits) - 1)

    def decoded_ranks(self) -> np.ndarray:
        """Absolute leading-zero rank per register; -1 where empty."""
        vals = self.register_values()
        h = self.cfg.history_bits
        snlz = (vals >> np.uint64(h)).astype(np.int64)
        return np.where(snlz > 0, self.min_zeros + snlz - 1, -1)

    def micro_estimate(self) -> float:
        from .estimators import micro_estimate

        return micro_estimate(self.micro_popcount)

    def profile(self) -> NlzProfile:
        counts = np.zeros(NLZ_SLOTS, dtype=np.float64)
        h = self.cfg.history_bits
        hist = np.zeros((NLZ_SLOTS, 1 << h if h else 1), dtype=np.float64)
        cum = np.zeros(NLZ_SLOTS + 1, dtype=np.float64)
        pop = K.extract_profile(self.words, self.state, self.overflow, self._cc, counts, hist, cum)
        return make_profile(
            bucket_count=self.cfg.bucket_count,
            min_zeros=self.min_zeros,
            nlz_bits=self.cfg.nlz_bits,
            history_bits=h,
            counts=counts,
            micro_popcount=int(pop),
            hist_counts=hist if h else None,
            cum=cum,
            overflow_corrected=self.cfg.overflow_log,
        )

    # -- persistence ---------------------------------------------------------

    def to_bytes(self) -> bytes:
        """Self-describing snapshot; counters are not persistent state."""
        cfg = self.cfg
        flags = (1 if cfg.micro_index else 0) | (2 if self.allocated else 0) | (
            4 if cfg.lazy_allocation else 0
        )
        addr = 0 if cfg.addressing == "bitmask" else 1
        out = [
            SNAPSHOT_MAGIC,
            struct.pack(
                "<5I",
                cfg.bucket_count,
                cfg.bits_per_register,
                cfg.history_bits,
                addr,
                flags,
            ),
            struct.pack("<B", self.min_zeros),
            struct.pack("<Q", self.micro_index),
        ]
        ov = self.overflow
        nz = np.nonzero(ov)[0]
        ovlen = int(nz[-1]) + 1 if len(nz) else 0
        out.append(struct.pack("<I", ovlen))
        for t in range(ovlen):
            out.append(struct.pack("<I", int(ov[t])))
        if self.allocated:
            le = self.words.astype(self.words.dtype.newbyteorder("<"), copy=False)
            out.append(le.tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Sketch":
        if data[:4] != SNAPSHOT_MAGIC:
            raise ValueError("not a sketch snapshot")
        b, bits, hist, addr, flags = struct.unpack_from("<5I", data, 4)
        off = 24
        (minz,) = struct.unpack_from("<B", data, off)
        off += 1
        (micro,) = struct.unpack_from("<Q", data, off)
        off += 8
        (ovlen,) = struct.unpack_from("<I", data, off)
        off += 4
        ov = struct.unpack_from(f"<{ovlen}I", data, off)
        off += 4 * ovlen
        cfg = SketchConfig(
            bucket_count=b,
            bits_per_register=bits,
            history_bits=hist,
            addressing="bitmask" if addr == 0 else "modulo",
            micro_index=bool(flags & 1),
            lazy_allocation=bool(flags & 4),
        )
        allocated = bool(flags & 2)
        sk = cls(cfg, allocate=allocated)
        sk.state[K.ST_MINZ] = np.uint64(minz)
        sk.state[K.ST_MICRO] = np.uint64(micro)
        sk.state[K.ST_EEMASK] = K.ee_mask_for(minz, cfg.history_bits)
        for t, x in enumerate(ov):
            sk.overflow[t] = float(x)
        if allocated:
            dtype = sk.words.dtype
            raw = np.frombuffer(data, dtype=dtype.newbyteorder("<"), count=len(sk.words), offset=off)
            sk.words[:] = raw.astype(dtype)
            sk._recount()
        return sk

    def _recount(self) -> None:
        vals = self.register_values()
        h = self.cfg.history_bits
        floor = int(np.count_nonzero((vals >> np.uint64(h)) <= 1))
        self.state[K.ST_MZCOUNT] = np.uint64(floor)

    def copy(self) -> "Sketch":
        sk = Sketch(self.cfg, allocate=self.allocated)
        sk.words[:] = self.words
        sk.state[:] = self.state
        sk.overflow[:] = self.overflow
        return sk

    def state_equals(self, other: "Sketch") -> bool:
        return self.to_bytes() == other.to_bytes()


def merge(a: Sketch, b: Sketch) -> Sketch:
    """Combine two sketches over the same config.

    The result adopts the higher floor; the lower-floor input's registers
    are shifted down by the gap (values falling below the floor become
    empty) before the per-register max.  History of the strictly-higher
    register wins outright; equal ranks take the union of events.
    """
    if a.cfg != b.cfg:
        raise ValueError("config mismatch")
    cfg = a.cfg
    h = cfg.history_bits
    mzr = max(a.min_zeros, b.min_zeros)

    va = _reframed(a, mzr, h)
    vb = _reframed(b, mzr, h)
    sa = va >> np.uint64(h)
    sb = vb >> np.uint64(h)
    hmask = np.uint64((1 << h) - 1)
    union = (np.maximum(sa, sb) << np.uint64(h)) | ((va | vb) & hmask)
    vals = np.where(sa > sb, va, np.where(sb > sa, vb, union))
    vals = np.where((sa == 0) & (sb == 0), np.uint64(0), vals)

    out = Sketch(cfg, allocate=a.allocated or b.allocated)
    out.state[K.ST_MINZ] = np.uint64(mzr)
    out.state[K.ST_MICRO] = a.state[K.ST_MICRO] | b.state[K.ST_MICRO]
    out.state[K.ST_ADDS] = a.state[K.ST_ADDS] + b.state[K.ST_ADDS]
    out.state[K.ST_EEREJ] = a.state[K.ST_EEREJ] + b.state[K.ST_EEREJ]
    out.state[K.ST_EEMASK] = K.ee_mask_for(mzr, h)
    out.overflow[:] = a.overflow + b.overflow
    if out.allocated:
        _pack_into(out, vals)
        out._recount()
        if cfg.dynamic and out.min_zero_count == 0:
            K.promote_until_stable_no_record(out.words, out.state, out.overflow, out._cc)
    return out


def merge_many(sketches) -> MergeResult:
    sketches = list(sketches)
    if not sketches:
        raise ValueError("nothing to merge")
    acc = sketches[0].copy()
    for s in sketches[1:]:
        acc = merge(acc, s)
    return MergeResult(merged=acc, instances_merged=len(sketches))


def _reframed(s: Sketch, mzr: int, h: int) -> np.ndarray:
    vals = s.register_values()
    shift = mzr - s.min_zeros
    if shift == 0:
        return vals
    snlz = (vals >> np.uint64(h)).astype(np.int64) - shift
    hist = vals & np.uint64((1 << h) - 1)
    keep = snlz > 0
    return np.where(
        keep & (vals != 0),
        (np.maximum(snlz, 0).astype(np.uint64) << np.uint64(h)) | hist,
        np.uint64(0),
    )


def _pack_into(s: Sketch, vals: np.ndarray) -> None:
    dtype, rpw, fbits = K.PACKING[(s.cfg.nlz_bits, s.cfg.history_bits)]
    nwords = len(s.words)
    acc = np.zeros(nwords, dtype=np.uint64)
    for r in range(rpw):
        lane = vals[r::rpw].astype(np.uint64) << np.uint64(r * fbits)
        acc[: len(lane)] |= lane
    s.words[:] = acc.astype(dtype)
