"""Correction-factor tables, self-similar lookup, and overflow correction.

CF tables map cardinality keys (1% logarithmic spacing) to multiplicative
factors near 1.  Lookups beyond the table range exploit the sketch's
self-similarity: halving the estimate until it falls inside the table
yields the correct factor because the bias pattern repeats every
cardinality doubling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .profiles import NLZ_SLOTS, NlzProfile

CF_REFINE_TOL = 1e-4
CF_REFINE_MAX_ITERS = 4


# ---------------------------------------------------------------------------
# jitted cores (shared with the simulation kernels)
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def cf_lookup_core(keys_ln, factors, table_max, estimate):
    """Factor for an estimate, halving into range then log-interpolating."""
    n = keys_ln.shape[0]
    if n == 0:
        return 1.0
    if estimate <= 0.0:
        return factors[0]
    e = estimate
    while e > table_max:
        e *= 0.5
    le = math.log(e)
    if le <= keys_ln[0]:
        return factors[0]
    lo = 0
    hi = n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if keys_ln[mid] <= le:
            lo = mid
        else:
            hi = mid
    k0 = keys_ln[lo]
    k1 = keys_ln[hi]
    if k1 == k0:
        return factors[hi]
    u = (le - k0) / (k1 - k0)
    return factors[lo] + (factors[hi] - factors[lo]) * u


@njit(cache=True, nogil=True)
def cf_apply_core(keys_ln, factors, table_max, raw, seed):
    """Iterative refinement of a raw estimate against a CF table.

    The first lookup is keyed by ``seed`` (the raw estimate itself, or the
    raw tier-blend estimate for overflow-correcting structures); subsequent
    lookups re-key by the refined estimate until the relative change drops
    below CF_REFINE_TOL or CF_REFINE_MAX_ITERS iterations have run.
    """
    if keys_ln.shape[0] == 0 or raw <= 0.0:
        return raw
    key = seed if seed > 0.0 else raw
    est = raw
    for it in range(CF_REFINE_MAX_ITERS):
        new = raw * cf_lookup_core(keys_ln, factors, table_max, key)
        if it > 0 and abs(new - est) <= CF_REFINE_TOL * abs(est):
            return new
        est = new
        key = new
    return est


@njit(cache=True, nogil=True)
def correct_cum_core(cum, overflow, bucket_count):
    """Apply the per-tier overflow correction in reverse-cumulative space.

    ``cum`` is modified in place.  Each recorded overflow estimate X_t adds
    headroom-limited mass at its cumulative tier independently; a final
    top-down pass keeps the cumulative sequence non-increasing.
    """
    b = float(bucket_count)
    nt = overflow.shape[0] if overflow.shape[0] < NLZ_SLOTS else NLZ_SLOTS
    for t in range(nt):
        x = overflow[t]
        if x > 0.0:
            head = b - cum[t]
            if head > 0.0:
                cum[t] = cum[t] + head * (1.0 - math.exp(-x / b))
    for t in range(NLZ_SLOTS - 1, -1, -1):
        if cum[t] < cum[t + 1]:
            cum[t] = cum[t + 1]


# ---------------------------------------------------------------------------
# table objects and file formats
# ---------------------------------------------------------------------------

@dataclass
class CfTable:
    """Cardinality-keyed multiplicative correction factors for one method."""

    method: str
    keys: np.ndarray  # int64, strictly ascending
    factors: np.ndarray  # float64
    bucket_count: int = 0
    bits_per_register: int = 0
    history_bits: int = 0
    keys_ln: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.keys = np.asarray(self.keys, dtype=np.int64)
        self.factors = np.asarray(self.factors, dtype=np.float64)
        if self.keys.shape != self.factors.shape:
            raise ValueError("keys and factors must have the same length")
        if len(self.keys) and np.any(np.diff(self.keys) <= 0):
            raise ValueError("CF keys must be strictly increasing")
        self.keys_ln = np.log(self.keys.astype(np.float64)) if len(self.keys) else np.zeros(0)

    @property
    def table_max(self) -> float:
        return float(self.keys[-1]) if len(self.keys) else 0.0

    def lookup(self, estimate: float) -> float:
        return float(cf_lookup_core(self.keys_ln, self.factors, self.table_max, float(estimate)))

    def apply(self, raw: float, seed: float | None = None) -> float:
        s = float(seed) if seed is not None else -1.0
        return float(cf_apply_core(self.keys_ln, self.factors, self.table_max, float(raw), s))

    def save(self, path: str | Path) -> None:
        path = Path(path)
        lines = [
            f"# dynsketch-cf v1 method={self.method} buckets={self.bucket_count}"
            f" bits={self.bits_per_register} history={self.history_bits}"
        ]
        for k, f in zip(self.keys, self.factors):
            lines.append(f"{int(k)}\t{f:.9g}")
        path.write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "CfTable":
        path = Path(path)
        lines = path.read_text().splitlines()
        if not lines or not lines[0].startswith("# dynsketch-cf v1"):
            raise ValueError(f"{path}: not a dynsketch CF table")
        meta = _parse_header(lines[0])
        keys = []
        factors = []
        for line in lines[1:]:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            k, f = line.split("\t")
            keys.append(int(k))
            factors.append(float(f))
        return cls(
            method=meta.get("method", "?"),
            keys=np.array(keys, dtype=np.int64),
            factors=np.array(factors, dtype=np.float64),
            bucket_count=int(meta.get("buckets", 0)),
            bits_per_register=int(meta.get("bits", 0)),
            history_bits=int(meta.get("history", 0)),
        )


@dataclass
class HistoryCorrection:
    """Additive rank-space corrections, one entry per history state."""

    history_bits: int
    per_state: np.ndarray  # float64[2**h]

    def __post_init__(self):
        self.per_state = np.asarray(self.per_state, dtype=np.float64)
        if self.per_state.shape[0] != (1 << self.history_bits):
            raise ValueError("history correction must have 2**h entries")

    def save(self, path: str | Path, bucket_count: int = 0, bits_per_register: int = 0) -> None:
        lines = [
            f"# dynsketch-hc v1 buckets={bucket_count} bits={bits_per_register}"
            f" history={self.history_bits}"
        ]
        for s, c in enumerate(self.per_state):
            lines.append(f"{s}\t{c:.9g}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "HistoryCorrection":
        lines = Path(path).read_text().splitlines()
        if not lines or not lines[0].startswith("# dynsketch-hc v1"):
            raise ValueError(f"{path}: not a dynsketch history-correction file")
        meta = _parse_header(lines[0])
        vals = {}
        for line in lines[1:]:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            s, c = line.split("\t")
            vals[int(s)] = float(c)
        h = int(meta["history"])
        arr = np.array([vals[s] for s in range(1 << h)], dtype=np.float64)
        return cls(history_bits=h, per_state=arr)


def _parse_header(line: str) -> dict:
    out = {}
    for tok in line.split():
        if "=" in tok:
            k, v = tok.split("=", 1)
            out[k] = v
    return out


# ---------------------------------------------------------------------------
# profile-level overflow correction
# ---------------------------------------------------------------------------

def correct_overflow(profile: NlzProfile, overflow: np.ndarray) -> NlzProfile:
    """Return a copy of the profile with overflow-corrected cumulative counts."""
    cum = profile.cum.copy()
    correct_cum_core(cum, np.asarray(overflow, dtype=np.float64), profile.bucket_count)
    return NlzProfile(
        bucket_count=profile.bucket_count,
        min_zeros=profile.min_zeros,
        nlz_bits=profile.nlz_bits,
        history_bits=profile.history_bits,
        counts=profile.counts.copy(),
        cum=cum,
        micro_popcount=profile.micro_popcount,
        hist_counts=None if profile.hist_counts is None else profile.hist_counts.copy(),
        overflow_corrected=True,
    )


# ---------------------------------------------------------------------------
# table generation (delegates the simulation to the calibration drivers)
# ---------------------------------------------------------------------------

def generate_cf_table(
    cfg,
    method: str,
    instances: int,
    max_cardinality: int,
    seed: int,
    workers: int = 1,
    cf_aux: "CfTable | None" = None,
    history: "HistoryCorrection | None" = None,
    params=None,
):
    """Calibrate one method's CF table with the high-complexity driver.

    ``factor[key] = key / mean(raw estimate at key)`` across instances.  A
    blended method (hybrid) needs its input table passed as ``cf_aux``.
    """
    from . import calibration

    return calibration.calibrate_cf_table(
        cfg,
        method,
        instances=instances,
        max_cardinality=max_cardinality,
        master_seed=seed,
        workers=workers,
        cf_aux=cf_aux,
        history=history,
        params=params,
    )


def generate_history_correction(cfg, instances: int, seed: int, workers: int = 1,
                                max_cardinality: int | None = None):
    """Measure per-history-state rank bias and emit the additive table."""
    from . import calibration

    return calibration.calibrate_history_correction(
        cfg, instances=instances, master_seed=seed, workers=workers,
        max_cardinality=max_cardinality,
    )
