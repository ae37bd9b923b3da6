"""Register-population summaries consumed by the estimation methods."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Leading-zero ranks live in [0, 62]; slot 63 is never populated but keeps
# indexing simple.  Cumulative arrays carry one extra terminating zero.
NLZ_SLOTS = 64


@dataclass
class NlzProfile:
    """Everything an estimator may read from a sketch.

    ``counts[a]`` is the number of registers whose decoded absolute
    leading-zero rank equals ``a``; ``cum[a]`` is the (overflow-corrected,
    possibly fractional) count of registers with rank >= ``a``.  For
    structures without overflow recording, ``cum`` is simply the reverse
    cumulative sum of ``counts``.
    """

    bucket_count: int
    min_zeros: int
    nlz_bits: int
    history_bits: int
    counts: np.ndarray  # float64[NLZ_SLOTS], raw per-rank register counts
    cum: np.ndarray  # float64[NLZ_SLOTS + 1], corrected reverse-cumulative
    micro_popcount: int
    hist_counts: np.ndarray | None = None  # float64[NLZ_SLOTS, 2**h]
    overflow_corrected: bool = False

    @property
    def filled(self) -> float:
        return float(self.cum[0])

    @property
    def empty(self) -> float:
        return self.bucket_count - float(self.cum[0])

    def tier_empty(self, t: int) -> float:
        """Number of buckets counting as empty at virtual tier ``t``."""
        return self.bucket_count - float(self.cum[t])


def cum_from_counts(counts: np.ndarray) -> np.ndarray:
    cum = np.zeros(NLZ_SLOTS + 1, dtype=np.float64)
    cum[:NLZ_SLOTS] = counts[::-1].cumsum()[::-1]
    return cum


def make_profile(
    bucket_count: int,
    min_zeros: int,
    nlz_bits: int,
    history_bits: int,
    counts: np.ndarray,
    micro_popcount: int,
    hist_counts: np.ndarray | None = None,
    cum: np.ndarray | None = None,
    overflow_corrected: bool = False,
) -> NlzProfile:
    counts = np.asarray(counts, dtype=np.float64)
    if cum is None:
        cum = cum_from_counts(counts)
    return NlzProfile(
        bucket_count=bucket_count,
        min_zeros=min_zeros,
        nlz_bits=nlz_bits,
        history_bits=history_bits,
        counts=counts,
        cum=np.asarray(cum, dtype=np.float64),
        micro_popcount=micro_popcount,
        hist_counts=hist_counts,
        overflow_corrected=overflow_corrected,
    )
