"""Jitted state machines and simulation loops.

The sketch state lives in three arrays so the same code serves the public
``Sketch`` object and the bulk simulation drivers:

* ``words``   packed registers (dtype depends on the register layout)
* ``state``   uint64[8]: floor, empty count, micro word, counters, flags
* ``overflow`` float64[80]: per-tier recorded overflow estimates

Config constants travel as an int64 array (``build_cc``) so every kernel is
variant-generic.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .correction import correct_cum_core
from .estimators import estimate_method_core
from .hashing import (
    clz64,
    instance_seed,
    mix13,
    popcount64,
    xoshiro_next,
    xoshiro_seed,
)
from .profiles import NLZ_SLOTS

# cc indices
CC_B = 0
CC_K = 1
CC_ADDR = 2  # 0 bitmask, 1 modulo
CC_NLZ_BITS = 3
CC_HIST_BITS = 4
CC_FIELD_BITS = 5
CC_RPW = 6
CC_NWORDS = 7
CC_MAX_STORED = 8
CC_EE = 9
CC_MICRO = 10
CC_DYNAMIC = 11
CC_OVERFLOW = 12
CC_LAZY = 13
CC_ALLOC_THRESH = 14
CC_LEN = 15

# state indices
ST_MINZ = 0
ST_MZCOUNT = 1
ST_MICRO = 2
ST_ADDS = 3
ST_ALLOC = 4
ST_EEREJ = 5
ST_VERSION = 6
ST_EEMASK = 7
ST_LEN = 8

OVERFLOW_SLOTS = 80

# (nlz_bits, history_bits) -> (dtype, registers per word, field bits)
PACKING = {
    (6, 0): (np.uint8, 1, 8),  # unpacked byte array
    (3, 0): (np.uint32, 10, 3),
    (4, 0): (np.uint32, 8, 4),
    (4, 1): (np.uint32, 6, 5),
    (4, 2): (np.uint32, 5, 6),
    (4, 3): (np.uint64, 9, 7),
}

MICRO_ALLOC_THRESHOLD = 60

_U0 = np.uint64(0)
_U1 = np.uint64(1)
_U63 = np.uint64(63)
_UFULL = np.uint64(0xFFFFFFFFFFFFFFFF)


def build_cc(cfg) -> np.ndarray:
    """Pack a SketchConfig into the kernel constants array."""
    dtype, rpw, fbits = PACKING[(cfg.nlz_bits, cfg.history_bits)]
    nwords = -(-cfg.bucket_count // rpw)
    cc = np.zeros(CC_LEN, dtype=np.int64)
    cc[CC_B] = cfg.bucket_count
    cc[CC_K] = cfg.selector_bits
    cc[CC_ADDR] = 0 if cfg.addressing == "bitmask" else 1
    cc[CC_NLZ_BITS] = cfg.nlz_bits
    cc[CC_HIST_BITS] = cfg.history_bits
    cc[CC_FIELD_BITS] = fbits
    cc[CC_RPW] = rpw
    cc[CC_NWORDS] = nwords
    cc[CC_MAX_STORED] = (1 << cfg.nlz_bits) - 1
    cc[CC_EE] = 1 if cfg.ee_mask else 0
    cc[CC_MICRO] = 1 if cfg.micro_index else 0
    cc[CC_DYNAMIC] = 1 if cfg.dynamic else 0
    cc[CC_OVERFLOW] = 1 if cfg.overflow_log else 0
    cc[CC_LAZY] = 1 if cfg.lazy_allocation else 0
    cc[CC_ALLOC_THRESH] = MICRO_ALLOC_THRESHOLD
    return cc


def alloc_words(cfg) -> np.ndarray:
    dtype, rpw, _ = PACKING[(cfg.nlz_bits, cfg.history_bits)]
    return np.zeros(-(-cfg.bucket_count // rpw), dtype=dtype)


def alloc_state() -> np.ndarray:
    return np.zeros(ST_LEN, dtype=np.uint64)


def alloc_overflow() -> np.ndarray:
    return np.zeros(OVERFLOW_SLOTS, dtype=np.float64)


# ---------------------------------------------------------------------------
# register access and state transitions
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True, inline="always")
def reg_get(words, j, rpw, fbits):
    if rpw == 1:
        wi = j
        sh = _U0
    elif rpw == 8:
        wi = j >> 3
        sh = np.uint64((j & 7) * fbits)
    else:
        wi = j // rpw
        sh = np.uint64((j % rpw) * fbits)
    fmask = (_U1 << np.uint64(fbits)) - _U1
    return (np.uint64(words[wi]) >> sh) & fmask


@njit(cache=True, nogil=True, inline="always")
def reg_set(words, j, rpw, fbits, val):
    if rpw == 1:
        wi = j
        sh = _U0
    elif rpw == 8:
        wi = j >> 3
        sh = np.uint64((j & 7) * fbits)
    else:
        wi = j // rpw
        sh = np.uint64((j % rpw) * fbits)
    fmask = (_U1 << np.uint64(fbits)) - _U1
    old = np.uint64(words[wi])
    words[wi] = (old & ~(fmask << sh)) | ((np.uint64(val) & fmask) << sh)


@njit(cache=True, nogil=True, inline="always")
def ee_mask_for(minz, hist_bits):
    sh = minz - hist_bits
    if sh < 0:
        sh = 0
    if sh > 63:
        sh = 63
    return _UFULL >> np.uint64(sh)


@njit(cache=True, nogil=True)
def reset_state(words, state, overflow, cc, preallocate):
    words[:] = 0
    overflow[:] = 0.0
    state[:] = _U0
    state[ST_MZCOUNT] = np.uint64(cc[CC_B])
    if preallocate or cc[CC_LAZY] == 0:
        state[ST_ALLOC] = _U1
    state[ST_EEMASK] = _UFULL


@njit(cache=True, nogil=True)
def promote_once(words, state, overflow, cc, record_overflow):
    """One floor increment: record overflow, decrement, recount the floor.

    The floor population (registers whose rank portion is <= 1: empty or
    sitting at the floor) is what gates promotion; promotion fires only
    once it reaches zero, so a decrement never empties a register on the
    organic add path and no rank information is lost.
    """
    b = cc[CC_B]
    rpw = cc[CC_RPW]
    fbits = cc[CC_FIELD_BITS]
    h = cc[CC_HIST_BITS]
    max_stored = np.uint64(cc[CC_MAX_STORED])
    hmask = (_U1 << np.uint64(h)) - _U1
    minz = np.int64(state[ST_MINZ])

    if cc[CC_OVERFLOW] == 1 and record_overflow:
        top = 0
        for j in range(b):
            if (reg_get(words, j, rpw, fbits) >> np.uint64(h)) == max_stored:
                top += 1
        key = minz + np.int64(cc[CC_MAX_STORED])
        if key < OVERFLOW_SLOTS:
            overflow[key] += float(top // 2)

    floor_count = 0
    for j in range(b):
        val = reg_get(words, j, rpw, fbits)
        snlz = val >> np.uint64(h)
        if snlz == _U0:
            floor_count += 1
            continue
        snlz -= _U1
        if snlz == _U0:
            reg_set(words, j, rpw, fbits, _U0)
        else:
            reg_set(words, j, rpw, fbits, (snlz << np.uint64(h)) | (val & hmask))
        if snlz <= _U1:
            floor_count += 1
    state[ST_MINZ] = np.uint64(minz + 1)
    state[ST_MZCOUNT] = np.uint64(floor_count)
    state[ST_EEMASK] = ee_mask_for(minz + 1, h)
    state[ST_VERSION] += _U1
    return floor_count


@njit(cache=True, nogil=True)
def promote_until_stable(words, state, overflow, cc):
    while promote_once(words, state, overflow, cc, True) == 0:
        pass


@njit(cache=True, nogil=True)
def promote_until_stable_no_record(words, state, overflow, cc):
    """Merge-path promotion: the inputs' logs already carry their clamp
    history, and re-recording at merge time would make merge order-dependent."""
    while promote_once(words, state, overflow, cc, False) == 0:
        pass


@njit(cache=True, nogil=True, inline="always")
def micro_bit_index(key, cc):
    if cc[CC_ADDR] == 0:
        return (key >> np.uint64(cc[CC_K])) & _U63
    return key >> np.uint64(58)


@njit(cache=True, nogil=True, inline="always")
def split_key(key, cc):
    """(bucket, absolute rank) for a hashed key under this config."""
    if cc[CC_ADDR] == 0:
        k = cc[CC_K]
        bucket = np.int64(key & ((_U1 << np.uint64(k)) - _U1))
        w = key >> np.uint64(k)
        if w == _U0:
            nlz = 64 - k
        else:
            nlz = clz64(w) - k
    else:
        bucket = np.int64(key % np.uint64(cc[CC_B]))
        nlz = clz64(key)
    if nlz > 62:
        nlz = 62
    return bucket, nlz


@njit(cache=True, nogil=True)
def add_one(words, state, overflow, cc, raw):
    """The complete hash-and-store path for one input word."""
    key = mix13(raw)
    state[ST_ADDS] += _U1
    if cc[CC_DYNAMIC] == 1 and cc[CC_EE] == 1 and key > state[ST_EEMASK]:
        state[ST_EEREJ] += _U1
        return
    if state[ST_ALLOC] == _U0:
        # micro-phase: only the collision word is live until it saturates
        bit = _U1 << micro_bit_index(key, cc)
        if state[ST_MICRO] & bit == _U0:
            state[ST_MICRO] |= bit
            state[ST_VERSION] += _U1
        if popcount64(state[ST_MICRO]) >= cc[CC_ALLOC_THRESH]:
            state[ST_ALLOC] = _U1
            state[ST_VERSION] += _U1
            add_hashed(words, state, overflow, cc, key)
        return
    add_hashed(words, state, overflow, cc, key)


@njit(cache=True, nogil=True, inline="always")
def add_hashed(words, state, overflow, cc, key):
    """Register update for a hashed key that survived the early-exit mask.

    Callers must guarantee the register array is live (drivers always
    preallocate; the micro-phase is handled in add_one).  Single-exit so
    the hot loops stay branch-cheap after inlining.
    """
    h = cc[CC_HIST_BITS]
    minz = np.int64(state[ST_MINZ])
    if cc[CC_MICRO] == 1 and minz == 0:
        bit = _U1 << micro_bit_index(key, cc)
        if state[ST_MICRO] & bit == _U0:
            state[ST_MICRO] |= bit
            state[ST_VERSION] += _U1

    bucket, absnlz = split_key(key, cc)
    rel = absnlz - minz
    rpw = cc[CC_RPW]
    fbits = cc[CC_FIELD_BITS]
    max_stored = cc[CC_MAX_STORED]

    if h == 0:
        if cc[CC_DYNAMIC] == 1:
            up = rel + 1
        else:
            up = absnlz + 1
        if up > 0:
            if up > max_stored:
                up = max_stored
            cur = np.int64(reg_get(words, bucket, rpw, fbits))
            if up > cur:
                reg_set(words, bucket, rpw, fbits, np.uint64(up))
                state[ST_VERSION] += _U1
                if cur <= 1 and up >= 2:
                    state[ST_MZCOUNT] -= _U1
                    if cc[CC_DYNAMIC] == 1 and state[ST_MZCOUNT] == _U0:
                        promote_until_stable(words, state, overflow, cc)
    else:
        if rel >= -h:
            hmask = (_U1 << np.uint64(h)) - _U1
            val = reg_get(words, bucket, rpw, fbits)
            snlz = np.int64(val >> np.uint64(h))
            if snlz == 0:
                if rel >= 0:
                    up = rel + 1
                    if up > max_stored:
                        up = max_stored
                    reg_set(words, bucket, rpw, fbits, np.uint64(up) << np.uint64(h))
                    state[ST_VERSION] += _U1
                    if up >= 2:
                        state[ST_MZCOUNT] -= _U1
                        if state[ST_MZCOUNT] == _U0:
                            promote_until_stable(words, state, overflow, cc)
            else:
                d = (rel + 1) - snlz
                if d > 0:
                    new_snlz = snlz + d
                    if new_snlz > max_stored:
                        new_snlz = max_stored
                    ad = new_snlz - snlz
                    if ad > 0:
                        hist = val & hmask
                        hist = ((hist << np.uint64(ad)) | (_U1 << np.uint64(ad - 1))) & hmask
                        reg_set(
                            words, bucket, rpw, fbits,
                            (np.uint64(new_snlz) << np.uint64(h)) | hist,
                        )
                        state[ST_VERSION] += _U1
                        if snlz <= 1 and new_snlz >= 2:
                            state[ST_MZCOUNT] -= _U1
                            if state[ST_MZCOUNT] == _U0:
                                promote_until_stable(words, state, overflow, cc)
                elif d < 0:
                    bk = -d
                    if bk <= h:
                        bit = _U1 << np.uint64(bk - 1)
                        if val & bit == _U0:
                            reg_set(words, bucket, rpw, fbits, val | bit)
                            state[ST_VERSION] += _U1


@njit(cache=True, nogil=True)
def add_many(words, state, overflow, cc, values):
    for i in range(values.shape[0]):
        add_one(words, state, overflow, cc, values[i])


# ---------------------------------------------------------------------------
# profile extraction
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def extract_profile(words, state, overflow, cc, counts, hist, cum):
    """Fill per-rank counts / history-state counts / corrected cumulative."""
    counts[:] = 0.0
    hist[:] = 0.0
    b = cc[CC_B]
    rpw = cc[CC_RPW]
    fbits = cc[CC_FIELD_BITS]
    h = cc[CC_HIST_BITS]
    fmask = (_U1 << np.uint64(fbits)) - _U1
    hmask = (_U1 << np.uint64(h)) - _U1
    minz = np.int64(state[ST_MINZ])
    j = 0
    for wi in range(words.shape[0]):
        w = np.uint64(words[wi])
        for _r in range(rpw):
            if j >= b:
                break
            val = w & fmask
            w >>= np.uint64(fbits)
            snlz = np.int64(val >> np.uint64(h))
            if snlz > 0:
                a = minz + snlz - 1
                counts[a] += 1.0
                if h > 0:
                    hist[a, np.int64(val & hmask)] += 1.0
            j += 1
    cum[NLZ_SLOTS] = 0.0
    for a in range(NLZ_SLOTS - 1, -1, -1):
        cum[a] = cum[a + 1] + counts[a]
    if cc[CC_OVERFLOW] == 1:
        correct_cum_core(cum, overflow, float(b))
    return popcount64(state[ST_MICRO])


# ---------------------------------------------------------------------------
# stream feeding (tests, merge trials, benchmarks)
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True, inline="always")
def draw_unique(s, tab_vals, tab_stamp, stamp):
    """Next PRNG value not previously drawn under this stamp."""
    mask = tab_vals.shape[0] - 1
    while True:
        v = xoshiro_next(s)
        idx = np.int64(v & np.uint64(mask))
        dup = False
        while tab_stamp[idx] == stamp:
            if tab_vals[idx] == v:
                dup = True
                break
            idx = (idx + 1) & mask
        if dup:
            continue
        tab_stamp[idx] = stamp
        tab_vals[idx] = v
        return v


@njit(cache=True, nogil=True)
def feed_stream(words, state, overflow, cc, seed, n):
    """Feed n raw PRNG values (duplicates possible but negligible)."""
    s = np.empty(4, dtype=np.uint64)
    xoshiro_seed(seed, s)
    ee_hot = cc[CC_DYNAMIC] == 1 and cc[CC_EE] == 1
    adds = 0
    rejs = 0
    emask = state[ST_EEMASK]
    for _ in range(n):
        key = mix13(xoshiro_next(s))
        adds += 1
        if ee_hot and key > emask:
            rejs += 1
        else:
            add_hashed(words, state, overflow, cc, key)
            emask = state[ST_EEMASK]
    state[ST_ADDS] += np.uint64(adds)
    state[ST_EEREJ] += np.uint64(rejs)


@njit(cache=True, nogil=True)
def fill_unique_values(seed, out, tab_vals, tab_stamp, stamp):
    s = np.empty(4, dtype=np.uint64)
    xoshiro_seed(seed, s)
    for i in range(out.shape[0]):
        out[i] = draw_unique(s, tab_vals, tab_stamp, stamp)


@njit(cache=True, nogil=True)
def fill_values(seed, out):
    s = np.empty(4, dtype=np.uint64)
    xoshiro_seed(seed, s)
    for i in range(out.shape[0]):
        out[i] = xoshiro_next(s)


@njit(cache=True, nogil=True)
def feed_values(words, state, overflow, cc, values):
    ee_hot = cc[CC_DYNAMIC] == 1 and cc[CC_EE] == 1
    adds = 0
    rejs = 0
    emask = state[ST_EEMASK]
    for i in range(values.shape[0]):
        key = mix13(values[i])
        adds += 1
        if ee_hot and key > emask:
            rejs += 1
        else:
            add_hashed(words, state, overflow, cc, key)
            emask = state[ST_EEMASK]
    state[ST_ADDS] += np.uint64(adds)
    state[ST_EEREJ] += np.uint64(rejs)


@njit(cache=True, nogil=True)
def feed_roundrobin(words2, state2, overflow2, cc, values, ways):
    ee_hot = cc[CC_DYNAMIC] == 1 and cc[CC_EE] == 1
    for i in range(values.shape[0]):
        w = i % ways
        key = mix13(values[i])
        state2[w, ST_ADDS] += _U1
        if ee_hot and key > state2[w, ST_EEMASK]:
            state2[w, ST_EEREJ] += _U1
        else:
            add_hashed(words2[w], state2[w], overflow2[w], cc, key)


@njit(cache=True, nogil=True)
def bench_loop(words2, state2, overflow2, cc, seed, total_adds):
    """Round-robin add loop across simultaneous instances, PRNG in-loop."""
    s = np.empty(4, dtype=np.uint64)
    xoshiro_seed(seed, s)
    n = words2.shape[0]
    ee_hot = cc[CC_DYNAMIC] == 1 and cc[CC_EE] == 1
    for i in range(total_adds):
        key = mix13(xoshiro_next(s))
        w = i % n
        state2[w, ST_ADDS] += _U1
        if ee_hot and key > state2[w, ST_EEMASK]:
            state2[w, ST_EEREJ] += _U1
        else:
            add_hashed(words2[w], state2[w], overflow2[w], cc, key)


@njit(cache=True, nogil=True)
def bench_loop_buffer(words2, state2, overflow2, cc, values):
    n = words2.shape[0]
    ee_hot = cc[CC_DYNAMIC] == 1 and cc[CC_EE] == 1
    for i in range(values.shape[0]):
        key = mix13(values[i])
        w = i % n
        state2[w, ST_ADDS] += _U1
        if ee_hot and key > state2[w, ST_EEMASK]:
            state2[w, ST_EEREJ] += _U1
        else:
            add_hashed(words2[w], state2[w], overflow2[w], cc, key)


# ---------------------------------------------------------------------------
# calibration drivers
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def run_high_chunk(
    cc,
    inst_lo,
    inst_hi,
    master_seed,
    thresholds,
    mcodes,
    muse,
    mparams,
    cf_keys,
    cf_fact,
    cf_len,
    cf_max,
    cf2_keys,
    cf2_fact,
    cf2_len,
    cf2_max,
    hc,
    acc,
    words,
    state,
    overflow,
    counts,
    hist,
    cum,
    tab_vals,
    tab_stamp,
):
    """High-complexity driver: all-unique streams, one instance at a time.

    acc[cp, m, :] accumulates (signed, abs, squared, raw-estimate) sums per
    checkpoint per method, one sample per instance per checkpoint.
    """
    ncp = thresholds.shape[0]
    nm = mcodes.shape[0]
    b = float(cc[CC_B])
    nlz_bits = cc[CC_NLZ_BITS]
    h = cc[CC_HIST_BITS]
    dll3 = cc[CC_OVERFLOW]
    maxcard = thresholds[ncp - 1]
    ee_hot = cc[CC_DYNAMIC] == 1 and cc[CC_EE] == 1
    s = np.empty(4, dtype=np.uint64)
    for inst in range(inst_lo, inst_hi):
        reset_state(words, state, overflow, cc, True)
        xoshiro_seed(instance_seed(np.uint64(master_seed), inst), s)
        stamp = inst + 1
        cp = 0
        n_adds = 0
        n_rej = 0
        emask = state[ST_EEMASK]
        for j in range(1, maxcard + 1):
            v = draw_unique(s, tab_vals, tab_stamp, stamp)
            key = mix13(v)
            n_adds += 1
            if ee_hot and key > emask:
                n_rej += 1
            else:
                add_hashed(words, state, overflow, cc, key)
                emask = state[ST_EEMASK]
            if j == thresholds[cp]:
                state[ST_ADDS] += np.uint64(n_adds)
                state[ST_EEREJ] += np.uint64(n_rej)
                n_adds = 0
                n_rej = 0
                micro_pop = float(extract_profile(words, state, overflow, cc, counts, hist, cum))
                mz = np.int64(state[ST_MINZ])
                truec = float(j)
                for m in range(nm):
                    est = estimate_method_core(
                        mcodes[m],
                        muse[m],
                        mparams[m],
                        b,
                        mz,
                        nlz_bits,
                        h,
                        cum,
                        micro_pop,
                        hist,
                        hc,
                        cf_keys[m, : cf_len[m]],
                        cf_fact[m, : cf_len[m]],
                        cf_max[m],
                        cf2_keys[m, : cf2_len[m]],
                        cf2_fact[m, : cf2_len[m]],
                        cf2_max[m],
                        dll3,
                    )
                    err = (est - truec) / truec
                    acc[cp, m, 0] += err
                    acc[cp, m, 1] += abs(err)
                    acc[cp, m, 2] += err * err
                    acc[cp, m, 3] += est
                cp += 1
                if cp == ncp:
                    break


@njit(cache=True, nogil=True)
def run_hist_bias_chunk(
    cc,
    inst_lo,
    inst_hi,
    master_seed,
    thresholds,
    state_sum,
    state_n,
    words,
    state,
    overflow,
    counts,
    hist,
    cum,
    tab_vals,
    tab_stamp,
):
    """Accumulate per-history-state difference-value ratios.

    For every filled register the frame-relative weight 2^-(rank - frame
    mean rank) is summed per state; the correction table is derived from
    the log of the per-state mean weight, which equalizes each state's
    expected contribution to the harmonic sums (an additive rank shift has
    a multiplicative effect there, so averaging must happen in weight
    space, not rank space).  Only steady-state checkpoints (past the first
    promotion) contribute.
    """
    ncp = thresholds.shape[0]
    maxcard = thresholds[ncp - 1]
    ns = state_sum.shape[0]
    ee_hot = cc[CC_DYNAMIC] == 1 and cc[CC_EE] == 1
    # only frames where every register's window is fully below its rank
    # contribute; truncated windows (rank < floor + h) carry degenerate
    # states that would pollute the per-state weights
    min_frame = np.uint64(cc[CC_HIST_BITS])
    s = np.empty(4, dtype=np.uint64)
    for inst in range(inst_lo, inst_hi):
        reset_state(words, state, overflow, cc, True)
        xoshiro_seed(instance_seed(np.uint64(master_seed), inst), s)
        stamp = inst + 1
        cp = 0
        emask = state[ST_EEMASK]
        for j in range(1, maxcard + 1):
            v = draw_unique(s, tab_vals, tab_stamp, stamp)
            key = mix13(v)
            if not (ee_hot and key > emask):
                add_hashed(words, state, overflow, cc, key)
                emask = state[ST_EEMASK]
            if j == thresholds[cp]:
                if state[ST_MINZ] >= min_frame:
                    extract_profile(words, state, overflow, cc, counts, hist, cum)
                    total = cum[0]
                    if total > 0.0:
                        sr = 0.0
                        for a in range(NLZ_SLOTS):
                            if counts[a] > 0.0:
                                sr += counts[a] * a
                        frame_mean = sr / total
                        for a in range(NLZ_SLOTS):
                            for st in range(ns):
                                c = hist[a, st]
                                if c > 0.0:
                                    state_sum[st] += c * (2.0 ** (frame_mean - a))
                                    state_n[st] += c
                cp += 1
                if cp == ncp:
                    break


@njit(cache=True, nogil=True, inline="always")
def skew_index(m, pool_size):
    """Unit-interval pool index: floor(m / 2^64 * poolSize)."""
    idx = int(float(m) * (1.0 / 18446744073709551616.0) * pool_size)
    if idx >= pool_size:
        idx = pool_size - 1
    return idx


@njit(cache=True, nogil=True)
def run_low_chunk(
    cc,
    inst_lo,
    inst_hi,
    master_seed,
    pool,
    iterations,
    thresholds,
    mcodes,
    muse,
    mparams,
    cf_keys,
    cf_fact,
    cf_len,
    cf_max,
    cf2_keys,
    cf2_fact,
    cf2_len,
    cf2_max,
    hc,
    acc,
    nacc,
    words,
    state,
    overflow,
    counts,
    hist,
    cum,
    seen,
    est_cache,
    ndraw,
):
    """Low-complexity driver: skewed draws with replacement from a fixed pool.

    Every add is recorded while the exact cardinality sits at a reporting
    threshold; estimates are recomputed only when the sketch state changed.
    """
    ncp = thresholds.shape[0]
    nm = mcodes.shape[0]
    b = float(cc[CC_B])
    nlz_bits = cc[CC_NLZ_BITS]
    h = cc[CC_HIST_BITS]
    dll3 = cc[CC_OVERFLOW]
    psize = pool.shape[0]
    total = psize * iterations
    ee_hot = cc[CC_DYNAMIC] == 1 and cc[CC_EE] == 1
    s = np.empty(4, dtype=np.uint64)
    for inst in range(inst_lo, inst_hi):
        reset_state(words, state, overflow, cc, True)
        seen[:] = _U0
        xoshiro_seed(instance_seed(np.uint64(master_seed), inst), s)
        card = 0
        cp = 0
        last_version = _UFULL
        emask = state[ST_EEMASK]
        for _ in range(total):
            u = xoshiro_next(s)
            for _k in range(ndraw - 1):
                u2 = xoshiro_next(s)
                if u2 < u:
                    u = u2
            idx = skew_index(u, psize)
            v = pool[idx]
            w = idx >> 6
            bit = _U1 << np.uint64(idx & 63)
            if seen[w] & bit == _U0:
                seen[w] |= bit
                card += 1
            key = mix13(v)
            if not (ee_hot and key > emask):
                add_hashed(words, state, overflow, cc, key)
                emask = state[ST_EEMASK]
            while cp < ncp and thresholds[cp] < card:
                cp += 1
            if cp < ncp and card == thresholds[cp]:
                if state[ST_VERSION] != last_version:
                    micro_pop = float(
                        extract_profile(words, state, overflow, cc, counts, hist, cum)
                    )
                    mz = np.int64(state[ST_MINZ])
                    for m in range(nm):
                        est_cache[m] = estimate_method_core(
                            mcodes[m],
                            muse[m],
                            mparams[m],
                            b,
                            mz,
                            nlz_bits,
                            h,
                            cum,
                            micro_pop,
                            hist,
                            hc,
                            cf_keys[m, : cf_len[m]],
                            cf_fact[m, : cf_len[m]],
                            cf_max[m],
                            cf2_keys[m, : cf2_len[m]],
                            cf2_fact[m, : cf2_len[m]],
                            cf2_max[m],
                            dll3,
                        )
                    last_version = state[ST_VERSION]
                truec = float(card)
                for m in range(nm):
                    err = (est_cache[m] - truec) / truec
                    acc[cp, m, 0] += err
                    acc[cp, m, 1] += abs(err)
                    acc[cp, m, 2] += err * err
                    acc[cp, m, 3] += est_cache[m]
                nacc[cp] += 1.0
