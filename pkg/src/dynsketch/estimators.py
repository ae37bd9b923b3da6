"""Estimation methods mapping a register profile to a cardinality estimate.

The numerical cores are jitted so the simulation drivers can evaluate them
per checkpoint at full speed; the public wrappers operate on
:class:`~dynsketch.profiles.NlzProfile`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .correction import CfTable, HistoryCorrection, cf_apply_core
from .profiles import NLZ_SLOTS, NlzProfile

# Method codes used by the jitted dispatch.
M_LC = 1
M_LCMIN = 2
M_DLC = 3
M_DLCBEST = 4
M_MEAN = 5
M_HMEAN = 6
M_GMEAN = 7
M_HLL = 8
M_HYBRID = 9
M_HC = 10
M_LDLC = 11
M_MICRO = 12

_EMPTY_F8 = np.zeros(0, dtype=np.float64)


@dataclass(frozen=True)
class BlendParams:
    """Tuning constants for the tier blend and the hybrid crossover.

    Fractions are relative to the bucket count.  None of these are
    load-bearing: the tier blend's accuracy comes from the tiling of tier
    estimates, and the hybrid merely mixes two good inputs.
    """

    alpha: float = 9.0
    v_target_frac: float = 0.25
    lcmin_zone_low: float = 0.3
    lcmin_zone_high: float = 0.5
    hybrid_low: float = 0.2
    hybrid_high: float = 5.0

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.alpha,
                self.v_target_frac,
                self.lcmin_zone_low,
                self.lcmin_zone_high,
                self.hybrid_low,
                self.hybrid_high,
            ],
            dtype=np.float64,
        )


DEFAULT_PARAMS = BlendParams()
_DEFAULT_PARAMS_ARR = DEFAULT_PARAMS.as_array()


# ---------------------------------------------------------------------------
# jitted cores
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def micro_est_core(micro_pop):
    d = 64.0 - micro_pop
    if d < 0.5:
        d = 0.5
    return 64.0 * math.log(64.0 / d)


@njit(cache=True, nogil=True)
def lc_core(b, count, micro_pop):
    """Linear Counting with the collision-word adjustment.

    The micro-estimate floor applies only while the register array carries
    nothing (the lazy micro-phase); once registers hold data the plain LC
    is strictly better informed and the floor would only add upward noise.
    """
    filled = count if count > micro_pop else micro_pop
    veff = b - filled
    if veff < 0.5:
        veff = 0.5
    est = b * math.log(b / veff)
    if count <= 0.0:
        me = micro_est_core(micro_pop)
        if me > est:
            return me
    return est


@njit(cache=True, nogil=True)
def lcmin_core(b, mz, count, micro_pop):
    if mz == 0:
        return lc_core(b, count, micro_pop)
    v = b - count
    if v < 0.5:
        v = 0.5
    return (2.0 ** mz) * b * math.log(b / v)


@njit(cache=True, nogil=True)
def dlc_tier_core(b, cum, t):
    """Single-tier estimate; -1 flags an unusable tier (no empty slots)."""
    vt = b - cum[t]
    if vt <= 0.0:
        return -1.0
    return (2.0 ** t) * b * math.log(b / vt)


@njit(cache=True, nogil=True)
def dlc_best_core(b, mz, nlz_bits, cum):
    tmax = mz + (1 << nlz_bits) - 2
    if tmax > NLZ_SLOTS - 1:
        tmax = NLZ_SLOTS - 1
    target = 0.25 * b
    dmin = 1e300
    for t in range(mz, tmax + 1):
        vt = b - cum[t]
        if vt <= 0.0 or vt >= b:
            continue
        d = abs(vt - target)
        if d < dmin:
            dmin = d
    if dmin >= 1e300:
        return -1.0
    tol = 1e-9
    total = 0.0
    n = 0
    for t in range(mz, tmax + 1):
        vt = b - cum[t]
        if vt <= 0.0 or vt >= b:
            continue
        if abs(abs(vt - target) - dmin) <= tol:
            total += (2.0 ** t) * b * math.log(b / vt)
            n += 1
    return total / n


@njit(cache=True, nogil=True)
def dlc_blend_core(b, mz, nlz_bits, cum, micro_pop, alpha, vt_frac, zlo, zhi):
    """Occupancy-weighted log-space blend of the usable tier estimates.

    High-V states hand over to the tier-compensated LC smoothly: above the
    zone the blend is skipped entirely, inside it the two are mixed in log
    space by the position of V in the zone.
    """
    count = cum[0]
    v = b - count
    lcm = lcmin_core(b, mz, count, micro_pop)
    if v > zhi * b:
        return lcm
    vtarget = vt_frac * b
    tmax = mz + (1 << nlz_bits) - 2
    if tmax > NLZ_SLOTS - 1:
        tmax = NLZ_SLOTS - 1
    sw = 0.0
    swl = 0.0
    for t in range(mz, tmax + 1):
        vt = b - cum[t]
        if vt <= 0.0 or vt >= b:
            continue
        est = (2.0 ** t) * b * math.log(b / vt)
        w = math.exp(-alpha * abs(vt - vtarget) / b)
        sw += w
        swl += w * math.log(est)
    if sw <= 0.0:
        return lcm
    blend = math.exp(swl / sw)
    if v > zlo * b and lcm > 0.0:
        u = (v - zlo * b) / ((zhi - zlo) * b)
        return math.exp((1.0 - u) * math.log(blend) + u * math.log(lcm))
    return blend


@njit(cache=True, nogil=True)
def mean_sums_core(cum, hist, hc, use_hist):
    """(count, sum 2^-rank, sum rank) over filled registers.

    With history corrections active, each register's rank is shifted by
    its state's additive entry before both sums.  Registers whose window
    would reach below rank zero (rank < h) carry degenerate states, so
    they stay uncorrected.
    """
    count = cum[0]
    s = 0.0
    sr = 0.0
    if use_hist:
        ns = hist.shape[1]
        h = 0
        while (1 << h) < ns:
            h += 1
        for a in range(NLZ_SLOTS):
            for st in range(ns):
                c = hist[a, st]
                if c > 0.0:
                    eff = a + hc[st] if a >= h else float(a)
                    s += c * (2.0 ** (-eff))
                    sr += c * eff
    else:
        for a in range(NLZ_SLOTS):
            c = cum[a] - cum[a + 1]
            if c != 0.0:
                s += c * (2.0 ** (-a))
                sr += c * a
    return count, s, sr


@njit(cache=True, nogil=True)
def mean_core(b, cum, hist, hc, use_hist):
    count, s, _ = mean_sums_core(cum, hist, hc, use_hist)
    if count <= 0.0 or s <= 0.0:
        return -1.0
    return ((count + b) / (2.0 * b)) * 2.0 * count * count / s


@njit(cache=True, nogil=True)
def hmean_core(b, cum, hist, hc, use_hist):
    count, s, _ = mean_sums_core(cum, hist, hc, use_hist)
    if count <= 0.0 or s <= 0.0:
        return -1.0
    alpha_m = 0.7213 / (1.0 + 1.079 / b)
    return alpha_m * 2.0 * count * count / s


@njit(cache=True, nogil=True)
def gmean_core(b, cum, hist, hc, use_hist):
    count, _, sr = mean_sums_core(cum, hist, hc, use_hist)
    if count <= 0.0:
        return -1.0
    mean_rank = sr / count
    return 2.0 * count * (2.0 ** mean_rank) * ((count + b) / (2.0 * b))


@njit(cache=True, nogil=True)
def hll_core(b, cum, micro_pop):
    """Baseline estimator with the classic LC-to-harmonic handoff.

    Linear Counting serves while the raw harmonic estimate reads below
    2.5B; above that the raw harmonic value is returned as-is.  The raw
    harmonic (the filled-register occupancy form; identical to the B^2
    form once no register is empty) is biased high near its own threshold
    crossing, which is precisely what produces the characteristic
    transition bulge: the switch fires while the true count is still near
    1.5-2x the bucket count and hands over to an estimator that reads
    ~30-40% high there, decaying as occupancy completes.
    """
    count = cum[0]
    v = b - count
    s = 0.0
    for a in range(NLZ_SLOTS):
        c = cum[a] - cum[a + 1]
        if c != 0.0:
            s += c * (2.0 ** (-a))
    if count <= 0.0 or s <= 0.0:
        return lc_core(b, count, micro_pop)
    alpha_m = 0.7213 / (1.0 + 1.079 / b)
    raw = alpha_m * 2.0 * count * count / s
    if v > 0.0 and raw < 2.5 * b:
        return lc_core(b, count, micro_pop)
    return raw


@njit(cache=True, nogil=True)
def history_lc_core(b, mz, h, hist, level, alpha, u_target_frac):
    """LC-family estimate built from sub-rank history presence bits.

    A history bit is an exact presence indicator for one rank level in one
    bucket, so each level supports an independent LC estimate over the
    registers whose history window covers it.  Levels need signal on both
    sides (at least two set and two unset slots) to contribute; the usable
    levels combine by an occupancy-proximity weighted arithmetic mean
    (arithmetic, not log-space, to keep the blend of unbiased level
    estimates unbiased).  ``level >= 0`` returns the single-level estimate
    instead.  Returns -1 when unusable.
    """
    if h <= 0:
        return -1.0
    if level < 0 and mz < 1:
        return -1.0  # no tier boundary yet; history carries no usable signal
    ns = hist.shape[1]
    vlo = mz - h
    if vlo < 0:
        vlo = 0
    vhi = mz + (1 << 4) - 2  # observers exist only up to the stored ceiling
    if vhi > NLZ_SLOTS - 2:
        vhi = NLZ_SLOTS - 2
    if level >= 0:
        vlo = level
        vhi = level
    sw = 0.0
    swe = 0.0
    for v in range(vlo, vhi + 1):
        slots = 0.0
        occ = 0.0
        amax = v + h
        if amax > NLZ_SLOTS - 1:
            amax = NLZ_SLOTS - 1
        for a in range(v + 1, amax + 1):
            i = a - v - 1
            for st in range(ns):
                c = hist[a, st]
                if c > 0.0:
                    slots += c
                    if (st >> i) & 1:
                        occ += c
        if slots <= 0.0:
            continue
        u = slots - occ
        if level >= 0:
            if u < 0.5:
                u = 0.5
            return math.log(slots / u) * b * (2.0 ** (v + 1))
        if occ < 2.0 or u < 2.0:
            continue  # one-sided levels are censored and bias upward
        est = math.log(slots / u) * b * (2.0 ** (v + 1))
        w = (slots / b) * math.exp(-alpha * abs(u / slots - u_target_frac))
        sw += w
        swe += w * est
    if sw > 0.0:
        return swe / sw
    return -1.0


@njit(cache=True, nogil=True)
def estimate_method_core(
    code,
    use_hist,
    params,
    b,
    mz,
    nlz_bits,
    h,
    cum,
    micro_pop,
    hist,
    hc,
    cf_keys,
    cf_fact,
    cf_max,
    cf2_keys,
    cf2_fact,
    cf2_max,
    dll3,
):
    """Dispatch one method over an extracted profile.

    ``cf_*`` is the method's own table, ``cf2_*`` the input (mean) table
    used by the hybrid blend.  Empty key arrays mean no correction.
    """
    alpha = params[0]
    vt_frac = params[1]
    zlo = params[2]
    zhi = params[3]
    hlo = params[4]
    hhi = params[5]

    seed = -1.0
    if dll3:
        seed = dlc_blend_core(b, mz, nlz_bits, cum, micro_pop, alpha, vt_frac, zlo, zhi)

    if code == M_LC:
        return lc_core(b, cum[0], micro_pop)
    if code == M_LCMIN:
        return lcmin_core(b, mz, cum[0], micro_pop)
    if code == M_DLC:
        return dlc_blend_core(b, mz, nlz_bits, cum, micro_pop, alpha, vt_frac, zlo, zhi)
    if code == M_DLCBEST:
        return dlc_best_core(b, mz, nlz_bits, cum)
    if code == M_MICRO:
        return micro_est_core(micro_pop)
    if code == M_HLL:
        return hll_core(b, cum, micro_pop)
    if code == M_MEAN:
        raw = mean_core(b, cum, hist, hc, use_hist)
        if raw < 0.0:
            return lc_core(b, cum[0], micro_pop)
        return cf_apply_core(cf_keys, cf_fact, cf_max, raw, seed)
    if code == M_HMEAN:
        raw = hmean_core(b, cum, hist, hc, use_hist)
        if raw < 0.0:
            return lc_core(b, cum[0], micro_pop)
        return cf_apply_core(cf_keys, cf_fact, cf_max, raw, seed)
    if code == M_GMEAN:
        raw = gmean_core(b, cum, hist, hc, use_hist)
        if raw < 0.0:
            return lc_core(b, cum[0], micro_pop)
        return cf_apply_core(cf_keys, cf_fact, cf_max, raw, seed)
    if code == M_HYBRID:
        lcm = lcmin_core(b, mz, cum[0], micro_pop)
        if lcm <= hlo * b:
            blended = lcm
        else:
            raw_mean = mean_core(b, cum, hist, hc, use_hist)
            if raw_mean < 0.0:
                blended = lcm
            else:
                mean_cf = cf_apply_core(cf2_keys, cf2_fact, cf2_max, raw_mean, seed)
                if lcm >= hhi * b:
                    blended = mean_cf
                else:
                    t = math.log(lcm / (hlo * b)) / math.log(hhi / hlo)
                    blended = (1.0 - t) * lcm + t * mean_cf
        return cf_apply_core(cf_keys, cf_fact, cf_max, blended, seed)
    if code == M_HC:
        return history_lc_core(b, mz, h, hist, -1, alpha, vt_frac)
    if code == M_LDLC:
        d = dlc_blend_core(b, mz, nlz_bits, cum, micro_pop, alpha, vt_frac, zlo, zhi)
        hcv = history_lc_core(b, mz, h, hist, -1, alpha, vt_frac)
        if hcv < 0.0:
            return d
        return 0.6 * d + 0.4 * hcv
    return -1.0


# ---------------------------------------------------------------------------
# profile-level wrappers
# ---------------------------------------------------------------------------

def _hist_or_dummy(profile: NlzProfile) -> np.ndarray:
    if profile.hist_counts is not None:
        return profile.hist_counts
    return np.zeros((NLZ_SLOTS, 1), dtype=np.float64)


def micro_estimate(micro_popcount: int) -> float:
    return float(micro_est_core(float(micro_popcount)))


def lc(p: NlzProfile) -> float:
    return float(lc_core(float(p.bucket_count), p.filled, float(p.micro_popcount)))


def lcmin(p: NlzProfile) -> float:
    return float(
        lcmin_core(float(p.bucket_count), p.min_zeros, p.filled, float(p.micro_popcount))
    )


def dlc_tier(p: NlzProfile, t: int) -> float:
    if t < p.min_zeros:
        raise ValueError("tier below the current floor")
    est = dlc_tier_core(float(p.bucket_count), p.cum, t)
    if est < 0.0:
        raise ValueError(f"tier {t} unusable: no empty buckets at that tier")
    return float(est)


def dlc_best(p: NlzProfile) -> float:
    est = dlc_best_core(float(p.bucket_count), p.min_zeros, p.nlz_bits, p.cum)
    if est < 0.0:
        raise ValueError("no usable tier")
    return float(est)


def dlc_blend(p: NlzProfile, params: BlendParams = DEFAULT_PARAMS) -> float:
    return float(
        dlc_blend_core(
            float(p.bucket_count),
            p.min_zeros,
            p.nlz_bits,
            p.cum,
            float(p.micro_popcount),
            params.alpha,
            params.v_target_frac,
            params.lcmin_zone_low,
            params.lcmin_zone_high,
        )
    )


def _plain(core, p: NlzProfile, history: HistoryCorrection | None = None) -> float:
    use_hist = history is not None and p.hist_counts is not None
    hc = history.per_state if use_hist else _EMPTY_F8
    est = core(float(p.bucket_count), p.cum, _hist_or_dummy(p), hc, use_hist)
    if est < 0.0:
        raise ValueError("undefined on an empty profile")
    return float(est)


def mean(p: NlzProfile, history: HistoryCorrection | None = None) -> float:
    return _plain(mean_core, p, history)


def hmean(p: NlzProfile, history: HistoryCorrection | None = None) -> float:
    return _plain(hmean_core, p, history)


def gmean(p: NlzProfile, history: HistoryCorrection | None = None) -> float:
    return _plain(gmean_core, p, history)


def hll(p: NlzProfile) -> float:
    return float(hll_core(float(p.bucket_count), p.cum, float(p.micro_popcount)))


def _cf_arrays(table: CfTable | None):
    if table is None or len(table.keys) == 0:
        return _EMPTY_F8, _EMPTY_F8, 0.0
    return table.keys_ln, table.factors, table.table_max


def method_name(base: str, history_bits: int = 0) -> str:
    return f"{base}+{history_bits}" if history_bits else base


def hybrid(
    p: NlzProfile,
    cf: dict | None = None,
    params: BlendParams = DEFAULT_PARAMS,
    history: HistoryCorrection | None = None,
) -> float:
    """Logarithmic blend of LCmin and the CF-corrected occupancy mean.

    ``cf`` maps method names to tables; the blend input uses the mean table
    (``mean`` or ``mean+h``) and the result is corrected by the hybrid's
    own table when present.  With ``history`` set and history counts in the
    profile, per-state corrections shift each register's rank (hybrid+n).
    """
    use_hist = history is not None and p.hist_counts is not None
    h = p.history_bits if use_hist else 0
    cf = cf or {}
    own = cf.get(method_name("hybrid", h))
    aux = cf.get(method_name("mean", h))
    k1, f1, m1 = _cf_arrays(own)
    k2, f2, m2 = _cf_arrays(aux)
    hc = history.per_state if use_hist else _EMPTY_F8
    return float(
        estimate_method_core(
            M_HYBRID,
            use_hist,
            params.as_array(),
            float(p.bucket_count),
            p.min_zeros,
            p.nlz_bits,
            p.history_bits,
            p.cum,
            float(p.micro_popcount),
            _hist_or_dummy(p),
            hc,
            k1,
            f1,
            m1,
            k2,
            f2,
            m2,
            p.overflow_corrected,
        )
    )


def hybrid_n(
    p: NlzProfile,
    history: HistoryCorrection,
    cf: dict | None = None,
    params: BlendParams = DEFAULT_PARAMS,
) -> float:
    if p.hist_counts is None:
        return hybrid(p, cf=cf, params=params)
    return hybrid(p, cf=cf, params=params, history=history)


def history_lc(
    p: NlzProfile, level: int | None = None, params: BlendParams = DEFAULT_PARAMS
) -> float:
    """History-only LC; blended across levels, or a single level if given."""
    est = history_lc_core(
        float(p.bucket_count),
        p.min_zeros,
        p.history_bits,
        _hist_or_dummy(p),
        -1 if level is None else level,
        params.alpha,
        params.v_target_frac,
    )
    if est < 0.0:
        raise ValueError("no informative history")
    return float(est)


def ldlc(p: NlzProfile, params: BlendParams = DEFAULT_PARAMS) -> float:
    """60/40 blend of the tier blend and history-only LC."""
    d = dlc_blend(p, params)
    try:
        h = history_lc(p, params=params)
    except ValueError:
        return d
    return 0.6 * d + 0.4 * h
