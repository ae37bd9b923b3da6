"""Simulation drivers, checkpoint schedules, error reports, benchmarks.

Both drivers are deterministic in (config, master seed, instance count):
instances are seeded independently by index and processed in fixed-size
chunks whose accumulators merge in chunk order, so results are bit-identical
for any worker count.
"""

from __future__ import annotations

import io
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .correction import CfTable, HistoryCorrection
from .estimators import (
    DEFAULT_PARAMS,
    BlendParams,
    M_DLC,
    M_DLCBEST,
    M_GMEAN,
    M_HC,
    M_HLL,
    M_HMEAN,
    M_HYBRID,
    M_LC,
    M_LCMIN,
    M_LDLC,
    M_MEAN,
    M_MICRO,
    method_name,
)
from .hashing import instance_seed
from .profiles import NLZ_SLOTS

CHUNK_INSTANCES = 25

_BASE_CODES = {
    "lc": M_LC,
    "lcmin": M_LCMIN,
    "dlc": M_DLC,
    "dlcbest": M_DLCBEST,
    "mean": M_MEAN,
    "hmean": M_HMEAN,
    "gmean": M_GMEAN,
    "hll": M_HLL,
    "hybrid": M_HYBRID,
    "hc": M_HC,
    "ldlc": M_LDLC,
    "micro": M_MICRO,
}

CF_CAPABLE = {"mean", "hmean", "gmean", "hybrid"}


def build_schedule(max_cardinality: int) -> np.ndarray:
    """Reporting thresholds: 1, then max(prev+1, ceil(prev*1.01)), inclusive."""
    if max_cardinality < 1:
        raise ValueError("max_cardinality must be >= 1")
    out = [1]
    while True:
        prev = out[-1]
        nxt = max(prev + 1, (prev * 101 + 99) // 100)
        if nxt > max_cardinality:
            break
        out.append(nxt)
    return np.array(out, dtype=np.int64)


@dataclass(frozen=True)
class LowComplexityConfig:
    cardinality: int
    iterations: int = 1
    skew_draws: int = 2  # pool index = min of this many draws

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.cardinality < 1:
            raise ValueError("cardinality must be >= 1")
        if self.skew_draws < 1:
            raise ValueError("skew_draws must be >= 1")


@dataclass
class MethodSpec:
    """One estimation method to evaluate, with its tables and tuning."""

    name: str
    code: int
    use_hist: bool = False
    params: BlendParams = DEFAULT_PARAMS
    cf_main: CfTable | None = None
    cf_aux: CfTable | None = None


def parse_method(name: str) -> tuple[str, int, bool]:
    """'hybrid+2' -> (base='hybrid', code, history-corrected=True)."""
    base = name
    use_hist = False
    if "+" in name:
        base, hstr = name.split("+", 1)
        if not hstr.isdigit():
            raise ValueError(f"bad method name {name!r}")
        use_hist = int(hstr) > 0
    if base not in _BASE_CODES:
        raise ValueError(f"unknown method {name!r}")
    return base, _BASE_CODES[base], use_hist


def resolve_methods(
    methods,
    cf_tables: dict | None = None,
    history: HistoryCorrection | None = None,
    params: BlendParams = DEFAULT_PARAMS,
    history_bits: int = 0,
) -> list[MethodSpec]:
    cf_tables = cf_tables or {}
    specs = []
    for m in methods:
        if isinstance(m, MethodSpec):
            specs.append(m)
            continue
        base, code, use_hist = parse_method(m)
        h = history_bits if use_hist else 0
        canonical = method_name(base, h)
        aux = None
        if base == "hybrid":
            aux = cf_tables.get(method_name("mean", h))
        specs.append(
            MethodSpec(
                name=canonical,
                code=code,
                use_hist=use_hist,
                params=params,
                cf_main=cf_tables.get(canonical),
                cf_aux=aux,
            )
        )
    return specs


@dataclass
class ErrorReport:
    """Per-checkpoint error statistics plus range aggregates for one method."""

    method: str
    cardinalities: np.ndarray  # int64
    mean_signed: np.ndarray
    mean_abs: np.ndarray
    stddev: np.ndarray
    n: np.ndarray

    @property
    def log_weighted(self) -> float:
        return float(self.mean_abs.mean()) if len(self.mean_abs) else 0.0

    @property
    def card_weighted(self) -> float:
        if not len(self.mean_abs):
            return 0.0
        c = self.cardinalities.astype(np.float64)
        return float((c * self.mean_abs).sum() / c.sum())

    @property
    def peak(self) -> float:
        return float(self.mean_abs.max()) if len(self.mean_abs) else 0.0

    def nearest(self, cardinality: float) -> int:
        """Index of the checkpoint closest (log-space) to a cardinality."""
        c = self.cardinalities.astype(np.float64)
        return int(np.argmin(np.abs(np.log(c) - np.log(cardinality))))

    def band(self, lo: float, hi: float) -> np.ndarray:
        c = self.cardinalities
        return np.nonzero((c >= lo) & (c <= hi))[0]


def _reports_from_acc(specs, schedule, acc, nacc) -> dict[str, ErrorReport]:
    reports = {}
    keep = nacc > 0
    cards = schedule[keep]
    for m, spec in enumerate(specs):
        n = nacc[keep]
        s = acc[keep, m, 0]
        a = acc[keep, m, 1]
        q = acc[keep, m, 2]
        mean_s = s / n
        mean_a = a / n
        var = q / n - mean_s * mean_s
        var[var < 0.0] = 0.0
        reports[spec.name] = ErrorReport(
            method=spec.name,
            cardinalities=cards.copy(),
            mean_signed=mean_s,
            mean_abs=mean_a,
            stddev=np.sqrt(var),
            n=n.copy(),
        )
    return reports


# ---------------------------------------------------------------------------
# method/table packing for the kernels
# ---------------------------------------------------------------------------

def _pack_tables(tables: list[CfTable | None]):
    lmax = max([1] + [len(t.keys) for t in tables if t is not None])
    m = len(tables)
    keys = np.zeros((m, lmax), dtype=np.float64)
    fact = np.zeros((m, lmax), dtype=np.float64)
    ln = np.zeros(m, dtype=np.int64)
    kmax = np.zeros(m, dtype=np.float64)
    for i, t in enumerate(tables):
        if t is None or not len(t.keys):
            continue
        ln[i] = len(t.keys)
        keys[i, : ln[i]] = t.keys_ln
        fact[i, : ln[i]] = t.factors
        kmax[i] = t.table_max
    return keys, fact, ln, kmax


def _pack_methods(specs: list[MethodSpec]):
    mcodes = np.array([s.code for s in specs], dtype=np.int64)
    muse = np.array([1 if s.use_hist else 0 for s in specs], dtype=np.int64)
    mparams = np.stack([s.params.as_array() for s in specs])
    cf1 = _pack_tables([s.cf_main for s in specs])
    cf2 = _pack_tables([s.cf_aux for s in specs])
    return mcodes, muse, mparams, cf1, cf2


def _scratch(cfg, max_cardinality: int | None = None):
    words = K.alloc_words(cfg)
    state = K.alloc_state()
    overflow = K.alloc_overflow()
    counts = np.zeros(NLZ_SLOTS, dtype=np.float64)
    h = cfg.history_bits
    hist = np.zeros((NLZ_SLOTS, 1 << h if h else 1), dtype=np.float64)
    cum = np.zeros(NLZ_SLOTS + 1, dtype=np.float64)
    tab_vals = tab_stamp = None
    if max_cardinality is not None:
        tsize = 1 << max(int(2 * max_cardinality - 1).bit_length(), 4)
        tab_vals = np.zeros(tsize, dtype=np.uint64)
        tab_stamp = np.zeros(tsize, dtype=np.int32)
    return words, state, overflow, counts, hist, cum, tab_vals, tab_stamp


def _chunks(instances: int):
    return [
        (lo, min(lo + CHUNK_INSTANCES, instances))
        for lo in range(0, instances, CHUNK_INSTANCES)
    ]


def _run_chunked(worker, instances: int, workers: int, acc_shape) -> list:
    """Run per-chunk tasks across threads; results keyed by chunk index."""
    chunks = _chunks(instances)
    results: list = [None] * len(chunks)
    if workers <= 1:
        worker(list(enumerate(chunks)), results)
    else:
        parts = [list(enumerate(chunks))[w::workers] for w in range(workers)]
        with ThreadPoolExecutor(max_workers=workers) as ex:
            futs = [ex.submit(worker, part, results) for part in parts if part]
            for f in futs:
                f.result()
    return results


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------

def run_high_complexity(
    cfg,
    methods,
    instances: int,
    max_cardinality: int,
    master_seed: int,
    workers: int = 1,
    cf_tables: dict | None = None,
    history: HistoryCorrection | None = None,
    params: BlendParams = DEFAULT_PARAMS,
    _return_acc: bool = False,
):
    """All-unique streams; one error sample per instance per checkpoint."""
    if instances < 1:
        raise ValueError("instances must be >= 1")
    specs = resolve_methods(methods, cf_tables, history, params, cfg.history_bits)
    schedule = build_schedule(max_cardinality)
    cc = K.build_cc(cfg)
    mcodes, muse, mparams, cf1, cf2 = _pack_methods(specs)
    hc = history.per_state if history is not None else np.zeros(1, dtype=np.float64)
    ncp = len(schedule)
    m = len(specs)

    def worker(my_chunks, results):
        words, state, overflow, counts, hist, cum, tv, ts = _scratch(cfg, max_cardinality)
        for ci, (lo, hi) in my_chunks:
            acc = np.zeros((ncp, m, 4), dtype=np.float64)
            K.run_high_chunk(
                cc, lo, hi, np.uint64(master_seed), schedule,
                mcodes, muse, mparams,
                cf1[0], cf1[1], cf1[2], cf1[3],
                cf2[0], cf2[1], cf2[2], cf2[3],
                hc, acc,
                words, state, overflow, counts, hist, cum, tv, ts,
            )
            results[ci] = acc

    results = _run_chunked(worker, instances, workers, None)
    acc = np.zeros((ncp, m, 4), dtype=np.float64)
    for part in results:
        acc += part
    nacc = np.full(ncp, float(instances))
    if _return_acc:
        return specs, schedule, acc, nacc
    return _reports_from_acc(specs, schedule, acc, nacc)


def run_low_complexity(
    cfg,
    methods,
    instances: int,
    lc_cfg: LowComplexityConfig,
    master_seed: int,
    workers: int = 1,
    cf_tables: dict | None = None,
    history: HistoryCorrection | None = None,
    params: BlendParams = DEFAULT_PARAMS,
):
    """Skewed duplicate-heavy streams drawn from a fixed unique pool."""
    if instances < 1:
        raise ValueError("instances must be >= 1")
    specs = resolve_methods(methods, cf_tables, history, params, cfg.history_bits)
    schedule = build_schedule(lc_cfg.cardinality)
    cc = K.build_cc(cfg)
    mcodes, muse, mparams, cf1, cf2 = _pack_methods(specs)
    hc = history.per_state if history is not None else np.zeros(1, dtype=np.float64)
    ncp = len(schedule)
    m = len(specs)

    pool = generate_pool(master_seed, lc_cfg.cardinality)
    seen_words = -(-lc_cfg.cardinality // 64)

    def worker(my_chunks, results):
        words, state, overflow, counts, hist, cum, _, _ = _scratch(cfg)
        seen = np.zeros(seen_words, dtype=np.uint64)
        est_cache = np.zeros(m, dtype=np.float64)
        for ci, (lo, hi) in my_chunks:
            acc = np.zeros((ncp, m, 4), dtype=np.float64)
            nacc = np.zeros(ncp, dtype=np.float64)
            K.run_low_chunk(
                cc, lo, hi, np.uint64(master_seed), pool,
                lc_cfg.iterations, schedule,
                mcodes, muse, mparams,
                cf1[0], cf1[1], cf1[2], cf1[3],
                cf2[0], cf2[1], cf2[2], cf2[3],
                hc, acc, nacc,
                words, state, overflow, counts, hist, cum, seen, est_cache,
                np.int64(lc_cfg.skew_draws),
            )
            results[ci] = (acc, nacc)

    results = _run_chunked(worker, instances, workers, None)
    acc = np.zeros((ncp, m, 4), dtype=np.float64)
    nacc = np.zeros(ncp, dtype=np.float64)
    for part_acc, part_n in results:
        acc += part_acc
        nacc += part_n
    return _reports_from_acc(specs, schedule, acc, nacc)


POOL_STREAM_INDEX = 0x706F6F6C  # distinct seeding lane for the shared pool


def generate_pool(master_seed: int, size: int) -> np.ndarray:
    """The fixed array of unique 64-bit values shared by all instances."""
    out = np.zeros(size, dtype=np.uint64)
    tsize = 1 << max(int(2 * size - 1).bit_length(), 4)
    tab_vals = np.zeros(tsize, dtype=np.uint64)
    tab_stamp = np.zeros(tsize, dtype=np.int32)
    K.fill_unique_values(
        instance_seed(np.uint64(master_seed), POOL_STREAM_INDEX), out, tab_vals, tab_stamp, 1
    )
    return out


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------

def calibrate_cf_tables(
    cfg,
    methods,
    instances: int,
    max_cardinality: int,
    master_seed: int,
    workers: int = 1,
    cf_aux: CfTable | None = None,
    history: HistoryCorrection | None = None,
    params: BlendParams | None = None,
) -> dict[str, CfTable]:
    """Calibrate several methods' CF tables from one simulation pass.

    factor[key] = key / mean(raw estimate) over all instances at key.
    """
    if instances < 100:
        raise ValueError("CF calibration needs at least 100 instances")
    params = params or DEFAULT_PARAMS
    specs = []
    for method in methods:
        base, code, use_hist = parse_method(method)
        h = cfg.history_bits if use_hist else 0
        specs.append(
            MethodSpec(
                name=method_name(base, h),
                code=code,
                use_hist=use_hist,
                params=params,
                cf_main=None,
                cf_aux=cf_aux,
            )
        )
    _, schedule, acc, nacc = run_high_complexity(
        cfg,
        specs,
        instances,
        max_cardinality,
        master_seed,
        workers=workers,
        history=history,
        params=params,
        _return_acc=True,
    )
    out = {}
    for m, spec in enumerate(specs):
        mean_raw = acc[:, m, 3] / nacc
        factors = np.ones(len(schedule), dtype=np.float64)
        ok = mean_raw > 0
        factors[ok] = schedule[ok].astype(np.float64) / mean_raw[ok]
        out[spec.name] = CfTable(
            method=spec.name,
            keys=schedule.copy(),
            factors=factors,
            bucket_count=cfg.bucket_count,
            bits_per_register=cfg.bits_per_register,
            history_bits=cfg.history_bits,
        )
    return out


def calibrate_cf_table(
    cfg,
    method: str,
    instances: int,
    max_cardinality: int,
    master_seed: int,
    workers: int = 1,
    cf_aux: CfTable | None = None,
    history: HistoryCorrection | None = None,
    params: BlendParams | None = None,
) -> CfTable:
    """Single-method variant of :func:`calibrate_cf_tables`."""
    tables = calibrate_cf_tables(
        cfg,
        [method],
        instances,
        max_cardinality,
        master_seed,
        workers=workers,
        cf_aux=cf_aux,
        history=history,
        params=params,
    )
    return next(iter(tables.values()))


def calibrate_history_correction(
    cfg,
    instances: int,
    master_seed: int,
    workers: int = 1,
    max_cardinality: int | None = None,
) -> HistoryCorrection:
    """Per-state additive rank corrections from steady-state register bias."""
    if cfg.history_bits < 1:
        raise ValueError("history correction requires history bits")
    if max_cardinality is None:
        max_cardinality = cfg.bucket_count * 512
    schedule = build_schedule(max_cardinality)
    cc = K.build_cc(cfg)
    ns = 1 << cfg.history_bits

    def worker(my_chunks, results):
        words, state, overflow, counts, hist, cum, tv, ts = _scratch(cfg, max_cardinality)
        for ci, (lo, hi) in my_chunks:
            ssum = np.zeros(ns, dtype=np.float64)
            sn = np.zeros(ns, dtype=np.float64)
            K.run_hist_bias_chunk(
                cc, lo, hi, np.uint64(master_seed), schedule,
                ssum, sn, words, state, overflow, counts, hist, cum, tv, ts,
            )
            results[ci] = (ssum, sn)

    results = _run_chunked(worker, instances, workers, None)
    ssum = np.zeros(ns, dtype=np.float64)
    sn = np.zeros(ns, dtype=np.float64)
    for a, b in results:
        ssum += a
        sn += b
    # correction = log2 of the state's mean frame-relative weight over the
    # population mean, so every state contributes the same expected weight
    per_state = np.zeros(ns, dtype=np.float64)
    overall = ssum.sum() / sn.sum() if sn.sum() > 0 else 1.0
    nz = sn > 0
    per_state[nz] = np.log2((ssum[nz] / sn[nz]) / overall)
    return HistoryCorrection(history_bits=cfg.history_bits, per_state=per_state)


# ---------------------------------------------------------------------------
# merge accuracy trials
# ---------------------------------------------------------------------------

def merge_trials(
    cfg,
    ways: int,
    cardinality: int,
    trials: int,
    master_seed: int,
    method: str = "dlc",
    params: BlendParams = DEFAULT_PARAMS,
):
    """Split a unique stream across `ways` sketches, merge, and compare.

    Returns (mean signed error of merged, mean signed error of single),
    averaged over trials; the same streams feed both sides.
    """
    from . import estimators
    from .sketch import Sketch, merge_many

    cc = K.build_cc(cfg)
    tsize = 1 << max(int(2 * cardinality - 1).bit_length(), 4)
    tab_vals = np.zeros(tsize, dtype=np.uint64)
    tab_stamp = np.zeros(tsize, dtype=np.int32)
    values = np.zeros(cardinality, dtype=np.uint64)

    base, code, use_hist = parse_method(method)
    merged_err = 0.0
    single_err = 0.0
    for t in range(trials):
        seed = instance_seed(np.uint64(master_seed), t)
        K.fill_unique_values(seed, values, tab_vals, tab_stamp, t + 1)

        single = Sketch(cfg)
        K.feed_values(single.words, single.state, single.overflow, cc, values)

        parts = [Sketch(cfg) for _ in range(ways)]
        words2 = [p.words for p in parts]
        state2 = np.stack([p.state for p in parts])
        over2 = np.stack([p.overflow for p in parts])
        w2 = np.stack(words2)
        K.feed_roundrobin(w2, state2, over2, cc, values, ways)
        for i, p in enumerate(parts):
            p.words[:] = w2[i]
            p.state[:] = state2[i]
            p.overflow[:] = over2[i]
        merged = merge_many(parts).merged

        est_m = _estimate_by_name(merged.profile(), base, params)
        est_s = _estimate_by_name(single.profile(), base, params)
        merged_err += (est_m - cardinality) / cardinality
        single_err += (est_s - cardinality) / cardinality
    return merged_err / trials, single_err / trials


def _estimate_by_name(profile, base: str, params: BlendParams):
    from . import estimators

    if base == "dlc":
        return estimators.dlc_blend(profile, params)
    if base == "lcmin":
        return estimators.lcmin(profile)
    if base == "mean":
        return estimators.mean(profile)
    if base == "hll":
        return estimators.hll(profile)
    raise ValueError(f"merge trials support CF-free methods only, not {base!r}")


# ---------------------------------------------------------------------------
# throughput benchmark
# ---------------------------------------------------------------------------

BENCH_BUFFER_LIMIT = 1 << 24  # pregenerate inputs below this many adds


def benchmark_add_path(
    cfg,
    simultaneous_instances: int,
    adds_per_instance: int,
    seed: int,
    warmup_adds_per_instance: int = 0,
) -> float:
    """Single-threaded round-robin add throughput in adds/second.

    Small runs pregenerate the input buffer so PRNG cost stays out of the
    timed loop; large runs stream inputs (identically for every variant
    under comparison).
    """
    if simultaneous_instances < 1:
        raise ValueError("need at least one instance")
    total = simultaneous_instances * adds_per_instance
    if total == 0:
        return 0.0
    cc = K.build_cc(cfg)
    dtype, rpw, _ = K.PACKING[(cfg.nlz_bits, cfg.history_bits)]
    nwords = -(-cfg.bucket_count // rpw)
    words2 = np.zeros((simultaneous_instances, nwords), dtype=dtype)
    state2 = np.zeros((simultaneous_instances, K.ST_LEN), dtype=np.uint64)
    over2 = np.zeros((simultaneous_instances, K.OVERFLOW_SLOTS), dtype=np.float64)
    state2[:, K.ST_MZCOUNT] = cfg.bucket_count
    state2[:, K.ST_ALLOC] = 1
    state2[:, K.ST_EEMASK] = np.uint64(0xFFFFFFFFFFFFFFFF)

    warm_total = simultaneous_instances * warmup_adds_per_instance
    if warm_total:
        K.bench_loop(words2, state2, over2, cc, np.uint64(seed), warm_total)
    if total <= BENCH_BUFFER_LIMIT:
        values = np.zeros(total, dtype=np.uint64)
        K.fill_values(np.uint64(seed + 1), values)
        t0 = time.perf_counter()
        K.bench_loop_buffer(words2, state2, over2, cc, values)
        dt = time.perf_counter() - t0
    else:
        t0 = time.perf_counter()
        K.bench_loop(words2, state2, over2, cc, np.uint64(seed + 1), total)
        dt = time.perf_counter() - t0
    return total / dt if dt > 0 else 0.0


# ---------------------------------------------------------------------------
# report serialization
# ---------------------------------------------------------------------------

def _g9(x: float) -> str:
    return f"{x:.9g}"


def write_report_csv(reports: dict[str, ErrorReport], out=None) -> str:
    """CSV rows per (cardinality, method) plus '#agg' aggregate footers."""
    buf = io.StringIO()
    buf.write("cardinality,method,meanSigned,meanAbs,stddev,n\n")
    names = list(reports)
    by_card: dict[int, list[str]] = {}
    for name in names:
        r = reports[name]
        for i, c in enumerate(r.cardinalities):
            line = (
                f"{int(c)},{name},{_g9(r.mean_signed[i])},{_g9(r.mean_abs[i])},"
                f"{_g9(r.stddev[i])},{int(r.n[i])}"
            )
            by_card.setdefault(int(c), []).append(line)
    for c in sorted(by_card):
        for line in by_card[c]:
            buf.write(line + "\n")
    for name in names:
        r = reports[name]
        buf.write(
            f"#agg,{name},{_g9(r.log_weighted)},{_g9(r.card_weighted)},{_g9(r.peak)}\n"
        )
    text = buf.getvalue()
    if out is not None:
        with open(out, "w") as f:
            f.write(text)
    return text


def read_report_csv(text: str) -> dict[str, ErrorReport]:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("cardinality,"):
        raise ValueError("not a dynsketch report")
    rows: dict[str, list] = {}
    order: list[str] = []
    for line in lines[1:]:
        if not line or line.startswith("#"):
            continue
        c, name, ms, ma, sd, n = line.split(",")
        if name not in rows:
            rows[name] = []
            order.append(name)
        rows[name].append((int(c), float(ms), float(ma), float(sd), float(n)))
    out = {}
    for name in order:
        data = rows[name]
        out[name] = ErrorReport(
            method=name,
            cardinalities=np.array([d[0] for d in data], dtype=np.int64),
            mean_signed=np.array([d[1] for d in data]),
            mean_abs=np.array([d[2] for d in data]),
            stddev=np.array([d[3] for d in data]),
            n=np.array([d[4] for d in data]),
        )
    return out
