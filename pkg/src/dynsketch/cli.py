"""Command-line surface: calibrate, simulate, bench, estimate, merge-test.

Flags use the key=value convention.  Exit codes: 0 success, 1 usage error,
2 runtime error.
"""

from __future__ import annotations

import sys

import numpy as np

from . import calibration as cal
from .correction import CfTable, HistoryCorrection
from .estimators import BlendParams, method_name
from .hashing import U64_MASK
from .sketch import Sketch, SketchConfig

USAGE = """\
dynsketch <subcommand> key=value ...

Subcommands:
  calibrate     type= method= buckets= instances= maxcard= seed= out=
                [addressing=bitmask|modulo] [workers=1]
                Writes the CF table for `method` to out=.  Blended methods
                also write their input table to <out>.mean; history-bit
                types also write the per-state correction to <out>.hc.
  simulate-high type= methods= buckets= instances= maxcard= seed=
                [workers=1] [cf=file1,file2] [hc=file] [out=report.csv]
                [addressing=bitmask|modulo]
  simulate-low  type= methods= buckets= instances= pool= iterations= seed=
                [skew=2] [workers=1] [cf=...] [hc=...] [out=report.csv]
  bench         type= buckets= instances= adds= seed= [eemask=t|f]
                [warmup=0] [addressing=bitmask|modulo]
  estimate      [type=dll4] [buckets=2048] [methods=dlc] [cf=...] [hc=...]
                [exact=t|f] [input=path]   (reads tokens from stdin/file)
  merge-test    ways= buckets= cardinality= trials= seed= [type=dll4]
                [method=dlc]
"""

_TYPES = ("ll6", "dll4", "dll3", "udll5", "udll6", "udll7")


class UsageError(Exception):
    pass


def _parse_flags(tokens, allowed):
    flags = {}
    for tok in tokens:
        if "=" not in tok:
            raise UsageError(f"expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        if k not in allowed:
            raise UsageError(f"unknown flag {k!r}")
        flags[k] = v
    return flags


def _need(flags, *keys):
    missing = [k for k in keys if k not in flags]
    if missing:
        raise UsageError(f"missing flags: {', '.join(sorted(missing))}")


def _boolean(v: str) -> bool:
    if v.lower() in ("t", "true", "1", "yes"):
        return True
    if v.lower() in ("f", "false", "0", "no"):
        return False
    raise UsageError(f"expected t/f, got {v!r}")


def _config(flags, default_type=None, default_buckets=None) -> SketchConfig:
    type_name = flags.get("type", default_type)
    if type_name is None:
        raise UsageError("missing flags: type")
    if type_name not in _TYPES:
        raise UsageError(f"unknown type {type_name!r} (expected one of {', '.join(_TYPES)})")
    buckets = int(flags.get("buckets", default_buckets or 0))
    if buckets <= 0:
        raise UsageError("missing flags: buckets")
    addressing = flags.get("addressing", "bitmask")
    return SketchConfig.for_type(type_name, buckets, addressing=addressing)


def _load_cf(flags) -> dict:
    tables = {}
    for path in filter(None, flags.get("cf", "").split(",")):
        t = CfTable.load(path)
        tables[t.method] = t
    return tables


def _load_hc(flags) -> HistoryCorrection | None:
    if "hc" in flags and flags["hc"]:
        return HistoryCorrection.load(flags["hc"])
    return None


def _check_cf_available(methods, cfg, tables):
    for m in methods:
        base, _, use_hist = cal.parse_method(m)
        if base in cal.CF_CAPABLE:
            name = method_name(base, cfg.history_bits if use_hist else 0)
            if name not in tables:
                raise RuntimeError(
                    f"method {name!r} needs a CF table; pass cf= with a calibrated file"
                )
        if use_hist and cfg.history_bits == 0:
            raise RuntimeError(f"method {m!r} needs a history-bit estimator type")


def cmd_calibrate(flags) -> int:
    _need(flags, "type", "method", "buckets", "instances", "maxcard", "seed", "out")
    cfg = _config(flags)
    method = flags["method"]
    base, _, use_hist = cal.parse_method(method)
    if base not in cal.CF_CAPABLE:
        raise RuntimeError(f"method {method!r} takes no correction table")
    if use_hist and cfg.history_bits == 0:
        raise RuntimeError(f"method {method!r} requires a history-bit type")
    instances = int(flags["instances"])
    maxcard = int(flags["maxcard"])
    seed = int(flags["seed"])
    workers = int(flags.get("workers", "1"))
    out = flags["out"]

    history = None
    if cfg.history_bits > 0:
        history = cal.calibrate_history_correction(cfg, instances, seed, workers=workers)
        history.save(f"{out}.hc", cfg.bucket_count, cfg.bits_per_register)
        print(f"wrote {out}.hc ({1 << cfg.history_bits} entries)")

    h = cfg.history_bits if use_hist else 0
    cf_aux = None
    if base == "hybrid":
        mean_m = method_name("mean", h)
        cf_aux = cal.calibrate_cf_table(
            cfg, mean_m, instances, maxcard, seed, workers=workers, history=history
        )
        cf_aux.save(f"{out}.mean")
        print(f"wrote {out}.mean ({len(cf_aux.keys)} rows)")
    table = cal.calibrate_cf_table(
        cfg, method, instances, maxcard, seed,
        workers=workers, cf_aux=cf_aux, history=history,
    )
    table.save(out)
    print(f"wrote {out} ({len(table.keys)} rows)")
    return 0


def _write_report(reports, flags):
    text = cal.write_report_csv(reports)
    if "out" in flags:
        with open(flags["out"], "w") as f:
            f.write(text)
        print(f"wrote {flags['out']}")
    else:
        sys.stdout.write(text)


def cmd_simulate_high(flags) -> int:
    _need(flags, "type", "methods", "buckets", "instances", "maxcard", "seed")
    cfg = _config(flags)
    methods = flags["methods"].split(",")
    tables = _load_cf(flags)
    history = _load_hc(flags)
    _check_cf_available(methods, cfg, tables)
    reports = cal.run_high_complexity(
        cfg,
        methods,
        instances=int(flags["instances"]),
        max_cardinality=int(flags["maxcard"]),
        master_seed=int(flags["seed"]),
        workers=int(flags.get("workers", "1")),
        cf_tables=tables,
        history=history,
    )
    _write_report(reports, flags)
    return 0


def cmd_simulate_low(flags) -> int:
    _need(flags, "type", "methods", "buckets", "instances", "pool", "iterations", "seed")
    cfg = _config(flags)
    methods = flags["methods"].split(",")
    tables = _load_cf(flags)
    history = _load_hc(flags)
    _check_cf_available(methods, cfg, tables)
    lc_cfg = cal.LowComplexityConfig(
        cardinality=int(flags["pool"]),
        iterations=int(flags["iterations"]),
        skew_draws=int(flags.get("skew", "2")),
    )
    reports = cal.run_low_complexity(
        cfg,
        methods,
        instances=int(flags["instances"]),
        lc_cfg=lc_cfg,
        master_seed=int(flags["seed"]),
        workers=int(flags.get("workers", "1")),
        cf_tables=tables,
        history=history,
    )
    _write_report(reports, flags)
    return 0


def cmd_bench(flags) -> int:
    _need(flags, "type", "buckets", "instances", "adds", "seed")
    instances = int(flags["instances"])
    if instances <= 0:
        raise UsageError("instances must be positive")
    ee = _boolean(flags.get("eemask", "t"))
    type_name = flags["type"]
    if type_name not in _TYPES:
        raise UsageError(f"unknown type {type_name!r}")
    cfg = SketchConfig.for_type(
        type_name,
        int(flags["buckets"]),
        addressing=flags.get("addressing", "bitmask"),
        ee_mask=ee,
    )
    adds = int(flags["adds"])
    per_instance = adds // instances
    rate = cal.benchmark_add_path(
        cfg,
        simultaneous_instances=instances,
        adds_per_instance=per_instance,
        seed=int(flags["seed"]),
        warmup_adds_per_instance=int(flags.get("warmup", "0")) // instances,
    )
    print(
        f"type={type_name} buckets={flags['buckets']} instances={instances} "
        f"eemask={'t' if ee else 'f'} adds={per_instance * instances} "
        f"addsPerSec={rate:.9g}"
    )
    return 0


FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def token_to_word(tok: str) -> int:
    """Integer tokens pass through; anything else is FNV-1a hashed."""
    if tok.isdigit():
        v = int(tok)
        if v > U64_MASK:
            raise RuntimeError(f"integer token out of 64-bit range: {tok}")
        return v
    h = FNV_OFFSET
    for byte in tok.encode("utf-8"):
        h = ((h ^ byte) * FNV_PRIME) & U64_MASK
    return h


def cmd_estimate(flags) -> int:
    cfg = _config(flags, default_type="dll4", default_buckets=2048)
    methods = flags.get("methods", "dlc").split(",")
    tables = _load_cf(flags)
    history = _load_hc(flags)
    _check_cf_available(methods, cfg, tables)
    exact = _boolean(flags.get("exact", "f"))

    if "input" in flags:
        stream = open(flags["input"])
    else:
        stream = sys.stdin
    words = []
    seen = set() if exact else None
    try:
        for line in stream:
            tok = line.strip()
            if not tok:
                continue
            w = token_to_word(tok)
            words.append(w)
            if seen is not None:
                seen.add(w)
    finally:
        if stream is not sys.stdin:
            stream.close()

    sk = Sketch(cfg)
    if words:
        sk.add_many(np.array(words, dtype=np.uint64))
    profile = sk.profile()
    from . import estimators as est

    specs = cal.resolve_methods(methods, tables, history, history_bits=cfg.history_bits)
    for spec in specs:
        base = spec.name.split("+")[0]
        if base == "hybrid":
            v = est.hybrid(profile, cf=tables, history=history if spec.use_hist else None)
        elif base == "mean":
            t = tables.get(spec.name)
            raw = est.mean(profile, history=history if spec.use_hist else None) if profile.filled else 0.0
            v = t.apply(raw) if t else raw
        elif base == "hmean":
            t = tables.get(spec.name)
            raw = est.hmean(profile) if profile.filled else 0.0
            v = t.apply(raw) if t else raw
        elif base == "gmean":
            t = tables.get(spec.name)
            raw = est.gmean(profile) if profile.filled else 0.0
            v = t.apply(raw) if t else raw
        elif base == "lc":
            v = est.lc(profile)
        elif base == "lcmin":
            v = est.lcmin(profile)
        elif base == "dlc":
            v = est.dlc_blend(profile)
        elif base == "dlcbest":
            v = est.dlc_best(profile) if profile.filled else 0.0
        elif base == "hll":
            v = est.hll(profile)
        elif base == "hc":
            v = est.history_lc(profile)
        elif base == "ldlc":
            v = est.ldlc(profile)
        elif base == "micro":
            v = est.micro_estimate(profile.micro_popcount)
        else:
            raise RuntimeError(f"method {spec.name!r} not available here")
        print(f"{spec.name}\t{v:.9g}")
    if exact:
        print(f"exact\t{len(seen)}")
    return 0


def cmd_merge_test(flags) -> int:
    _need(flags, "ways", "buckets", "cardinality", "trials", "seed")
    cfg = _config(flags, default_type="dll4")
    method = flags.get("method", "dlc")
    ways_list = [int(w) for w in flags["ways"].split(",")]
    for w in ways_list:
        if w < 1 or w > 64:
            raise UsageError("ways must be in 1..64")
    trials = int(flags["trials"])
    card = int(flags["cardinality"])
    seed = int(flags["seed"])
    print("ways,meanSignedMerged,meanSignedSingle")
    for w in ways_list:
        m, s = cal.merge_trials(cfg, w, card, trials, seed, method=method)
        print(f"{w},{m:.9g},{s:.9g}")
    return 0


_COMMANDS = {
    "calibrate": (
        cmd_calibrate,
        {"type", "method", "buckets", "instances", "maxcard", "seed", "out",
         "addressing", "workers"},
    ),
    "simulate-high": (
        cmd_simulate_high,
        {"type", "methods", "buckets", "instances", "maxcard", "seed", "workers",
         "cf", "hc", "out", "addressing"},
    ),
    "simulate-low": (
        cmd_simulate_low,
        {"type", "methods", "buckets", "instances", "pool", "iterations", "skew",
         "seed", "workers", "cf", "hc", "out", "addressing"},
    ),
    "bench": (
        cmd_bench,
        {"type", "buckets", "instances", "adds", "seed", "eemask", "warmup",
         "addressing"},
    ),
    "estimate": (
        cmd_estimate,
        {"type", "buckets", "methods", "cf", "hc", "exact", "input", "addressing"},
    ),
    "merge-test": (
        cmd_merge_test,
        {"ways", "buckets", "cardinality", "trials", "seed", "type", "method",
         "addressing"},
    ),
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv or argv[0] in ("-h", "--help", "help"):
        sys.stderr.write(USAGE)
        return 0 if argv and argv[0] in ("-h", "--help", "help") else 1
    cmd = argv[0]
    if cmd not in _COMMANDS:
        sys.stderr.write(f"unknown subcommand {cmd!r}\n\n{USAGE}")
        return 1
    fn, allowed = _COMMANDS[cmd]
    try:
        flags = _parse_flags(argv[1:], allowed)
        return fn(flags)
    except UsageError as e:
        sys.stderr.write(f"usage error: {e}\n\n{USAGE}")
        return 1
    except (ValueError, OSError, RuntimeError) as e:
        sys.stderr.write(f"error: {e}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
