"""DynamicLogLog-family cardinality sketches and estimators."""

from .calibration import (
    CHUNK_INSTANCES,
    ErrorReport,
    LowComplexityConfig,
    MethodSpec,
    benchmark_add_path,
    build_schedule,
    calibrate_cf_table,
    calibrate_history_correction,
    merge_trials,
    read_report_csv,
    run_high_complexity,
    run_low_complexity,
    write_report_csv,
)
from .correction import CfTable, HistoryCorrection, correct_overflow
from .estimators import (
    BlendParams,
    dlc_best,
    dlc_blend,
    dlc_tier,
    gmean,
    hll,
    hmean,
    history_lc,
    hybrid,
    hybrid_n,
    lc,
    lcmin,
    ldlc,
    mean,
    micro_estimate,
)
from .hashing import Xoshiro256pp, mix13_py, split
from .profiles import NlzProfile, make_profile
from .sketch import MergeResult, Sketch, SketchConfig, merge, merge_many

__version__ = "0.1.0"

__all__ = [
    "BlendParams",
    "CfTable",
    "ErrorReport",
    "HistoryCorrection",
    "LowComplexityConfig",
    "MergeResult",
    "MethodSpec",
    "NlzProfile",
    "Sketch",
    "SketchConfig",
    "Xoshiro256pp",
    "benchmark_add_path",
    "build_schedule",
    "calibrate_cf_table",
    "calibrate_history_correction",
    "correct_overflow",
    "dlc_best",
    "dlc_blend",
    "dlc_tier",
    "gmean",
    "hll",
    "hmean",
    "history_lc",
    "hybrid",
    "hybrid_n",
    "lc",
    "lcmin",
    "ldlc",
    "make_profile",
    "mean",
    "merge",
    "merge_many",
    "merge_trials",
    "micro_estimate",
    "mix13_py",
    "read_report_csv",
    "run_high_complexity",
    "run_low_complexity",
    "split",
    "write_report_csv",
]
