"""Multi-environment conformal prediction sets.

Sets come back as ``(lo, hi)`` tuples, lists of such tuples for unions, or
sorted label lists for classification.
"""

from ._multienv import (
    ConfigError,
    Dataset,
    Mapping,
    dual_eta,
    evaluate,
    generate,
    hcp,
    hier_jackknife_plus,
    jackknife_minmax,
    jackknife_plus_quantile,
    left_quantile,
    quant_minus,
    quant_plus,
    resized_split_conformal,
    right_quantile,
    run_cli,
    run_trials,
    split_conformal,
    weighted_threshold,
)

__all__ = [
    "ConfigError",
    "Dataset",
    "Mapping",
    "dual_eta",
    "evaluate",
    "generate",
    "hcp",
    "hier_jackknife_plus",
    "jackknife_minmax",
    "jackknife_plus_quantile",
    "left_quantile",
    "quant_minus",
    "quant_plus",
    "resized_split_conformal",
    "right_quantile",
    "run_cli",
    "run_trials",
    "split_conformal",
    "weighted_threshold",
]
