"""Synthetic control estimation and inference for staggered policy adoption."""

__version__ = "0.1.0"

from .errors import NotInvertible, StaggeredSCError
from .estimator import AttPath, TauEstimate, att_path, check_invertibility, estimate_gamma, estimate_tau
from .inference import critical_value, invert_test, rolling_statistics, run_test, test_statistic
from .panel import (
    EffectIndex,
    HypothesisSpec,
    Panel,
    ParamSpec,
    att_hypothesis,
    att_spec,
    att_weights,
    build_effect_index,
    event_time,
    policy_contrast,
    validate_panel,
)
from .weights import UnitWeights, WeightModel, fit_all, fit_unit_weights

__all__ = [
    "__version__",
    "StaggeredSCError",
    "NotInvertible",
    "Panel",
    "EffectIndex",
    "ParamSpec",
    "HypothesisSpec",
    "validate_panel",
    "build_effect_index",
    "event_time",
    "att_weights",
    "att_spec",
    "att_hypothesis",
    "policy_contrast",
    "UnitWeights",
    "WeightModel",
    "fit_unit_weights",
    "fit_all",
    "TauEstimate",
    "AttPath",
    "check_invertibility",
    "estimate_tau",
    "estimate_gamma",
    "att_path",
    "test_statistic",
    "rolling_statistics",
    "critical_value",
    "run_test",
    "invert_test",
]
