"""End-of-sample instability test for linear restrictions ``C tau = d``.

The statistic ``P = |C tau_hat - d|^2`` is compared with its rolling
pre-period analogues: for every window ``t+1 .. t+S`` inside the pre-period,
the same linear map that turns post-period residuals into ``tau_hat`` is
applied to the window's residuals, giving ``P_t``.  The null is rejected when
``P`` exceeds the ``1 - alpha`` quantile of ``{P_t}``.

Two choices of the residual-generating parameters ``theta_t = (a_t, B_t)``
are offered: the full-sample fit (``"plug-in"``) and a refit that leaves out
the first ``ceil(S/2)`` periods of each window (``"leave-half-out"``).
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CoarseNullWarning,
    DimensionMismatch,
    GridTooNarrow,
    InfeasibleLevel,
    InferenceError,
    WindowTooShort,
)
from .estimator import TauEstimate, influence_matrices
from .panel import EffectIndex, HypothesisSpec, Panel
from .weights import WeightModel, fit_all_array

__all__ = [
    "ThetaMatrix",
    "EmpiricalCDF",
    "TestResult",
    "ConfidenceInterval",
    "MODES",
    "NORMALIZATIONS",
    "test_statistic",
    "rolling_statistics",
    "critical_value",
    "run_test",
    "invert_test",
]

MODES = ("plug-in", "leave-half-out")
NORMALIZATIONS = ("pre-period", "empirical")
MIN_WINDOWS = 30


@dataclass(frozen=True, eq=False)
class ThetaMatrix:
    """``[a, B]`` stacked as an ``N x (N+1)`` matrix acting on ``x_t = (1, Y_t)``."""

    theta: np.ndarray

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=float)
        if th.ndim != 2 or th.shape[1] != th.shape[0] + 1:
            raise DimensionMismatch(f"theta must be N x (N+1), got {th.shape}")
        if np.any(np.diag(th[:, 1:]) != 0):
            raise DimensionMismatch("weight block of theta must have a zero diagonal")
        object.__setattr__(self, "theta", th)

    @classmethod
    def from_model(cls, wm: WeightModel) -> "ThetaMatrix":
        return cls(wm.theta)

    def residuals(self, Y: np.ndarray) -> np.ndarray:
        """``Y_t - theta x_t`` for each column of ``Y``."""
        Y = np.asarray(Y, dtype=float)
        return Y - self.theta[:, :1] - self.theta[:, 1:] @ Y


@dataclass(frozen=True)
class EmpiricalCDF:
    """Step function ``F(x) = #{draws <= x} / divisor``."""

    sorted_draws: np.ndarray
    divisor: int

    def __call__(self, x):
        counts = np.searchsorted(self.sorted_draws, x, side="right")
        return counts / self.divisor


@dataclass(frozen=True, eq=False)
class TestResult:
    statistic: float
    null_draws: np.ndarray = field(repr=False)
    critical_value: float
    alpha: float
    p_value: float
    reject: bool
    estimator_mode: str
    normalization: str
    hypothesis: HypothesisSpec = field(repr=False)
    estimate: np.ndarray = field(repr=False)

    def to_report(self, labels=None, bins: int = 20) -> dict:
        counts, edges = np.histogram(self.null_draws, bins=bins)
        return {
            "hypothesis": {
                "C": self.hypothesis.C.tolist(),
                "d": self.hypothesis.d.tolist(),
                "labels": list(labels) if labels is not None else None,
            },
            "estimate": self.estimate.tolist(),
            "statistic": self.statistic,
            "critical_value": self.critical_value,
            "alpha": self.alpha,
            "p_value": self.p_value,
            "reject": self.reject,
            "estimator_mode": self.estimator_mode,
            "normalization": self.normalization,
            "n_draws": int(self.null_draws.shape[0]),
            "histogram": {"counts": counts.tolist(), "edges": edges.tolist()},
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_report(**kw), indent=2, sort_keys=True)


@dataclass(frozen=True, eq=False)
class ConfidenceInterval:
    estimate: float
    lo: float
    hi: float
    alpha: float
    contiguous: bool
    truncated: bool
    step: float
    critical_value: float

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def covers(self, value: float) -> bool:
        return self.lo <= value <= self.hi


def _check_conform(hyp: HypothesisSpec, K: int) -> None:
    if hyp.C.shape[1] != K:
        raise DimensionMismatch(f"C has {hyp.C.shape[1]} columns but tau has length {K}")


def test_statistic(tau: TauEstimate, hyp: HypothesisSpec) -> float:
    _check_conform(hyp, tau.K)
    r = hyp.C @ tau.tau_hat - hyp.d
    return float(r @ r)


def _window_count(T: int, S: int) -> int:
    if T <= S:
        raise WindowTooShort(f"need more pre-periods than post-periods (T={T}, S={S})")
    n = T - S
    if n < MIN_WINDOWS:
        warnings.warn(
            f"only {n} rolling windows; the null distribution is coarse",
            CoarseNullWarning,
            stacklevel=3,
        )
    return n


def _projected(C: np.ndarray, H: np.ndarray) -> np.ndarray:
    """``C @ H_s`` for each post period: shape ``(S, q, N)``."""
    return np.einsum("qk,skn->sqn", C, H)


def _plugin_draws(CH: np.ndarray, resid: np.ndarray, n: int) -> np.ndarray:
    # draw t (1-based) uses periods t+1 .. t+S, i.e. columns t .. t+S-1 (0-based)
    S = CH.shape[0]
    Z = sum(CH[s] @ resid[:, s + 1 : s + 1 + n] for s in range(S))
    return np.einsum("qt,qt->t", Z, Z)


def rolling_statistics(
    panel: Panel,
    index: EffectIndex,
    wm: WeightModel,
    hyp: HypothesisSpec,
    mode: str = "plug-in",
    tau: TauEstimate | None = None,
    tol: float = 1e-10,
    n_jobs: int = 1,
) -> np.ndarray:
    """Rolling null draws ``P_t`` for ``t = 1 .. T-S``."""
    if mode not in MODES:
        raise InferenceError(f"unknown estimator mode {mode!r}; choose from {MODES}")
    T, S = panel.T, index.S
    n = _window_count(T, S)
    H = tau.influence if tau is not None else influence_matrices(index, wm)
    _check_conform(hyp, H.shape[1])
    CH = _projected(hyp.C, H)
    Y = panel.pre_outcomes

    if mode == "plug-in":
        return _plugin_draws(CH, wm.residuals(Y), n)

    half = math.ceil(S / 2)

    def one(t):
        keep = np.ones(T, dtype=bool)
        keep[t + 1 : t + 1 + half] = False
        th = fit_all_array(Y[:, keep], tol=tol)
        r = th.residuals(Y[:, t + 1 : t + 1 + S])
        z = sum(CH[s] @ r[:, s] for s in range(S))
        return float(z @ z)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            out = list(pool.map(one, range(n)))
    else:
        out = [one(t) for t in range(n)]
    return np.array(out)


def _order_rank(alpha: float, divisor: int) -> int:
    # guard against 0.9 * 10 = 9.000000000000002
    return max(1, math.ceil(round((1.0 - alpha) * divisor, 9)))


def critical_value(null_draws, T: int, alpha: float, normalization: str = "pre-period") -> tuple[float, EmpiricalCDF]:
    """``1 - alpha`` quantile of the rolling draws and the empirical CDF.

    ``"pre-period"`` divides counts by ``T`` (slightly conservative since only
    ``T - S`` draws exist); ``"empirical"`` divides by the number of draws.
    """
    if not 0.0 < alpha < 1.0:
        raise InferenceError(f"alpha must lie in (0, 1), got {alpha}")
    if normalization not in NORMALIZATIONS:
        raise InferenceError(f"unknown normalization {normalization!r}; choose from {NORMALIZATIONS}")
    draws = np.sort(np.asarray(null_draws, dtype=float))
    n = draws.shape[0]
    if n == 0:
        raise InferenceError("no null draws")
    divisor = int(T) if normalization == "pre-period" else n
    k = _order_rank(alpha, divisor)
    if k > n:
        raise InfeasibleLevel(
            f"level alpha={alpha} needs {k} of {divisor} draws below the critical value but only "
            f"{n} draws exist; lengthen the pre-period or use the 'empirical' normalization"
        )
    return float(draws[k - 1]), EmpiricalCDF(draws, divisor)


def _result(stat, draws, T, alpha, mode, normalization, hyp, est) -> TestResult:
    q, F = critical_value(draws, T, alpha, normalization)
    p = float(min(1.0, max(0.0, 1.0 - F(stat))))
    return TestResult(
        statistic=stat,
        null_draws=draws,
        critical_value=q,
        alpha=alpha,
        p_value=p,
        reject=bool(stat > q),
        estimator_mode=mode,
        normalization=normalization,
        hypothesis=hyp,
        estimate=hyp.C @ est,
    )


def run_test(
    panel: Panel,
    index: EffectIndex,
    wm: WeightModel,
    tau: TauEstimate,
    hyp: HypothesisSpec,
    alpha: float = 0.10,
    mode: str = "plug-in",
    normalization: str = "pre-period",
    null_draws: np.ndarray | None = None,
) -> TestResult:
    """Test ``C tau = d``; ``null_draws`` may be supplied to reuse a rolling computation."""
    stat = test_statistic(tau, hyp)
    if null_draws is None:
        null_draws = rolling_statistics(panel, index, wm, hyp, mode, tau=tau)
    return _result(stat, np.asarray(null_draws, dtype=float), panel.T, alpha, mode, normalization, hyp, tau.tau_hat)


def _iqr(x: np.ndarray) -> float:
    q75, q25 = np.percentile(x, [75, 25])
    return float(q75 - q25)


def default_grid(center: float, null_draws: np.ndarray, points: int = 401) -> np.ndarray:
    """``center +/- 10 * IQR`` of the rolling ``|C V_t|`` draws, ``points`` values."""
    scale = _iqr(np.sqrt(np.maximum(null_draws, 0.0)))
    if not scale > 0:
        scale = float(np.sqrt(np.max(null_draws))) if np.max(null_draws) > 0 else 0.0
    if not scale > 0:
        scale = 1e-8 * max(1.0, abs(center))
    points = points if points % 2 else points + 1
    return center + np.linspace(-10.0 * scale, 10.0 * scale, points)


def invert_test(
    panel: Panel,
    index: EffectIndex,
    wm: WeightModel,
    tau: TauEstimate,
    C_row,
    alpha: float = 0.10,
    grid: tuple[float, float, float] | None = None,
    mode: str = "plug-in",
    normalization: str = "pre-period",
    null_draws: np.ndarray | None = None,
    points: int = 401,
) -> ConfidenceInterval:
    """Confidence interval for ``C_row @ tau`` as the set of non-rejected nulls on a grid.

    The estimate itself is always inserted into the grid.
    """
    C = np.atleast_2d(np.asarray(C_row, dtype=float))
    if C.shape[0] != 1:
        raise DimensionMismatch("test inversion needs a single restriction row")
    hyp = HypothesisSpec(C, [0.0])
    _check_conform(hyp, tau.K)
    if null_draws is None:
        null_draws = rolling_statistics(panel, index, wm, hyp, mode, tau=tau)
    null_draws = np.asarray(null_draws, dtype=float)
    q, _ = critical_value(null_draws, panel.T, alpha, normalization)
    center = float(C[0] @ tau.tau_hat)

    if grid is None:
        values = default_grid(center, null_draws, points)
    else:
        lo, hi, step = grid
        if not (step > 0 and hi > lo):
            raise InferenceError(f"invalid grid {grid}")
        count = int(math.floor((hi - lo) / step + 1e-9)) + 1
        values = np.union1d(lo + step * np.arange(count), [center])
    step = float(np.min(np.diff(values))) if values.size > 1 else 0.0

    accepted = (center - values) ** 2 <= q
    hits = np.flatnonzero(accepted)
    contiguous = bool(hits.size and hits[-1] - hits[0] + 1 == hits.size)
    truncated = bool(accepted[0] or accepted[-1])
    if truncated:
        warnings.warn(
            "test inversion accepted a grid endpoint; the interval is truncated, widen the grid",
            GridTooNarrow,
            stacklevel=2,
        )
    return ConfidenceInterval(
        estimate=center,
        lo=float(values[hits[0]]),
        hi=float(values[hits[-1]]),
        alpha=alpha,
        contiguous=contiguous,
        truncated=truncated,
        step=step,
        critical_value=q,
    )
