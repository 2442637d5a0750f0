"""Joint closed-form estimator of all treated-cell effects.

Given fitted synthetic control weights ``(a, B)`` the effect vector solves

    min_g  sum_s || (I - B)(Y_{T+s} - A_s g) - a ||^2,

whose normal equations have the gram matrix ``G = sum_s A_s' M A_s`` with
``M = (I-B)'(I-B)``.  ``G`` is block diagonal by post period, so it is
singular as soon as every unit is treated in some period.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import DimensionMismatch, NotInvertible
from .panel import EffectIndex, Panel, ParamSpec, att_weights, available_horizons
from .weights import WeightModel

__all__ = [
    "TauEstimate",
    "AttPath",
    "Gamma",
    "effect_gram",
    "check_invertibility",
    "influence_matrices",
    "estimate_tau",
    "estimate_gamma",
    "att_path",
    "untreated_outcomes",
    "gap_series",
]

DEFAULT_RCOND_MIN = 1e-10


@dataclass(frozen=True, eq=False)
class TauEstimate:
    """Estimated effect vector with the design quantities that produced it.

    ``influence[s-1]`` is ``G^{-1} A_s' (I-B)'``, so that
    ``tau_hat = sum_s influence[s-1] @ r_{T+s}`` with ``r_t = Y_t - a - B Y_t``.
    """

    tau_hat: np.ndarray
    index: EffectIndex
    gram: np.ndarray = field(repr=False)
    gram_rcond: float
    influence: np.ndarray = field(repr=False)

    @property
    def cells(self) -> tuple:
        return self.index.cells

    @property
    def K(self) -> int:
        return self.tau_hat.shape[0]


@dataclass(frozen=True)
class Gamma:
    values: np.ndarray
    labels: tuple

    def as_dict(self) -> dict:
        return dict(zip(self.labels, self.values.tolist()))


@dataclass(frozen=True)
class AttPath:
    horizons: tuple
    estimates: tuple
    n_s: tuple
    skipped: tuple = ()

    def as_rows(self) -> list[tuple[int, int, float]]:
        return list(zip(self.horizons, self.n_s, self.estimates))


def effect_gram(index: EffectIndex, M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.shape != (index.N, index.N):
        raise DimensionMismatch(f"M has shape {M.shape}, expected {(index.N, index.N)}")
    A = index.selectors  # (S, N, K)
    G = np.einsum("snk,nm,sml->kl", A, M, A)
    return 0.5 * (G + G.T)


def _rcond(G: np.ndarray) -> float:
    if G.size == 0:
        return 0.0
    sv = np.linalg.svd(G, compute_uv=False)
    if not sv[0] > 0:
        return 0.0
    return float(sv[-1] / sv[0])


def _fully_treated_periods(index: EffectIndex) -> list[int]:
    return [s for s in range(1, index.S + 1) if len(index.units_at(s)) == index.N]


def check_invertibility(index: EffectIndex, M: np.ndarray, rcond_min: float = DEFAULT_RCOND_MIN, time_ids=None) -> float:
    """Reciprocal condition number of the effect gram; raise if below ``rcond_min``."""
    if index.K == 0:
        raise NotInvertible("no treated cells: the effect vector is empty")
    rc = _rcond(effect_gram(index, M))
    if rc < rcond_min:
        full = _fully_treated_periods(index)
        if full:
            if time_ids is not None:
                names = ", ".join(repr(time_ids[index.T + s - 1]) for s in full)
            else:
                names = ", ".join(f"T+{s}" for s in full)
            detail = f"every unit is treated in period(s) {names}, leaving no untreated comparison"
        else:
            detail = "the treated cells are (nearly) collinear under the fitted weights"
        raise NotInvertible(f"effect gram is singular (rcond {rc:.3g} < {rcond_min:.3g}): {detail}")
    return rc


def influence_matrices(index: EffectIndex, wm: WeightModel, gram: np.ndarray | None = None) -> np.ndarray:
    """``G^{-1} A_s' (I-B)'`` for every post period, shape ``(S, K, N)``."""
    if gram is None:
        gram = effect_gram(index, wm.M)
    IBt = (np.eye(wm.N) - wm.B).T
    rhs = np.concatenate([index.selector(s).T @ IBt for s in range(1, index.S + 1)], axis=1)
    try:
        sol = linalg.cho_solve(linalg.cho_factor(gram), rhs)
    except linalg.LinAlgError:
        sol = linalg.solve(gram, rhs, assume_a="sym")
    return sol.reshape(index.K, index.S, wm.N).transpose(1, 0, 2)


def estimate_tau(panel: Panel, index: EffectIndex, wm: WeightModel, rcond_min: float = DEFAULT_RCOND_MIN) -> TauEstimate:
    """Closed-form effect estimate from observed post-period outcomes."""
    rc = check_invertibility(index, wm.M, rcond_min, time_ids=panel.time_ids)
    G = effect_gram(index, wm.M)
    H = influence_matrices(index, wm, G)
    resid = wm.residuals(panel.outcomes[:, panel.T :])  # (N, S)
    tau = np.einsum("skn,ns->k", H, resid)
    for arr in (tau, G, H):
        arr.setflags(write=False)
    return TauEstimate(tau, index, G, rc, H)


def estimate_gamma(tau: TauEstimate, spec: ParamSpec) -> Gamma:
    if spec.L.shape[1] != tau.K:
        raise DimensionMismatch(f"L has {spec.L.shape[1]} columns but tau has length {tau.K}")
    return Gamma(spec.L @ tau.tau_hat, spec.labels)


def att_path(panel: Panel, index: EffectIndex, tau: TauEstimate) -> AttPath:
    """Event-time ATT estimates for every horizon with at least one cell."""
    present = available_horizons(panel, index)
    horizons, est, n = [], [], []
    for s in present:
        l = att_weights(panel, index, s)
        horizons.append(s)
        est.append(float(l @ tau.tau_hat))
        n.append(int(np.count_nonzero(l)))
    top = max(present) if present else 0
    skipped = tuple(s for s in range(1, top + 1) if s not in present)
    return AttPath(tuple(horizons), tuple(est), tuple(n), skipped)


def untreated_outcomes(panel: Panel, index: EffectIndex, tau: TauEstimate) -> np.ndarray:
    """Outcomes with the estimated effect removed from every treated cell."""
    Y0 = np.array(panel.outcomes, dtype=float)
    for k, (i, s) in enumerate(index.cells):
        Y0[i, panel.T + s - 1] -= tau.tau_hat[k]
    return Y0


def gap_series(panel: Panel, index: EffectIndex, wm: WeightModel, tau: TauEstimate) -> np.ndarray:
    """Observed outcome minus its synthetic control, shape ``(N, T+S)``.

    Donor outcomes enter at their imputed untreated values, so a treated
    cell's gap is its effect estimate plus the fitted residual and every
    pre-period gap is the in-sample residual.
    """
    Y0 = untreated_outcomes(panel, index, tau)
    return panel.outcomes - wm.intercepts[:, None] - wm.B @ Y0
