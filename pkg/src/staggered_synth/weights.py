"""Per-unit synthetic control weights.

For each unit ``i`` we fit, on the pre-period only,

    min_{a, b}  sum_t (y_it - a - Y_t' b)^2   s.t.  b >= 0, sum(b) = 1, b_i = 0.

The intercept is concentrated out (for fixed ``b`` the optimal ``a`` is the
mean residual), which leaves a least-squares problem on the standard simplex
over the demeaned donors.  That small dense QP is solved with a primal
active-set method; the Frank-Wolfe duality gap is reported as an optimality
certificate.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDonors, InsufficientData, UnitFitError
from .panel import Panel

__all__ = [
    "SimplexSolution",
    "UnitWeights",
    "WeightModel",
    "simplex_qp",
    "fit_unit_weights",
    "fit_all",
    "fit_all_array",
]

logger = logging.getLogger(__name__)

_SINGULAR_RTOL = 1e-10


@dataclass(frozen=True)
class SimplexSolution:
    w: np.ndarray
    iterations: int
    kkt_residual: float
    gap: float
    non_unique: bool
    degenerate: bool


def _reduced_hessian_singular(Qp: np.ndarray, scale: float) -> bool:
    p = Qp.shape[0]
    if p < 2:
        return False
    # orthonormal basis of {z : sum(z) = 0}
    basis = np.linalg.svd(np.ones((1, p)))[2][1:].T
    ev = np.linalg.eigvalsh(basis.T @ Qp @ basis)
    return bool(ev.min() <= _SINGULAR_RTOL * scale)


def _equality_qp(Qp: np.ndarray, cp: np.ndarray) -> np.ndarray:
    """Minimise 0.5 z'Qz - c'z subject to sum(z) = 1 (minimum-norm if singular)."""
    p = Qp.shape[0]
    if p == 1:
        return np.ones(1)
    kkt = np.zeros((p + 1, p + 1))
    kkt[:p, :p] = Qp
    kkt[:p, p] = 1.0
    kkt[p, :p] = 1.0
    rhs = np.append(cp, 1.0)
    try:
        sol = np.linalg.solve(kkt, rhs)
        if np.all(np.isfinite(sol)) and np.allclose(kkt @ sol, rhs, rtol=1e-9, atol=1e-12 * max(1.0, np.abs(rhs).max())):
            return sol[:p]
    except np.linalg.LinAlgError:
        pass
    return np.linalg.lstsq(kkt, rhs, rcond=None)[0][:p]


def simplex_qp(Q: np.ndarray, c: np.ndarray, *, max_iter: int | None = None, ftol: float = 1e-12) -> SimplexSolution:
    """Minimise ``w'Qw - 2c'w`` over the standard simplex.

    ``Q`` is the (PSD) Gram matrix of the demeaned donors and ``c`` their
    cross-product with the demeaned target.  Ties are broken towards the
    lowest donor index, so the result is deterministic even when the optimum
    is not unique.
    """
    Q = np.asarray(Q, dtype=float)
    c = np.asarray(c, dtype=float)
    J = c.shape[0]
    if max_iter is None:
        max_iter = 10 * (J + 1) * 1000
    scale = max(float(np.abs(np.diag(Q)).max(initial=0.0)), float(np.abs(c).max(initial=0.0)))
    if scale <= np.finfo(float).tiny:
        w = np.zeros(J)
        w[0] = 1.0
        return SimplexSolution(w, 0, 0.0, 0.0, J > 1, True)
    kkt_tol = 1e-12 * scale
    zero_tol = 1e-15

    def fval(v):
        return float(v @ Q @ v - 2.0 * c @ v)

    # start at the best single donor
    j0 = int(np.argmin(0.5 * np.diag(Q) - c))
    w = np.zeros(J)
    w[j0] = 1.0
    active = [j0]
    blocked: set[int] = set()
    f_old = fval(w)
    it = 0
    while it < max_iter:
        h = Q @ w - c
        lam = float(h[active].mean())
        red = h - lam
        red[active] = np.inf
        for j in blocked:
            red[j] = np.inf
        j = int(np.argmin(red))
        if not red[j] < -kkt_tol:
            break
        active.append(j)

        # inner loop: move to the equality-constrained optimum on the support
        dropped = False
        while it < max_iter:
            it += 1
            idx = np.array(active)
            z = _equality_qp(Q[np.ix_(idx, idx)], c[idx])
            if np.all(z > zero_tol):
                w[:] = 0.0
                w[idx] = z
                break
            dropped = True
            wp = w[idx]
            neg = z <= zero_tol
            ratios = np.full(len(idx), np.inf)
            ratios[neg] = wp[neg] / (wp[neg] - z[neg])
            alpha = float(ratios.min())
            w[idx] = wp + alpha * (z - wp)
            k_block = int(idx[int(np.argmin(ratios))])
            drop = {k_block} | {int(k) for k in idx if w[k] <= zero_tol}
            for k in drop:
                w[k] = 0.0
            if alpha <= 0.0 and k_block == j:
                # entering donor cannot move: exclude it until progress is made
                blocked.add(j)
            active = [k for k in active if k not in drop]

        f_new = fval(w)
        if f_new < f_old:
            blocked.clear()
        if not dropped and f_old - f_new < ftol * max(1.0, abs(f_old)):
            break
        f_old = min(f_old, f_new)

    w = np.maximum(w, 0.0)
    w /= w.sum()
    h = Q @ w - c
    sup = w > 0
    lam = float(h[sup].mean())
    red = h - lam
    kkt = float(max(np.abs(red[sup]).max(initial=0.0), -min(red[~sup].min(initial=0.0), 0.0)))
    gap = float(2.0 * (h @ w - h.min()))
    # flat direction inside the optimal face (support plus weakly active donors)
    idx = np.flatnonzero(sup | (np.abs(red) <= 1e-9 * scale))
    non_unique = _reduced_hessian_singular(Q[np.ix_(idx, idx)], scale)
    return SimplexSolution(w, it, kkt, max(gap, 0.0), non_unique, False)


@dataclass(frozen=True, eq=False)
class UnitWeights:
    """Fitted intercept and simplex weights for one unit.

    ``objective`` is the attained pre-period sum of squares; ``gap`` bounds
    its distance to the global minimum (same units).
    """

    unit: int
    intercept: float
    weights: np.ndarray
    objective: float
    kkt_residual: float = 0.0
    gap: float = 0.0
    iterations: int = 0
    non_unique: bool = False


@dataclass(frozen=True, eq=False)
class WeightModel:
    """Stacked per-unit fits: intercepts ``a``, weights ``B`` and ``M = (I-B)'(I-B)``."""

    intercepts: np.ndarray
    B: np.ndarray
    M: np.ndarray
    fits: tuple = field(default=(), repr=False)

    @classmethod
    def from_fits(cls, fits) -> "WeightModel":
        fits = tuple(fits)
        a = np.array([f.intercept for f in fits])
        B = np.vstack([f.weights for f in fits])
        return cls.from_arrays(a, B, fits)

    @classmethod
    def from_arrays(cls, intercepts, B, fits=()) -> "WeightModel":
        a = np.asarray(intercepts, dtype=float)
        B = np.asarray(B, dtype=float)
        IB = np.eye(B.shape[0]) - B
        M = IB.T @ IB
        M = 0.5 * (M + M.T)
        for arr in (a, B, M):
            arr.setflags(write=False)
        return cls(a, B, M, tuple(fits))

    @property
    def N(self) -> int:
        return self.B.shape[0]

    @property
    def theta(self) -> np.ndarray:
        """``N x (N+1)`` matrix ``[a, B]`` acting on ``x_t = (1, Y_t)``."""
        return np.column_stack([self.intercepts, self.B])

    @property
    def non_unique(self) -> list[int]:
        return [f.unit for f in self.fits if f.non_unique]

    def residuals(self, Y: np.ndarray) -> np.ndarray:
        """Specification errors ``Y_t - a - B Y_t`` for each column of ``Y``."""
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            return Y - self.intercepts - self.B @ Y
        return Y - self.intercepts[:, None] - self.B @ Y


def _check_dims(Y_pre: np.ndarray) -> None:
    N, T = Y_pre.shape
    if N < 2:
        raise InsufficientData(f"need at least 2 units, got {N}")
    if T < 2:
        raise InsufficientData(f"need at least 2 pre-period observations, got {T}")


def _fit_from_gram(Yc: np.ndarray, G: np.ndarray, mean: np.ndarray, unit: int) -> UnitWeights:
    N = Yc.shape[0]
    donors = np.array([j for j in range(N) if j != unit])
    sol = simplex_qp(G[np.ix_(donors, donors)], G[donors, unit])
    if sol.degenerate:
        warnings.warn(
            f"unit {unit}: donor series are constant on the pre-period; "
            "weights are not identified, taking the lowest-index donor",
            DegenerateDonors,
            stacklevel=3,
        )
    w = np.zeros(N)
    w[donors] = sol.w
    resid = Yc[unit] - sol.w @ Yc[donors]
    intercept = float(mean[unit] - sol.w @ mean[donors])
    w.setflags(write=False)
    return UnitWeights(
        unit=unit,
        intercept=intercept,
        weights=w,
        objective=float(resid @ resid),
        kkt_residual=sol.kkt_residual,
        gap=sol.gap,
        iterations=sol.iterations,
        non_unique=sol.non_unique or sol.degenerate,
    )


def _prepare(Y_pre: np.ndarray):
    Y_pre = np.asarray(Y_pre, dtype=float)
    _check_dims(Y_pre)
    mean = Y_pre.mean(axis=1)
    Yc = Y_pre - mean[:, None]
    return Yc, Yc @ Yc.T, mean


def fit_unit_weights(panel: Panel, unit: int, tol: float = 1e-10) -> UnitWeights:
    """Fit the synthetic control of one unit (by index) on the pre-period.

    ``tol`` bounds the optimality gap of the per-period objective
    (sum of squares divided by ``T``); a :class:`RuntimeWarning` is issued if
    the certificate exceeds it.
    """
    Yc, G, mean = _prepare(panel.pre_outcomes)
    uw = _fit_from_gram(Yc, G, mean, unit)
    _check_gap(uw, panel.T, tol)
    return uw


def _check_gap(uw: UnitWeights, T: int, tol: float) -> None:
    if uw.gap / T > tol:
        warnings.warn(
            f"unit {uw.unit}: optimality gap {uw.gap / T:.3g} exceeds tolerance {tol:.3g}",
            RuntimeWarning,
            stacklevel=3,
        )


def fit_all_array(Y_pre: np.ndarray, tol: float = 1e-10, n_jobs: int = 1, labels=None) -> WeightModel:
    """Fit every unit of an ``N x T`` pre-period outcome array."""
    try:
        Yc, G, mean = _prepare(Y_pre)
    except InsufficientData:
        raise
    N, T = Yc.shape
    labels = labels if labels is not None else list(range(N))

    def one(i):
        try:
            uw = _fit_from_gram(Yc, G, mean, i)
        except Exception as exc:  # noqa: BLE001 - re-raised with the unit attached
            raise UnitFitError(labels[i], exc) from exc
        _check_gap(uw, T, tol)
        return uw

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            fits = list(pool.map(one, range(N)))
    else:
        fits = [one(i) for i in range(N)]
    return WeightModel.from_fits(fits)


def fit_all(panel: Panel, tol: float = 1e-10, n_jobs: int = 1) -> WeightModel:
    """Fit all units' synthetic controls on the panel's pre-period."""
    wm = fit_all_array(panel.pre_outcomes, tol=tol, n_jobs=n_jobs, labels=list(panel.unit_ids))
    if wm.non_unique:
        logger.info("non-unique weight solutions for units %s", [panel.unit_ids[i] for i in wm.non_unique])
    return wm
