"""Factor-model panels with staggered treatment, and Monte Carlo studies.

Untreated outcomes follow ``y_it(0) = lambda_i' f_t + eps_it``.  Stationary
factors are Gaussian AR(1) processes started from their stationary law;
nonstationary factors are Gaussian random walks started at zero.  Under
cointegration every unit's loading on the random-walk factors is an exact
convex combination of the other units' loadings.

Random numbers come from numpy's PCG64.  A study seed is split with
``SeedSequence(seed).spawn(2)`` into a design stream (loadings) and a
replication stream; replication ``r`` uses the ``r``-th child of
``replication_stream.spawn(reps)``, so results do not depend on execution
order or worker count.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidDGP, NotInvertible, StaggeredSCError
from .estimator import att_path, estimate_tau
from .inference import critical_value, invert_test, rolling_statistics, test_statistic
from .panel import HypothesisSpec, Panel, att_weights, build_effect_index
from .weights import fit_all

__all__ = [
    "FactorDGP",
    "TreatmentPlan",
    "McSettings",
    "McReport",
    "stationary_dgp",
    "cointegrated_dgp",
    "default_plan",
    "simulate_untreated",
    "gen_panel",
    "population_covariance",
    "residual_sd",
    "run_monte_carlo",
    "study_streams",
    "STUDY_KEYS",
    "Study",
    "build_study",
    "run_study",
]


@dataclass(frozen=True, eq=False)
class FactorDGP:
    """Factor model for untreated outcomes.

    Columns of ``loadings`` are ordered stationary factors first (``r0``),
    then random-walk factors (``r1``).  ``coint_weights[i]`` holds the simplex
    weights reproducing unit ``i``'s random-walk loadings from the others.
    """

    N: int
    T: int
    S: int
    loadings: np.ndarray
    r0: int
    r1: int = 0
    rho: tuple = ()
    innovation_sd: tuple = ()
    noise_sd: float = 0.5
    cointegration: bool = False
    coint_weights: np.ndarray | None = None

    def __post_init__(self):
        lam = np.atleast_2d(np.asarray(self.loadings, dtype=float))
        object.__setattr__(self, "loadings", lam)
        object.__setattr__(self, "rho", tuple(float(r) for r in self.rho))
        sd = tuple(float(s) for s in self.innovation_sd) or (1.0,) * (self.r0 + self.r1)
        object.__setattr__(self, "innovation_sd", sd)
        if self.coint_weights is not None:
            object.__setattr__(self, "coint_weights", np.asarray(self.coint_weights, dtype=float))
        self.validate()

    @property
    def r(self) -> int:
        return self.r0 + self.r1

    def validate(self) -> None:
        if self.N < 2 or self.T < 2 or self.S < 1:
            raise InvalidDGP(f"need N >= 2, T >= 2, S >= 1 (got N={self.N}, T={self.T}, S={self.S})")
        if self.loadings.shape != (self.N, self.r):
            raise InvalidDGP(f"loadings must be {self.N} x {self.r}, got {self.loadings.shape}")
        if len(self.rho) != self.r0:
            raise InvalidDGP(f"need {self.r0} AR coefficients, got {len(self.rho)}")
        if any(abs(r) >= 1 for r in self.rho):
            raise InvalidDGP(f"stationary factors need |rho| < 1, got {self.rho}")
        if len(self.innovation_sd) != self.r or any(s < 0 for s in self.innovation_sd):
            raise InvalidDGP("innovation_sd must hold one nonnegative value per factor")
        if self.noise_sd < 0:
            raise InvalidDGP("noise_sd must be nonnegative")
        if self.cointegration and self.r1 == 0:
            raise InvalidDGP("cointegration requires at least one random-walk factor (r1 > 0)")
        if self.r1 > 0 and not self.cointegration:
            raise InvalidDGP("random-walk factors without cointegration are outside the supported models")
        if self.cointegration:
            W = self.coint_weights
            if W is None or W.shape != (self.N, self.N):
                raise InvalidDGP("cointegration needs an N x N coint_weights matrix")
            if np.any(np.diag(W) != 0) or np.any(W < 0) or not np.allclose(W.sum(axis=1), 1.0, atol=1e-12):
                raise InvalidDGP("coint_weights rows must lie on the simplex with zero diagonal")
            if self.coint_error() > 1e-12:
                raise InvalidDGP("random-walk loadings are not reproduced by coint_weights")

    def coint_error(self) -> float:
        """``max_i |lambda1_i - sum_j w_ij lambda1_j|`` for the stored weights."""
        if self.coint_weights is None or self.r1 == 0:
            return 0.0
        lam1 = self.loadings[:, self.r0 :]
        return float(np.abs(lam1 - self.coint_weights @ lam1).max())

    def with_(self, **changes) -> "FactorDGP":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(changes)
        return FactorDGP(**d)

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "T": self.T,
            "S": self.S,
            "r0": self.r0,
            "r1": self.r1,
            "rho": list(self.rho),
            "innovation_sd": list(self.innovation_sd),
            "noise_sd": self.noise_sd,
            "cointegration": self.cointegration,
            "loadings": self.loadings.tolist(),
            "coint_weights": None if self.coint_weights is None else self.coint_weights.tolist(),
        }


def stationary_dgp(N=6, T=200, S=4, rho=(0.5, 0.8), innovation_sd=None, noise_sd=0.5, rng=None) -> FactorDGP:
    """Stationary AR(1) factors with loadings drawn uniform on [0, 1]."""
    rng = np.random.default_rng(rng)
    r0 = len(rho)
    lam = rng.uniform(0.0, 1.0, size=(N, r0))
    sd = innovation_sd if innovation_sd is not None else (1.0,) * r0
    return FactorDGP(N=N, T=T, S=S, loadings=lam, r0=r0, rho=tuple(rho), innovation_sd=tuple(sd), noise_sd=noise_sd)


def cointegrated_dgp(N=6, T=400, S=4, rho=(0.5,), noise_sd=0.5, rw_sd=1.0, rng=None) -> FactorDGP:
    """One random-walk factor plus stationary AR(1) factors.

    Units 0 and 1 are anchors with random-walk loadings 0 and 1.  Units 2 and
    3 replicate the anchors' loadings, so that the anchors themselves have a
    convex representation; the remaining units load on a uniform convex
    combination of the anchors.
    """
    if N < 4:
        raise InvalidDGP("the cointegrated design needs N >= 4 (two anchors and their twins)")
    rng = np.random.default_rng(rng)
    r0 = len(rho)
    lam0 = rng.uniform(0.0, 1.0, size=(N, r0))
    W = np.zeros((N, N))
    W[0, 2] = W[2, 0] = 1.0
    W[1, 3] = W[3, 1] = 1.0
    for i in range(4, N):
        u = rng.uniform()
        W[i, 0], W[i, 1] = u, 1.0 - u
    lam1 = np.zeros(N)
    lam1[[1, 3]] = 1.0
    lam1[4:] = W[4:, 1]
    loadings = np.column_stack([lam0, lam1])
    return FactorDGP(
        N=N,
        T=T,
        S=S,
        loadings=loadings,
        r0=r0,
        r1=1,
        rho=tuple(rho),
        innovation_sd=(1.0,) * r0 + (rw_sd,),
        noise_sd=noise_sd,
        cointegration=True,
        coint_weights=W,
    )


@dataclass(frozen=True)
class TreatmentPlan:
    """Adoption period per unit (post period ``1..S`` or ``None``) and effect schedule.

    The true effect of unit ``i`` at event time ``e`` is ``offset + delta * e``.
    """

    adoption: tuple
    delta: float = 1.0
    offset: float = 0.0

    def effect(self, unit: int, e: int) -> float:
        return self.offset + self.delta * e

    def validate(self, dgp: FactorDGP) -> None:
        if len(self.adoption) != dgp.N:
            raise InvalidDGP(f"adoption needs {dgp.N} entries, got {len(self.adoption)}")
        starts = [a for a in self.adoption if a is not None]
        if not starts:
            raise InvalidDGP("treatment plan treats no unit")
        if any(not 1 <= a <= dgp.S for a in starts):
            raise InvalidDGP(f"adoption periods must lie in 1..{dgp.S}")

    def to_dict(self) -> dict:
        return {"adoption": list(self.adoption), "delta": self.delta, "offset": self.offset}


def default_plan(N: int, S: int, delta: float = 1.0, offset: float = 0.0) -> TreatmentPlan:
    """First ``N // 2`` units adopt at post periods 1, 2, ...; the rest never do."""
    n_treated = max(1, N // 2)
    adoption = tuple((k % S) + 1 if k < n_treated else None for k in range(N))
    return TreatmentPlan(adoption, delta, offset)


def simulate_untreated(dgp: FactorDGP, rng) -> np.ndarray:
    """Draw ``Y(0)``, shape ``N x (T+S)``."""
    rng = np.random.default_rng(rng)
    P = dgp.T + dgp.S
    f = np.empty((dgp.r, P))
    shocks = rng.standard_normal((dgp.r, P))
    for k in range(dgp.r0):
        rho, sd = dgp.rho[k], dgp.innovation_sd[k]
        f[k, 0] = sd / math.sqrt(1.0 - rho * rho) * shocks[k, 0]
        for t in range(1, P):
            f[k, t] = rho * f[k, t - 1] + sd * shocks[k, t]
    for k in range(dgp.r0, dgp.r):
        f[k] = np.cumsum(dgp.innovation_sd[k] * shocks[k])
    noise = rng.standard_normal((dgp.N, P))
    return dgp.loadings @ f + dgp.noise_sd * noise


def _treatment_matrix(dgp: FactorDGP, plan: TreatmentPlan) -> np.ndarray:
    d = np.zeros((dgp.N, dgp.T + dgp.S), dtype=np.int8)
    for i, a in enumerate(plan.adoption):
        if a is not None:
            d[i, dgp.T + a - 1 :] = 1
    return d


def gen_panel(dgp: FactorDGP, plan: TreatmentPlan, seed) -> tuple[Panel, np.ndarray]:
    """Simulate a treated panel and the true effect vector in cell order."""
    plan.validate(dgp)
    y0 = simulate_untreated(dgp, seed)
    d = _treatment_matrix(dgp, plan)
    e = np.cumsum(d, axis=1)
    effects = np.zeros_like(y0)
    for i, p in zip(*np.nonzero(d)):
        effects[i, p] = plan.effect(int(i), int(e[i, p]))
    y = y0 + effects
    T_eff = int(np.flatnonzero(d.any(axis=0))[0])
    width = len(str(dgp.N))
    units = tuple(f"u{i + 1:0{width}d}" for i in range(dgp.N))
    periods = tuple(range(1, dgp.T + dgp.S + 1))
    panel = Panel(units, periods, y, d, T_eff, dgp.T + dgp.S - T_eff)
    index = build_effect_index(panel)
    tau = np.array([effects[i, index.T + s - 1] for i, s in index.cells])
    return panel, tau


def population_covariance(dgp: FactorDGP) -> np.ndarray:
    """Closed-form ``cov(Y_t(0))`` for a stationary design."""
    if dgp.r1:
        raise InvalidDGP("population covariance is undefined with random-walk factors")
    var_f = np.array([s * s / (1.0 - r * r) for r, s in zip(dgp.rho, dgp.innovation_sd)])
    lam = dgp.loadings
    return lam @ np.diag(var_f) @ lam.T + dgp.noise_sd**2 * np.eye(dgp.N)


def residual_sd(panel: Panel, wm, units=None) -> float:
    """Pooled SD of pre-period synthetic-control residuals (treated units by default)."""
    if units is None:
        units = [i for i, a in enumerate(panel.adoption_period()) if a is not None]
    r = wm.residuals(panel.pre_outcomes)[list(units)]
    return float(np.sqrt(np.mean(r**2)))


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class McSettings:
    """What each replication computes.

    ``null_offset`` shifts the tested null away from the true ATT at
    ``test_horizon`` (0 gives a size study).
    """

    alphas: tuple = (0.10,)
    test_horizon: int = 1
    null_offset: float = 0.0
    mode: str = "plug-in"
    normalization: str = "pre-period"
    rcond_min: float = 1e-10
    tol: float = 1e-10
    ci: bool = True
    ci_points: int = 401

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alphas"] = list(self.alphas)
        return d


@dataclass(frozen=True)
class McReport:
    replications: int
    completed: int
    seed: int
    horizons: tuple
    n_s: tuple
    true_att: tuple
    bias: tuple
    sd: tuple
    rmse: tuple
    mc_se: tuple
    alphas: tuple
    rejection_rate: tuple
    coverage: tuple
    mean_ci_width: tuple
    failures: dict = field(default_factory=dict)
    settings: dict = field(default_factory=dict)
    dgp: dict = field(default_factory=dict)
    plan: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def horizon_table(self) -> list[dict]:
        return [
            {"s": s, "n_s": n, "true_att": a, "bias": b, "sd": sd, "rmse": r, "mc_se": se}
            for s, n, a, b, sd, r, se in zip(
                self.horizons, self.n_s, self.true_att, self.bias, self.sd, self.rmse, self.mc_se
            )
        ]

    def level_table(self) -> list[dict]:
        return [
            {"alpha": a, "rejection_rate": rr, "coverage": cv, "mean_ci_width": w}
            for a, rr, cv, w in zip(self.alphas, self.rejection_rate, self.coverage, self.mean_ci_width)
        ]


def study_streams(seed: int, reps: int):
    """Design stream and per-replication seed sequences for a study seed."""
    design, replications = np.random.SeedSequence(seed).spawn(2)
    return design, replications.spawn(reps)


def _one_replication(dgp: FactorDGP, plan: TreatmentPlan, settings: McSettings, seq) -> dict:
    rng = np.random.Generator(np.random.PCG64(seq))
    panel, tau = gen_panel(dgp, plan, rng)
    index = build_effect_index(panel)
    try:
        wm = fit_all(panel, tol=settings.tol)
        est = estimate_tau(panel, index, wm, settings.rcond_min)
    except NotInvertible:
        return {"failure": "NotInvertible"}
    except StaggeredSCError as exc:
        return {"failure": type(exc).__name__}
    path = att_path(panel, index, est)
    truth = [float(att_weights(panel, index, s) @ tau) for s in path.horizons]
    out = {
        "horizons": path.horizons,
        "n_s": path.n_s,
        "error": [e - t for e, t in zip(path.estimates, truth)],
        "truth": truth,
        "reject": [],
        "cover": [],
        "width": [],
    }
    h = settings.test_horizon
    l = att_weights(panel, index, h)
    true_h = float(l @ tau)
    hyp = HypothesisSpec(l[None, :], [true_h + settings.null_offset])
    draws = rolling_statistics(panel, index, wm, hyp, settings.mode, tau=est, tol=settings.tol)
    stat = test_statistic(est, hyp)
    for a in settings.alphas:
        q, _ = critical_value(draws, panel.T, a, settings.normalization)
        out["reject"].append(bool(stat > q))
        if settings.ci:
            ci = invert_test(
                panel, index, wm, est, l, a,
                mode=settings.mode, normalization=settings.normalization, null_draws=draws, points=settings.ci_points,
            )
            out["cover"].append(ci.covers(true_h))
            out["width"].append(ci.width)
    return out


def _run_chunk(args):
    dgp, plan, settings, seqs = args
    return [_one_replication(dgp, plan, settings, s) for s in seqs]


def _fmean(xs) -> float:
    xs = list(xs)
    return math.fsum(xs) / len(xs) if xs else float("nan")


def run_monte_carlo(
    dgp: FactorDGP,
    plan: TreatmentPlan,
    settings: McSettings | None = None,
    reps: int = 1000,
    seed: int = 0,
    n_jobs: int = 1,
) -> McReport:
    """Repeat simulate -> fit -> estimate -> test -> invert over ``reps`` replications."""
    if reps < 1:
        raise InvalidDGP("reps must be at least 1")
    settings = settings or McSettings()
    plan.validate(dgp)
    _, seqs = study_streams(seed, reps)
    if n_jobs > 1:
        chunks = [seqs[k::n_jobs] for k in range(n_jobs)]
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(_run_chunk, [(dgp, plan, settings, c) for c in chunks]))
        results = [None] * reps
        for k, part in enumerate(parts):
            results[k::n_jobs] = part
    else:
        results = _run_chunk((dgp, plan, settings, seqs))

    failures: dict[str, int] = {}
    ok = []
    for r in results:
        if "failure" in r:
            failures[r["failure"]] = failures.get(r["failure"], 0) + 1
        else:
            ok.append(r)
    if not ok:
        raise StaggeredSCError(f"all {reps} replications failed: {failures}")

    horizons = ok[0]["horizons"]
    n = len(ok)
    bias, sd, rmse, se = [], [], [], []
    for k in range(len(horizons)):
        errs = [r["error"][k] for r in ok]
        m = _fmean(errs)
        var = math.fsum((e - m) ** 2 for e in errs) / max(n - 1, 1)
        bias.append(m)
        sd.append(math.sqrt(var))
        rmse.append(math.sqrt(_fmean(e * e for e in errs)))
        se.append(math.sqrt(var / n))
    rej = tuple(_fmean(float(r["reject"][j]) for r in ok) for j in range(len(settings.alphas)))
    if settings.ci:
        cov = tuple(_fmean(float(r["cover"][j]) for r in ok) for j in range(len(settings.alphas)))
        wid = tuple(_fmean(r["width"][j] for r in ok) for j in range(len(settings.alphas)))
    else:
        cov = wid = tuple(float("nan") for _ in settings.alphas)
    return McReport(
        replications=reps,
        completed=n,
        seed=seed,
        horizons=tuple(horizons),
        n_s=tuple(ok[0]["n_s"]),
        true_att=tuple(ok[0]["truth"]),
        bias=tuple(bias),
        sd=tuple(sd),
        rmse=tuple(rmse),
        mc_se=tuple(se),
        alphas=tuple(settings.alphas),
        rejection_rate=rej,
        coverage=cov,
        mean_ci_width=wid,
        failures=failures,
        settings=settings.to_dict(),
        dgp=dgp.to_dict(),
        plan=plan.to_dict(),
    )


# ---------------------------------------------------------------------------
# declarative study files
# ---------------------------------------------------------------------------

STUDY_KEYS = {
    # design
    "model": "stationary | cointegrated",
    "N": "number of units",
    "T": "pre-treatment periods",
    "S": "post-treatment periods",
    "rho": "AR(1) coefficient per stationary factor",
    "innovation_sd": "innovation SD per factor (stationary first, then random walk)",
    "noise_sd": "idiosyncratic noise SD",
    "rw_sd": "random-walk innovation SD (cointegrated model)",
    "loadings": "explicit N x r loading matrix (optional; drawn from the seed otherwise)",
    "coint_weights": "explicit N x N cointegrating simplex weights (with explicit loadings)",
    # treatment
    "adoption": "post period of adoption per unit, null for never treated",
    "delta": "effect slope in event time",
    "offset": "effect level",
    # study
    "reps": "replications",
    "alphas": "test levels",
    "test_horizon": "event time whose ATT is tested",
    "null_offset": "null minus true ATT, absolute",
    "null_offset_sd": "null minus true ATT, in pilot pre-period residual SDs",
    "mode": "plug-in | leave-half-out",
    "normalization": "pre-period | empirical",
    "rcond_min": "invertibility threshold",
    "tol": "weight solver optimality tolerance",
    "ci": "also invert the test (true/false)",
    "ci_points": "grid points for test inversion",
}


@dataclass(frozen=True)
class Study:
    dgp: FactorDGP
    plan: TreatmentPlan
    settings: McSettings
    reps: int
    seed: int
    pilot_sd: float | None = None


def build_study(config: dict, seed: int, reps: int | None = None) -> Study:
    """Turn a study configuration mapping into a concrete design.

    Loadings (when not given) and the pilot panel used for ``null_offset_sd``
    come from the seed's design stream.
    """
    from .errors import ConfigError

    unknown = set(config) - set(STUDY_KEYS)
    if unknown:
        raise ConfigError(f"unknown study keys {sorted(unknown)}; documented keys: {sorted(STUDY_KEYS)}")
    model = config.get("model", "stationary")
    N, T, S = int(config.get("N", 6)), int(config.get("T", 200)), int(config.get("S", 4))
    design, _ = study_streams(seed, 1)
    loadings_seq, pilot_seq = design.spawn(2)
    rng = np.random.default_rng(loadings_seq)
    try:
        if model == "stationary":
            rho = tuple(config.get("rho", (0.5, 0.8)))
            dgp = stationary_dgp(N, T, S, rho=rho, innovation_sd=config.get("innovation_sd"),
                                 noise_sd=float(config.get("noise_sd", 0.5)), rng=rng)
        elif model == "cointegrated":
            rho = tuple(config.get("rho", (0.5,)))
            dgp = cointegrated_dgp(N, T, S, rho=rho, noise_sd=float(config.get("noise_sd", 0.5)),
                                   rw_sd=float(config.get("rw_sd", 1.0)), rng=rng)
            if "innovation_sd" in config:
                dgp = dgp.with_(innovation_sd=tuple(config["innovation_sd"]))
        else:
            raise ConfigError(f"unknown model {model!r}; use 'stationary' or 'cointegrated'")
        if "loadings" in config:
            dgp = dgp.with_(loadings=np.asarray(config["loadings"], dtype=float),
                            coint_weights=config.get("coint_weights", dgp.coint_weights))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad study parameter: {exc}") from None

    if "adoption" in config:
        plan = TreatmentPlan(tuple(config["adoption"]), float(config.get("delta", 1.0)), float(config.get("offset", 0.0)))
    else:
        plan = default_plan(N, S, float(config.get("delta", 1.0)), float(config.get("offset", 0.0)))
    plan.validate(dgp)

    null_offset = float(config.get("null_offset", 0.0))
    pilot_sd = None
    if config.get("null_offset_sd"):
        pilot, _ = gen_panel(dgp, plan, np.random.default_rng(pilot_seq))
        pilot_sd = residual_sd(pilot, fit_all(pilot))
        null_offset += float(config["null_offset_sd"]) * pilot_sd

    settings = McSettings(
        alphas=tuple(float(a) for a in config.get("alphas", (0.10,))),
        test_horizon=int(config.get("test_horizon", 1)),
        null_offset=null_offset,
        mode=config.get("mode", "plug-in"),
        normalization=config.get("normalization", "pre-period"),
        rcond_min=float(config.get("rcond_min", 1e-10)),
        tol=float(config.get("tol", 1e-10)),
        ci=bool(config.get("ci", True)),
        ci_points=int(config.get("ci_points", 401)),
    )
    n_reps = int(reps if reps is not None else config.get("reps", 1000))
    return Study(dgp, plan, settings, n_reps, seed, pilot_sd)


def run_study(study: Study, n_jobs: int = 1) -> McReport:
    return run_monte_carlo(study.dgp, study.plan, study.settings, study.reps, study.seed, n_jobs)
