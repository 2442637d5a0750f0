"""Acceptance gate: one check per criterion, each printing a PASS/FAIL line.

Monte Carlo criteria use the bundled study files at the fixed seed
``ACCEPTANCE_SEED``; every replication stream derives from that seed.
"""

import json
import subprocess
import sys
import time
import warnings
from importlib import resources

import numpy as np
import pytest

from staggered_synth import errors, estimator as est, panel as pc, simulate as sim, weights as sw
from conftest import make_panel, representable_panel, staggered_treatment
from oracles import grid_objective, simplex_grid, tau_minimize

ACCEPTANCE_SEED = 42
REPS = 1000


def report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\n[acceptance] criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def bundled_study(name):
    cfg = json.loads((resources.files("staggered_synth") / "data" / f"{name}.json").read_text())
    assert cfg["reps"] == REPS
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        start = time.perf_counter()
        rep = sim.run_study(sim.build_study(cfg, ACCEPTANCE_SEED))
    return rep, time.perf_counter() - start


@pytest.fixture(scope="module")
def size_study():
    return bundled_study("size_study")


def bias_detail(rep):
    z = [b / se for b, se in zip(rep.bias, rep.mc_se)]
    return z, ", ".join(f"s={s}: bias={b:+.4f} (z={v:+.2f})" for s, b, v in zip(rep.horizons, rep.bias, z))


def test_criterion_01_weight_solver_matches_grid_search(capsys):
    rng = np.random.default_rng(101)
    grids = {J: simplex_grid(J) for J in (1, 2, 3)}
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        N = int(rng.integers(2, 5))
        Y = rng.normal(size=(N, 50))
        i = int(rng.integers(N))
        Yp = np.hstack([Y, np.zeros((N, 1))])
        D = np.zeros_like(Yp, dtype=int)
        D[i, -1] = 1
        fit = sw.fit_unit_weights(make_panel(Yp, D), i)
        ref = grid_objective(Y[i], np.delete(Y, i, 0), grids[N - 1])
        worst = max(worst, abs(fit.objective - ref))
    elapsed = time.perf_counter() - start
    report(capsys, 1, worst <= 1e-4 and elapsed < 30, f"max |solver - grid| = {worst:.2e}, {elapsed:.1f}s")


def test_criterion_02_exact_representation_recovered(capsys):
    rng = np.random.default_rng(202)
    worst = 0.0
    for _ in range(50):
        N, T = int(rng.integers(3, 8)), int(rng.integers(10, 60))
        X = rng.normal(size=(N - 1, T)).cumsum(axis=1)
        support = rng.choice(N - 1, size=min(2, N - 1), replace=False)
        w = np.zeros(N - 1)
        w[support] = rng.dirichlet(np.ones(support.size))
        a = rng.normal(scale=5)
        y = a + w @ X
        Y = np.vstack([y, X])
        D = np.zeros((N, T + 1), dtype=int)
        D[0, -1] = 1
        fit = sw.fit_unit_weights(make_panel(np.hstack([Y, np.zeros((N, 1))]), D), 0)
        worst = max(worst, abs(fit.intercept - a), float(np.abs(fit.weights[1:] - w).max()))
    report(capsys, 2, worst <= 1e-6, f"max recovery error = {worst:.2e}")


def test_criterion_03_closed_form_equals_numerical_minimiser(capsys):
    rng = np.random.default_rng(303)
    worst = 0.0
    for _ in range(100):
        N, T, S = int(rng.integers(3, 7)), int(rng.integers(15, 40)), int(rng.integers(1, 4))
        adoption = [int(x) if x <= S else None for x in rng.integers(1, S + 2, size=N)]
        adoption[0], adoption[-1] = 1, None
        D = staggered_treatment(N, T, S, adoption)
        p = make_panel(rng.normal(size=D.shape).cumsum(axis=1) + D, D)
        idx = pc.build_effect_index(p)
        wm = sw.fit_all(p)
        tau = est.estimate_tau(p, idx, wm)
        sel = [idx.selector(s) for s in range(1, S + 1)]
        ref = tau_minimize(np.asarray(p.outcomes[:, p.T :]), wm.intercepts, wm.B, sel)
        worst = max(worst, float(np.abs(tau.tau_hat - ref).max()))
    report(capsys, 3, worst <= 1e-6, f"max |closed form - minimiser| = {worst:.2e}")


def test_criterion_04_zero_noise_exactness(capsys):
    rng = np.random.default_rng(404)
    worst, checked = 0.0, 0
    for _ in range(50):
        N, T, S = int(rng.integers(4, 8)), int(rng.integers(10, 50)), int(rng.integers(1, 5))
        adoption = [int(x) if x <= S else None for x in rng.integers(1, S + 2, size=N)]
        adoption[0], adoption[-1] = 1, None
        Y0, D, eff = representable_panel(rng, N, T, S, adoption)
        p = make_panel(Y0 + eff, D)
        idx = pc.build_effect_index(p)
        wm = sw.fit_all(p)
        try:
            tau = est.estimate_tau(p, idx, wm)
        except errors.NotInvertible:
            continue
        truth = np.array([eff[i, p.T + s - 1] for i, s in idx.cells])
        worst = max(worst, float(np.abs(tau.tau_hat - truth).max()))
        checked += 1
    report(capsys, 4, checked >= 25 and worst <= 1e-8, f"{checked} invertible panels, max error = {worst:.2e}")


def test_criterion_05_unbiased_stationary(capsys):
    rep, elapsed = bundled_study("bias_study")
    z, detail = bias_detail(rep)
    ok = rep.dgp["T"] == 200 and rep.completed == REPS and max(abs(v) for v in z) < 3 and elapsed < 300
    report(capsys, 5, ok, f"T=200, {rep.completed} reps, {elapsed:.0f}s; {detail}")


@pytest.mark.parametrize("alpha", [0.05, 0.10])
def test_criterion_06_size(capsys, size_study, alpha):
    rep, _ = size_study
    rate = rep.rejection_rate[rep.alphas.index(alpha)]
    ok = rep.dgp["T"] == 400 and rep.completed == REPS and abs(rate - alpha) <= 0.03
    report(capsys, 6, ok, f"alpha={alpha:.2f}: rejection rate {rate:.3f} over {rep.completed} reps (T=400)")


def test_criterion_07_coverage(capsys, size_study):
    rep, _ = size_study
    cov = rep.coverage[rep.alphas.index(0.10)]
    report(capsys, 7, abs(cov - 0.90) <= 0.03, f"90% interval coverage {cov:.3f} over {rep.completed} reps")


def test_criterion_08_power(capsys):
    rep, _ = bundled_study("power_study")
    rate = rep.rejection_rate[rep.alphas.index(0.10)]
    ok = rep.dgp["T"] == 400 and rate >= 0.8
    report(capsys, 8, ok, f"null off by {rep.settings['null_offset']:.3f} (5 residual SDs): rejection rate {rate:.3f}")


def test_criterion_09_unbiased_cointegrated(capsys):
    rep, _ = bundled_study("coint_bias_study")
    z, detail = bias_detail(rep)
    ok = rep.dgp["cointegration"] and rep.dgp["T"] == 400 and max(abs(v) for v in z) < 3
    report(capsys, 9, ok, f"T=400, {rep.completed} reps; {detail}")


def test_criterion_10_all_treated_period_not_invertible(capsys):
    rng = np.random.default_rng(1010)
    D = staggered_treatment(4, 30, 3, [1, 2, 3, 3])  # all four treated at the last period
    p = make_panel(rng.normal(size=D.shape), D)
    idx = pc.build_effect_index(p)
    messages = []
    for _ in range(3):
        with pytest.raises(errors.NotInvertible) as exc:
            est.estimate_tau(p, idx, sw.fit_all(p))
        messages.append(str(exc.value))
    ok = len(set(messages)) == 1
    report(capsys, 10, ok, messages[0])


def _cli(*args, cwd):
    out = subprocess.run([sys.executable, "-m", "staggered_synth.cli", *map(str, args)],
                         cwd=cwd, capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    return out


def test_criterion_11_end_to_end_determinism(capsys, tmp_path):
    runs = {}
    for tag in ("first", "second"):
        _cli("simulate", "--config", "size_study", "--seed", 42, "--reps", 100, "--out", tmp_path / tag / "sim", cwd=tmp_path)
        _cli("fit", "--input", "example_panel", "--out", tmp_path / tag / "fit", cwd=tmp_path)
        runs[tag] = {
            f.relative_to(tmp_path / tag): f.read_bytes() for f in sorted((tmp_path / tag).rglob("*")) if f.is_file()
        }
    same = runs["first"] == runs["second"]
    report(capsys, 11, same and len(runs["first"]) == 8, f"{len(runs['first'])} output files byte-identical across runs")
