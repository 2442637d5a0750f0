"""Command-line interface.

Exit codes: 0 success, 1 other library error, 2 usage, 3 panel data,
4 hypothesis/specification, 5 weight fitting, 6 not invertible,
7 inference, 8 study configuration, 9 missing fit, 10 file I/O.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings
from importlib import resources
from pathlib import Path

import numpy as np

from . import io
from .errors import StaggeredSCError
from .estimator import DEFAULT_RCOND_MIN, att_path, estimate_tau, gap_series
from .inference import MODES, NORMALIZATIONS, invert_test, rolling_statistics, run_test
from .panel import att_hypothesis, att_weights, build_effect_index, event_time, policy_contrast
from .simulate import build_study, run_study
from .weights import fit_all

OUT_ENV = "STAGGERED_SYNTH_OUT"
EXIT_IO = 10

logger = logging.getLogger("staggered_synth")


def _bundled(name: str) -> Path | None:
    root = resources.files("staggered_synth") / "data"
    for cand in (name, f"{name}.json", f"{name}.csv"):
        p = root / cand
        if p.is_file():
            return Path(str(p))
    return None


def _resolve(path: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    b = _bundled(path)
    if b is not None:
        return b
    raise FileNotFoundError(f"no such file: {path}")


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _common_config(args) -> dict:
    cfg = {"alpha": args.alpha, "mode": args.mode, "normalization": args.normalization,
           "rcond_min": args.rcond_min, "tol": args.tol}
    return cfg


def _pipeline(args):
    panel = io.read_panel_csv(_resolve(args.input))
    index = build_effect_index(panel)
    wm = fit_all(panel, tol=args.tol)
    est = estimate_tau(panel, index, wm, args.rcond_min)
    return panel, index, wm, est


def _parse_grid(text):
    if text is None:
        return None
    try:
        lo, hi, step = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must be lo,hi,step, got {text!r}") from None
    return lo, hi, step


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    src = _resolve(args.input)
    panel = io.read_panel_csv(src)
    out = _out_dir(args)
    io.write_panel_csv(panel, out / "panel.csv")
    adoption = panel.adoption_period()
    summary = {
        "N": panel.N,
        "T": panel.T,
        "S": panel.S,
        "K": build_effect_index(panel).K,
        "units": [str(u) for u in panel.unit_ids],
        "first_period": str(panel.time_ids[0]),
        "last_period": str(panel.time_ids[-1]),
        "adoption": {str(u): (None if a is None else str(panel.time_ids[a])) for u, a in zip(panel.unit_ids, adoption)},
    }
    io.write_json(out / "panel_summary.json", summary)
    print(f"panel: N={panel.N} T={panel.T} S={panel.S} K={summary['K']}")
    return 0


def cmd_fit(args) -> int:
    panel, index, wm, est = _pipeline(args)
    out = _out_dir(args)
    path = att_path(panel, index, est)
    io.write_weights(out / "weights.csv", panel, wm)
    io.write_tau(out / "tau.csv", panel, index, est)
    io.write_att_path(out / "att_path.csv", path)
    cfg = _common_config(args)
    cfg["gram_rcond"] = est.gram_rcond
    cfg["non_unique_units"] = [str(panel.unit_ids[i]) for i in wm.non_unique]
    io.write_json(out / "manifest_fit.json", io.manifest("fit", {"input": _resolve(args.input)}, cfg))
    for s, n, v in path.as_rows():
        print(f"ATT[{s}] = {v:.6g}  (n={n})")
    return 0


def _hypothesis(args, panel, index):
    chosen = sum(x is not None for x in (args.att, args.contrast, args.hypothesis_file))
    if chosen != 1:
        raise argparse.ArgumentTypeError("give exactly one of --att, --contrast, --hypothesis-file")
    if args.att is not None:
        return att_hypothesis(panel, index, args.att, args.null), [f"att_{args.att}"]
    if args.contrast is not None:
        if args.horizon is None:
            raise argparse.ArgumentTypeError("--contrast needs --horizon")
        a, b = ([g.strip() for g in grp.split(",") if g.strip()] for grp in args.contrast)
        return policy_contrast(panel, index, a, b, args.horizon), [f"contrast_{args.horizon}"]
    return io.read_hypothesis_file(_resolve(args.hypothesis_file), index.K), None


def cmd_test(args) -> int:
    panel, index, wm, est = _pipeline(args)
    hyp, labels = _hypothesis(args, panel, index)
    draws = rolling_statistics(panel, index, wm, hyp, args.mode, tau=est, tol=args.tol)
    res = run_test(panel, index, wm, est, hyp, args.alpha, args.mode, args.normalization, null_draws=draws)
    out = _out_dir(args)
    io.write_json(out / "test_report.json", res.to_report(labels=labels))
    io.write_table(out / "null_draws.csv", ("t", "p_t"), zip(range(1, len(draws) + 1), draws))
    inputs = {"input": _resolve(args.input)}
    if args.hypothesis_file:
        inputs["hypothesis"] = _resolve(args.hypothesis_file)
    io.write_json(out / "manifest_test.json", io.manifest("test", inputs, _common_config(args)))
    print(
        f"statistic={res.statistic:.6g} critical_value={res.critical_value:.6g} "
        f"p_value={res.p_value:.4f} reject={res.reject}"
    )
    return 0


def _intervals(args, panel, index, wm, est, grid=None):
    rows = []
    for s in att_path(panel, index, est).horizons:
        l = att_weights(panel, index, s)
        hyp = att_hypothesis(panel, index, s)
        draws = rolling_statistics(panel, index, wm, hyp, args.mode, tau=est, tol=args.tol)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ci = invert_test(panel, index, wm, est, l, args.alpha, grid=grid, mode=args.mode,
                             normalization=args.normalization, null_draws=draws, points=args.points)
        if ci.truncated:
            logger.warning("horizon %d: grid too narrow, interval truncated", s)
        rows.append((s, int(np.count_nonzero(l)), ci))
    return rows


def cmd_ci(args) -> int:
    panel, index, wm, est = _pipeline(args)
    rows = _intervals(args, panel, index, wm, est, _parse_grid(args.grid))
    out = _out_dir(args)
    io.write_table(
        out / "ci.csv",
        ("s", "att_hat", "lo", "hi", "alpha", "truncated"),
        [(s, ci.estimate, ci.lo, ci.hi, ci.alpha, ci.truncated) for s, _, ci in rows],
    )
    io.write_json(out / "manifest_ci.json", io.manifest("ci", {"input": _resolve(args.input)}, _common_config(args)))
    for s, _, ci in rows:
        flag = "  (truncated)" if ci.truncated else ""
        print(f"ATT[{s}] = {ci.estimate:.6g}  [{ci.lo:.6g}, {ci.hi:.6g}]{flag}")
    return 0


def cmd_simulate(args) -> int:
    cfg_path = _resolve(args.config)
    config = io.read_json(cfg_path)
    study = build_study(config, args.seed, reps=args.reps)
    report = run_study(study, n_jobs=args.jobs)
    out = _out_dir(args)
    io.write_json(out / "mc_report.json", report.to_dict())
    h = report.horizon_table()
    io.write_table(out / "mc_horizons.csv", list(h[0].keys()), [list(r.values()) for r in h])
    lv = report.level_table()
    io.write_table(out / "mc_levels.csv", list(lv[0].keys()), [list(r.values()) for r in lv])
    cfg = dict(config)
    cfg["reps"] = study.reps
    cfg["pilot_residual_sd"] = study.pilot_sd
    io.write_json(out / "manifest_simulate.json", io.manifest("simulate", {"config": cfg_path}, cfg, seed=args.seed))
    for row in h:
        print(f"s={row['s']} bias={row['bias']:+.4g} mc_se={row['mc_se']:.3g} rmse={row['rmse']:.4g}")
    for row in lv:
        print(f"alpha={row['alpha']} rejection_rate={row['rejection_rate']:.3f} coverage={row['coverage']:.3f}")
    if report.failures:
        print(f"failures: {report.failures}")
    return 0


def cmd_plotdata(args) -> int:
    panel = io.read_panel_csv(_resolve(args.input))
    index = build_effect_index(panel)
    fit_dir = Path(args.fit_dir or args.out or os.environ.get(OUT_ENV) or "out")
    wm = io.read_weights(fit_dir / "weights.csv", panel)
    est = estimate_tau(panel, index, wm, args.rcond_min)
    rows = _intervals(args, panel, index, wm, est)
    out = _out_dir(args)
    io.write_table(
        out / "plot_att.csv",
        ("s", "n_s", "att_hat", "lo", "hi", "alpha"),
        [(s, n, ci.estimate, ci.lo, ci.hi, ci.alpha) for s, n, ci in rows],
    )
    gaps = gap_series(panel, index, wm, est)
    adoption = panel.adoption_period()
    e = event_time(panel)
    gap_rows = []
    for i, u in enumerate(panel.unit_ids):
        a = adoption[i]
        for p, t in enumerate(panel.time_ids):
            rel = None if a is None else p - a + 1
            gap_rows.append((u, t, p + 1, rel, int(e[i, p]), int(panel.treated[i, p]), float(gaps[i, p])))
    io.write_table(
        out / "plot_gaps.csv",
        ("unit", "period", "period_index", "relative_time", "event_time", "treated", "gap"),
        gap_rows,
    )
    print(f"wrote {out / 'plot_att.csv'} and {out / 'plot_gaps.csv'}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser, needs_input: bool = True) -> None:
    if needs_input:
        p.add_argument("--input", "-i", required=True, help="long-format panel file (unit,time,outcome,treated)")
    p.add_argument("--out", "-o", default=None, help=f"output directory (default ${OUT_ENV} or ./out)")
    p.add_argument("--alpha", type=float, default=0.10, help="test level (default 0.10)")
    p.add_argument("--mode", choices=MODES, default="plug-in", help="rolling-residual parameters (default plug-in)")
    p.add_argument("--normalization", choices=NORMALIZATIONS, default="pre-period",
                   help="divisor of the empirical CDF: T ('pre-period') or number of draws ('empirical')")
    p.add_argument("--rcond-min", type=float, default=DEFAULT_RCOND_MIN, help="invertibility threshold (default 1e-10)")
    p.add_argument("--tol", type=float, default=1e-10, help="weight solver optimality tolerance (default 1e-10)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="staggered-synth",
        description="Synthetic control estimation and inference for staggered adoption.",
        epilog=__doc__.split("\n\n", 1)[1].strip(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a panel file and write a normalised copy")
    p.add_argument("--input", "-i", required=True)
    p.add_argument("--out", "-o", default=None)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("fit", help="fit weights and estimate all cell effects and the ATT path")
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("test", help="end-of-sample instability test of a linear hypothesis")
    _add_common(p)
    p.add_argument("--att", type=int, default=None, metavar="S", help="test the event-time S ATT")
    p.add_argument("--null", type=float, default=0.0, help="null value for --att (default 0)")
    p.add_argument("--contrast", nargs=2, default=None, metavar=("GROUP_A", "GROUP_B"),
                   help="comma-separated unit labels of two policy groups")
    p.add_argument("--horizon", type=int, default=None, help="event time for --contrast")
    p.add_argument("--hypothesis-file", default=None,
                   help="rows of K coefficients followed by the null value")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("ci", help="confidence intervals for the ATT path by test inversion")
    _add_common(p)
    p.add_argument("--grid", default=None, help="lo,hi,step applied to every horizon (default: estimate +/- 10 IQR)")
    p.add_argument("--points", type=int, default=401, help="default-grid size (default 401)")
    p.set_defaults(func=cmd_ci)

    p = sub.add_parser("simulate", help="run a Monte Carlo study from a JSON study file")
    p.add_argument("--config", "-c", required=True, help="study file or bundled name (size_study, bias_study, ...)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--reps", type=int, default=None, help="override the study's replication count")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--out", "-o", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("plotdata", help="figure-ready ATT-with-CI and gap tables from a completed fit")
    _add_common(p)
    p.add_argument("--fit-dir", default=None, help="directory holding weights.csv (default: the output directory)")
    p.add_argument("--points", type=int, default=401)
    p.set_defaults(func=cmd_plotdata)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except StaggeredSCError as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except argparse.ArgumentTypeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error [io]: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
