"""Delimited-text and JSON file formats.

Floats are written with 17 significant digits so every table reads back to
the identical in-memory value.
"""

from __future__ import annotations

import csv
import hashlib
import json
import platform
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DimensionMismatch, InvalidRecord, MissingFit
from .estimator import AttPath, TauEstimate
from .panel import EffectIndex, HypothesisSpec, Panel, describe_cells, validate_panel
from .weights import UnitWeights, WeightModel

__all__ = [
    "fmt",
    "read_panel_csv",
    "write_panel_csv",
    "write_table",
    "read_table",
    "write_weights",
    "read_weights",
    "write_tau",
    "write_att_path",
    "read_hypothesis_file",
    "write_json",
    "manifest",
]

PANEL_HEADER = ("unit", "time", "outcome", "treated")


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    if x is None:
        return ""
    return str(x)


def write_table(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_table(path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def read_panel_csv(path) -> Panel:
    """Read a long-format ``unit,time,outcome,treated`` file."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(h.strip() for h in reader.fieldnames) != PANEL_HEADER:
            raise InvalidRecord(f"{path}: header must be {','.join(PANEL_HEADER)}, got {reader.fieldnames}")
        records = [
            (row["unit"], row["time"].strip(), row["outcome"], row["treated"].strip())
            for row in reader
        ]
    return validate_panel(records)


def write_panel_csv(panel: Panel, path) -> Path:
    return write_table(path, PANEL_HEADER, panel.to_records())


def write_weights(path, panel: Panel, wm: WeightModel) -> Path:
    """One row per (unit, donor) pair, zero weights included."""
    rows = []
    for i, u in enumerate(panel.unit_ids):
        fit = wm.fits[i] if wm.fits else None
        objective = fit.objective if fit is not None else float("nan")
        for j, donor in enumerate(panel.unit_ids):
            if j != i:
                rows.append((u, donor, float(wm.B[i, j]), float(wm.intercepts[i]), objective))
    return write_table(path, ("unit", "donor", "weight", "intercept", "objective"), rows)


def read_weights(path, panel: Panel) -> WeightModel:
    path = Path(path)
    if not path.exists():
        raise MissingFit(f"no weight table at {path}; run `fit` first")
    pos = {str(u): i for i, u in enumerate(panel.unit_ids)}
    N = panel.N
    B = np.zeros((N, N))
    a = np.full(N, np.nan)
    obj = np.full(N, np.nan)
    for row in read_table(path):
        try:
            i, j = pos[row["unit"]], pos[row["donor"]]
        except KeyError as exc:
            raise MissingFit(f"{path}: unit {exc.args[0]!r} is not in the panel") from None
        B[i, j] = float(row["weight"])
        a[i] = float(row["intercept"])
        obj[i] = float(row["objective"])
    if np.isnan(a).any():
        raise MissingFit(f"{path}: weight table does not cover every unit")
    fits = [UnitWeights(i, float(a[i]), B[i].copy(), float(obj[i])) for i in range(N)]
    return WeightModel.from_arrays(a, B, fits)


def write_tau(path, panel: Panel, index: EffectIndex, tau: TauEstimate) -> Path:
    rows = [
        (c["unit"], c["period"], c["event_time"], float(v))
        for c, v in zip(describe_cells(panel, index), tau.tau_hat)
    ]
    return write_table(path, ("cell_unit", "cell_period", "event_time", "tau_hat"), rows)


def write_att_path(path, att: AttPath) -> Path:
    return write_table(path, ("s", "n_s", "att_hat"), att.as_rows())


def read_hypothesis_file(path, K: int) -> HypothesisSpec:
    """Rows of ``K`` coefficients followed by the null value; ``#`` starts a comment."""
    rows = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                vals = [float(v) for v in line.replace(";", ",").split(",")]
            except ValueError:
                raise DimensionMismatch(f"{path}:{lineno}: non-numeric entry") from None
            if len(vals) != K + 1:
                raise DimensionMismatch(
                    f"{path}:{lineno}: expected {K + 1} values (K={K} coefficients and d), got {len(vals)}"
                )
            rows.append(vals)
    if not rows:
        raise DimensionMismatch(f"{path}: no restriction rows")
    arr = np.array(rows)
    return HypothesisSpec(arr[:, :K], arr[:, K])


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def manifest(command: str, inputs: dict, config: dict, seed=None) -> dict:
    """Provenance record; contains no timestamps so reruns are byte-identical."""
    import scipy

    return {
        "command": command,
        "inputs": {k: {"path": str(v), "sha256": _sha256(v)} for k, v in inputs.items() if v is not None},
        "config": config,
        "seed": seed,
        "versions": {
            "staggered_synth": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }
