"""Panel data model, treatment bookkeeping and linear functionals of the effects.

A panel holds ``N`` units observed over ``T + S`` periods.  The first ``T``
periods are treatment-free; treatment is absorbing afterwards.  Treated cells
are vectorised unit-major, period-minor into the effect vector ``tau``; every
parameter of interest is a linear map ``L @ tau``.

Internally periods are 0-based column positions: pre-period columns are
``0 .. T-1`` and post period ``s`` (1-based, ``1 <= s <= S``) is column
``T + s - 1``.
"""

from __future__ import annotations

import re
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import (
    DimensionMismatch,
    DuplicateCell,
    EmptyEventTime,
    EmptyGroup,
    InvalidPeriod,
    InvalidRecord,
    MissingCell,
    NoPrePeriod,
    NonAbsorbing,
    NoTreatedUnit,
    OverlappingGroups,
    SpecificationError,
)

__all__ = [
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
    "period_sort_key",
]

_QUARTER = re.compile(r"^(\d{4})Q([1-4])$")
_INTEGER = re.compile(r"^[+-]?\d+$")


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Panel:
    """Balanced outcome panel with absorbing 0/1 treatment."""

    unit_ids: tuple
    time_ids: tuple
    outcomes: np.ndarray
    treated: np.ndarray
    T: int
    S: int

    def __post_init__(self):
        object.__setattr__(self, "outcomes", _readonly(np.asarray(self.outcomes, dtype=float)))
        object.__setattr__(self, "treated", _readonly(np.asarray(self.treated, dtype=np.int8)))

    @property
    def N(self) -> int:
        return len(self.unit_ids)

    @property
    def n_periods(self) -> int:
        return self.T + self.S

    @property
    def pre_outcomes(self) -> np.ndarray:
        """``N x T`` block of treatment-free outcomes."""
        return self.outcomes[:, : self.T]

    def post_column(self, s: int) -> np.ndarray:
        """Outcome vector ``Y_{T+s}`` for post period ``s`` (1-based)."""
        return self.outcomes[:, self.T + s - 1]

    def unit_index(self, label) -> int:
        for i, u in enumerate(self.unit_ids):
            if u == label or str(u) == str(label):
                return i
        raise KeyError(f"unknown unit {label!r}")

    def adoption_period(self) -> list[int | None]:
        """Column of first treatment per unit, ``None`` for never-treated."""
        out: list[int | None] = []
        for row in self.treated:
            hit = np.flatnonzero(row)
            out.append(int(hit[0]) if hit.size else None)
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, Panel):
            return NotImplemented
        return (
            self.unit_ids == other.unit_ids
            and self.time_ids == other.time_ids
            and self.T == other.T
            and self.S == other.S
            and np.array_equal(self.outcomes, other.outcomes)
            and np.array_equal(self.treated, other.treated)
        )

    __hash__ = None  # type: ignore[assignment]

    def to_records(self) -> list[tuple]:
        return [
            (u, t, float(self.outcomes[i, p]), int(self.treated[i, p]))
            for i, u in enumerate(self.unit_ids)
            for p, t in enumerate(self.time_ids)
        ]

    def with_outcomes(self, outcomes: np.ndarray) -> "Panel":
        outcomes = np.asarray(outcomes, dtype=float)
        if outcomes.shape != self.outcomes.shape:
            raise DimensionMismatch(f"outcomes shape {outcomes.shape} != {self.outcomes.shape}")
        return Panel(self.unit_ids, self.time_ids, outcomes, self.treated, self.T, self.S)


@dataclass(frozen=True, eq=False)
class EffectIndex:
    """Vectorisation of the treated-cell set.

    ``cells[k] = (i, s)`` with unit index ``i`` and 1-based post period ``s``.
    ``selectors[s - 1]`` is the ``N x K`` matrix picking period ``T + s``
    effects out of ``tau``.
    """

    cells: tuple
    N: int
    T: int
    S: int
    selectors: np.ndarray = field(repr=False)

    @property
    def K(self) -> int:
        return len(self.cells)

    def selector(self, s: int) -> np.ndarray:
        return self.selectors[s - 1]

    def cells_at(self, s: int) -> list[int]:
        """Positions in ``tau`` of the cells at post period ``s``."""
        return [k for k, (_, ss) in enumerate(self.cells) if ss == s]

    def units_at(self, s: int) -> list[int]:
        return [i for i, ss in self.cells if ss == s]


@dataclass(frozen=True, eq=False)
class ParamSpec:
    """Linear parameter ``gamma = L @ tau``."""

    L: np.ndarray
    labels: tuple

    def __post_init__(self):
        L = np.atleast_2d(np.asarray(self.L, dtype=float))
        labels = tuple(self.labels)
        if len(labels) != L.shape[0]:
            raise DimensionMismatch(f"{len(labels)} labels for {L.shape[0]} rows of L")
        object.__setattr__(self, "L", _readonly(L))
        object.__setattr__(self, "labels", labels)

    def __add__(self, other: "ParamSpec") -> "ParamSpec":
        return ParamSpec(self.L + other.L, self.labels)


@dataclass(frozen=True, eq=False)
class HypothesisSpec:
    """Linear restriction ``C @ tau = d``."""

    C: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        d = np.atleast_1d(np.asarray(self.d, dtype=float)).ravel()
        if d.shape[0] != C.shape[0]:
            raise DimensionMismatch(f"C has {C.shape[0]} rows but d has length {d.shape[0]}")
        if not np.any(C != 0):
            raise SpecificationError("C must have at least one nonzero entry")
        object.__setattr__(self, "C", _readonly(C))
        object.__setattr__(self, "d", _readonly(d))

    def with_null(self, d) -> "HypothesisSpec":
        return HypothesisSpec(self.C, d)


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def period_sort_key(label):
    """Sort key for a period label: integer or ``YYYYQn``."""
    if isinstance(label, (int, np.integer)) and not isinstance(label, bool):
        return (0, int(label), 0)
    text = str(label).strip()
    if _INTEGER.match(text):
        return (0, int(text), 0)
    m = _QUARTER.match(text)
    if m:
        return (1, int(m.group(1)), int(m.group(2)))
    raise InvalidPeriod(f"unrecognised period label {label!r}; expected an integer or YYYYQn")


def _normalise_period(label):
    kind, a, _ = period_sort_key(label)
    return a if kind == 0 else str(label).strip()


def _unit_sort_key(label):
    if isinstance(label, (int, np.integer, float)) and not isinstance(label, bool):
        return (0, float(label), "")
    return (1, 0.0, str(label))


def _parse_flag(value, where) -> int:
    if isinstance(value, (bool, np.bool_)):
        return int(value)
    try:
        f = float(value)
    except (TypeError, ValueError):
        raise InvalidRecord(f"treated flag {value!r} at {where} is not 0/1") from None
    if f not in (0.0, 1.0):
        raise InvalidRecord(f"treated flag {value!r} at {where} is not 0/1")
    return int(f)


def _iter_records(raw) -> Iterable[tuple]:
    if hasattr(raw, "itertuples") and hasattr(raw, "columns"):  # pandas DataFrame
        cols = list(raw.columns)
        missing = {"unit", "time", "outcome", "treated"} - set(cols)
        if missing:
            raise InvalidRecord(f"missing columns {sorted(missing)}")
        yield from zip(raw["unit"], raw["time"], raw["outcome"], raw["treated"])
        return
    for rec in raw:
        if isinstance(rec, Mapping):
            yield rec["unit"], rec["time"], rec["outcome"], rec["treated"]
        else:
            unit, time, outcome, treated = rec
            yield unit, time, outcome, treated


def validate_panel(raw) -> Panel:
    """Build a :class:`Panel` from long-format ``(unit, time, outcome, treated)`` records.

    Accepts tuples, mappings with those keys, or a DataFrame with those
    columns.  Record order does not matter: units and periods are sorted.
    """
    cells: dict[tuple, tuple[float, int]] = {}
    for unit, time, outcome, treated in _iter_records(raw):
        period = _normalise_period(time)
        where = f"unit {unit!r}, period {period!r}"
        try:
            y = float(outcome)
        except (TypeError, ValueError):
            raise InvalidRecord(f"outcome {outcome!r} at {where} is not numeric") from None
        if not np.isfinite(y):
            raise MissingCell(f"non-finite outcome at {where}")
        key = (unit, period)
        if key in cells:
            raise DuplicateCell(f"duplicate record for {where}")
        cells[key] = (y, _parse_flag(treated, where))

    if not cells:
        raise MissingCell("no records")

    units = sorted({u for u, _ in cells}, key=_unit_sort_key)
    periods = sorted({p for _, p in cells}, key=period_sort_key)
    kinds = {period_sort_key(p)[0] for p in periods}
    if len(kinds) > 1:
        raise InvalidPeriod("period labels mix integers and YYYYQn strings")

    N, P = len(units), len(periods)
    y = np.empty((N, P))
    d = np.zeros((N, P), dtype=np.int8)
    for i, u in enumerate(units):
        for p, t in enumerate(periods):
            try:
                y[i, p], d[i, p] = cells[(u, t)]
            except KeyError:
                raise MissingCell(f"no record for unit {u!r}, period {t!r}") from None

    if not d.any():
        raise NoTreatedUnit("no treated cell in the panel")
    for i, u in enumerate(units):
        drops = np.flatnonzero(np.diff(d[i].astype(int)) < 0)
        if drops.size:
            p = drops[0] + 1
            raise NonAbsorbing(
                f"unit {u!r} leaves treatment at period {periods[p]!r} "
                f"(treated at {periods[p - 1]!r})"
            )
    first = np.flatnonzero(d[:, 0])
    if first.size:
        names = ", ".join(repr(units[i]) for i in first)
        raise NoPrePeriod(
            f"unit(s) {names} already treated in the first period {periods[0]!r}; "
            "drop them or extend the sample backwards"
        )

    T = int(np.flatnonzero(d.any(axis=0))[0])
    return Panel(tuple(units), tuple(periods), y, d, T, P - T)


def build_effect_index(panel: Panel) -> EffectIndex:
    N, T, S = panel.N, panel.T, panel.S
    cells = tuple(
        (i, s)
        for i in range(N)
        for s in range(1, S + 1)
        if panel.treated[i, T + s - 1]
    )
    K = len(cells)
    selectors = np.zeros((S, N, K))
    for k, (i, s) in enumerate(cells):
        selectors[s - 1, i, k] = 1.0
    selectors.setflags(write=False)
    return EffectIndex(cells, N, T, S, selectors)


def event_time(panel: Panel) -> np.ndarray:
    """Cumulative count of treated periods per unit, ``N x (T+S)``."""
    return np.cumsum(panel.treated, axis=1, dtype=int)


def _cell_event_times(panel: Panel, index: EffectIndex) -> np.ndarray:
    e = event_time(panel)
    return np.array([e[i, index.T + s - 1] for i, s in index.cells], dtype=int)


def att_weights(panel: Panel, index: EffectIndex, s: int, units: Iterable[int] | None = None) -> np.ndarray:
    """Averaging weights ``l_s`` over the cells at event time ``s``.

    With ``units`` given, only cells belonging to those unit indices count.
    """
    e = _cell_event_times(panel, index)
    mask = e == s
    if units is not None:
        keep = set(units)
        mask &= np.array([i in keep for i, _ in index.cells], dtype=bool)
    n = int(mask.sum())
    if n == 0:
        raise EmptyEventTime(f"no treated cell at event time {s}")
    return mask / n


def available_horizons(panel: Panel, index: EffectIndex) -> list[int]:
    return sorted(set(_cell_event_times(panel, index).tolist()))


def att_spec(panel: Panel, index: EffectIndex, horizons: Sequence[int] | None = None) -> ParamSpec:
    """Stack event-time ATT functionals; empty horizons are skipped."""
    present = available_horizons(panel, index)
    if horizons is None:
        horizons = present
    rows, labels = [], []
    for s in horizons:
        if s in present:
            rows.append(att_weights(panel, index, s))
            labels.append(f"att_{s}")
    if not rows:
        raise EmptyEventTime(f"no treated cells at any of horizons {list(horizons)}")
    return ParamSpec(np.vstack(rows), labels)


def att_hypothesis(panel: Panel, index: EffectIndex, s: int, null: float = 0.0) -> HypothesisSpec:
    return HypothesisSpec(att_weights(panel, index, s)[None, :], [null])


def _resolve_units(panel: Panel, group) -> set[int]:
    out = set()
    for g in group:
        try:
            out.add(panel.unit_index(g))
        except KeyError:
            if isinstance(g, (int, np.integer)) and 0 <= g < panel.N:
                out.add(int(g))
            else:
                raise EmptyGroup(f"unknown unit {g!r}") from None
    return out


def policy_contrast(panel: Panel, index: EffectIndex, group_a, group_b, s: int) -> HypothesisSpec:
    """Difference of two groups' event-time ``s`` ATTs, tested against zero.

    Groups are given as unit labels (integer positions are accepted when they
    are not themselves labels).
    """
    a = _resolve_units(panel, group_a)
    b = _resolve_units(panel, group_b)
    if a & b:
        raise OverlappingGroups(f"groups share units {sorted(panel.unit_ids[i] for i in a & b)}")
    rows = []
    for name, g in (("A", a), ("B", b)):
        if not g:
            raise EmptyGroup(f"group {name} is empty")
        try:
            rows.append(att_weights(panel, index, s, units=g))
        except EmptyEventTime:
            raise EmptyGroup(f"group {name} has no cell at event time {s}") from None
    return HypothesisSpec((rows[0] - rows[1])[None, :], [0.0])


def describe_cells(panel: Panel, index: EffectIndex) -> list[dict[str, Any]]:
    e = _cell_event_times(panel, index)
    return [
        {
            "unit": panel.unit_ids[i],
            "period": panel.time_ids[index.T + s - 1],
            "event_time": int(e[k]),
        }
        for k, (i, s) in enumerate(index.cells)
    ]
