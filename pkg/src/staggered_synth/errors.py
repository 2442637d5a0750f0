"""Exception hierarchy.

Each family carries a distinct process exit code so the CLI can map any
library error to a documented status without inspecting messages.
"""

from __future__ import annotations


class StaggeredSCError(Exception):
    """Base class for all library errors."""

    exit_code = 1


# -- panel / data model ------------------------------------------------------


class PanelError(StaggeredSCError):
    exit_code = 3


class MissingCell(PanelError):
    """The panel is unbalanced: some (unit, period) has no record."""


class DuplicateCell(PanelError):
    """The same (unit, period) appears more than once."""


class NonAbsorbing(PanelError):
    """A unit switches from treated back to untreated."""


class NoPrePeriod(PanelError):
    """Some unit is already treated in the first observed period."""


class NoTreatedUnit(PanelError):
    """No cell in the panel is treated."""


class InvalidPeriod(PanelError):
    """Period labels are neither integers nor ``YYYYQn`` strings."""


class InvalidRecord(PanelError):
    """A record cannot be parsed (bad outcome or treatment flag)."""


# -- linear functionals / hypotheses ----------------------------------------


class SpecificationError(StaggeredSCError):
    exit_code = 4


class DimensionMismatch(SpecificationError):
    pass


class EmptyEventTime(SpecificationError):
    """No treated cell sits at the requested event time."""


class EmptyGroup(SpecificationError):
    pass


class OverlappingGroups(SpecificationError):
    pass


# -- weights ----------------------------------------------------------------


class WeightError(StaggeredSCError):
    exit_code = 5


class InsufficientData(WeightError):
    """Fewer than two pre-period observations or fewer than two units."""


class UnitFitError(WeightError):
    """Wraps a per-unit failure with the unit label attached."""

    def __init__(self, unit, cause: Exception):
        self.unit = unit
        self.cause = cause
        super().__init__(f"unit {unit!r}: {cause}")


class DegenerateDonors(UserWarning):
    """Donor series carry no pre-period variation; the optimum is a face."""


# -- estimation -------------------------------------------------------------


class NotInvertible(StaggeredSCError):
    """The effect gram matrix is (numerically) singular."""

    exit_code = 6


# -- inference --------------------------------------------------------------


class InferenceError(StaggeredSCError):
    exit_code = 7


class WindowTooShort(InferenceError):
    pass


class InfeasibleLevel(InferenceError):
    pass


class GridTooNarrow(UserWarning):
    """Both ends of a test-inversion grid were accepted."""


class CoarseNullWarning(UserWarning):
    """Fewer than 30 rolling windows back the null distribution."""


# -- simulation / configuration ---------------------------------------------


class InvalidDGP(StaggeredSCError):
    exit_code = 8


class ConfigError(StaggeredSCError):
    exit_code = 8


class MissingFit(StaggeredSCError):
    exit_code = 9
