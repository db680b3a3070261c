"""Exception types shared across the package."""


class SpillnetError(Exception):
    """Base class for all package-specific errors."""


class BalancedPanelError(SpillnetError):
    """A (unit, time) cell expected by the balanced grid is missing."""

    def __init__(self, unit, time):
        self.unit = unit
        self.time = time
        super().__init__(f"panel is unbalanced: missing cell (unit={unit!r}, time={time!r})")


class ParseError(SpillnetError):
    """A CSV field could not be parsed; `row` is the 1-based data row."""

    def __init__(self, row, message=""):
        self.row = row
        super().__init__(message or f"unparseable field on row {row}")


class InvalidBreakpoint(SpillnetError):
    """Breakpoint outside [1, T-1]."""


class RegimeTooShort(SpillnetError):
    """A regime has fewer periods than the operation requires."""


class TrimTooAggressive(SpillnetError):
    """The trimming fraction leaves no admissible breakpoint candidates."""


class DegenerateCovariate(SpillnetError):
    """A covariate has zero second moment within a regime."""

    def __init__(self, j, regime):
        self.j = j
        self.regime = regime
        super().__init__(f"covariate {j} has zero second moment in regime {regime!r}")


class DegenerateResidual(SpillnetError):
    """The partialled-out treatment residual has zero second moment."""


class TooManyGroups(SpillnetError):
    """Requested more groups than units."""


class RankWarning(UserWarning):
    """A restricted design was rank deficient; collinear columns dropped."""
