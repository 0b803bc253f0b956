"""Exception hierarchy shared by all soopsim modules."""


class SoopError(Exception):
    """Base class for every error raised by soopsim."""


class DegenerateGeometry(SoopError, ValueError):
    """Two points that must be distinct coincide."""


class MomentUndefined(SoopError, ValueError):
    """A requested inverse moment of the Gamma skew does not exist."""


class ZeroEnergy(SoopError, ValueError):
    """A waveform carries no energy."""


class NyquistViolation(SoopError, ValueError):
    """Sampling rate too low for the pulse bandwidth plus frequency offset."""


class PeakAtGridEdge(SoopError):
    """Cross-ambiguity maximum sits on the search-grid boundary; widen the grid."""


class SingularNuisanceBlock(SoopError, ArithmeticError):
    """The nuisance block of the FIM cannot be inverted."""


class NonStaticScenario(SoopError, ValueError):
    """A static-only reduction was requested for moving agents."""


class InsufficientBeacons(SoopError, ValueError):
    """Too few beacons for the number of unknowns."""


class SingularNormalEquations(SoopError, ArithmeticError):
    """Gauss-Newton normal equations are numerically singular."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class UnknownReference(SoopError, KeyError):
    """The requested reference beacon id is not in the measurement set."""


class ScenarioParseError(SoopError, ValueError):
    """Scenario file is not well-formed."""

    def __init__(self, message, line=None, field=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.line = line
        self.field = field


class ScenarioValidationError(SoopError, ValueError):
    """Scenario parsed but violates a model invariant."""
