"""Exception hierarchy shared by all modules.

The CLI maps each family to its own exit code, so new errors should subclass
one of the families below rather than ``TornadoVerifError`` directly.
"""

from __future__ import annotations


class TornadoVerifError(Exception):
    """Base class for every error raised by this package."""


class ArgumentError(TornadoVerifError, ValueError):
    """A caller passed an argument outside its contract."""


class ConfigError(TornadoVerifError):
    """Run configuration or archive layout is unusable."""


class DataError(TornadoVerifError, ValueError):
    """Input data violates a documented invariant."""


class DomainError(DataError):
    """A coordinate lies outside the projection's valid region."""


class GeometryError(DataError):
    """A polygon fails the ring invariants (closed, simple, oriented)."""


class EmptyGeometryError(GeometryError):
    """An operation that needs area was given an empty geometry."""


class NestingError(DataError):
    """Cumulative risk polygons are not contained in the lower levels."""

    def __init__(self, lower, higher, excess_area: float):
        self.lower = lower
        self.higher = higher
        self.excess_area = excess_area
        super().__init__(
            f"{higher.label} area not contained in {lower.label} "
            f"(excess {excess_area:.3e} m^2)"
        )


class ParseError(DataError):
    """A file could not be parsed; ``context`` names the line or feature."""

    def __init__(self, message: str, context: str | None = None):
        self.context = context
        super().__init__(f"{context}: {message}" if context else message)


class UndefinedMetricError(TornadoVerifError, ValueError):
    """A metric was requested over an empty set of days."""


class EndpointError(TornadoVerifError):
    """The agent endpoint timed out or broke the wire protocol."""
