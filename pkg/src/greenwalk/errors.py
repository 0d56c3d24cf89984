"""Exception types shared across the package."""

from __future__ import annotations


class GreenwalkError(Exception):
    """Base class for all package errors."""


class RepresentationError(GreenwalkError):
    """Element or measure does not match the group model it is used with."""


class ConfigError(GreenwalkError):
    """Malformed configuration or specification string."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class ResourceLimitError(GreenwalkError):
    """A hard cap (ball size, sample count, ...) would be exceeded."""

    def __init__(self, message: str, cap_name: str, cap_value: int):
        super().__init__(message)
        self.cap_name = cap_name
        self.cap_value = cap_value


class TransienceError(GreenwalkError):
    """Walk could not be certified transient at desk scale."""


class PrecisionError(GreenwalkError):
    """Requested tolerance unreachable under the configured caps."""

    def __init__(self, message: str, best_bound: float):
        super().__init__(message)
        self.best_bound = best_bound


class RangeError(GreenwalkError):
    """Query for an element outside the covered ball of a kernel table."""


class ConvergenceError(GreenwalkError):
    """Boundary kernel did not stabilise within the depth budget."""

    def __init__(self, message: str, achieved_depth: int = 0,
                 last_values: tuple = ()):
        super().__init__(message)
        self.achieved_depth = achieved_depth
        self.last_values = last_values


class PartitionError(GreenwalkError):
    """Set not expressible in the measure's partition algebra."""

    def __init__(self, message: str, suggested_depth: int | None = None):
        super().__init__(message)
        self.suggested_depth = suggested_depth


class SamplingError(GreenwalkError):
    """Monte Carlo estimate rejected (e.g. excessive non-convergence)."""

    def __init__(self, message: str, report: dict | None = None):
        super().__init__(message)
        self.report = report or {}


class UnsupportedGroupError(GreenwalkError):
    """Operation not implemented for this group kind."""
