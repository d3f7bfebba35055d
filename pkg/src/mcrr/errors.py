"""Exception types shared across the package.

Every error raised on purpose derives from McrrError so callers can
distinguish deliberate validation failures from genuine bugs.
"""


class McrrError(Exception):
    """Base class for all deliberate errors raised by this package."""


class InvalidInputError(McrrError):
    """An argument is outside its documented domain (negative forcing, bad shape, ...)."""


class InvalidParameterError(McrrError):
    """A physical parameter violates its bound for the given configuration."""


class ConfigMismatchError(McrrError):
    """A raw parameter vector does not match the configuration's active-parameter list."""


class InvariantViolationError(McrrError):
    """A state or balance invariant failed (storage out of bounds, mass leak, ...)."""


class ForcingFormatError(McrrError):
    """A forcing or attribute CSV is malformed; the message carries the line number."""


class DateGapError(ForcingFormatError):
    """The daily date column is not contiguous."""


class PeriodRangeError(McrrError):
    """A requested evaluation period is not covered by the loaded series."""


class DegenerateDataError(McrrError):
    """A metric is undefined for the data (constant observations, too few points)."""


class DivergedRunError(McrrError):
    """A training run produced a non-finite loss or gradient."""


class ExperimentConfigError(McrrError):
    """An experiment configuration file is invalid."""
