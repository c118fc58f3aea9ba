"""Exception types shared across the library."""


class SpecmixError(Exception):
    """Base class for all library-specific errors."""


class ConfigError(SpecmixError):
    """Malformed or inconsistent configuration input."""


class NotPSDError(SpecmixError):
    """A matrix that must be positive (semi-)definite failed factorization."""


class UndefinedCoherenceError(SpecmixError):
    """Coherence requested at a frequency where an auto-spectrum vanishes."""


class QuadratureError(SpecmixError):
    """Non-finite values encountered while integrating a spectral density."""


class DegenerateVarianceError(SpecmixError):
    """An operation required strictly positive variance of its inputs."""


class NonConvergenceError(SpecmixError):
    """An iterative solver exhausted its iteration budget."""


class AllRestartsFailedError(SpecmixError):
    """Every random initialization produced a non-finite objective."""


class DataError(SpecmixError):
    """Problems with ingested data files."""


class ParseError(DataError):
    """A data file row failed to parse; carries line information."""

    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column


class NonMonotoneTimeError(DataError):
    """Time stamps are not strictly increasing; carries the offending line."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class TooShortError(DataError):
    """A series is too short for the requested operation."""
