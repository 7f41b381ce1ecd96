"""Exception hierarchy shared across the package."""


class RobustPllError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(RobustPllError):
    """An array argument has incompatible dimensions."""


class DomainError(RobustPllError):
    """A value violates a mathematical precondition (negative evidence,
    off-simplex weights, empty sample, ...)."""


class DataError(RobustPllError):
    """A dataset violates its invariants (empty candidate set, label
    outside the candidate set, ...)."""


class FormatError(RobustPllError):
    """A file cannot be parsed; the message names the offending offset
    or row."""


class TrainingError(RobustPllError):
    """Training produced a non-finite loss or gradient; the message
    carries epoch/batch context."""


class ConfigError(RobustPllError):
    """An experiment configuration is malformed or inconsistent."""
