"""
Exception hierarchy for the screening toolkit and the mapping to CLI exit codes.
"""
from typing import Optional


EXIT_OK = 0
EXIT_IO = 2
EXIT_STATISTICAL = 3


class ZScreenError(Exception):
    """Base class for all errors raised by the screening services."""
    exit_code = EXIT_STATISTICAL


class CohortFormatError(ZScreenError):
    """The cohort file cannot be read or lacks a mandatory column."""
    exit_code = EXIT_IO


class DomainError(ZScreenError):
    """A value lies outside the domain of a transformation."""

    def __init__(self, transformation: str, value: float, index: Optional[int] = None):
        self.transformation = transformation
        self.value = value
        self.index = index
        where = f" at index {index}" if index is not None else ""
        super().__init__(f"value {value!r}{where} is outside the domain of {transformation}")


class DegenerateSampleError(ZScreenError):
    """A sample has zero variance where a variance estimate is required."""


class SingularCovarianceError(ZScreenError):
    """A leave-one-out covariance matrix is not invertible."""

    def __init__(self, index: int):
        self.index = index
        super().__init__(f"singular covariance when deleting observation {index}")


class IneligibleError(ZScreenError):
    """The data/model combination is not allowed for the requested statistic."""


class NoApplicableTransformationError(ZScreenError):
    """No member of the transformation family applies to every eligible sequence."""


class TabulationError(ZScreenError):
    """Invalid Monte Carlo tabulation request."""


def exit_code_for(exc: BaseException) -> int:
    """Return the CLI exit code for an exception."""
    if isinstance(exc, ZScreenError):
        return exc.exit_code
    if isinstance(exc, OSError):
        return EXIT_IO
    return 1
