"""Exception hierarchy shared across the package.

Two broad categories map onto the CLI exit-code contract:
``ValidationError`` (bad inputs, exit code 2) and ``NumericalError``
(well-formed inputs on which the computation cannot proceed, exit code 3).
"""


class DeemError(Exception):
    """Base class for all package errors."""

    #: pipeline stage that raised the error, filled in by orchestration code
    stage: str = ""


class ValidationError(DeemError):
    """Malformed or inconsistent input data/configuration."""


class NumericalError(DeemError):
    """Numerically degenerate problem (singular matrix, no root, ...)."""


class FormatError(ValidationError):
    """A file does not follow the expected layout."""


class DuplicateIdError(ValidationError):
    """A SNP identifier occurs more than once."""


class HarmonizeError(ValidationError):
    """The input sources cannot be reconciled to a common SNP panel."""


class ConfigError(ValidationError):
    """Invalid scenario or analysis configuration."""


class AlignmentError(ValidationError):
    """Block structures or vector lengths do not line up."""


class DegenerateSnpError(NumericalError):
    """A SNP column carries no variation."""


class SingularMatrixError(NumericalError):
    """A block is not symmetric positive definite."""


class SelectionEmptyError(NumericalError):
    """No SNP survived selection."""


class DegenerateInstrumentError(NumericalError):
    """An instrument-strength denominator is zero or near zero."""


class EvaluationDomainError(NumericalError):
    """The estimating function is not defined at the requested point."""


class NoRootError(NumericalError):
    """No sign change found within the maximal search bracket."""


class ConvergenceError(NumericalError):
    """Root refinement failed to reach the required residual."""


class ConditioningError(NumericalError):
    """A quantity that must be positive came out non-positive."""


class StudyError(NumericalError):
    """Too many replicates of a simulation study failed."""
