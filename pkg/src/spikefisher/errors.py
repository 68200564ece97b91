"""Exception hierarchy shared by all modules.

Each class carries the CLI exit code it maps to.
"""


class SpikeFisherError(Exception):
    exit_code = 2


class DomainError(SpikeFisherError, ValueError):
    """Evaluation point or spike lies where the theory gives no answer."""


class PoleError(DomainError):
    """Point coincides with an atom of a discrete measure."""


class SolverError(SpikeFisherError, ArithmeticError):
    """Fixed-point iteration failed to converge."""


class BranchError(SolverError):
    """Solver converged to a value that violates a consistency identity."""


class SingularityError(DomainError):
    """A denominator vanished."""


class DegenerateSpectrumError(DomainError):
    """Local Stieltjes estimate has no eigenvalues left to average."""


class NumericalRankError(SpikeFisherError, ArithmeticError):
    """A sampled matrix that must be positive definite is not."""


class SpecError(SpikeFisherError, ValueError):
    """Inconsistent model or configuration."""

    exit_code = 1


class InsufficientDataError(SpikeFisherError, ValueError):
    exit_code = 2


class ConfigError(SpikeFisherError, ValueError):
    exit_code = 1


class DataIOError(SpikeFisherError, OSError):
    exit_code = 3
