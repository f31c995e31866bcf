"""Exception types shared across the package."""


class HbvmError(Exception):
    """Base class for all package errors."""


class RootFindingError(HbvmError):
    """A polynomial root iteration failed to converge."""


class ConvergenceError(HbvmError):
    """A Newton-type iteration failed to converge.

    Carries the best iterate seen (``best``) and a diagnostic report
    (``report``) when available, so callers can inspect or restart.
    """

    def __init__(self, message, report=None, best=None):
        super().__init__(message)
        self.report = report
        self.best = best


class SingularSystemError(HbvmError):
    """A structured linear system is numerically singular or rank deficient."""


class ModelDomainError(HbvmError):
    """A Hamiltonian model was evaluated outside its domain (e.g. at a collision)."""


class ConfigError(HbvmError):
    """A run configuration is missing fields or contains invalid values."""
