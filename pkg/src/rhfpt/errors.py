"""Exception types raised across the package."""


class RHFError(Exception):
    """Base class for every error raised by rhfpt.

    ``operation`` is a dotted ``module.function`` name so the CLI can emit a
    structured error record.
    """

    def __init__(self, message, operation=None, **diagnostics):
        super().__init__(message)
        self.operation = operation
        self.diagnostics = diagnostics

    @property
    def module(self):
        if self.operation and "." in self.operation:
            return self.operation.split(".", 1)[0]
        return "rhfpt"

    def record(self):
        return {
            "error": type(self).__name__,
            "module": self.module,
            "operation": self.operation,
            "message": str(self),
            "diagnostics": {k: _plain(v) for k, v in self.diagnostics.items()},
        }


def _plain(value):
    try:
        import numpy as np

        if isinstance(value, np.ndarray):
            return value.tolist()
        if isinstance(value, np.generic):
            return value.item()
    except ImportError:  # pragma: no cover
        pass
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


class InputError(RHFError, ValueError):
    """Malformed or inconsistent user input (shapes, parameters, config keys)."""


class NumericOverflowError(RHFError, ArithmeticError):
    pass


class ConvergenceError(RHFError):
    """An iterative solver hit its iteration cap."""


class ConsistencyError(RHFError):
    """An internal invariant was violated (should not happen on valid input)."""


class PreconditionError(RHFError):
    """The operation is not defined for this input (wrong case, wrong structure)."""


class AccuracyError(RHFError):
    """A quadrature or solver could not reach the requested accuracy."""


class LinearSolverError(RHFError):
    pass


class DomainError(RHFError):
    """Argument lies outside the domain of a map (occupancy box, projector domain)."""


class StructuralError(RHFError):
    """Loss of coercivity: the unperturbed state violates the uniqueness assumptions."""
