"""Shared exception types."""


class CompatibilityError(ValueError):
    """Boundary data violates the zero-mean compatibility condition."""


class SolverConvergenceError(RuntimeError):
    """A linear or nonlinear solve failed to reach its tolerance."""

    def __init__(self, message, residual=None, history=None):
        super().__init__(message)
        self.residual = residual
        self.history = history or []


class PicardDivergenceError(SolverConvergenceError):
    """The lagged-coefficient iteration on the plate did not contract."""


class CouplingDivergenceError(SolverConvergenceError):
    """The interface sub-iteration did not reach the coupling tolerance."""
