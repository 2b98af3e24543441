"""Exception taxonomy shared across the package."""


class TriwellError(Exception):
    """Base class for all package errors."""


class InvalidMeshError(TriwellError):
    """Mesh/space construction parameters are unusable."""


class DomainError(TriwellError):
    """Evaluation point lies outside the parametric domain."""


class RefinementError(TriwellError):
    """Knot vectors are not nested (or refinement is unsupported)."""


class AssemblyError(TriwellError):
    """Inconsistent inputs to residual/tangent assembly."""


class LinearSolveError(TriwellError):
    """The linear solver broke down or missed its accuracy target."""


class NonconvergenceError(TriwellError):
    """Newton iteration exhausted its budget.

    Carries the last residual norm and, when raised from a time stepper,
    the step index at which the solve failed.
    """

    def __init__(self, message, residual_norm, iterations, step=None):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.iterations = iterations
        self.step = step


class EnergyBalanceError(TriwellError):
    """A conservative scheme violated the per-step energy balance bound."""


class LoadingError(TriwellError):
    """Macroscopic loading data is unusable (e.g. singular mean gradient)."""


class SpecFileError(TriwellError):
    """A run-spec file is malformed; message carries section/key context."""
