"""Exception hierarchy.

Two families matter to callers: hypothesis violations (the input does not
satisfy the standing assumptions, e.g. positive reduced curvature) and
numerical failures (the computation itself broke down). The CLI maps them to
distinct exit codes.
"""


class JacobiEntropyError(Exception):
    """Base class for every error raised by this package."""


class HypothesisViolation(JacobiEntropyError):
    """The system violates a standing hypothesis at some point."""


class NotMonotoneError(HypothesisViolation):
    """g_z^h is not sign-definite on the Lagrangian distribution."""

    def __init__(self, message, signature=None):
        super().__init__(message)
        self.signature = signature


class PositiveCurvatureError(HypothesisViolation):
    """The reduced curvature has an eigenvalue above the clamp tolerance."""

    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class NumericalFailure(JacobiEntropyError):
    """A numerical procedure did not produce a trustworthy result."""


class CriticalPointError(NumericalFailure):
    """The gradient of h vanishes (or nearly) at the evaluation point."""


class TransversalityError(NumericalFailure):
    """Two subspaces expected to be transversal are not.

    ``defect`` is the dimension of the numerically detected intersection.
    """

    def __init__(self, message, defect=None, condition=None):
        super().__init__(message)
        self.defect = defect
        self.condition = condition


class SingularFormulaError(NumericalFailure):
    """A closed-form expression is evaluated where it is singular (p = 0, h = U)."""


class DegenerateIntersectionError(NumericalFailure):
    """J(t) ∩ ker(dh) has the wrong dimension."""


class NewtonConvergenceError(NumericalFailure):
    pass


class ChartEscapeError(NumericalFailure):
    """A trajectory left the coordinate chart of the system."""


class LaurentFitError(NumericalFailure):
    """The projector family is not fitted by a simple-pole Laurent series."""


class RiccatiBlowup(NumericalFailure):
    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class ConvergenceError(NumericalFailure):
    pass


class SamplerError(NumericalFailure):
    """The level-set sampler could not produce points."""


class ConfigError(JacobiEntropyError):
    """Invalid experiment configuration; ``line`` points into the file when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
