"""Exception types shared across the toolkit."""


class InputError(ValueError):
    """Caller handed an argument that violates an operation's precondition."""


class GenerationError(RuntimeError):
    """Scene or dataset generation could not satisfy its constraints."""


class MeasurementError(RuntimeError):
    """A measurement (e.g. occlusion level) is undefined for the given frames."""


class KinkError(ArithmeticError):
    """A gradient check was requested at a non-differentiable point."""


class ScorerError(RuntimeError):
    """A scorer failed while populating the affordance grid."""
