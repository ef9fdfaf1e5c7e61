"""Exception hierarchy. ``ValidationError`` maps to CLI exit 2, ``NumericalError`` to 3."""


class FragoptError(Exception):
    pass


class ValidationError(FragoptError):
    pass


class NumericalError(FragoptError):
    pass


class InvariantViolation(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class DivergentIntegral(NumericalError):
    pass


class QuadratureFailure(NumericalError):
    pass


class NoRoot(NumericalError):
    def __init__(self, message, bracket=None):
        super().__init__(message if bracket is None else f"{message} (bracket {bracket})")
        self.bracket = bracket


class InfiniteActivity(ValidationError):
    pass


class TruncationRequired(ValidationError):
    pass


class ExplosionGuard(NumericalError):
    pass


class ResolutionTooCoarse(ValidationError):
    pass


class InconsistentSupport(NumericalError):
    pass


class NotRV(ValidationError):
    pass


class LatticeWarning(UserWarning):
    pass


class CostSignWarning(UserWarning):
    pass
