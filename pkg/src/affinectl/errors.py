"""Exception types raised across the package."""


class AffineCtlError(Exception):
    """Base class for all package errors."""


class NumericFailure(AffineCtlError):
    """A computation produced an unusable numeric result."""


class RankDeficient(NumericFailure):
    pass


class RankDeficientAtNode(RankDeficient):
    pass


class NotPositiveDefinite(NumericFailure):
    pass


class NonFinite(NumericFailure):
    pass


class IllConditioned(NumericFailure):
    pass


class Diverged(NumericFailure):
    pass


class SingularSurfaceDegenerate(NumericFailure):
    pass


class DegenerateKappa(NumericFailure):
    pass


class NoConvergence(NumericFailure):
    pass


class IntegralDiverged(NumericFailure):
    pass


class StabilityViolated(NumericFailure):
    pass


class NoPulse(NumericFailure):
    pass


class NotConverged(NumericFailure):
    pass


class Ambiguous(NumericFailure):
    pass


class ZeroCoupling(NumericFailure):
    pass


class RecipePreconditionViolated(NumericFailure):
    pass


class InconsistentInitialState(NumericFailure):
    pass


class UnknownSystem(AffineCtlError):
    pass


class BadParameter(AffineCtlError):
    pass


class BadRoots(BadParameter):
    pass


class ColumnMismatch(AffineCtlError):
    pass


class ConfigError(AffineCtlError):
    """Malformed or incomplete scenario configuration."""


class ExprSyntaxError(AffineCtlError):
    """Expression text could not be parsed; ``offset`` is the byte position."""

    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownIdentifier(ExprSyntaxError):
    pass
