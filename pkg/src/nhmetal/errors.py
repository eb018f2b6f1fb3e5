"""Exception hierarchy. Each class carries a stable ``code`` used in CLI output and JSON flags."""


class NHMetalError(Exception):
    code = "ERROR"


class DimensionMismatch(NHMetalError, ValueError):
    code = "DIMENSION_MISMATCH"


class WrongFamily(NHMetalError, ValueError):
    code = "WRONG_FAMILY"


class Unsupported(NHMetalError, ValueError):
    code = "UNSUPPORTED"


class NoConvergence(NHMetalError, ArithmeticError):
    code = "NO_CONVERGENCE"


class TangentDegenerate(NHMetalError, ArithmeticError):
    code = "TANGENT_DEGENERATE"


class BudgetExceeded(NHMetalError, RuntimeError):
    code = "BUDGET_EXCEEDED"


class NoGenericProjection(NHMetalError, RuntimeError):
    code = "NO_GENERIC_PROJECTION"


class TooManyCrossings(NHMetalError, ValueError):
    code = "TOO_MANY_CROSSINGS"


class MethodDisagreement(NHMetalError, ArithmeticError):
    code = "METHOD_DISAGREEMENT"


class ProjectionInconsistency(NHMetalError, ArithmeticError):
    code = "PROJECTION_INCONSISTENCY"


class NotPassive(NHMetalError, ValueError):
    code = "NOT_PASSIVE"


class NearEP(NHMetalError, ArithmeticError):
    code = "NEAR_EP"


class ZeroDenominator(NHMetalError, ZeroDivisionError):
    code = "ZERO_DENOMINATOR"


class DegenerateCounts(NHMetalError, ArithmeticError):
    code = "DEGENERATE_COUNTS"


class Overflow(NHMetalError, OverflowError):
    code = "OVERFLOW"


class ConfigError(NHMetalError, ValueError):
    code = "CONFIG_ERROR"
