"""Exception hierarchy shared by every module.

Each class carries an ``exit_code`` so the command line front end can map a
failure category to a distinct process status.
"""


class GFFError(Exception):
    exit_code = 10


class DomainError(GFFError, ValueError):
    exit_code = 11


class BesselOverflowError(GFFError, OverflowError):
    exit_code = 12


class QuadratureError(GFFError, ArithmeticError):
    """Adaptive quadrature did not reach its tolerance within the budget."""

    exit_code = 13

    def __init__(self, message, estimate=float("nan")):
        super().__init__(f"{message} (achieved error estimate {estimate:.3e})")
        self.estimate = estimate


class UnsupportedRegimeError(GFFError, ValueError):
    exit_code = 14


class CapacityError(GFFError):
    exit_code = 15


class IllConditionedCovarianceError(GFFError, ArithmeticError):
    exit_code = 16

    def __init__(self, message, eigenvalues=None):
        super().__init__(message)
        self.eigenvalues = eigenvalues


class EmbeddingError(GFFError):
    exit_code = 17


class DensityOverflowError(GFFError, OverflowError):
    exit_code = 18


class StatisticsError(GFFError):
    exit_code = 19


class CensoringError(GFFError):
    exit_code = 20


class RangeError(GFFError, ValueError):
    exit_code = 21


class ConfigError(GFFError, ValueError):
    exit_code = 2
