"""
Exception hierarchy for the Chiarella research system

Every error carries the CLI exit code it maps to: 2 for config/input problems,
3 for numerical failures, 4 for partial pipeline failures.
"""
from typing import Optional


class ChiarellaError(Exception):
    exit_code = 1


class ConfigError(ChiarellaError):
    exit_code = 2


class InputDataError(ChiarellaError):
    exit_code = 2


class ParameterError(ChiarellaError, ValueError):
    exit_code = 2


class NumericalError(ChiarellaError):
    exit_code = 3


class NonFiniteStateError(NumericalError):
    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class DriftFitError(NumericalError):
    def __init__(self, order: int, message: str = "rank-deficient polynomial fit"):
        super().__init__(f"{message} for drift order k={order}")
        self.order = order


class FilterError(NumericalError):
    pass


class CovarianceLossError(FilterError):
    """Predicted or filtered variance stopped being positive"""

    def __init__(self, step: int, variance: float):
        super().__init__(f"variance lost positivity at step {step}: {variance!r}")
        self.step = step
        self.variance = variance


class EMMonotonicityError(NumericalError):
    def __init__(self, iteration: int, previous: float, current: float):
        super().__init__(
            f"log-likelihood decreased at iteration {iteration}: {previous:.12g} -> {current:.12g}"
        )
        self.iteration = iteration


class EMDivergenceError(NumericalError):
    pass


class FitConvergenceError(NumericalError):
    def __init__(self, message: str, best_residual: float):
        super().__init__(f"{message} (best residual {best_residual:.6g})")
        self.best_residual = best_residual


class BandwidthBracketError(NumericalError):
    pass


class UndefinedSharpeError(NumericalError):
    pass


class PartialFailureError(ChiarellaError):
    exit_code = 4

    def __init__(self, failures: dict):
        super().__init__(f"{len(failures)} asset(s) failed: {sorted(failures)}")
        self.failures = failures
