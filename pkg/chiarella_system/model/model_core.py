"""
Chiarella model core - parameters, agent demand functions and the closed-form
stability / Hopf analysis of the deterministic mispricing system

    d(delta)/dt = -kappa*delta - kappa3*delta^3 + beta*tanh(gamma*M)
    dM/dt       = -alpha*M + alpha*d(delta)/dt

Kyle's lambda never appears on its own: it is absorbed into kappa, beta and sigma_N.
"""
import cmath
import logging
import math
from dataclasses import dataclass, fields, replace
from enum import Enum
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from dataclasses_json import dataclass_json

from ..errors import ParameterError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


@dataclass_json
@dataclass(frozen=True)
class ChiarellaParams:
    """Full parameter vector theta; kappa3 == 0 selects the linear model"""
    kappa: float
    beta: float
    gamma: float
    alpha: float
    sigma_n: float
    sigma_v: float
    kappa3: float = 0.0
    v0: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value):
                raise ParameterError(f"{f.name} must be finite, got {value!r}")
        if not 0.0 < self.alpha <= 1.0:
            raise ParameterError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.kappa3 < 0.0:
            raise ParameterError(f"kappa3 must be >= 0, got {self.kappa3}")
        if self.sigma_n < 0.0 or self.sigma_v < 0.0:
            raise ParameterError("noise volatilities must be >= 0")
        if self.gamma <= 0.0:
            raise ParameterError(f"gamma must be > 0, got {self.gamma}")
        if self.kappa < 0.0 and self.kappa3 == 0.0:
            raise ParameterError("negative kappa is only admissible in the cubic model")

    @property
    def is_linear(self) -> bool:
        return self.kappa3 == 0.0

    @property
    def model(self) -> str:
        return 'linear' if self.is_linear else 'cubic'

    @property
    def sigma_ratio(self) -> Optional[float]:
        return self.sigma_n / self.sigma_v if self.sigma_v > 0 else None

    def with_values(self, **changes) -> 'ChiarellaParams':
        return replace(self, **changes)

    def values(self, names: Sequence[str]) -> np.ndarray:
        return np.array([getattr(self, name) for name in names], dtype=float)

    def with_vector(self, names: Sequence[str], vector: Sequence[float]) -> 'ChiarellaParams':
        return replace(self, **{name: float(x) for name, x in zip(names, vector)})


class Regime(str, Enum):
    STABLE_SPIRAL = 'StableSpiral'
    LIMIT_CYCLE = 'LimitCycle'


@dataclass_json
@dataclass(frozen=True)
class RegimeClassification:
    regime: Regime
    trace: float
    det: float
    hopf_alpha: Optional[float] = None

    def summary(self) -> Dict:
        return {
            'regime': self.regime.value,
            'trace': self.trace,
            'det': self.det,
            'hopf_alpha': self.hopf_alpha,
        }


@dataclass(frozen=True)
class SystemState:
    p: float
    v: float
    m: float
    t: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(x) for x in (self.p, self.v, self.m, self.t)):
            raise ParameterError(f"state must be finite: {self}")

    @property
    def delta(self) -> float:
        return self.p - self.v


def fundamentalist_demand(delta: ArrayLike, params: ChiarellaParams) -> ArrayLike:
    """f(x) = kappa*x + kappa3*x^3, evaluated at x = V - P"""
    return params.kappa * delta + params.kappa3 * delta ** 3


def trend_demand(m: ArrayLike, params: ChiarellaParams) -> ArrayLike:
    return params.beta * np.tanh(params.gamma * m)


def _require_linear_stable_core(params: ChiarellaParams) -> None:
    if not params.is_linear:
        raise ParameterError("phase analysis is only available for the linear model (kappa3 = 0)")
    if params.kappa <= 0.0:
        raise ParameterError(f"phase analysis needs kappa > 0, got {params.kappa}")


def jacobian_at_origin(params: ChiarellaParams) -> np.ndarray:
    _require_linear_stable_core(params)
    bg = params.beta * params.gamma
    return np.array([
        [-params.kappa, bg],
        [-params.alpha * params.kappa, params.alpha * (bg - 1.0)],
    ])


def hopf_point(params: ChiarellaParams) -> Optional[float]:
    """alpha* = kappa / (beta*gamma - 1), absent unless beta*gamma > 1"""
    bg = params.beta * params.gamma
    if bg <= 1.0:
        return None
    return params.kappa / (bg - 1.0)


def classify_regime(params: ChiarellaParams) -> RegimeClassification:
    _require_linear_stable_core(params)
    jac = jacobian_at_origin(params)
    trace = float(jac[0, 0] + jac[1, 1])
    det = params.alpha * params.kappa
    regime = Regime.STABLE_SPIRAL if trace < 0.0 else Regime.LIMIT_CYCLE
    return RegimeClassification(regime=regime, trace=trace, det=det, hopf_alpha=hopf_point(params))


def hopf_eigenvalues(params: ChiarellaParams) -> Tuple[complex, complex]:
    """Closed-form eigenvalue pair of J*, ordered (+ branch, - branch)"""
    _require_linear_stable_core(params)
    a, k, bg = params.alpha, params.kappa, params.beta * params.gamma
    trace = a * bg - a - k
    root = cmath.sqrt((-a * bg + a + k) ** 2 - 4.0 * a * k)
    return 0.5 * (trace + root), 0.5 * (trace - root)


def hopf_transversality(params: ChiarellaParams) -> Optional[float]:
    """d Re(lambda) / d alpha at alpha*, i.e. (beta*gamma - 1)/2 for the complex pair"""
    if hopf_point(params) is None:
        return None
    return 0.5 * (params.beta * params.gamma - 1.0)


def nullclines(params: ChiarellaParams, m: ArrayLike) -> Tuple[ArrayLike, ArrayLike]:
    """(delta on the delta-nullcline, delta on the M-nullcline) at trend signal m"""
    if params.kappa <= 0.0:
        raise ParameterError(f"nullclines need kappa > 0, got {params.kappa}")
    on_delta = params.beta / params.kappa * np.tanh(params.gamma * m)
    return on_delta, on_delta - m / params.kappa


def velocity_field(params: ChiarellaParams, delta: ArrayLike, m: ArrayLike) -> Tuple[ArrayLike, ArrayLike]:
    """Deterministic (d delta/dt, dM/dt) in the drift-free mispricing plane"""
    delta_dot = fundamentalist_demand(-delta, params) + trend_demand(m, params)
    return delta_dot, -params.alpha * m + params.alpha * delta_dot
