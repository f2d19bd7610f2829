"""
Filtering - latent fundamental value inference for the de-drifted monthly model

Hidden state v_t (random walk with volatility sigma_V). Observation at t = 0..T-2:

    z_t = p[t+1] - p[t] - beta*tanh(gamma*m[t]) = h_t(v_t) + eta_N
    h_t(v) = kappa*(v - p[t]) + kappa3*(v - p[t])^3

The trend signal m is a deterministic function of observed prices and enters as a
known control. kappa3 = 0 gives a linear Kalman filter; kappa3 > 0 uses an
unscented update with three sigma points.

The unscented update assumes a Gaussian posterior. It tracks the exact posterior
closely while the prior spread of v is small next to |v - p[t]|, so that h is close
to linear across a few prior standard deviations. With a wide prior on a strongly
cubic h the posterior turns skewed or bimodal and the filtered means can be far off.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import pandas as pd
from filterpy.kalman import MerweScaledSigmaPoints

from ..config import INITIAL_VARIANCE_FACTOR, UKF_ALPHA, UKF_BETA, UKF_KAPPA, VARIANCE_FLOOR
from ..errors import CovarianceLossError, InputDataError, ParameterError
from ..model.model_core import ChiarellaParams
from .trend_estimation import trend_signal

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class StateSpaceSpec:
    params: ChiarellaParams
    dedrifted: np.ndarray
    initial_variance: Optional[float] = None

    def __post_init__(self):
        p = np.asarray(self.dedrifted, dtype=float)
        if len(p) < 2:
            raise InputDataError("filtering needs at least two observations")
        if not np.all(np.isfinite(p)):
            raise InputDataError("observations must be finite")
        if self.params.sigma_n <= 0:
            raise ParameterError("sigma_N must be > 0 for a well-posed likelihood")
        object.__setattr__(self, 'dedrifted', p)

    @property
    def n_obs(self) -> int:
        return len(self.dedrifted) - 1

    @property
    def P0(self) -> float:
        if self.initial_variance is not None:
            return float(self.initial_variance)
        scale = self.params.sigma_v if self.params.sigma_v > 0 else self.params.sigma_n
        return (INITIAL_VARIANCE_FACTOR * scale) ** 2

    def trend(self) -> np.ndarray:
        return trend_signal(self.dedrifted, self.params.alpha)

    def control(self) -> np.ndarray:
        """beta*tanh(gamma*m[t]) for t = 0..T-2"""
        m = self.trend()[:-1]
        return self.params.beta * np.tanh(self.params.gamma * m)

    def observations(self) -> np.ndarray:
        return np.diff(self.dedrifted) - self.control()


@dataclass(frozen=True)
class FilterResult:
    v_pred: np.ndarray
    var_pred: np.ndarray
    v_filt: np.ndarray
    var_filt: np.ndarray
    loglik: float
    loglik_per_step: float
    method: str
    v_smooth: Optional[np.ndarray] = None
    var_smooth: Optional[np.ndarray] = None
    lag_cov: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.v_filt)

    @property
    def is_smoothed(self) -> bool:
        return self.v_smooth is not None

    def to_frame(self, dates: Optional[pd.DatetimeIndex] = None) -> pd.DataFrame:
        frame = pd.DataFrame({
            'v_filt': self.v_filt,
            'sd_filt': np.sqrt(self.var_filt),
            'v_smooth': self.v_smooth if self.is_smoothed else np.nan,
            'sd_smooth': np.sqrt(self.var_smooth) if self.is_smoothed else np.nan,
        })
        if dates is not None:
            frame.insert(0, 'date', pd.DatetimeIndex(dates).strftime('%Y-%m-%d'))
        return frame


def _log_density(innovation: float, variance: float) -> float:
    s = max(variance, VARIANCE_FLOOR)
    return -0.5 * (LOG_2PI + math.log(s) + innovation * innovation / s)


def _finish(spec, v_pred, var_pred, v_filt, var_filt, loglik, method) -> FilterResult:
    T = len(spec.dedrifted)
    # no observation at the last step: filtered equals predicted
    v_filt[T - 1] = v_pred[T - 1]
    var_filt[T - 1] = var_pred[T - 1]
    return FilterResult(v_pred=v_pred, var_pred=var_pred, v_filt=v_filt, var_filt=var_filt,
                        loglik=float(loglik), loglik_per_step=float(loglik) / spec.n_obs, method=method)


def kalman_filter(spec: StateSpaceSpec) -> FilterResult:
    params = spec.params
    if not params.is_linear:
        raise ParameterError("kalman_filter handles the linear model only; use ukf_filter")
    p = spec.dedrifted
    z = spec.observations() + params.kappa * p[:-1]
    k, r, q = params.kappa, params.sigma_n ** 2, params.sigma_v ** 2
    T = len(p)

    v_pred, var_pred = np.empty(T), np.empty(T)
    v_filt, var_filt = np.empty(T), np.empty(T)
    a, P = params.v0, spec.P0
    loglik = 0.0
    for t in range(T - 1):
        v_pred[t], var_pred[t] = a, P
        S = k * k * P + r
        e = z[t] - k * a
        gain = P * k / S
        a = a + gain * e
        P = P * r / S
        v_filt[t], var_filt[t] = a, P
        loglik += _log_density(e, S)
        P = P + q
    v_pred[T - 1], var_pred[T - 1] = a, P
    return _finish(spec, v_pred, var_pred, v_filt, var_filt, loglik, 'kalman')


def _sigma_points() -> MerweScaledSigmaPoints:
    return MerweScaledSigmaPoints(n=1, alpha=UKF_ALPHA, beta=UKF_BETA, kappa=UKF_KAPPA)


def ukf_filter(spec: StateSpaceSpec) -> FilterResult:
    params = spec.params
    p = spec.dedrifted
    z = spec.observations()
    r, q = params.sigma_n ** 2, params.sigma_v ** 2
    T = len(p)
    points = _sigma_points()
    Wm, Wc = points.Wm, points.Wc

    v_pred, var_pred = np.empty(T), np.empty(T)
    v_filt, var_filt = np.empty(T), np.empty(T)
    a, P = params.v0, spec.P0
    loglik = 0.0
    for t in range(T - 1):
        v_pred[t], var_pred[t] = a, P
        if not P > 0.0:
            raise CovarianceLossError(t, P)
        chi = points.sigma_points(np.array([a]), np.array([[P]]))[:, 0]
        x = chi - p[t]
        Z = params.kappa * x + params.kappa3 * x ** 3
        z_hat = float(Wm @ Z)
        dz = Z - z_hat
        S = float(Wc @ (dz * dz)) + r
        C = float(Wc @ ((chi - a) * dz))
        gain = C / S
        e = z[t] - z_hat
        a = a + gain * e
        P = P - gain * gain * S
        if not (P > 0.0 and math.isfinite(P)):
            raise CovarianceLossError(t, P)
        v_filt[t], var_filt[t] = a, P
        loglik += _log_density(e, S)
        P = P + q
    v_pred[T - 1], var_pred[T - 1] = a, P
    return _finish(spec, v_pred, var_pred, v_filt, var_filt, loglik, 'ukf')


def _rts_smooth(result: FilterResult) -> FilterResult:
    """
    Fixed-interval backward pass for the random-walk transition; the unscented
    smoother reduces to the same recursion because the transition is the identity.
    """
    vf, Pf, vp, Pp = result.v_filt, result.var_filt, result.v_pred, result.var_pred
    T = len(vf)
    vs, Ps = vf.copy(), Pf.copy()
    lag = np.empty(T - 1)
    for t in range(T - 2, -1, -1):
        J = Pf[t] / max(Pp[t + 1], VARIANCE_FLOOR)
        vs[t] = vf[t] + J * (vs[t + 1] - vp[t + 1])
        Ps[t] = Pf[t] + J * J * (Ps[t + 1] - Pp[t + 1])
        lag[t] = J * Ps[t + 1]
        if not Ps[t] > 0.0:
            raise CovarianceLossError(t, Ps[t])
    return replace(result, v_smooth=vs, var_smooth=Ps, lag_cov=lag)


def kalman_smooth(result: FilterResult) -> FilterResult:
    return _rts_smooth(result)


def ukf_smooth(result: FilterResult) -> FilterResult:
    return _rts_smooth(result)


def run_filter(spec: StateSpaceSpec, smooth: bool = True) -> FilterResult:
    """Kalman for the linear model, unscented otherwise"""
    if spec.params.is_linear:
        result = kalman_filter(spec)
        return kalman_smooth(result) if smooth else result
    result = ukf_filter(spec)
    return ukf_smooth(result) if smooth else result


def predictive_loglik(params: ChiarellaParams, dedrifted: np.ndarray,
                      initial_variance: Optional[float] = None) -> float:
    """Total one-step-ahead log-likelihood of a series under params"""
    return run_filter(StateSpaceSpec(params, dedrifted, initial_variance), smooth=False).loglik
