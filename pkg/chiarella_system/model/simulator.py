"""
Simulator - deterministic (RK4 / Euler) and Euler-Maruyama integration of the
continuous Chiarella system plus exact iteration of the de-drifted monthly system
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from numpy.polynomial import Legendre

from ..config import DETERMINISTIC_DT, NOISE_CHUNK, STREAM_TAGS
from ..errors import NonFiniteStateError, ParameterError
from .model_core import ChiarellaParams, SystemState, hopf_point

logger = logging.getLogger(__name__)

DOMAIN_SLACK = 1e-9


@dataclass(frozen=True)
class DriftModel:
    """
    Integrated drift G_t as a Legendre series over the data span (months).
    g_t = dG/dt. An unbounded domain is only allowed for order 0.
    """
    coefficients: Tuple[float, ...]
    order: int
    domain: Tuple[float, float]

    def __post_init__(self):
        if self.order < 0 or len(self.coefficients) != self.order + 1:
            raise ParameterError(f"drift order {self.order} does not match {len(self.coefficients)} coefficients")
        lo, hi = self.domain
        if not lo < hi:
            raise ParameterError(f"empty drift domain {self.domain}")
        if self.order > 0 and not (math.isfinite(lo) and math.isfinite(hi)):
            raise ParameterError("a non-constant drift needs a finite domain")

    @classmethod
    def zero(cls) -> 'DriftModel':
        return cls.constant(0.0)

    @classmethod
    def constant(cls, level: float, domain: Tuple[float, float] = (-math.inf, math.inf)) -> 'DriftModel':
        return cls(coefficients=(float(level),), order=0, domain=domain)

    @classmethod
    def from_legendre(cls, series: Legendre) -> 'DriftModel':
        coef = tuple(float(c) for c in series.coef)
        return cls(coefficients=coef, order=len(coef) - 1, domain=tuple(float(d) for d in series.domain))

    @property
    def is_constant(self) -> bool:
        return self.order == 0

    def _check(self, t: np.ndarray) -> None:
        lo, hi = self.domain
        span = (hi - lo) if math.isfinite(hi - lo) else 0.0
        slack = DOMAIN_SLACK * max(span, 1.0)
        if np.any(t < lo - slack) or np.any(t > hi + slack):
            raise ParameterError(f"drift evaluated outside its domain {self.domain}")

    def _series(self) -> Legendre:
        return Legendre(self.coefficients, domain=list(self.domain))

    def G(self, t):
        t_arr = np.asarray(t, dtype=float)
        self._check(t_arr)
        if self.is_constant:
            out = np.full_like(t_arr, self.coefficients[0])
        else:
            out = self._series()(t_arr)
        return float(out) if np.ndim(out) == 0 else out

    def g(self, t):
        t_arr = np.asarray(t, dtype=float)
        self._check(t_arr)
        if self.is_constant:
            out = np.zeros_like(t_arr)
        else:
            out = self._series().deriv()(t_arr)
        return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    p: np.ndarray
    v: np.ndarray
    m: np.ndarray
    params: ChiarellaParams
    dt: float
    seed: Optional[int] = None
    method: str = 'rk4'

    def __post_init__(self):
        n = len(self.times)
        if not (len(self.p) == len(self.v) == len(self.m) == n):
            raise ParameterError("trajectory sequences must have equal length")
        for arr in (self.times, self.p, self.v, self.m):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def delta(self) -> np.ndarray:
        return self.p - self.v

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            't': self.times,
            'p': self.p,
            'v': self.v,
            'm': self.m,
            'delta': self.delta,
        })

    def to_csv(self, path: str) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.10g")


def _rates(p: float, v: float, m: float, g: float, params: ChiarellaParams) -> Tuple[float, float, float]:
    """(dP/dt, dV/dt, dM/dt) of the noise-free system"""
    x = v - p
    core = params.kappa * x + params.kappa3 * x * x * x + params.beta * math.tanh(params.gamma * m)
    return core + g, g, -params.alpha * m + params.alpha * core


def _euler_step(p: float, v: float, m: float, g: float, dt: float, params: ChiarellaParams,
                noise_p: float = 0.0, noise_v: float = 0.0) -> Tuple[float, float, float]:
    """
    One Euler(-Maruyama) step. M uses the same-step price move:
    dM = -alpha*M dt + alpha*(dP - g dt)
    """
    x = v - p
    core = params.kappa * x + params.kappa3 * x * x * x + params.beta * math.tanh(params.gamma * m)
    d_p = core * dt + g * dt + noise_p
    d_v = g * dt + noise_v
    d_m = -params.alpha * m * dt + params.alpha * (d_p - g * dt)
    return p + d_p, v + d_v, m + d_m


def _rk4_step(p: float, v: float, m: float, t: float, dt: float, params: ChiarellaParams,
              g_of: Callable[[float], float]) -> Tuple[float, float, float]:
    g1 = g_of(t)
    g2 = g_of(t + 0.5 * dt)
    g4 = g_of(t + dt)
    k1 = _rates(p, v, m, g1, params)
    k2 = _rates(p + 0.5 * dt * k1[0], v + 0.5 * dt * k1[1], m + 0.5 * dt * k1[2], g2, params)
    k3 = _rates(p + 0.5 * dt * k2[0], v + 0.5 * dt * k2[1], m + 0.5 * dt * k2[2], g2, params)
    k4 = _rates(p + dt * k3[0], v + dt * k3[1], m + dt * k3[2], g4, params)
    return (
        p + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        v + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        m + dt / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
    )


def _step_count(dt: float, horizon: float) -> int:
    if dt <= 0 or horizon <= 0:
        raise ParameterError(f"dt and horizon must be positive (dt={dt}, horizon={horizon})")
    return int(round(horizon / dt))


def _drift_rate(drift: Optional[DriftModel]) -> Callable[[float], float]:
    if drift is None or drift.is_constant:
        return lambda t: 0.0
    return drift.g


class _Recorder:
    def __init__(self, n_steps: int, record_every: int):
        if record_every < 1:
            raise ParameterError(f"record_every must be >= 1, got {record_every}")
        self.record_every = record_every
        size = n_steps // record_every + 1
        self.t = np.empty(size)
        self.p = np.empty(size)
        self.v = np.empty(size)
        self.m = np.empty(size)
        self.n = 0

    def push(self, t: float, p: float, v: float, m: float) -> None:
        i = self.n
        self.t[i], self.p[i], self.v[i], self.m[i] = t, p, v, m
        self.n += 1

    def trajectory(self, params, dt, seed, method) -> Trajectory:
        n = self.n
        return Trajectory(times=self.t[:n].copy(), p=self.p[:n].copy(), v=self.v[:n].copy(),
                          m=self.m[:n].copy(), params=params, dt=dt * self.record_every,
                          seed=seed, method=method)


def integrate_deterministic(params: ChiarellaParams, init: SystemState, dt: float = DETERMINISTIC_DT,
                            horizon: float = 3000.0, drift: Optional[DriftModel] = None,
                            method: str = 'rk4', record_every: int = 1) -> Trajectory:
    """Noise-free integration; sigma_N and sigma_V are ignored"""
    if method not in ('rk4', 'euler'):
        raise ParameterError(f"unknown integration method '{method}'")
    n_steps = _step_count(dt, horizon)
    g_of = _drift_rate(drift)
    rec = _Recorder(n_steps, record_every)

    p, v, m, t0 = init.p, init.v, init.m, init.t
    rec.push(t0, p, v, m)
    for i in range(1, n_steps + 1):
        t = t0 + (i - 1) * dt
        if method == 'rk4':
            p, v, m = _rk4_step(p, v, m, t, dt, params, g_of)
        else:
            p, v, m = _euler_step(p, v, m, g_of(t), dt, params)
        if not (math.isfinite(p) and math.isfinite(v) and math.isfinite(m)):
            raise NonFiniteStateError(f"deterministic {method} run diverged at t={t0 + i * dt:.6g}", step=i)
        if i % record_every == 0:
            rec.push(t0 + i * dt, p, v, m)

    logger.debug(f"Deterministic {method} run: {n_steps} steps, dt={dt}")
    return rec.trajectory(params, dt, None, method)


def noise_streams(seed: int) -> Dict[str, np.random.Generator]:
    """Independent generators per noise tag, so switching one noise off never shifts the other"""
    return {
        tag: np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key,)))
        for tag, key in STREAM_TAGS.items()
    }


def _chunks(rng: np.random.Generator, total: int, chunk: int):
    done = 0
    while done < total:
        size = min(chunk, total - done)
        yield rng.standard_normal(size).tolist()
        done += size


def simulate_sde(params: ChiarellaParams, init: SystemState, dt: float, horizon: float, seed: int,
                 drift: Optional[DriftModel] = None, record_every: int = 1,
                 chunk_size: int = NOISE_CHUNK) -> Trajectory:
    """Euler-Maruyama integration of the stochastic system"""
    if seed is None:
        raise ParameterError("simulate_sde needs an explicit seed")
    n_steps = _step_count(dt, horizon)
    g_of = _drift_rate(drift)
    streams = noise_streams(seed)
    scale_n = params.sigma_n * math.sqrt(dt)
    scale_v = params.sigma_v * math.sqrt(dt)
    rec = _Recorder(n_steps, record_every)

    p, v, m, t0 = init.p, init.v, init.m, init.t
    rec.push(t0, p, v, m)
    i = 0
    for xi_n, xi_v in zip(_chunks(streams['N'], n_steps, chunk_size), _chunks(streams['V'], n_steps, chunk_size)):
        for a, b in zip(xi_n, xi_v):
            t = t0 + i * dt
            i += 1
            p, v, m = _euler_step(p, v, m, g_of(t), dt, params, scale_n * a, scale_v * b)
            if not (math.isfinite(p) and math.isfinite(m)):
                raise NonFiniteStateError(f"SDE run diverged at t={t0 + i * dt:.6g}", step=i)
            if i % record_every == 0:
                rec.push(t0 + i * dt, p, v, m)

    logger.info(f"SDE run finished: {n_steps} steps, dt={dt}, seed={seed}")
    return rec.trajectory(params, dt, seed, 'euler-maruyama')


def simulate_discrete(params: ChiarellaParams, horizon_months: int, seed: int,
                      init: Optional[SystemState] = None) -> Trajectory:
    """
    Monthly de-drifted system:
        p[t+1] = p[t] + f(v[t] - p[t]) + beta*tanh(gamma*m[t]) + eta_N
        m[t+1] = (1 - alpha)*m[t] + alpha*(p[t] - p[t-1]),  p[-1] = p[0]
        v[t+1] = v[t] + eta_V
    """
    if horizon_months < 2:
        raise ParameterError(f"horizon must be >= 2 months, got {horizon_months}")
    init = init or SystemState(p=0.0, v=0.0, m=0.0)
    n = int(horizon_months)
    streams = noise_streams(seed)
    eta_n = params.sigma_n * streams['N'].standard_normal(n - 1)
    eta_v = params.sigma_v * streams['V'].standard_normal(n - 1)

    p = np.empty(n)
    v = np.empty(n)
    m = np.empty(n)
    p[0], v[0], m[0] = init.p, init.v, init.m
    a, k, k3, b, c = params.alpha, params.kappa, params.kappa3, params.beta, params.gamma
    prev_p = init.p
    for t in range(n - 1):
        x = v[t] - p[t]
        p[t + 1] = p[t] + k * x + k3 * x ** 3 + b * math.tanh(c * m[t]) + eta_n[t]
        m[t + 1] = (1.0 - a) * m[t] + a * (p[t] - prev_p)
        v[t + 1] = v[t] + eta_v[t]
        prev_p = p[t]
        if not math.isfinite(p[t + 1]):
            raise NonFiniteStateError("discrete run diverged", step=t + 1)

    times = init.t + np.arange(n, dtype=float)
    return Trajectory(times=times, p=p, v=v, m=m, params=params, dt=1.0, seed=seed, method='discrete')


@dataclass(frozen=True)
class CycleMetrics:
    amplitude: float
    period: float


def cycle_metrics(delta: Sequence[float], dt: float = 1.0, transient_fraction: float = 0.5,
                  min_amplitude: float = 1e-6, decay_ratio: float = 0.1) -> Optional[CycleMetrics]:
    """Amplitude / period of a sustained oscillation in delta, None for a decaying or flat signal"""
    delta = np.asarray(delta, dtype=float)
    if not 0.0 <= transient_fraction < 1.0:
        raise ParameterError(f"transient_fraction must lie in [0, 1), got {transient_fraction}")
    start = int(len(delta) * transient_fraction)
    tail = delta[start:]
    if len(tail) < 8:
        raise ParameterError("trajectory is shorter than its transient")

    amplitude = 0.5 * float(tail.max() - tail.min())
    if amplitude < min_amplitude:
        return None

    quarter = len(tail) // 4
    first = np.ptp(tail[:quarter])
    last = np.ptp(tail[-quarter:])
    if first > 0 and last < decay_ratio * first:
        return None

    centred = tail - 0.5 * (tail.max() + tail.min())
    ups = np.flatnonzero((centred[:-1] < 0) & (centred[1:] >= 0))
    if len(ups) < 2:
        return None
    period = float(np.mean(np.diff(ups))) * dt
    return CycleMetrics(amplitude=amplitude, period=period)


def limit_cycle_metrics(traj: Trajectory, transient_fraction: float = 0.5) -> Optional[CycleMetrics]:
    return cycle_metrics(traj.delta, dt=traj.dt, transient_fraction=transient_fraction)


def hopf_amplitude_scan(params: ChiarellaParams, factors: Sequence[float] = (1.05, 1.1, 1.2),
                        init: Optional[SystemState] = None, dt: float = DETERMINISTIC_DT,
                        horizon: float = 20000.0) -> List[Dict]:
    """
    Limit-cycle amplitude just beyond the Hopf point alpha*; amplitudes that grow
    from zero as alpha moves past alpha* indicate a supercritical bifurcation.
    """
    alpha_star = hopf_point(params)
    if alpha_star is None:
        raise ParameterError("no Hopf point: beta*gamma <= 1")
    init = init or SystemState(p=0.1, v=0.0, m=0.0)
    scan = []
    for factor in factors:
        alpha = factor * alpha_star
        if alpha > 1.0:
            logger.warning(f"Skipping factor {factor}: alpha={alpha:.4g} leaves (0, 1]")
            continue
        traj = integrate_deterministic(params.with_values(alpha=alpha), init, dt=dt, horizon=horizon,
                                       record_every=max(1, int(round(1.0 / dt))))
        metrics = limit_cycle_metrics(traj, transient_fraction=0.75)
        scan.append({
            'factor': factor,
            'alpha': alpha,
            'amplitude': metrics.amplitude if metrics else 0.0,
            'period': metrics.period if metrics else None,
        })
        logger.info(f"Hopf scan alpha={alpha:.5g}: amplitude={scan[-1]['amplitude']:.4g}")
    return scan
