"""
Shared fixtures: synthetic monthly price series generated from the model itself
"""
import numpy as np
import pandas as pd
import pytest

from chiarella_system.model.model_core import ChiarellaParams
from chiarella_system.model.simulator import simulate_discrete


@pytest.fixture
def index_params():
    """Magnitudes of a calibrated stock index"""
    return ChiarellaParams(kappa=0.05, beta=0.3, gamma=3.0, alpha=0.25, sigma_n=0.04, sigma_v=0.01)


@pytest.fixture
def trend_params():
    """Saturating trend followers: gamma*m reaches the nonlinear part of tanh"""
    return ChiarellaParams(kappa=0.05, beta=0.05, gamma=40.0, alpha=0.25, sigma_n=0.04, sigma_v=0.01)


@pytest.fixture
def stable_params():
    return ChiarellaParams(kappa=0.01, beta=0.5, gamma=2.0, alpha=1.0 / 7.0, sigma_n=0.0, sigma_v=0.0)


@pytest.fixture
def cycle_params():
    return ChiarellaParams(kappa=0.05, beta=0.65, gamma=10.0, alpha=1.0 / 7.0, sigma_n=0.0, sigma_v=0.0)


def monthly_dates(n: int, start: str = '1900-01-01') -> pd.DatetimeIndex:
    return pd.date_range(start, periods=n, freq='MS')


def synthetic_log_prices(params: ChiarellaParams, n: int, seed: int, drift_per_month: float = 0.002):
    traj = simulate_discrete(params, n, seed)
    return traj.p + drift_per_month * np.arange(n), traj


@pytest.fixture
def price_csv_factory(tmp_path):
    """write(asset_id, params, n, seed) -> path of a date,price CSV"""
    def write(asset_id: str, params: ChiarellaParams, n: int = 240, seed: int = 0, start: str = '1900-01-01'):
        logp, _ = synthetic_log_prices(params, n, seed)
        frame = pd.DataFrame({'date': monthly_dates(n, start).strftime('%Y-%m-%d'), 'price': np.exp(logp)})
        path = tmp_path / f"{asset_id}.csv"
        frame.to_csv(path, index=False)
        return path
    return write
