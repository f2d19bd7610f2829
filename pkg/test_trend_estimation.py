#!/usr/bin/env python3
"""
Tests for the EWMA trend signal, the alpha search and the tanh fit
"""
import numpy as np
import pytest

from chiarella_system.errors import InputDataError, ParameterError, UndefinedSharpeError
from chiarella_system.estimation import trend_estimation
from chiarella_system.estimation.trend_estimation import (alpha_sharpe_curve, estimate_alpha,
                                                          estimate_class_trend, ewma_trend, fit_tanh,
                                                          is_flat_curve, returns_from_prices,
                                                          rolling_average_curve, sharpe_ratio, trend_pairs)
from conftest import synthetic_log_prices


def test_returns_start_at_zero():
    np.testing.assert_allclose(returns_from_prices([1.0, 1.5, 1.2]), [0.0, 0.5, -0.3])


def test_ewma_uses_only_past_returns():
    m = ewma_trend([0.0, 1.0, 0.0, 0.0], alpha=0.5)
    np.testing.assert_allclose(m, [0.0, 0.0, 0.5, 0.25])


def test_ewma_with_alpha_one_is_the_last_return():
    r = np.array([0.0, 0.3, -0.2, 0.1])
    np.testing.assert_allclose(ewma_trend(r, 1.0), [0.0, 0.0, 0.3, -0.2])


def test_ewma_rejects_alpha_outside_unit_interval():
    with pytest.raises(ParameterError):
        ewma_trend([0.0, 1.0], 0.0)


def test_sharpe_ratio_edge_cases():
    assert sharpe_ratio([1.0, -1.0, 1.0, -1.0]) == pytest.approx(0.0)
    assert sharpe_ratio([1.0, 3.0]) == pytest.approx(2.0)
    with pytest.raises(UndefinedSharpeError):
        sharpe_ratio([0.5, 0.5, 0.5])
    with pytest.raises(ParameterError):
        sharpe_ratio([1.0])


def test_fast_decay_wins_on_a_slow_oscillation():
    t = np.arange(1200)
    prices = np.sin(2 * np.pi * t / 120.0)
    assert estimate_alpha([prices], grid=[0.5, 0.05]) == 0.5


def test_ties_resolve_to_the_smaller_alpha(monkeypatch):
    monkeypatch.setattr(trend_estimation, 'alpha_sharpe_curve', lambda series, grid: {0.5: 1.0, 0.25: 1.0, 0.1: 0.3})
    assert estimate_alpha([np.zeros(10)]) == 0.25


def test_sharpe_curve_is_pooled_over_series():
    t = np.arange(600)
    a = np.sin(2 * np.pi * t / 100.0)
    curve = alpha_sharpe_curve({'a': a, 'b': 2.0 * a}, grid=[0.5, 0.25])
    assert set(curve) == {0.5, 0.25}
    # scaling a series scales its strategy returns, not their sign
    single = alpha_sharpe_curve([a], grid=[0.5, 0.25])
    assert np.sign(curve[0.5]) == np.sign(single[0.5])


def test_flat_curve_detection():
    assert is_flat_curve({0.5: 0.10, 0.25: 0.11}, n_obs=400)
    assert not is_flat_curve({0.5: 0.10, 0.25: 0.40}, n_obs=400)


def tanh_sample(n=5000, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    y = 0.1 + 0.8 * np.tanh(1.5 * x + 0.2) + 0.05 * rng.standard_normal(n)
    return x, y


def test_tanh_fit_recovers_the_saturation():
    x, y = tanh_sample()
    fit = fit_tanh(x, y, var_m=1.0, alpha=0.25)
    assert fit.gamma_tilde == pytest.approx(1.5, abs=0.1)
    assert fit.b == pytest.approx(0.8, abs=0.05)
    assert fit.a == pytest.approx(0.1, abs=0.05)
    assert 0 < fit.gamma_err < 0.1
    assert fit.residual < fit.linear_residual
    assert fit.alpha == 0.25


def test_tanh_fit_reports_positive_gamma_for_mirrored_data():
    x, y = tanh_sample()
    fit = fit_tanh(-x, y)
    assert fit.gamma_tilde > 0
    assert fit.b < 0


def test_gamma_is_rescaled_by_the_trend_variance():
    x, y = tanh_sample()
    fit = fit_tanh(x, y, var_m=4.0)
    assert fit.gamma == pytest.approx(fit.gamma_tilde / 2.0)
    per_asset = fit.for_asset(0.25)
    assert per_asset.gamma == pytest.approx(fit.gamma_tilde / 0.5)
    assert per_asset.var_m == 0.25


def test_tanh_fit_needs_enough_points():
    with pytest.raises(InputDataError):
        fit_tanh(np.arange(50.0), np.arange(50.0))


def test_rolling_average_curve_is_ordered_by_trend():
    x, y = tanh_sample(n=3000)
    curve = rolling_average_curve(x, y, window=1000)
    assert len(curve) == 3000 - 1000 + 1
    assert np.all(np.diff(curve['m_norm']) >= 0)
    assert curve['ret_norm_rollavg'].iloc[-1] > curve['ret_norm_rollavg'].iloc[0]


def test_trend_pairs_align_signal_with_next_move():
    p = np.array([0.0, 0.1, 0.3, 0.2, 0.4])
    m, fwd, var_m = trend_pairs(p, alpha=1.0)
    np.testing.assert_allclose(m, [0.0, 0.0, 0.1, 0.2])
    np.testing.assert_allclose(fwd, [0.1, 0.2, -0.1, 0.2])
    assert var_m == pytest.approx(np.var([0.0, 0.0, 0.1, 0.2, -0.1]))


def test_class_trend_shares_alpha_and_rescales_gamma(trend_params):
    series = {name: synthetic_log_prices(trend_params, 600, seed)[1].p for name, seed in (('a', 1), ('b', 2))}
    result = estimate_class_trend('index', series, grid=[0.5, 0.25, 0.1])
    assert result.fit.alpha in (0.5, 0.25, 0.1)
    assert set(result.var_m) == {'a', 'b'}
    assert set(result.fit.sharpe_curve) == {0.5, 0.25, 0.1}
    a = result.asset_fit('a')
    assert a.gamma == pytest.approx(result.fit.gamma_tilde / np.sqrt(result.var_m['a']))
