#!/usr/bin/env python3
"""
Tests for the Silverman multimodality test, J-S distances and variance matching
"""
import logging

import numpy as np
import pytest

from chiarella_system.analysis.mispricing_analysis import (BimodalityRow, MispricingSample, SampleSource,
                                                           _simulated_moments, bimodality_table,
                                                           bimodality_verdict, count_modes, critical_bandwidth,
                                                           js_distance, mispricing_histogram, numerical_bimodality,
                                                           numerical_verdict, silverman_test, thinning_factor,
                                                           variance_match)
from chiarella_system.errors import BandwidthBracketError, InputDataError, ParameterError

TWO_CLUSTERS = np.array([-5.0] * 10 + [5.0] * 10)
TWO_BLOCKS = np.concatenate([-5.0 + 0.01 * np.arange(10), 4.91 + 0.01 * np.arange(10)])


def test_mode_counting():
    assert count_modes(TWO_CLUSTERS, 1.0) == 2
    assert count_modes(np.zeros(20), 1.0) == 1


def test_critical_bandwidth_of_two_blocks():
    # two equal bumps merge once h reaches half their separation
    assert critical_bandwidth(TWO_BLOCKS) == pytest.approx(5.0, rel=0.05)


def test_critical_bandwidth_needs_spread():
    with pytest.raises(BandwidthBracketError):
        critical_bandwidth(np.ones(30))


def test_silverman_rejects_a_clear_mixture():
    rng = np.random.default_rng(1)
    x = np.concatenate([rng.normal(-3, 1, 200), rng.normal(3, 1, 200)])
    result = silverman_test(x, n_boot=200, seed=2)
    assert result.p_value < 0.02
    assert result.n == 400 and result.n_boot == 200


def test_silverman_accepts_a_gaussian():
    x = np.random.default_rng(3).standard_normal(400)
    assert silverman_test(x, n_boot=200, seed=4).p_value > 0.02


def test_silverman_level_over_many_gaussian_samples():
    accepted = sum(
        silverman_test(np.random.default_rng(1000 + seed).standard_normal(1000), n_boot=200, seed=seed).p_value > 0.02
        for seed in range(100)
    )
    assert accepted >= 95


def test_silverman_power_over_many_mixture_samples():
    rejected = 0
    for seed in range(100):
        rng = np.random.default_rng(2000 + seed)
        x = rng.choice([-2.0, 2.0], size=1000) + 0.5 * rng.standard_normal(1000)
        rejected += silverman_test(x, n_boot=200, seed=seed).p_value < 0.02
    assert rejected >= 95


def test_silverman_argument_checks():
    with pytest.raises(ParameterError):
        silverman_test(np.random.default_rng(0).standard_normal(100), n_boot=50)
    with pytest.raises(InputDataError):
        silverman_test(np.arange(10.0))


def test_verdicts():
    assert bimodality_verdict(0.001, 0.01) == 'bimodal'
    assert bimodality_verdict(0.5, 0.3) == 'unimodal'
    assert bimodality_verdict(0.001, 0.3) == 'inconclusive'
    assert numerical_verdict(0.019) == 'bimodal'
    assert numerical_verdict(0.02) == 'unimodal'


def test_mispricing_sample_validation():
    sample = MispricingSample(np.zeros(25), SampleSource.SMOOTHED_EMPIRICAL)
    assert sample.n == 25
    with pytest.raises(InputDataError):
        MispricingSample(np.zeros(5), SampleSource.SIMULATED)
    with pytest.raises(InputDataError):
        MispricingSample(np.array([np.nan] * 30), SampleSource.SIMULATED)


def test_js_distance_bounds():
    a = np.linspace(0.0, 1.0, 100)
    assert js_distance(a, a) == pytest.approx(0.0, abs=1e-12)
    assert js_distance(a, a + 2.0) == pytest.approx(1.0)
    assert 0.0 < js_distance(a, a + 0.5) < 1.0


def test_js_distance_between_unimodal_and_bimodal_histograms():
    centres = np.arange(10) + 0.5
    unimodal = np.repeat(centres, [1, 3, 7, 12, 27, 27, 12, 7, 3, 1])
    bimodal = np.repeat(centres, [3, 10, 16, 12, 9, 9, 12, 16, 10, 3])
    distance = js_distance(unimodal, bimodal)
    assert 0.1 <= distance <= 0.4
    assert distance == pytest.approx(0.3609, abs=1e-3)


def test_js_distance_warns_on_a_single_occupied_bin(caplog):
    with caplog.at_level(logging.WARNING):
        distance = js_distance(np.ones(10), 2.0 * np.ones(10))
    assert distance == pytest.approx(1.0)
    assert "single bin" in caplog.text


def test_js_distance_degenerate_inputs():
    assert js_distance(np.ones(10), np.ones(10)) == 0.0
    assert js_distance(np.arange(3.0), np.arange(3.0) + 1) == 0.0
    with pytest.raises(InputDataError):
        js_distance(np.array([]), np.ones(5))


def test_uniform_thinning():
    factor = thinning_factor(10, max_points=4)
    assert factor == 3
    np.testing.assert_array_equal(np.arange(10)[::factor], [0, 3, 6, 9])
    assert thinning_factor(10, max_points=100) == 1
    assert thinning_factor(20001, max_points=5000) == 5


def test_histogram_shares_its_support():
    rng = np.random.default_rng(5)
    frame = mispricing_histogram({'smoothed': rng.normal(size=400), 'filtered': rng.normal(size=100)})
    assert list(frame.columns) == ['bin_left', 'bin_right', 'filtered', 'smoothed']
    assert len(frame) == 10
    widths = frame['bin_right'] - frame['bin_left']
    assert float((frame['smoothed'] * widths).sum()) == pytest.approx(1.0)


def test_bimodality_table_is_sorted():
    rows = [BimodalityRow('b', 0.5, 0.4, 'unimodal'), BimodalityRow('a', 0.0, 0.01, 'bimodal', 0.0, 'bimodal', 0.1)]
    table = bimodality_table(rows)
    assert list(table['asset']) == ['a', 'b']
    assert table['js_distance'].iloc[0] == 0.1


def test_variance_match_leaves_a_matching_theta_alone(index_params):
    mean, var = _simulated_moments(index_params, 2000, seed=0)
    result = variance_match(index_params, target_mean=mean + 0.1, target_var=var, horizon=2000, seed=0)
    assert result.matched and result.step == 0.0
    assert result.theta == index_params
    assert result.mean_offset == pytest.approx(0.1)


def test_variance_match_doubles_the_variance(index_params):
    _, var = _simulated_moments(index_params, 2000, seed=0)
    result = variance_match(index_params, target_mean=0.0, target_var=2.0 * var, horizon=2000, seed=0)
    assert result.matched
    assert result.within_budget and result.loglik_drop == 0.0
    assert result.step > 0
    assert result.simulated_var == pytest.approx(2.0 * var, rel=0.01)
    assert set(result.direction) == {'kappa', 'beta', 'gamma', 'sigma_n', 'sigma_v'}


def test_variance_match_respects_the_likelihood_budget(index_params):
    _, var = _simulated_moments(index_params, 2000, seed=0)

    def loglik(theta):
        # the drop grows with any move of sigma_N
        return -1.0 - abs(theta.sigma_n - index_params.sigma_n) * 100.0

    result = variance_match(index_params, target_mean=0.0, target_var=4.0 * var, loglik=loglik,
                            horizon=2000, seed=0, max_drop=0.05)
    assert not result.within_budget
    assert result.loglik_drop <= 0.05
    assert not result.matched


def test_variance_match_rejects_non_positive_target(index_params):
    with pytest.raises(ParameterError):
        variance_match(index_params, 0.0, 0.0)


def test_numerical_bimodality_subsamples(index_params):
    result = numerical_bimodality(index_params, seed=7, dt=0.01, horizon=200.0, n_boot=200,
                                  subsample_points=5000)
    assert result.subsample_factor in (4, 5)
    assert result.n <= 5000
    assert 0.0 <= result.p_value <= 1.0


def test_limit_cycle_mispricing_is_bimodal(cycle_params):
    params = cycle_params.with_values(kappa3=0.01, sigma_n=0.1, sigma_v=0.05)
    result = numerical_bimodality(params, seed=11, n_boot=200)
    assert result.subsample_factor == 11
    assert result.n <= 1_000_000
    assert result.p_value < 0.02
    assert numerical_verdict(result.p_value) == 'bimodal'
