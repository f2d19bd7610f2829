#!/usr/bin/env python3
"""
Tests for run configuration loading and the command line pipeline
"""
import json
import os

import pandas as pd
import pytest

from chiarella_system.config import RunConfig, load_run_config
from chiarella_system.errors import ConfigError
from chiarella_system.main_system import ChiarellaResearchSystem, main, phase_portrait_frames

HERE = os.path.dirname(os.path.abspath(__file__))

RUN_YAML = """
assets:
  - {id: a, class: index, csv_path: a.csv}
  - {id: b, class: index, csv_path: b.csv}
alpha_grid: [0.5, 0.25, 0.1]
em: {tol: 1.0e-4, max_iter: 30}
silverman: {n_boot: 200}
sloppiness: {horizon: 1000}
simulation: {dt: 0.1, horizon: 200, seed: 3}
output_dir: out
"""


def write_config(tmp_path, text=RUN_YAML, name='run.yaml'):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def read_json(path):
    with open(path) as f:
        return json.load(f)


def test_shipped_config_loads():
    cfg = load_run_config(os.path.join(HERE, 'configs', 'historical_run.yaml'))
    assert len(cfg.assets) == 11
    assert cfg.model == 'cubic'
    assert sorted(cfg.asset_classes()) == ['bond', 'commodity', 'currency', 'index']
    de = next(a for a in cfg.assets if a.id == 'index_de')
    assert de.exclusion_windows == [["1914-07-01", "1918-11-30"], ["1919-01-01", "1923-12-31"],
                                    ["1939-09-01", "1945-09-30"]]
    assert os.path.isabs(de.csv_path) and de.csv_path.endswith(os.path.join('data', 'index_de.csv'))


def test_relative_paths_resolve_against_the_config(tmp_path):
    cfg = load_run_config(write_config(tmp_path))
    assert cfg.assets[0].csv_path == str(tmp_path / 'a.csv')
    assert cfg.assets[0].asset_class == 'index'
    assert cfg.em.max_iter == 30 and cfg.silverman.n_boot == 200
    assert cfg.silverman.significance == 0.02


@pytest.mark.parametrize("text", [
    "assets: []\n",
    "assets:\n  - {id: a, csv_path: a.csv}\n  - {id: a, csv_path: b.csv}\n",
    "assets:\n  - {id: a, csv_path: a.csv}\nmodel: quartic\n",
    "assets:\n  - {id: a, csv_path: a.csv}\nalpha_grid: [1.5]\n",
    "- just\n- a list\n",
    "assets: [unclosed\n",
])
def test_invalid_configs_are_rejected(tmp_path, text):
    with pytest.raises(ConfigError):
        load_run_config(write_config(tmp_path, text))


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(str(tmp_path / 'nope.yaml'))


def test_phase_portrait_command(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    rc = main(['phase-portrait', '--kappa', '0.05', '--beta', '0.65', '--gamma', '10', '--alpha', '0.142857',
               '--grid-n', '5', '--output', 'out'])
    assert rc == 0
    assert len(pd.read_csv(tmp_path / 'out' / 'phase' / 'nullclines.csv')) == 5
    field = pd.read_csv(tmp_path / 'out' / 'phase' / 'field.csv')
    assert list(field.columns) == ['delta', 'm', 'd_delta', 'd_m']
    assert len(field) == 25


def test_even_phase_grid_still_passes_through_the_origin(cycle_params):
    lines, field = phase_portrait_frames(cycle_params, (-1.0, 1.0), grid_n=4)
    assert len(lines) == 5
    assert 0.0 in set(lines['m'])
    assert lines.loc[lines['m'] == 0.0, 'delta_nullcline'].item() == 0.0
    assert len(field) == 25
    assert 0.0 in set(field['delta'])
    assert lines['m'].is_monotonic_increasing


def test_phase_portrait_needs_positive_kappa(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    rc = main(['phase-portrait', '--kappa', '0', '--beta', '0.65', '--gamma', '10', '--alpha', '0.142857',
               '--output', 'out'])
    assert rc == 2


def test_simulate_deterministic(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    rc = main(['simulate', '--kappa', '0.01', '--beta', '0.5', '--gamma', '2', '--alpha', '0.142857',
               '--horizon', '50', '--output', 'out'])
    assert rc == 0
    summary = read_json(tmp_path / 'out' / 'simulation' / 'summary.json')
    assert summary['regime'] == 'StableSpiral'
    assert summary['mode'] == 'deterministic'
    assert os.path.exists(tmp_path / 'out' / 'simulation' / 'trajectory.csv')


def test_stochastic_simulation_needs_a_seed(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    args = ['simulate', '--kappa', '0.05', '--beta', '0.3', '--gamma', '3', '--alpha', '0.25',
            '--sigma-n', '0.04', '--sigma-v', '0.01', '--mode', 'discrete', '--horizon', '100', '--output', 'out']
    assert main(args) == 2
    assert main(args + ['--seed', '5']) == 0
    assert read_json(tmp_path / 'out' / 'simulation' / 'summary.json')['seed'] == 5


def test_pipeline_commands_need_a_config(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(['calibrate']) == 2
    assert main(['analyze', '--config', str(tmp_path / 'missing.yaml')]) == 2


def test_backtest_without_artifacts(tmp_path, monkeypatch, price_csv_factory, trend_params):
    monkeypatch.chdir(tmp_path)
    price_csv_factory('a', trend_params)
    price_csv_factory('b', trend_params, seed=1)
    assert main(['backtest', '--config', write_config(tmp_path)]) == 2


def test_lost_asset_is_a_partial_failure(tmp_path, monkeypatch, price_csv_factory, trend_params):
    monkeypatch.chdir(tmp_path)
    price_csv_factory('a', trend_params)
    rc = main(['calibrate', '--config', write_config(tmp_path)])
    assert rc == 4
    failures = read_json(tmp_path / 'out' / 'failures.json')
    assert set(failures) == {'a', 'b'}
    assert failures['b'].startswith('InputDataError')


def test_pipeline_end_to_end(tmp_path, monkeypatch, price_csv_factory, trend_params):
    monkeypatch.chdir(tmp_path)
    price_csv_factory('a', trend_params, seed=1)
    price_csv_factory('b', trend_params, seed=2)
    config = write_config(tmp_path)
    out = tmp_path / 'out'

    assert main(['calibrate', '--config', config]) == 0
    assert read_json(out / 'failures.json') == {}
    assert os.path.exists(out / 'cache' / 'calibration' / 'class_index.json')
    assert os.path.exists(out / 'trend' / 'class_index.json')
    table = pd.read_csv(out / 'calibration' / 'table_index.csv')
    assert list(table['asset']) == ['a', 'b']
    report = read_json(out / 'calibration' / 'a.json')
    assert report['theta']['sigma_n'] / report['theta']['sigma_v'] == pytest.approx(
        read_json(out / 'calibration' / 'class_index.json')['sigma_ratio'])
    assert len(pd.read_csv(out / 'filter' / 'a.csv')) == 240

    # second run is served from the cache
    assert main(['calibrate', '--config', config]) == 0
    pd.testing.assert_frame_equal(pd.read_csv(out / 'calibration' / 'table_index.csv'), table)

    assert main(['backtest', '--config', config]) == 0
    assert len(read_json(out / 'analysis' / 'backtest_summary.json')) == 2

    assert main(['analyze', '--config', config]) in (0, 4)
    rows = read_json(out / 'analysis' / 'bimodality.json')
    assert {r['asset'] for r in rows} | set(read_json(out / 'failures.json')) == {'a', 'b'}


def test_system_status(tmp_path):
    cfg = load_run_config(write_config(tmp_path))
    cfg.output_dir = str(tmp_path / 'out')
    status = ChiarellaResearchSystem(cfg).get_system_status()
    assert status['classes'] == ['index']
    assert status['assets'] == 2
    assert status['model'] == 'linear'
    assert RunConfig().validate(require_assets=False).workers >= 1
