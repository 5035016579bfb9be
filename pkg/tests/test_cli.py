import json

import pandas as pd
import pytest
import yaml

from main import main

TINY = {
    'seed': 7,
    'dgp': {'n': 3, 'T': 30, 'burn_in': 50, 'oracle_draws': 256},
    'backtest': {'lookback': 20, 'rebalance_every': 10},
    'optimizer': {'m': 300},
    'partition': {'method': 'none'},
    'stability': {'m_list': [100, 200], 'benchmark_m': 400},
    'policy': {'mdp': 'target', 'rollouts': 4},
}


def _config(tmp_path, name="run.yaml", **overrides):
    data = {**TINY, **overrides}
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data), encoding='utf-8')
    return str(path)


def _run(command, config, out):
    return main([command, '--config', config, '--out', str(out)])


def _read_json(path):
    return json.loads(path.read_text(encoding='utf-8'))


def test_simulate_writes_artifacts(tmp_path):
    out = tmp_path / "sim"
    assert _run('simulate', _config(tmp_path), out) == 0
    manifest = _read_json(out / "manifest.json")
    assert manifest['command'] == 'simulate'
    assert manifest['seed'] == 7
    assert len(manifest['config_hash']) == 64
    assert {'numpy', 'pandas'} <= set(manifest['versions'])
    for name in ("params.json", "market.csv", "equity.csv", "weights.csv", "metrics.json"):
        assert name in manifest['artifacts']
        assert (out / name).exists()
    equity = pd.read_csv(out / "equity.csv")
    assert len(equity) == 30 + 1
    assert equity.iloc[0, 1] == pytest.approx(1.0)
    metrics = _read_json(out / "metrics.json")
    assert {'ann_return', 'ann_vol', 'ir', 'mdd'} <= set(metrics['metrics'])
    assert metrics['rebalances'] == 3


def test_reruns_are_byte_identical(tmp_path):
    config = _config(tmp_path)
    first, second = tmp_path / "a", tmp_path / "b"
    assert _run('simulate', config, first) == 0
    assert _run('simulate', config, second) == 0
    names = sorted(p.name for p in first.iterdir())
    assert names == sorted(p.name for p in second.iterdir())
    for name in names:
        assert (first / name).read_bytes() == (second / name).read_bytes(), name


def test_seed_flag_overrides_config(tmp_path):
    out = tmp_path / "seeded"
    assert main(['simulate', '--config', _config(tmp_path), '--out', str(out), '--seed', '11']) == 0
    manifest = _read_json(out / "manifest.json")
    assert manifest['seed'] == 11
    assert manifest['config']['dgp']['seed'] == 12


def test_backtest_and_optimize_on_exported_prices(tmp_path):
    world = tmp_path / "world"
    assert _run('simulate', _config(tmp_path), world) == 0
    prices = str(world / "market.csv")

    out = tmp_path / "bt"
    config = _config(tmp_path, "bt.yaml", input={'prices': prices})
    assert _run('backtest', config, out) == 0
    equity = pd.read_csv(out / "equity.csv")
    assert len(equity) == 50 - 20 + 1

    out = tmp_path / "opt"
    assert _run('optimize', config, out) == 0
    weights = pd.read_csv(out / "weights.csv")
    assert weights['weight'].sum() == pytest.approx(1.0, abs=1e-9)
    assert len(weights) == 3
    report = _read_json(out / "optimization.json")
    assert report['evaluations'] > 0
    assert "trace.csv" in _read_json(out / "manifest.json")['artifacts']


def test_stability_command(tmp_path):
    out = tmp_path / "stab"
    assert _run('stability', _config(tmp_path), out) == 0
    table = pd.read_csv(out / "stability.csv")
    assert table.columns.tolist() == ['m', 'rmse', 'rmsre']
    assert table['m'].tolist() == [100, 200]
    assert (table['rmse'] >= 0).all()


def test_policy_search_command(tmp_path):
    out = tmp_path / "policy"
    assert _run('policy-search', _config(tmp_path, optimizer={'m': 200}), out) == 0
    report = _read_json(out / "policy.json")
    assert report['mdp'] == 'target'
    assert report['gamma'] == 0.9


def test_missing_prices_writes_error(tmp_path):
    out = tmp_path / "err"
    assert _run('backtest', _config(tmp_path), out) == 1
    error = _read_json(out / "error.json")
    assert error['error'] == 'ValueError'
    assert error['command'] == 'backtest'
    assert not (out / "manifest.json").exists()


def test_unknown_config_key_writes_error(tmp_path):
    out = tmp_path / "bad"
    config = _config(tmp_path, optimizer={'m': 300, 'sampels': 5})
    assert _run('simulate', config, out) == 1
    error = _read_json(out / "error.json")
    assert error['error'] == 'ConfigError'
    assert 'optimizer.sampels' in error['message']


def test_malformed_prices_report_row(tmp_path):
    prices = tmp_path / "prices.csv"
    prices.write_text("date,asset,price\n2024-01-02,AAA,100\n2024-01-03,AAA,oops\n",
                      encoding='utf-8')
    out = tmp_path / "parse"
    assert _run('backtest', _config(tmp_path, input={'prices': str(prices)}), out) == 1
    error = _read_json(out / "error.json")
    assert error['error'] == 'ParseError'
    assert error['row'] == 3


def test_config_schema_command(capsys):
    assert main(['config-schema']) == 0
    schema = json.loads(capsys.readouterr().out)
    assert schema['optimizer.m']['default'] == 5000
    assert 'policy.gamma' in schema


def test_plot_flag_writes_figures(tmp_path):
    pytest.importorskip("matplotlib")
    out = tmp_path / "plots"
    config = _config(tmp_path, backtest={'lookback': 20, 'rebalance_every': 10,
                                         'benchmark': 'equal_weight'})
    assert main(['simulate', '--config', config, '--out', str(out), '--plot']) == 0
    assert (out / "equity.png").exists()
    assert (out / "excess.csv").exists()
    assert "equity.png" in _read_json(out / "manifest.json")['artifacts']


def test_partitioned_optimize_exports_trace(tmp_path):
    world = tmp_path / "world"
    assert _run('simulate', _config(tmp_path), world) == 0
    out = tmp_path / "grouped"
    config = _config(tmp_path, "grouped.yaml", input={'prices': str(world / "market.csv")},
                     partition={'method': 'score', 'buckets': 2})
    assert _run('optimize', config, out) == 0
    report = _read_json(out / "optimization.json")
    assert report['evaluations'] > 0
    assert report['levels'] >= 3
    assert report['groups'] == 2
    assert report['partition_method'] == 'score-buckets'
    trace = pd.read_csv(out / "trace.csv")
    assert trace.columns[0] == 'stage'
    assert list(dict.fromkeys(trace['stage'])) == ['group_0', 'group_1', 'across']
    assert "trace.csv" in _read_json(out / "manifest.json")['artifacts']
    weights = pd.read_csv(out / "weights.csv")
    assert weights['weight'].sum() == pytest.approx(1.0, abs=1e-9)
