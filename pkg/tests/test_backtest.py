import time

import numpy as np
import pandas as pd
import pytest

from backtest import (BacktestConfig, EquityCurve, HistoricalMeanForecaster, benchmark_curve,
                      compute_metrics, excess_curve, max_drawdown, replay_curve, run_backtest)
from exceptions import DateMisalignment, InsufficientHistory, ZeroVol
from market_simulator import OracleForecaster, generate_params, simulate
from objectives import ObjectiveSpec, ReturnPanel
from optimizer import OptimizerConfig
from run_config import config_from_dict
from universe import FactorPanel, PartitionConfig
from tests.helpers import make_panel

FAST = OptimizerConfig(m=400, seed=0)
SHORT = BacktestConfig(lookback=20, rebalance_every=5)


def _curve(values):
    values = np.asarray(values, dtype=float)
    return EquityCurve(values, pd.bdate_range("2023-01-02", periods=values.size))


def _metrics_oracle(values, ppy):
    x = [values[i] / values[i - 1] - 1 for i in range(1, len(values))]
    mean = sum(x) / len(x)
    std = (sum((v - mean) ** 2 for v in x) / len(x)) ** 0.5
    downside = (sum(min(v, 0.0) ** 2 for v in x) / len(x)) ** 0.5
    peak, mdd = values[0], 0.0
    for v in values:
        peak = max(peak, v)
        mdd = max(mdd, (peak - v) / peak)
    ann = mean * ppy
    return {
        'ann_return': ann,
        'ann_vol': std * ppy ** 0.5,
        'ir': ann / (std * ppy ** 0.5),
        'sortino': ann / (downside * ppy ** 0.5) if downside > 0 else float("inf"),
        'mdd': mdd,
        'calmar': ann / mdd if mdd > 0 else float("inf"),
    }


def test_single_asset_curve_is_cumulative_return():
    panel = make_panel(T=40, n=1, seed=1)
    result = run_backtest(panel, ObjectiveSpec(), FAST, SHORT)
    expected = np.concatenate([[1.0], np.cumprod(1 + panel.returns[20:, 0])])
    np.testing.assert_allclose(result.curve.values, expected, rtol=0, atol=1e-14)


def test_zero_returns_give_flat_curve():
    panel = ReturnPanel(np.zeros((30, 2)), pd.bdate_range("2023-01-02", periods=30), ("A", "B"))
    result = run_backtest(panel, ObjectiveSpec(kind="crra", risk_aversion=2.0), FAST, SHORT)
    np.testing.assert_array_equal(result.curve.values, np.ones(11))


def test_curve_length_and_decision_dates():
    panel = make_panel(T=50, n=3, seed=2)
    result = run_backtest(panel, ObjectiveSpec(), FAST, SHORT)
    assert len(result.curve) == 50 - 20 + 1
    assert result.curve.dates[0] == panel.dates[19]
    assert list(result.weights.index) == list(panel.dates[[19, 24, 29, 34, 39, 44]])
    np.testing.assert_allclose(result.weights.sum(axis=1), 1.0, atol=1e-12)


def test_curve_matches_replay_from_weight_log():
    panel = make_panel(T=50, n=3, seed=3)
    result = run_backtest(panel, ObjectiveSpec(), FAST, SHORT)
    log = result.weight_log()
    assert log.columns.tolist() == ['date', 'asset', 'weight']
    weights = log.pivot(index='date', columns='asset', values='weight')

    value, values, current = 1.0, [1.0], None
    for t in range(19, panel.T - 1):
        if panel.dates[t] in weights.index:
            current = weights.loc[panel.dates[t], list(panel.assets)].to_numpy()
        value *= 1 + sum(current[j] * panel.returns[t + 1, j] for j in range(panel.n))
        values.append(value)
    np.testing.assert_allclose(result.curve.values, values, rtol=1e-12)
    np.testing.assert_array_equal(replay_curve(panel, result.weights, 19).values,
                                  result.curve.values)


def test_no_lookahead():
    panel = make_panel(T=50, n=3, seed=4)
    baseline = run_backtest(panel, ObjectiveSpec(), FAST, SHORT)
    cut = 29
    mutated = panel.returns.copy()
    mutated[cut + 1:] = np.random.default_rng(0).uniform(-0.2, 0.2, mutated[cut + 1:].shape)
    altered = run_backtest(ReturnPanel(mutated, panel.dates, panel.assets), ObjectiveSpec(),
                           FAST, SHORT)
    kept = baseline.weights.index <= panel.dates[cut]
    pd.testing.assert_frame_equal(baseline.weights[kept], altered.weights[kept])


def test_insufficient_history():
    with pytest.raises(InsufficientHistory):
        run_backtest(make_panel(T=21, n=2), ObjectiveSpec(), FAST, SHORT)


def test_turnover_of_first_rebalance_is_full_budget():
    result = run_backtest(make_panel(T=40, n=2, seed=5), ObjectiveSpec(), FAST, SHORT)
    assert result.turnover.iloc[0] == pytest.approx(1.0)
    assert (result.turnover >= 0).all()


def test_forecaster_and_benchmark():
    panel = make_panel(T=40, n=3, seed=6)
    config = BacktestConfig(lookback=20, rebalance_every=5, benchmark="equal_weight")
    result = run_backtest(panel, ObjectiveSpec(), FAST, config,
                          forecaster=HistoricalMeanForecaster(10))
    expected = np.concatenate([[1.0], np.cumprod(1 + panel.returns[20:].mean(axis=1))])
    np.testing.assert_allclose(result.benchmark.values, expected)
    assert len(result.excess) == len(result.curve)


def test_partitioned_backtest_keeps_budget():
    panel = make_panel(T=40, n=10, seed=7)
    values = np.random.default_rng(1).random((40, 10, 2))
    factors = FactorPanel(values, ("f1", "f2"), panel.dates, panel.assets)
    result = run_backtest(panel, ObjectiveSpec(), FAST, SHORT, factors=factors,
                          partition_config=PartitionConfig(method="score", buckets=3))
    np.testing.assert_allclose(result.weights.sum(axis=1), 1.0, atol=1e-10)


def test_single_asset_benchmark():
    panel = make_panel(T=30, n=2, seed=8)
    curve = benchmark_curve(panel, "A1", 19)
    np.testing.assert_allclose(curve.values[1:], np.cumprod(1 + panel.returns[20:, 1]))
    with pytest.raises(ValueError):
        benchmark_curve(panel, "ZZZ", 19)


def test_increasing_curve_has_no_drawdown():
    report = compute_metrics(_curve([1.0, 1.01, 1.03, 1.04, 1.1]))
    assert report.mdd == 0.0
    assert report.calmar == float("inf")
    assert report.sortino == float("inf")


def test_hand_computed_drawdown():
    assert max_drawdown(np.array([1.0, 1.1, 0.99, 1.2])) == pytest.approx(0.1)


def test_drawdown_is_scale_invariant():
    values = np.array([1.0, 1.2, 0.9, 1.1, 0.8, 1.3])
    assert max_drawdown(3.7 * values) == pytest.approx(max_drawdown(values))


def test_metrics_match_loop_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        length = int(rng.integers(3, 30))
        values = np.cumprod(1 + rng.normal(0.001, 0.02, length))
        values[0] = 1.0
        report = compute_metrics(_curve(values), 252).to_dict()
        oracle = _metrics_oracle(list(values), 252)
        for key, expected in oracle.items():
            if np.isinf(expected):
                assert report[key] == expected
            else:
                assert report[key] == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_information_ratio_is_scale_invariant():
    x = np.random.default_rng(1).normal(0.001, 0.01, 60)
    base = compute_metrics(EquityCurve.from_returns(x, pd.bdate_range("2023-01-02", periods=61)))
    scaled = compute_metrics(EquityCurve.from_returns(2.5 * x, pd.bdate_range("2023-01-02", periods=61)))
    assert scaled.ir == pytest.approx(base.ir, rel=1e-12)


def test_metric_errors():
    with pytest.raises(InsufficientHistory):
        compute_metrics(_curve([1.0, 1.1]))
    with pytest.raises(ZeroVol):
        compute_metrics(_curve([1.0, 1.0, 1.0, 1.0]))


def test_excess_curve_examples():
    strategy = _curve([1.0, 1.05, 1.02, 1.1])
    np.testing.assert_allclose(excess_curve(strategy, strategy).values, 1.0)
    np.testing.assert_allclose(excess_curve(strategy, _curve([1.0] * 4)).values, strategy.values)


def test_excess_curve_matches_loop_oracle():
    rng = np.random.default_rng(2)
    a = np.cumprod(np.concatenate([[1.0], 1 + rng.normal(0, 0.02, 20)]))
    b = np.cumprod(np.concatenate([[1.0], 1 + rng.normal(0, 0.02, 20)]))
    value, expected = 1.0, [1.0]
    for t in range(1, 21):
        value *= 1 + (a[t] / a[t - 1] - 1) - (b[t] / b[t - 1] - 1)
        expected.append(value)
    np.testing.assert_allclose(excess_curve(_curve(a), _curve(b)).values, expected,
                               rtol=1e-12, atol=1e-12)


def test_excess_curve_requires_alignment():
    with pytest.raises(DateMisalignment):
        excess_curve(_curve([1.0, 1.1, 1.2]), _curve([1.0, 1.1]))


@pytest.mark.slow
def test_simulation_study_grows_with_shallow_drawdowns():
    hits = 0
    for seed in range(10):
        config = config_from_dict({'seed': seed})
        dgp = config.dgp
        params = generate_params(dgp.n, dgp.seed, T=dgp.T + config.backtest.lookback,
                                 noise_amplitude=dgp.noise_amplitude, return_scale=dgp.return_scale)
        factors, panel = simulate(params, dgp.seed, burn_in=dgp.burn_in)
        forecaster = OracleForecaster(params, factors, "oracle", dgp.oracle_draws, dgp.seed)
        started = time.perf_counter()
        result = run_backtest(panel, config.objective.to_spec(), config.optimizer, config.backtest,
                              factors=factors, partition_config=config.partition,
                              region_template=config.region, forecaster=forecaster)
        assert time.perf_counter() - started < 300
        assert len(result.curve) == dgp.T + 1
        values = result.curve.values
        hits += bool(np.log(values[-1]) > 0 and max_drawdown(values) < 0.10)
    assert hits >= 8
