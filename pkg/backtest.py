"""
回測模組 - 在每個再平衡日以截至當日的資料重新優化，持有到下一期，
累積成權益曲線並計算年化報酬、波動、IR、Sortino、最大回撤與 Calmar
"""

import logging
from dataclasses import asdict, dataclass, replace
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from exceptions import DateMisalignment, InsufficientHistory, ZeroVol
from objectives import ObjectiveSpec, ReturnPanel, make_objective
from optimizer import OptimizerConfig, optimize
from universe import FactorPanel, PartitionConfig, RegionTemplate, build_partition, optimize_bottom_up

logger = logging.getLogger(__name__)

# (截至 t 的歷史報酬, t) -> n 維下一期期望報酬
Forecaster = Callable[[ReturnPanel, int], np.ndarray]


@dataclass
class BacktestConfig:
    """回測參數（無風險利率視為 0）"""
    rebalance_every: int = 5
    lookback: int = 252
    periods_per_year: int = 252
    benchmark: Optional[str] = None     # equal_weight 或資產代碼
    show_progress: bool = False

    def __post_init__(self):
        if self.rebalance_every < 1:
            raise ValueError(f"rebalance_every 必須 >= 1，當前為 {self.rebalance_every}")
        if self.lookback < 2:
            raise ValueError(f"lookback 必須 >= 2，當前為 {self.lookback}")
        if self.periods_per_year < 1:
            raise ValueError("periods_per_year 必須 >= 1")

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class EquityCurve:
    """從 1.0 起算的累積淨值"""
    values: np.ndarray
    dates: pd.Index

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        dates = pd.Index(self.dates)
        if values.size == 0:
            raise ValueError("權益曲線不可為空")
        if len(dates) != values.size:
            raise ValueError(f"日期數 {len(dates)} 與淨值數 {values.size} 不符")
        if not np.all(values > 0):
            raise ValueError("權益曲線必須恆為正")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "dates", dates)

    def __len__(self) -> int:
        return self.values.size

    def period_returns(self) -> np.ndarray:
        return self.values[1:] / self.values[:-1] - 1.0

    @classmethod
    def from_returns(cls, returns: np.ndarray, dates: pd.Index) -> "EquityCurve":
        """把逐期報酬累積成從 1.0 開始的曲線；dates 比 returns 多一個起點"""
        values = np.concatenate([[1.0], np.cumprod(1.0 + np.asarray(returns, dtype=float))])
        return cls(values, dates)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'date': self.dates, 'value': self.values})


@dataclass(frozen=True)
class MetricsReport:
    """績效指標（年化報酬、年化波動、IR、Sortino、最大回撤、Calmar）"""
    ann_return: float
    ann_vol: float
    ir: float
    sortino: float
    mdd: float
    calmar: float

    def __post_init__(self):
        if not 0.0 <= self.mdd <= 1.0:
            raise ValueError(f"最大回撤 {self.mdd} 不在 [0, 1]")

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class BacktestResult:
    """回測輸出"""
    curve: EquityCurve
    weights: pd.DataFrame               # 再平衡日 × 資產
    turnover: pd.Series                 # 每次再平衡的 Σ|Δw|
    benchmark: Optional[EquityCurve] = None
    excess: Optional[EquityCurve] = None

    def weight_log(self) -> pd.DataFrame:
        """長格式權重紀錄 date,asset,weight"""
        frame = self.weights.copy()
        frame.index.name = 'date'
        long = frame.reset_index().melt(id_vars='date', var_name='asset', value_name='weight')
        long['asset_order'] = long['asset'].map({a: i for i, a in enumerate(self.weights.columns)})
        long = long.sort_values(['date', 'asset_order'], kind='stable')
        return long.drop(columns='asset_order').reset_index(drop=True)


class HistoricalMeanForecaster:
    """以歷史平均報酬作為下一期期望報酬"""

    def __init__(self, window: Optional[int] = None):
        self.window = window

    def __call__(self, history: ReturnPanel, t: int) -> np.ndarray:
        returns = history.returns if self.window is None else history.returns[-self.window:]
        return returns.mean(axis=0)


def _decide(history: ReturnPanel, spec: ObjectiveSpec, config: OptimizerConfig,
            template: RegionTemplate, partition_config: PartitionConfig,
            factors: Optional[FactorPanel], t: int) -> np.ndarray:
    partition = build_partition(partition_config, factors, t, history.assets)
    if partition is None:
        return optimize(template.build(history.n), make_objective(spec, history), config).best_weights
    return optimize_bottom_up(history, partition, template, spec, config)


def run_backtest(panel: ReturnPanel, objective: ObjectiveSpec,
                 optimizer_config: Optional[OptimizerConfig] = None,
                 backtest_config: Optional[BacktestConfig] = None,
                 factors: Optional[FactorPanel] = None,
                 partition_config: Optional[PartitionConfig] = None,
                 region_template: Optional[RegionTemplate] = None,
                 forecaster: Optional[Forecaster] = None) -> BacktestResult:
    """
    滾動回測

    第一個決策日為第 lookback-1 期，每 rebalance_every 期以截至當期（含）的資料重新優化，
    權重持有期間不隨價格漂移；曲線長度 = T - lookback + 1

    Raises:
        InsufficientHistory: 面板長度 <= lookback + 1
    """
    optimizer_config = optimizer_config or OptimizerConfig()
    config = backtest_config or BacktestConfig()
    partition_config = partition_config or PartitionConfig()
    template = region_template or RegionTemplate()
    if panel.T <= config.lookback + 1:
        raise InsufficientHistory(f"面板長度 {panel.T} 必須大於 lookback + 1 = {config.lookback + 1}")
    if factors is not None and (factors.T != panel.T or factors.assets != panel.assets):
        raise DateMisalignment("因子面板與報酬面板的日期或資產不一致")

    start = config.lookback - 1
    decision_dates = list(range(start, panel.T - 1, config.rebalance_every))
    rows = []
    for i, t in enumerate(tqdm(decision_dates, desc="backtest", disable=not config.show_progress)):
        history = panel.tail(t, config.lookback)
        spec = objective
        if forecaster is not None:
            spec = objective.with_forecast(forecaster(history, t))
        rows.append(_decide(history, spec, replace(optimizer_config, seed=optimizer_config.seed + i),
                            template, partition_config, factors, t))

    weights = pd.DataFrame(np.vstack(rows), index=panel.dates[decision_dates],
                           columns=list(panel.assets))
    curve = replay_curve(panel, weights, start)
    previous = weights.shift(1).fillna(0.0)
    turnover = (weights - previous).abs().sum(axis=1)

    result = BacktestResult(curve=curve, weights=weights, turnover=turnover)
    if config.benchmark is not None:
        result.benchmark = benchmark_curve(panel, config.benchmark, start)
        result.excess = excess_curve(curve, result.benchmark)
    logger.info("✅ 回測完成: %d 次再平衡, 期末淨值 %.6f", len(decision_dates), curve.values[-1])
    return result


def replay_curve(panel: ReturnPanel, weights: pd.DataFrame, start: int) -> EquityCurve:
    """依權重紀錄重建權益曲線：第 t 期決定的權重賺取第 t+1 期報酬，直到下一個再平衡日"""
    schedule = {panel.dates.get_loc(date): row.to_numpy(dtype=float)
                for date, row in weights[list(panel.assets)].iterrows()}
    if start not in schedule:
        raise ValueError("權重紀錄必須包含起始決策日")
    realized = np.empty(panel.T - 1 - start)
    w = schedule[start]
    for t in range(start, panel.T - 1):
        w = schedule.get(t, w)
        realized[t - start] = panel.returns[t + 1] @ w
    return EquityCurve.from_returns(realized, panel.dates[start:])


def benchmark_curve(panel: ReturnPanel, benchmark: str, start: int) -> EquityCurve:
    """基準曲線：equal_weight（每期 1/N 再平衡）或單一資產"""
    future = panel.returns[start + 1:]
    if benchmark == "equal_weight":
        realized = future.mean(axis=1)
    elif benchmark in panel.assets:
        realized = future[:, panel.assets.index(benchmark)]
    else:
        raise ValueError(f"未知的基準: {benchmark}")
    return EquityCurve.from_returns(realized, panel.dates[start:])


def excess_curve(strategy: EquityCurve, benchmark: EquityCurve) -> EquityCurve:
    """逐期報酬差 (x_strat - x_bench) 累積成從 1.0 起算的超額曲線"""
    if len(strategy) != len(benchmark) or not strategy.dates.equals(benchmark.dates):
        raise DateMisalignment("策略與基準曲線的日期不一致")
    diff = strategy.period_returns() - benchmark.period_returns()
    return EquityCurve.from_returns(diff, strategy.dates)


def max_drawdown(values: np.ndarray) -> float:
    """最大回撤 max_t (peak_≤t - v_t) / peak_≤t"""
    peak = np.maximum.accumulate(values)
    return float(np.max((peak - values) / peak))


def compute_metrics(curve: EquityCurve, periods_per_year: int = 252) -> MetricsReport:
    """
    計算績效指標（無風險利率與下行目標皆為 0，標準差皆採母體分母）

    Raises:
        InsufficientHistory: 曲線少於 3 點
        ZeroVol: 報酬標準差為 0，IR 無定義
    """
    if len(curve) < 3:
        raise InsufficientHistory(f"權益曲線至少需要 3 點，當前為 {len(curve)}")
    x = curve.period_returns()
    ann_return = float(x.mean() * periods_per_year)
    std = float(x.std())
    if std == 0.0:
        raise ZeroVol("逐期報酬標準差為 0，資訊比率無定義")
    ann_vol = std * np.sqrt(periods_per_year)
    downside = float(np.sqrt(np.mean(np.minimum(x, 0.0) ** 2)))
    sortino = ann_return / (downside * np.sqrt(periods_per_year)) if downside > 0 else float("inf")
    mdd = max_drawdown(curve.values)
    calmar = ann_return / mdd if mdd > 0 else float("inf")
    return MetricsReport(ann_return=ann_return, ann_vol=float(ann_vol), ir=ann_return / float(ann_vol),
                         sortino=float(sortino), mdd=mdd, calmar=float(calmar))
