"""
資產宇宙分解模組 - 依因子分數或因子空間 k-means 將資產分組，
先在組內優化、再跨組優化，最後由下而上組合出每個資產的權重
"""

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from clustering import kmeans
from exceptions import DegenerateFactor
from feasible_sampler import (FeasibleRegion, Inequality, concentration_inequality,
                              linear_inequality)
from objectives import ObjectiveSpec, ReturnPanel, make_objective
from optimizer import OptimizationResult, OptimizerConfig, optimize

logger = logging.getLogger(__name__)

DateKey = Union[int, str, pd.Timestamp]


@dataclass(frozen=True, eq=False)
class FactorPanel:
    """T×n×K 的資產因子觀測值；模擬世界另附條件變異數路徑 (T×n)"""
    values: np.ndarray
    names: Tuple[str, ...]
    dates: pd.Index
    assets: Tuple[str, ...]
    variance: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 2:
            values = values[:, :, None]
        if values.ndim != 3:
            raise ValueError(f"因子陣列必須為 T×n×K，當前維度 {values.ndim}")
        T, n, K = values.shape
        names = tuple(str(name) for name in self.names)
        dates = pd.Index(self.dates)
        assets = tuple(str(a) for a in self.assets)
        if len(names) != K:
            raise ValueError(f"因子名稱數 {len(names)} 與 K={K} 不符")
        if len(dates) != T or len(assets) != n:
            raise ValueError(f"日期/資產數與因子陣列形狀 {values.shape} 不符")
        if not np.all(np.isfinite(values)):
            raise ValueError("因子陣列含缺值")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "assets", assets)
        if self.variance is not None:
            variance = np.array(self.variance, dtype=float)
            if variance.shape != (T, n):
                raise ValueError(f"變異數路徑形狀 {variance.shape} 應為 {(T, n)}")
            variance.flags.writeable = False
            object.__setattr__(self, "variance", variance)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def K(self) -> int:
        return self.values.shape[2]

    def row(self, date: DateKey) -> int:
        """日期或列號 → 列號"""
        if isinstance(date, (int, np.integer)):
            index = int(date)
            if not -self.T <= index < self.T:
                raise IndexError(f"列號 {index} 超出因子面板範圍")
            return index % self.T
        try:
            return int(self.dates.get_loc(pd.Timestamp(date)))
        except KeyError:
            raise IndexError(f"日期 {date} 不在因子面板內") from None

    def cross_section(self, date: DateKey) -> np.ndarray:
        """指定日期的 n×K 橫斷面"""
        return self.values[self.row(date)]

    def subset(self, columns: Sequence[int]) -> "FactorPanel":
        columns = list(columns)
        variance = None if self.variance is None else self.variance[:, columns]
        return FactorPanel(self.values[:, columns, :], self.names, self.dates,
                           tuple(self.assets[j] for j in columns), variance)


@dataclass(frozen=True)
class UniversePartition:
    """不相交且涵蓋全部資產的分組"""
    groups: Tuple[Tuple[int, ...], ...]
    method: str

    def __post_init__(self):
        groups = tuple(tuple(sorted(int(j) for j in group)) for group in self.groups)
        if not groups:
            raise ValueError("分組不可為空")
        if any(len(group) == 0 for group in groups):
            raise ValueError("每個分組至少要有一個資產")
        flat = [j for group in groups for j in group]
        if len(set(flat)) != len(flat):
            raise ValueError("分組之間有重複資產")
        if sorted(flat) != list(range(len(flat))):
            raise ValueError("分組必須涵蓋資產 0..n-1")
        if self.method not in ("score-buckets", "kmeans-on-factors", "sector-labels"):
            raise ValueError(f"未知的分組方法: {self.method}")
        object.__setattr__(self, "groups", groups)

    @property
    def n(self) -> int:
        return sum(len(group) for group in self.groups)

    def __len__(self) -> int:
        return len(self.groups)

    def labels(self) -> np.ndarray:
        """每個資產所屬的組別編號"""
        labels = np.empty(self.n, dtype=int)
        for g, group in enumerate(self.groups):
            labels[list(group)] = g
        return labels


@dataclass
class RegionTemplate:
    """
    同一組箱型/不等式限制，套用到任意資產數的預算單純形

    max_weight_multiple 對所有資產數生效；sampling_cap_multiple 只在 n > sampling_cap_above
    時生效（組內、跨組或未分組的大宇宙），兩者同時設定時取較緊者
    """
    lower: float = 0.0
    upper: float = 1.0
    max_weight_multiple: Optional[float] = None   # 上界改為 min(upper, c/n)
    inequalities: List[Dict] = field(default_factory=list)
    sampling_cap_multiple: Optional[float] = None
    sampling_cap_above: int = 8

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"lower={self.lower} 必須小於 upper={self.upper}")
        for name in ("max_weight_multiple", "sampling_cap_multiple"):
            value = getattr(self, name)
            if value is not None and value <= 1.0:
                raise ValueError(f"{name} 必須 > 1，否則預算限制無內點")
        if self.sampling_cap_above < 1:
            raise ValueError("sampling_cap_above 必須 >= 1")
        for rule in self.inequalities:
            if rule.get("kind") not in ("linear", "concentration"):
                raise ValueError(f"未知的不等式種類: {rule.get('kind')}")

    def _inequality(self, rule: Dict, n: int) -> Inequality:
        if rule["kind"] == "concentration":
            return concentration_inequality(float(rule["limit"]))
        coefficients = rule["coefficients"]
        if len(coefficients) != n:
            raise ValueError(f"線性限制係數長度 {len(coefficients)} 與資產數 {n} 不符")
        return linear_inequality(coefficients, float(rule.get("offset", 0.0)))

    def multiple_for(self, n: int) -> Optional[float]:
        """n 個資產時生效的上界倍數；None 代表不限制"""
        multiples = [self.max_weight_multiple]
        if n > self.sampling_cap_above:
            multiples.append(self.sampling_cap_multiple)
        multiples = [c for c in multiples if c is not None]
        return min(multiples) if multiples else None

    def build(self, n: int) -> FeasibleRegion:
        upper = self.upper
        multiple = self.multiple_for(n)
        if multiple is not None:
            upper = min(upper, multiple / n)
        inequalities = tuple(self._inequality(rule, n) for rule in self.inequalities)
        return FeasibleRegion.simplex(n, self.lower, upper, inequalities)

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class PartitionConfig:
    """回測時每個再平衡日的分組方式"""
    method: str = "none"          # auto | none | score | kmeans | labels
    buckets: int = 10
    k: int = 10
    seed: int = 0
    labels: Optional[Dict[str, str]] = None
    auto_threshold: int = 8

    def __post_init__(self):
        if self.method not in ("auto", "none", "score", "kmeans", "labels"):
            raise ValueError(f"未知的分組方法: {self.method}")
        if self.buckets < 1 or self.k < 1:
            raise ValueError("buckets 與 k 必須 >= 1")

    def to_dict(self) -> Dict:
        return asdict(self)


def _standardize(cross_section: np.ndarray, names: Sequence[str]) -> np.ndarray:
    """橫斷面 z-score（母體標準差）；常數因子捨棄並警告，全部常數時拋出"""
    mean = cross_section.mean(axis=0)
    std = cross_section.std(axis=0)
    constant = std == 0
    if constant.all():
        raise DegenerateFactor(f"所有因子在此橫斷面皆為常數: {list(names)}")
    if constant.any():
        dropped = [name for name, flag in zip(names, constant) if flag]
        logger.warning("⚠️ 捨棄橫斷面常數因子: %s", dropped)
    keep = ~constant
    return (cross_section[:, keep] - mean[keep]) / std[keep]


def _bucket_sizes(n: int, buckets: int) -> List[int]:
    base, remainder = divmod(n, buckets)
    return [base + 1 if g < remainder else base for g in range(buckets)]


def partition_by_score(factors: FactorPanel, date: DateKey, buckets: int) -> UniversePartition:
    """
    因子分數分組：分數 = 標準化因子的等權平均，依分數由高到低切成 buckets 段

    Raises:
        DegenerateFactor: 所有因子在該日皆為常數
    """
    n = factors.n
    if not 1 <= buckets <= n:
        raise ValueError(f"buckets 必須介於 1 與 {n}，當前為 {buckets}")
    if buckets == 1:
        return UniversePartition((tuple(range(n)),), "score-buckets")

    scores = _standardize(factors.cross_section(date), factors.names).mean(axis=1)
    ranked = np.argsort(-scores, kind="stable")
    groups = []
    start = 0
    for size in _bucket_sizes(n, buckets):
        groups.append(tuple(ranked[start:start + size]))
        start += size
    return UniversePartition(tuple(groups), "score-buckets")


def partition_by_kmeans(factors: FactorPanel, date: DateKey, k: int,
                        seed: int = 0) -> UniversePartition:
    """在標準化因子空間對資產做 k-means；組別依最小資產編號排序"""
    n = factors.n
    if k == 1:
        return UniversePartition((tuple(range(n)),), "kmeans-on-factors")
    points = _standardize(factors.cross_section(date), factors.names)
    clustering = kmeans(points, k, seed=seed)
    groups = [tuple(clustering.members(i)) for i in range(k)]
    empty = sum(1 for group in groups if not group)
    if empty:
        logger.warning("⚠️ k-means 產生 %d 個空叢集，已移除", empty)
    groups = sorted((group for group in groups if group), key=min)
    return UniversePartition(tuple(groups), "kmeans-on-factors")


def partition_by_labels(assets: Sequence[str], labels: Mapping[str, str]) -> UniversePartition:
    """依使用者提供的產業標籤分組，組別順序為標籤首次出現的順序"""
    order: Dict[str, List[int]] = {}
    for j, asset in enumerate(assets):
        if asset not in labels:
            raise ValueError(f"資產 {asset} 沒有產業標籤")
        order.setdefault(labels[asset], []).append(j)
    return UniversePartition(tuple(tuple(group) for group in order.values()), "sector-labels")


def build_partition(config: PartitionConfig, factors: Optional[FactorPanel], date: DateKey,
                    assets: Sequence[str]) -> Optional[UniversePartition]:
    """依設定建立分組；method = none 時回傳 None（直接全體優化）"""
    method = config.method
    if method == "auto":
        if len(assets) <= config.auto_threshold:
            return None
        if factors is None:
            logger.warning("⚠️ 資產數 %d 超過 %d 但沒有因子資料，改為全體直接優化", len(assets), config.auto_threshold)
            return None
        method = "score"
    if method == "none":
        return None
    if method == "labels":
        if not config.labels:
            raise ValueError("labels 分組需要提供 labels 對照表")
        return partition_by_labels(assets, config.labels)
    if factors is None:
        raise ValueError(f"{method} 分組需要因子面板")
    if method == "score":
        return partition_by_score(factors, date, min(config.buckets, factors.n))
    return partition_by_kmeans(factors, date, min(config.k, factors.n), config.seed)


def compose_weights(partition: UniversePartition, within: Sequence[np.ndarray],
                    across: np.ndarray) -> np.ndarray:
    """最終權重 = 跨組權重 × 組內權重"""
    across = np.asarray(across, dtype=float).reshape(-1)
    if len(within) != len(partition) or across.size != len(partition):
        raise ValueError("組內/跨組權重數量與分組數不符")
    weights = np.zeros(partition.n)
    for g, group in enumerate(partition.groups):
        w_g = np.asarray(within[g], dtype=float).reshape(-1)
        if w_g.size != len(group):
            raise ValueError(f"第 {g} 組組內權重長度 {w_g.size} 與組大小 {len(group)} 不符")
        weights[list(group)] = across[g] * w_g
    return weights


def synthetic_panel(panel: ReturnPanel, partition: UniversePartition,
                    within: Sequence[np.ndarray]) -> ReturnPanel:
    """每組以組內權重合成一個資產的報酬序列"""
    columns = [panel.returns[:, list(group)] @ np.asarray(within[g])
               for g, group in enumerate(partition.groups)]
    names = tuple(f"group_{g}" for g in range(len(partition)))
    return ReturnPanel(np.column_stack(columns), panel.dates, names)


@dataclass
class BottomUpResult:
    """兩層優化的完整紀錄：組合後權重、每組的組內結果與跨組結果"""
    weights: np.ndarray
    partition: UniversePartition
    within: List[OptimizationResult]
    across: OptimizationResult

    @property
    def evaluations(self) -> int:
        return sum(result.evaluations for result in self.within) + self.across.evaluations

    @property
    def levels(self) -> int:
        return sum(len(result.trace) for result in self.within) + len(self.across.trace)

    def trace_frame(self) -> pd.DataFrame:
        """各階段逐層紀錄串接，stage 欄為 group_<g> 或 across"""
        stages = [(f"group_{g}", result) for g, result in enumerate(self.within)]
        stages.append(("across", self.across))
        frames = [result.trace_frame().assign(stage=name) for name, result in stages]
        frame = pd.concat(frames, ignore_index=True)
        return frame[['stage'] + [c for c in frame.columns if c != 'stage']]


def optimize_bottom_up_detailed(panel: ReturnPanel, partition: UniversePartition,
                                template: RegionTemplate, objective: ObjectiveSpec,
                                config: OptimizerConfig, show_progress: bool = False) -> BottomUpResult:
    """
    兩層由下而上優化

    第一階段：每組各自在組內資產上優化（seed + g）
    第二階段：每組合成為一個資產，再跨組優化（seed + G）
    """
    if partition.n != panel.n:
        raise ValueError(f"分組涵蓋 {partition.n} 個資產，面板有 {panel.n} 個")

    within_results = []
    groups = tqdm(partition.groups, desc="groups", disable=not show_progress)
    for g, group in enumerate(groups):
        sub_panel = panel.subset(group)
        sub_spec = objective.restricted_to(group)
        within_results.append(optimize(template.build(len(group)), make_objective(sub_spec, sub_panel),
                                       replace(config, seed=config.seed + g)))
    within = [result.best_weights for result in within_results]

    G = len(partition)
    synthetic = synthetic_panel(panel, partition, within)
    across_spec = objective
    if objective.forecast_mu is not None:
        across_spec = objective.with_forecast(np.array(
            [objective.forecast_mu[list(group)] @ within[g]
             for g, group in enumerate(partition.groups)]))
    across = optimize(template.build(G), make_objective(across_spec, synthetic),
                      replace(config, seed=config.seed + G))

    weights = compose_weights(partition, within, across.best_weights)
    logger.debug("由下而上優化完成: %d 組, 權重和=%.12f", G, weights.sum())
    return BottomUpResult(weights, partition, within_results, across)


def optimize_bottom_up(panel: ReturnPanel, partition: UniversePartition,
                       template: RegionTemplate, objective: ObjectiveSpec,
                       config: OptimizerConfig, show_progress: bool = False) -> np.ndarray:
    """
    兩層由下而上優化，只回傳組合後權重

    Returns:
        np.ndarray: 全部 n 個資產的權重，與 panel.assets 對齊
    """
    return optimize_bottom_up_detailed(panel, partition, template, objective, config,
                                       show_progress).weights
