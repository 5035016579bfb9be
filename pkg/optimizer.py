"""
優化器模組 - 抽樣 → 分群 → 評估中心 → 進入最佳叢集 的遞迴細化
以及樣本數穩定性測試（RMSE / RMSRE 對基準權益曲線）
"""

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from clustering import Clustering, KMeansConfig, kmeans, point_cloud_diameter
from exceptions import InfeasibleRegion
from feasible_sampler import FeasibleRegion, SamplerConfig, sample_feasible, sample_partial
from parallel_evaluator import Objective, ParallelEvaluator

logger = logging.getLogger(__name__)


@dataclass
class OptimizerConfig:
    """優化器參數"""
    m: int = 100000                       # 第 0 層樣本數
    k: Optional[int] = None               # None 代表 ⌊√存活數⌋，上限 k_max
    k_max: int = 64
    k_per_level: Optional[List[int]] = None
    max_levels: int = 12
    diameter_tol: float = 1e-4
    improvement_tol: float = 1e-10
    seed: int = 0
    center_projection: str = "complete_then_nearest"
    replenish_factor: int = 10            # 存活數 < k·factor 時補樣
    replenish_target: int = 5000
    replenish_budget: int = 200           # 補樣提案上限 = target × budget
    kmeans: KMeansConfig = field(default_factory=KMeansConfig)
    max_workers: int = 1
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def __post_init__(self):
        if isinstance(self.sampler, dict):
            self.sampler = SamplerConfig(**self.sampler)
        if isinstance(self.kmeans, dict):
            self.kmeans = KMeansConfig(**self.kmeans)
        if self.m < 1:
            raise ValueError(f"m 必須 >= 1，當前為 {self.m}")
        if self.k is not None and not 1 <= self.k <= self.m:
            raise ValueError(f"k 必須介於 1 與 m，當前為 {self.k}")
        if self.diameter_tol < 0 or self.improvement_tol < 0:
            raise ValueError("容差必須 >= 0")
        if self.max_levels < 1:
            raise ValueError("max_levels 必須 >= 1")
        if self.center_projection not in ("complete_then_nearest", "nearest"):
            raise ValueError(f"未知的 center_projection: {self.center_projection}")

    def clusters_for(self, level: int, surviving: int) -> int:
        """第 level 層的叢集數"""
        if self.k_per_level:
            k = self.k_per_level[min(level, len(self.k_per_level) - 1)]
        elif self.k is not None:
            k = self.k
        else:
            k = min(int(math.isqrt(surviving)), self.k_max)
        return max(1, min(k, surviving))

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class LevelRecord:
    """單層細化紀錄"""
    level: int
    surviving: int
    k: int
    winner: int
    center_score: float
    diameter: float
    best_score: float
    replenished: int = 0


@dataclass
class OptimizationResult:
    """優化結果"""
    best_weights: np.ndarray
    best_score: float
    trace: List[LevelRecord]
    evaluations: int

    @property
    def levels(self) -> int:
        return len(self.trace)

    def trace_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(record) for record in self.trace])

    def to_dict(self) -> Dict:
        return {
            'best_weights': self.best_weights.tolist(),
            'best_score': self.best_score,
            'evaluations': self.evaluations,
            'trace': [asdict(record) for record in self.trace]
        }


class _BestTracker:
    """記錄所有評估過的點中的最佳者，同分保留先出現者"""

    def __init__(self):
        self.score = -np.inf
        self.weights: Optional[np.ndarray] = None

    def offer(self, points: np.ndarray, scores: np.ndarray):
        if scores.size == 0:
            return
        index = int(np.argmax(scores))
        if scores[index] > self.score:
            self.score = float(scores[index])
            self.weights = points[index].copy()


def _repair_centers(region: FeasibleRegion, clustering: Clustering, points: np.ndarray,
                    projection: str) -> np.ndarray:
    """
    將叢集中心修正為可行點：
    先重新套用補全規則，仍不可行時改用叢集內最接近中心的成員
    """
    centers = clustering.centers.copy()
    if projection == "complete_then_nearest" and region.n > 1:
        centers = region.complete(centers[:, :-1])
    feasible = region.is_feasible(centers)
    for index in np.flatnonzero(~feasible):
        members = points[clustering.assignment == index]
        distances = np.linalg.norm(members - clustering.centers[index], axis=1)
        centers[index] = members[int(np.argmin(distances))]
    return centers


def _bounding_box(points: np.ndarray, pad: float):
    """前 n-1 個座標的外接箱型；寬度為零的座標向兩側各擴 pad"""
    free = points[:, :-1]
    lo = free.min(axis=0)
    hi = free.max(axis=0)
    flat = hi - lo <= 0
    lo[flat] -= pad
    hi[flat] += pad
    return lo, hi


def optimize(region: FeasibleRegion, objective: Objective,
             config: Optional[OptimizerConfig] = None) -> OptimizationResult:
    """
    以叢集細化蒙地卡羅法尋找最大化 objective 的可行權重

    Args:
        region: 可行域
        objective: G(w)，對每個可行權重回傳有限實數
        config: 優化器參數

    Returns:
        OptimizationResult: 曾評估過的最佳可行點（中心與最終叢集內的原始樣本）

    Raises:
        InfeasibleRegion: 第 0 層抽樣失敗
        ObjectiveFailure: 目標函數在可行點上失敗
    """
    config = config or OptimizerConfig()
    evaluator = ParallelEvaluator(objective, config.max_workers)
    best = _BestTracker()
    trace: List[LevelRecord] = []

    if region.n == 1:
        point = sample_feasible(region, 1, config.seed, config.sampler)
        best.offer(point, evaluator.evaluate(point))
        trace.append(LevelRecord(0, 1, 1, 0, best.score, 0.0, best.score))
        return OptimizationResult(best.weights, best.score, trace, evaluator.evaluations)

    samples = sample_feasible(region, config.m, config.seed, config.sampler, call_index=0)
    final_members = samples
    previous_best = -np.inf

    for level in range(config.max_levels):
        k = config.clusters_for(level, samples.shape[0])
        clustering = kmeans(samples, k, seed=config.seed + level,
                            max_iter=config.kmeans.iterations_for(level), tol=config.kmeans.tol)
        centers = _repair_centers(region, clustering, samples, config.center_projection)
        scores = evaluator.evaluate(centers)
        best.offer(centers, scores)

        winner = int(np.argmax(scores))
        members = samples[clustering.assignment == winner]
        diameter = point_cloud_diameter(members)
        final_members = members
        record = LevelRecord(level=level, surviving=samples.shape[0], k=k, winner=winner,
                             center_score=float(scores[winner]), diameter=diameter,
                             best_score=best.score)
        trace.append(record)
        logger.debug("第 %d 層: 存活=%d, k=%d, k*=%d, 中心分數=%.6g, 直徑=%.3g",
                     level, samples.shape[0], k, winner, scores[winner], diameter)

        if diameter < config.diameter_tol:
            break
        if level > 0 and best.score - previous_best < config.improvement_tol:
            break
        previous_best = best.score

        samples = members
        if samples.shape[0] < k * config.replenish_factor:
            extra = _replenish(region, samples, config, level)
            record.replenished = extra.shape[0]
            if extra.size:
                samples = np.vstack([samples, extra])

    # 最終叢集內的原始樣本也納入比較
    best.offer(final_members, evaluator.evaluate(final_members))

    logger.debug("✅ 優化完成: 層數=%d, 最佳分數=%.6g, 評估次數=%d",
                len(trace), best.score, evaluator.evaluations)
    return OptimizationResult(best.weights, best.score, trace, evaluator.evaluations)


def _replenish(region: FeasibleRegion, members: np.ndarray, config: OptimizerConfig,
               level: int) -> np.ndarray:
    """在勝出叢集的外接箱型內補樣，並以完整可行域拒絕"""
    target = max(min(config.replenish_target, config.m) - members.shape[0], 0)
    if target == 0:
        return np.empty((0, region.n))
    lo, hi = _bounding_box(members, pad=max(config.diameter_tol, 1e-12))
    try:
        extra = sample_partial(region, target, config.seed, target * config.replenish_budget,
                               config.sampler, call_index=level + 1, box=(lo, hi))
    except InfeasibleRegion as e:
        logger.warning("⚠️ 第 %d 層補樣失敗，沿用現有樣本: %s", level, e)
        return np.empty((0, region.n))
    return extra


def _equity_errors(curve: np.ndarray, reference: np.ndarray):
    diff = curve - reference
    rmse = float(np.sqrt(np.mean(diff ** 2)))
    rmsre = float(np.sqrt(np.mean((diff / reference) ** 2)))
    return rmse, rmsre


def stability_sweep(panel, objective, config: OptimizerConfig, m_list: Sequence[int],
                    benchmark_m: int, backtest_config=None, factors=None,
                    partition_config=None, region_template=None, forecaster=None,
                    show_progress: bool = False) -> pd.DataFrame:
    """
    樣本數穩定性測試：每個 m 跑一次完整回測，與 benchmark_m 的權益曲線比較

    Returns:
        pd.DataFrame: 欄位 m, rmse, rmsre
    """
    from backtest import run_backtest  # backtest 匯入本模組

    m_list = [int(m) for m in m_list]
    if not m_list:
        raise ValueError("m_list 不可為空")
    if benchmark_m < max(m_list):
        raise ValueError(f"benchmark_m={benchmark_m} 必須 >= max(m_list)={max(m_list)}")

    def curve_for(m: int) -> np.ndarray:
        result = run_backtest(panel, objective, replace(config, m=m), backtest_config,
                              factors=factors, partition_config=partition_config,
                              region_template=region_template, forecaster=forecaster)
        return result.curve.values

    reference = curve_for(benchmark_m)
    rows = []
    for m in tqdm(m_list, desc="stability", disable=not show_progress):
        curve = reference if m == benchmark_m else curve_for(m)
        rmse, rmsre = _equity_errors(curve, reference)
        rows.append({'m': m, 'rmse': rmse, 'rmsre': rmsre})
        logger.info("📊 m=%d: RMSE=%.6f, RMSRE=%.4f%%", m, rmse, 100 * rmsre)
    return pd.DataFrame(rows, columns=['m', 'rmse', 'rmsre'])
