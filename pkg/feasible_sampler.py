"""
可行域抽樣模組 - 在箱型限制、等式補全與非線性不等式下均勻產生投資組合權重
流程：在前 n-1 個座標的箱型內均勻抽樣 → 以補全規則計算第 n 個座標 → 拒絕不可行點
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from exceptions import InfeasibleRegion

logger = logging.getLogger(__name__)

# (m, n-1) -> (m,)
Completion = Callable[[np.ndarray], np.ndarray]
# (m, n) -> (m,)，值 >= 0 代表滿足
Inequality = Callable[[np.ndarray], np.ndarray]

# 補全規則必須精確成立的容差
COMPLETION_TOL = 1e-12


def budget_completion(partial: np.ndarray) -> np.ndarray:
    """預算補全：w^n = 1 - Σ_{j<n} w^j"""
    return 1.0 - partial.sum(axis=1)


def zero_completion(partial: np.ndarray) -> np.ndarray:
    """零補全：最後一個座標恆為 0（作為無等式限制時的輔助座標）"""
    return np.zeros(partial.shape[0])


def pointwise(fn: Callable[[np.ndarray], float]) -> Inequality:
    """將逐點的 F(w) 包裝成向量化限制式"""

    def predicate(weights: np.ndarray) -> np.ndarray:
        return np.array([fn(w) for w in weights], dtype=float)

    predicate.__name__ = getattr(fn, "__name__", "pointwise")
    return predicate


def linear_inequality(coefficients: Sequence[float], offset: float = 0.0) -> Inequality:
    """線性限制式 c·w + d >= 0"""
    c = np.asarray(coefficients, dtype=float)

    def predicate(weights: np.ndarray) -> np.ndarray:
        return weights @ c + offset

    predicate.__name__ = "linear"
    return predicate


def concentration_inequality(limit: float) -> Inequality:
    """集中度限制式 limit - Σ(w^j)^2 >= 0"""

    def predicate(weights: np.ndarray) -> np.ndarray:
        return limit - np.einsum("ij,ij->i", weights, weights)

    predicate.__name__ = "concentration"
    return predicate


@dataclass(frozen=True, eq=False)
class FeasibleRegion:
    """權重搜尋空間：開區間箱型 (a, b)、補全規則 h 與不等式 F_i(w) >= 0"""
    lower: np.ndarray
    upper: np.ndarray
    completion: Completion = budget_completion
    inequalities: Tuple[Inequality, ...] = ()

    def __post_init__(self):
        lower = np.atleast_1d(np.array(self.lower, dtype=float))
        upper = np.atleast_1d(np.array(self.upper, dtype=float))
        if lower.ndim != 1 or lower.shape != upper.shape or lower.size < 1:
            raise ValueError(f"上下界維度不一致: {lower.shape} vs {upper.shape}")
        if not np.all(lower < upper):
            bad = np.flatnonzero(~(lower < upper)).tolist()
            raise ValueError(f"下界必須嚴格小於上界，違反的座標: {bad}")
        lower.flags.writeable = False
        upper.flags.writeable = False
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "inequalities", tuple(self.inequalities))

    @property
    def n(self) -> int:
        return self.lower.size

    @classmethod
    def simplex(cls, n: int, lower: float = 0.0, upper: float = 1.0,
                inequalities: Sequence[Inequality] = ()) -> "FeasibleRegion":
        """預算補全的單純形區域，所有資產共用同一組上下界"""
        if n < 1:
            raise ValueError(f"資產數必須 >= 1，當前為 {n}")
        return cls(np.full(n, lower), np.full(n, upper), budget_completion,
                   tuple(inequalities))

    def complete(self, partial: np.ndarray) -> np.ndarray:
        """由前 n-1 個座標補全出完整權重，輸入 (m, n-1)，輸出 (m, n)"""
        partial = np.asarray(partial, dtype=float)
        if partial.ndim == 1:
            partial = partial[None, :]
        if partial.shape[1] != self.n - 1:
            raise ValueError(f"部分權重維度應為 {self.n - 1}，當前為 {partial.shape[1]}")
        last = np.asarray(self.completion(partial), dtype=float).reshape(-1)
        return np.column_stack([partial, last])

    def box_mask(self, weights: np.ndarray) -> np.ndarray:
        """開區間箱型檢查；n = 1 時唯一的點允許落在閉區間上"""
        weights = np.atleast_2d(weights)
        if self.n == 1:
            return np.all((weights >= self.lower) & (weights <= self.upper), axis=1)
        return np.all((weights > self.lower) & (weights < self.upper), axis=1)

    def is_feasible(self, weights: np.ndarray) -> np.ndarray:
        """逐列回傳是否同時滿足箱型與所有不等式"""
        weights = np.atleast_2d(np.asarray(weights, dtype=float))
        mask = self.box_mask(weights) & np.all(np.isfinite(weights), axis=1)
        for predicate in self.inequalities:
            if not mask.any():
                break
            values = np.asarray(predicate(weights), dtype=float).reshape(-1)
            mask &= values >= 0.0
        return mask

    def check_weights(self, w: np.ndarray):
        """驗證單一權重向量的所有不變量，不成立時拋出 ValueError"""
        w = np.asarray(w, dtype=float).reshape(-1)
        if w.size != self.n:
            raise ValueError(f"權重維度 {w.size} 與區域維度 {self.n} 不符")
        expected = float(self.completion(w[None, :-1])[0])
        if abs(w[-1] - expected) > COMPLETION_TOL:
            raise ValueError(f"補全規則不成立: w^n={w[-1]!r}, h(...)={expected!r}")
        if not self.is_feasible(w[None, :])[0]:
            raise ValueError("權重違反箱型或不等式限制")


@dataclass
class SamplerConfig:
    """抽樣參數"""
    batch_size: int = 16384
    acceptance_floor: float = 1e-6
    floor_check_after: int = 10_000_000

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size 必須 >= 1")
        if not 0.0 <= self.acceptance_floor <= 1.0:
            raise ValueError("acceptance_floor 必須介於 0 與 1")


def derive_rng(seed: int, call_index: int = 0) -> np.random.Generator:
    """由 (seed, call_index) 導出獨立的亂數子序列"""
    if seed < 0 or call_index < 0:
        raise ValueError(f"seed 與 call_index 必須為非負整數: {seed}, {call_index}")
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(call_index)]))


def _proposal_box(region: FeasibleRegion,
                  box: Optional[Tuple[np.ndarray, np.ndarray]]) -> Tuple[np.ndarray, np.ndarray]:
    lo = region.lower[:-1].copy()
    hi = region.upper[:-1].copy()
    if box is not None:
        lo = np.maximum(lo, np.asarray(box[0], dtype=float))
        hi = np.minimum(hi, np.asarray(box[1], dtype=float))
        if not np.all(lo < hi):
            raise InfeasibleRegion("子箱型與區域上下界沒有交集")
    return lo, hi


def _propose(region: FeasibleRegion, rng: np.random.Generator, size: int,
             lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    partial = lo + (hi - lo) * rng.random((size, region.n - 1))
    return region.complete(partial)


def _draw(region: FeasibleRegion, m: int, rng: np.random.Generator,
          lo: np.ndarray, hi: np.ndarray, config: SamplerConfig,
          max_proposals: Optional[int] = None) -> Tuple[np.ndarray, int]:
    """以固定批量提案直到取得 m 個可行點；批量與 m 無關，因此小 m 的結果是大 m 的前綴"""
    chunks = []
    accepted = 0
    proposals = 0
    while accepted < m:
        candidates = _propose(region, rng, config.batch_size, lo, hi)
        keep = candidates[region.is_feasible(candidates)]
        if keep.size:
            chunks.append(keep)
            accepted += keep.shape[0]
        proposals += config.batch_size

        if max_proposals is not None:
            if proposals >= max_proposals:
                break
        elif proposals >= config.floor_check_after:
            rate = accepted / proposals
            if rate < config.acceptance_floor:
                raise InfeasibleRegion(
                    f"接受率 {rate:.3e} 低於下限 {config.acceptance_floor:.1e}"
                    f"（已提案 {proposals} 次），可行域可能為空或測度為零",
                    acceptance_rate=rate, proposals=proposals)

    if not chunks:
        return np.empty((0, region.n)), proposals
    return np.vstack(chunks)[:m], proposals


def _degenerate_point(region: FeasibleRegion) -> np.ndarray:
    point = region.complete(np.empty((1, 0)))
    if not region.is_feasible(point)[0]:
        raise InfeasibleRegion("單一資產的補全點不可行", acceptance_rate=0.0, proposals=1)
    return point[0]


def sample_feasible(region: FeasibleRegion, m: int, seed: int,
                    config: Optional[SamplerConfig] = None, call_index: int = 0,
                    box: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> np.ndarray:
    """
    在可行域內均勻抽樣 m 個權重向量

    Args:
        region: 可行域
        m: 樣本數
        seed: 亂數種子
        config: 抽樣參數
        call_index: 子序列編號，同一 seed 下不同呼叫互不干擾
        box: 可選的前 n-1 座標子箱型 (lo, hi)，會與區域上下界取交集

    Returns:
        np.ndarray: (m, n)，每列都是可行權重

    Raises:
        InfeasibleRegion: 接受率低於設定下限
    """
    if m < 1:
        raise ValueError(f"樣本數必須 >= 1，當前為 {m}")
    config = config or SamplerConfig()
    if region.n == 1:
        return np.repeat(_degenerate_point(region)[None, :], m, axis=0)

    rng = derive_rng(seed, call_index)
    lo, hi = _proposal_box(region, box)
    samples, proposals = _draw(region, m, rng, lo, hi, config)
    logger.debug("抽樣完成: m=%d, 提案=%d, 接受率=%.4f", m, proposals, m / proposals)
    return samples


def sample_partial(region: FeasibleRegion, m: int, seed: int, max_proposals: int,
                   config: Optional[SamplerConfig] = None, call_index: int = 0,
                   box: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> np.ndarray:
    """在提案預算內盡量抽樣，可能回傳少於 m 個點（供優化器補樣使用）"""
    config = config or SamplerConfig()
    if region.n == 1:
        return np.repeat(_degenerate_point(region)[None, :], m, axis=0)
    rng = derive_rng(seed, call_index)
    lo, hi = _proposal_box(region, box)
    samples, _ = _draw(region, m, rng, lo, hi, config, max_proposals=max_proposals)
    return samples


def acceptance_rate(region: FeasibleRegion, probe: int, seed: int,
                    box: Optional[Tuple[np.ndarray, np.ndarray]] = None,
                    batch_size: int = 16384) -> float:
    """以 probe 次提案估計通過所有可行性檢查的比例"""
    if probe < 1:
        raise ValueError(f"probe 必須 >= 1，當前為 {probe}")
    if region.n == 1:
        return float(region.is_feasible(region.complete(np.empty((1, 0))))[0])

    rng = derive_rng(seed, 0)
    lo, hi = _proposal_box(region, box)
    passed = 0
    remaining = probe
    while remaining > 0:
        size = min(batch_size, remaining)
        passed += int(region.is_feasible(_propose(region, rng, size, lo, hi)).sum())
        remaining -= size
    return passed / probe
