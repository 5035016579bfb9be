"""
目標函數模組 - 報酬面板、投影序列動差與投資組合目標 G(w, R)
所有動差都由投影後的一維序列 w·R_t 計算，不需要共變異數或高階共動差張量
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from exceptions import DimensionMismatch, InsufficientHistory, NonFiniteScore, ZeroVariance

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ReturnPanel:
    """T×n 單期簡單報酬，附對齊的日期與資產代碼"""
    returns: np.ndarray
    dates: pd.Index
    assets: Tuple[str, ...]

    def __post_init__(self):
        returns = np.array(self.returns, dtype=float)
        if returns.ndim == 1:
            returns = returns[:, None]
        if returns.ndim != 2:
            raise ValueError(f"報酬矩陣必須為二維，當前維度 {returns.ndim}")
        dates = pd.Index(self.dates)
        assets = tuple(str(a) for a in self.assets)
        if len(dates) != returns.shape[0]:
            raise ValueError(f"日期數 {len(dates)} 與報酬列數 {returns.shape[0]} 不符")
        if len(assets) != returns.shape[1]:
            raise ValueError(f"資產數 {len(assets)} 與報酬欄數 {returns.shape[1]} 不符")
        if len(set(assets)) != len(assets):
            raise ValueError("資產代碼必須唯一")
        if len(dates) > 1 and not (dates.is_monotonic_increasing and dates.is_unique):
            raise ValueError("日期必須嚴格遞增")
        if not np.all(np.isfinite(returns)):
            raise ValueError("報酬矩陣含缺值或非有限值，請先補值或刪除")
        if np.any(returns <= -1.0):
            raise ValueError("報酬必須 > -1（有限責任）")
        returns.flags.writeable = False
        object.__setattr__(self, "returns", returns)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "assets", assets)

    @property
    def T(self) -> int:
        return self.returns.shape[0]

    @property
    def n(self) -> int:
        return self.returns.shape[1]

    def tail(self, end: int, length: int) -> "ReturnPanel":
        """取出以 end（含）結尾、最多 length 期的子面板"""
        start = max(0, end - length + 1)
        return ReturnPanel(self.returns[start:end + 1], self.dates[start:end + 1], self.assets)

    def subset(self, columns: Sequence[int]) -> "ReturnPanel":
        columns = list(columns)
        return ReturnPanel(self.returns[:, columns], self.dates,
                           tuple(self.assets[j] for j in columns))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.returns, index=self.dates, columns=list(self.assets))

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "ReturnPanel":
        return cls(frame.to_numpy(dtype=float), frame.index, tuple(map(str, frame.columns)))


@dataclass(frozen=True)
class MomentSet:
    """平均、波動度、偏度與原始（非超額）峰度，皆為母體分母"""
    mu: float
    sigma: float
    skew: Optional[float] = None
    kurt: Optional[float] = None

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma 必須 >= 0")
        if self.kurt is not None:
            # Pearson 不等式 kurt >= skew^2 + 1，容許浮點誤差
            if self.kurt < self.skew ** 2 + 1 - 1e-9:
                raise ValueError(f"峰度 {self.kurt} 違反 Pearson 下界")


class ObjectiveKind(str, Enum):
    MEAN_VARIANCE = "mean_variance"
    MVSK_RATIO = "mvsk_ratio"
    CRRA = "crra"


# crra_form 可選值，convex 為 paper 的別名；paper: (1-(1+x)^γ)/(1-γ)，standard: (1+x)^(1-γ)/(1-γ)
CRRA_FORMS = ("paper", "standard")
_CRRA_ALIASES = {"convex": "paper"}

_DEFAULT_RISK_AVERSION = {
    ObjectiveKind.MEAN_VARIANCE: 1.0,
    ObjectiveKind.MVSK_RATIO: 0.0,
    ObjectiveKind.CRRA: 3.0,
}


@dataclass(frozen=True, eq=False)
class ObjectiveSpec:
    """目標函數種類與參數"""
    kind: ObjectiveKind = ObjectiveKind.MEAN_VARIANCE
    risk_aversion: Optional[float] = None
    forecast_mu: Optional[np.ndarray] = None
    window: int = 252
    crra_form: str = "paper"

    def __post_init__(self):
        kind = ObjectiveKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.risk_aversion is None:
            object.__setattr__(self, "risk_aversion", _DEFAULT_RISK_AVERSION[kind])
        if self.window < 2:
            raise ValueError(f"window 必須 >= 2，當前為 {self.window}")
        if kind is ObjectiveKind.CRRA and self.risk_aversion == 1.0:
            raise ValueError("CRRA 的 γ 不可等於 1")
        crra_form = _CRRA_ALIASES.get(self.crra_form, self.crra_form)
        if crra_form not in CRRA_FORMS:
            raise ValueError(f"未知的 crra_form: {self.crra_form}")
        object.__setattr__(self, "crra_form", crra_form)
        if self.forecast_mu is not None:
            forecast = np.array(self.forecast_mu, dtype=float).reshape(-1)
            forecast.flags.writeable = False
            object.__setattr__(self, "forecast_mu", forecast)

    def with_forecast(self, forecast_mu: Optional[np.ndarray]) -> "ObjectiveSpec":
        return replace(self, forecast_mu=forecast_mu)

    def restricted_to(self, columns: Sequence[int]) -> "ObjectiveSpec":
        """限制到部分資產（預測向量同步取子集）"""
        if self.forecast_mu is None:
            return self
        return replace(self, forecast_mu=self.forecast_mu[list(columns)])


def project_series(panel: ReturnPanel, w: np.ndarray) -> np.ndarray:
    """投影出投資組合報酬序列：x_t = Σ_j w^j · r_t^j"""
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.size != panel.n:
        raise DimensionMismatch(f"權重維度 {w.size} 與面板寬度 {panel.n} 不符")
    return panel.returns @ w


def empirical_moments(series: np.ndarray, higher: bool = True) -> MomentSet:
    """
    母體分母的前四階動差

    Raises:
        ZeroVariance: 序列為常數且要求偏度/峰度
    """
    x = np.asarray(series, dtype=float).reshape(-1)
    if x.size < 2:
        raise InsufficientHistory(f"序列長度至少為 2，當前為 {x.size}")
    mu = float(x.mean())
    if np.all(x == x[0]):
        if higher:
            raise ZeroVariance("常數序列無法計算偏度與峰度")
        return MomentSet(mu=mu, sigma=0.0)
    centered = x - mu
    var = float(np.mean(centered ** 2))
    sigma = float(np.sqrt(var))
    if not higher:
        return MomentSet(mu=mu, sigma=sigma)
    if var == 0.0:
        raise ZeroVariance("變異數下溢為零")
    skew = float(np.mean(centered ** 3) / sigma ** 3)
    kurt = float(np.mean(centered ** 4) / var ** 2)
    return MomentSet(mu=mu, sigma=sigma, skew=skew, kurt=kurt)


def _window(spec: ObjectiveSpec, panel: ReturnPanel) -> ReturnPanel:
    if panel.T < 2:
        raise InsufficientHistory(f"至少需要 2 期報酬，當前為 {panel.T}")
    return panel.tail(panel.T - 1, min(panel.T, spec.window))


def _crra_utility(spec: ObjectiveSpec, scenarios: np.ndarray) -> float:
    gamma = float(spec.risk_aversion)
    wealth = 1.0 + scenarios
    if spec.crra_form == "paper":
        exponent = gamma
        if np.any(wealth <= 0) and not float(exponent).is_integer():
            raise NonFiniteScore("期末財富 <= 0 且 γ 非整數")
        utility = (1.0 - wealth ** exponent) / (1.0 - gamma)
    else:
        if np.any(wealth <= 0):
            raise NonFiniteScore("期末財富 <= 0，標準 CRRA 效用無定義")
        utility = wealth ** (1.0 - gamma) / (1.0 - gamma)
    return float(np.mean(utility))


def _score(spec: ObjectiveSpec, window: ReturnPanel, w: np.ndarray) -> float:
    series = project_series(window, w)
    forecast = None
    if spec.forecast_mu is not None:
        if spec.forecast_mu.size != window.n:
            raise DimensionMismatch(f"預測向量維度 {spec.forecast_mu.size} 與面板寬度 {window.n} 不符")
        forecast = float(spec.forecast_mu @ w)

    if spec.kind is ObjectiveKind.MEAN_VARIANCE:
        moments = empirical_moments(series, higher=False)
        mu = moments.mu if forecast is None else forecast
        score = mu - spec.risk_aversion * moments.sigma ** 2
    elif spec.kind is ObjectiveKind.MVSK_RATIO:
        moments = empirical_moments(series)
        if forecast is not None:
            moments = replace(moments, mu=forecast)
        score = mvsk_ratio(moments)
    else:
        # 有預測時，情境以預測值為中心平移
        scenarios = series if forecast is None else series - series.mean() + forecast
        score = _crra_utility(spec, scenarios)

    if not np.isfinite(score):
        raise NonFiniteScore(f"目標值非有限: {score}")
    return float(score)


def evaluate(spec: ObjectiveSpec, panel: ReturnPanel, w: np.ndarray) -> float:
    """以最近 min(T, window) 期資料計算目標值，數值越高越好"""
    return _score(spec, _window(spec, panel), w)


def make_objective(spec: ObjectiveSpec, panel: ReturnPanel) -> Callable[[np.ndarray], float]:
    """預先切好估計視窗，回傳供優化器呼叫的 G(w)"""
    window = _window(spec, panel)

    def objective(w: np.ndarray) -> float:
        return _score(spec, window, w)

    return objective


def mvsk_ratio(moments: MomentSet) -> float:
    """(mu + ½·skew) / (sigma + ½·kurt)"""
    return (moments.mu + 0.5 * moments.skew) / (moments.sigma + 0.5 * moments.kurt)


def moment_projection_equivalence(panel: ReturnPanel, w: np.ndarray,
                                  order: int) -> Tuple[float, float]:
    """
    同一階動差的兩種算法：投影序列 vs 顯式共動差張量縮併
    order = 1 為平均，order >= 2 為中央動差
    """
    if not 1 <= order <= 4:
        raise ValueError(f"order 必須介於 1 與 4，當前為 {order}")
    if panel.n > 5:
        raise ValueError("張量算法僅適用於 n <= 5")
    w = np.asarray(w, dtype=float).reshape(-1)
    series = project_series(panel, w)

    if order == 1:
        projected = float(series.mean())
        tensor = panel.returns.mean(axis=0)
    else:
        projected = float(np.mean((series - series.mean()) ** order))
        centered = panel.returns - panel.returns.mean(axis=0)
        tensor = np.zeros((panel.n,) * order)
        for row in centered:
            outer = row
            for _ in range(order - 1):
                outer = np.multiply.outer(outer, row)
            tensor += outer
        tensor /= panel.T

    contracted = tensor
    for _ in range(order):
        contracted = contracted @ w
    return projected, float(contracted)
