"""
市場模擬模組 - ARMA-GARCH 因子動態 + 非線性因子→報酬映射
f_t  = mu + phi·f_{t-1} + sigma_t ∘ (P·u_t)
σ²_t = alpha + beta ∘ σ²_{t-1} + gamma ∘ f²_{t-1}
r_t  = scale · sin(f_t) + Unif(-a, a)
"""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd

from objectives import ReturnPanel
from universe import FactorPanel

logger = logging.getLogger(__name__)

# 列範數容差
ROW_NORM_TOL = 1e-12


@dataclass(eq=False)
class DgpParams:
    """模擬世界參數"""
    mu: np.ndarray            # (n,)
    phi: np.ndarray           # (n, n)
    alpha: np.ndarray         # (n,)
    beta: np.ndarray          # (n,)
    gamma: np.ndarray         # (n,)
    p: np.ndarray             # (n, n) 下三角，每列平方和為 1
    T: int = 250
    noise_amplitude: float = 0.0015
    return_scale: float = 0.02

    def __post_init__(self):
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        n = self.mu.size
        self.phi = np.asarray(self.phi, dtype=float).reshape(n, n)
        self.p = np.asarray(self.p, dtype=float).reshape(n, n)
        for name in ("alpha", "beta", "gamma"):
            value = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if value.shape != (n,):
                raise ValueError(f"{name} 形狀 {value.shape} 應為 {(n,)}")
            setattr(self, name, value)
        if self.T < 1:
            raise ValueError(f"T 必須 >= 1，當前為 {self.T}")
        if self.noise_amplitude < 0:
            raise ValueError("noise_amplitude 必須 >= 0")
        if np.any(self.alpha < 0) or np.any(self.beta < 0) or np.any(self.gamma < 0):
            raise ValueError("GARCH 係數必須非負")
        if np.any(self.beta + self.gamma >= 1):
            raise ValueError("需要 beta + gamma < 1（變異數平穩）")
        if self.spectral_radius() >= 1:
            raise ValueError(f"phi 譜半徑 {self.spectral_radius():.4f} >= 1，因子過程不平穩")
        if np.any(np.triu(self.p, k=1) != 0):
            raise ValueError("P 必須為下三角矩陣")
        norms = np.sum(self.p ** 2, axis=1)
        if np.any(np.abs(norms - 1.0) > ROW_NORM_TOL):
            raise ValueError("P 每列平方和必須為 1")

    @property
    def n(self) -> int:
        return self.mu.size

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.phi))))

    def stationary_variance(self) -> np.ndarray:
        return self.alpha / (1.0 - self.beta - self.gamma)

    def stationary_mean(self) -> np.ndarray:
        return np.linalg.solve(np.eye(self.n) - self.phi, self.mu)

    def check_invariants(self):
        """產生器保證的完整不變量（含 0 < mu < 0.05）"""
        if np.any(self.mu <= 0) or np.any(self.mu >= 0.05):
            raise ValueError("mu 必須落在 (0, 0.05)")

    def to_dict(self) -> Dict:
        return {key: value.tolist() if isinstance(value, np.ndarray) else value
                for key, value in asdict(self).items()}


@dataclass
class DgpConfig:
    """模擬世界設定"""
    n: int = 100
    T: int = 250
    seed: int = 0
    burn_in: int = 500
    noise_amplitude: float = 0.0015
    return_scale: float = 0.02
    forecaster: str = "oracle"    # oracle | analytic | historical
    oracle_draws: int = 4096

    def __post_init__(self):
        if self.n < 1 or self.T < 1:
            raise ValueError("n 與 T 必須 >= 1")
        if self.burn_in < 0:
            raise ValueError("burn_in 必須 >= 0")
        if self.forecaster not in ("oracle", "analytic", "historical"):
            raise ValueError(f"未知的 forecaster: {self.forecaster}")

    def to_dict(self) -> Dict:
        return asdict(self)


def _open_uniform(rng: np.random.Generator, low: float, high: float, size) -> np.ndarray:
    """(low, high) 開區間均勻抽樣，端點值重抽"""
    values = rng.uniform(low, high, size)
    bad = values <= low
    while np.any(bad):
        values[bad] = rng.uniform(low, high, int(bad.sum()))
        bad = values <= low
    return values


def generate_params(n: int, seed: int, T: int = 250, noise_amplitude: float = 0.0015,
                    return_scale: float = 0.02) -> DgpParams:
    """
    以均勻分布隨機產生平穩的模擬參數

    phi 採對角優勢：對角 U(0, 0.5)、非對角 U(0, 0.4/n)，非負矩陣的列和 < 0.9 保證譜半徑 < 1；
    GARCH 持續度 s = beta + gamma 直接抽自 U(0, 0.95) 再拆分
    """
    if n < 1:
        raise ValueError(f"資產數必須 >= 1，當前為 {n}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), n]))

    mu = _open_uniform(rng, 0.0, 0.05, n)
    phi = _open_uniform(rng, 0.0, 0.4 / n, (n, n))
    np.fill_diagonal(phi, _open_uniform(rng, 0.0, 0.5, n))
    alpha = rng.uniform(0.001, 0.01, n)
    persistence = rng.uniform(0.0, 0.95, n)
    split = rng.random(n)
    beta = persistence * split
    gamma = persistence - beta

    p = np.tril(_open_uniform(rng, 0.0, 1.0, (n, n)))
    p /= np.sqrt(np.sum(p ** 2, axis=1, keepdims=True))

    params = DgpParams(mu=mu, phi=phi, alpha=alpha, beta=beta, gamma=gamma, p=p, T=T,
                       noise_amplitude=noise_amplitude, return_scale=return_scale)
    params.check_invariants()
    return params


def asset_names(n: int) -> Tuple[str, ...]:
    width = max(4, len(str(n)))
    return tuple(f"asset_{j + 1:0{width}d}" for j in range(n))


def simulation_index(T: int, start: str = "2000-01-03") -> pd.Index:
    """從 start 起的 T 個營業日；超出 pandas 時間戳範圍時改用 0..T-1 的期數索引"""
    try:
        return pd.bdate_range(start, periods=T)
    except (OverflowError, ValueError):  # OutOfBoundsDatetime 是 ValueError 子類別
        logger.warning("⚠️ %d 個營業日超出可表示的日期範圍，改用期數索引", T)
        return pd.RangeIndex(T)


def simulate(params: DgpParams, seed: int, T: Optional[int] = None,
             burn_in: int = 500, start: str = "2000-01-03") -> Tuple[FactorPanel, ReturnPanel]:
    """
    模擬因子與報酬路徑

    亂數依時間順序推進（每期先 u_t 再擾動項），相同 seed 下加長 T 只會延伸、不會改寫既有前綴

    Returns:
        (FactorPanel, ReturnPanel): 因子面板附條件變異數路徑
    """
    T = params.T if T is None else T
    n = params.n
    rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))

    f = params.stationary_mean()
    sigma2 = params.stationary_variance()
    factors = np.empty((T, n))
    variance = np.empty((T, n))
    returns = np.empty((T, n))

    for t in range(burn_in + T):
        u = rng.standard_normal(n)
        noise = rng.uniform(-params.noise_amplitude, params.noise_amplitude, n)
        sigma2 = params.alpha + params.beta * sigma2 + params.gamma * f ** 2
        f = params.mu + params.phi @ f + np.sqrt(sigma2) * (params.p @ u)
        if t >= burn_in:
            row = t - burn_in
            factors[row] = f
            variance[row] = sigma2
            returns[row] = params.return_scale * np.sin(f) + noise

    dates = simulation_index(T, start)
    assets = asset_names(n)
    logger.debug("模擬完成: n=%d, T=%d, burn_in=%d", n, T, burn_in)
    return (FactorPanel(factors[:, :, None], ("factor_1",), dates, assets, variance),
            ReturnPanel(returns, dates, assets))


def next_variance(params: DgpParams, f_now: np.ndarray,
                  sigma2_now: Optional[np.ndarray] = None) -> np.ndarray:
    """下一期條件變異數；未提供 σ²_t 時以平穩水準代替"""
    sigma2_now = params.stationary_variance() if sigma2_now is None else np.asarray(sigma2_now)
    return params.alpha + params.beta * sigma2_now + params.gamma * np.asarray(f_now) ** 2


def analytic_expected_return(params: DgpParams, f_now: np.ndarray,
                             sigma2_now: Optional[np.ndarray] = None) -> np.ndarray:
    """E_t[r_{t+1}] = scale · sin(m) · exp(-s²/2)，m 為條件均值、s² 為下一期變異數"""
    f_now = np.asarray(f_now, dtype=float)
    m = params.mu + params.phi @ f_now
    s2 = next_variance(params, f_now, sigma2_now)
    return params.return_scale * np.sin(m) * np.exp(-0.5 * s2)


def oracle_expected_return(params: DgpParams, f_now: np.ndarray,
                           sigma2_now: Optional[np.ndarray] = None, draws: int = 4096,
                           seed: int = 0) -> np.ndarray:
    """以巢狀模擬（對 u_{t+1} 做內層蒙地卡羅）估計一步條件期望報酬"""
    if draws < 1:
        raise ValueError(f"draws 必須 >= 1，當前為 {draws}")
    f_now = np.asarray(f_now, dtype=float)
    m = params.mu + params.phi @ f_now
    s = np.sqrt(next_variance(params, f_now, sigma2_now))
    rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
    u = rng.standard_normal((draws, params.n))
    f_next = m + s * (u @ params.p.T)
    return params.return_scale * np.sin(f_next).mean(axis=0)


class OracleForecaster:
    """完美模型預測：以真實參數與當期因子狀態計算下一期期望報酬"""

    def __init__(self, params: DgpParams, factors: FactorPanel, method: str = "oracle",
                 draws: int = 4096, seed: int = 0):
        if method not in ("oracle", "analytic"):
            raise ValueError(f"未知的預測方法: {method}")
        if factors.n != params.n:
            raise ValueError(f"因子面板資產數 {factors.n} 與參數 n={params.n} 不符")
        self.params = params
        self.factors = factors
        self.method = method
        self.draws = draws
        self.seed = seed

    def __call__(self, history: ReturnPanel, t: int) -> np.ndarray:
        f_now = self.factors.values[t, :, 0]
        sigma2_now = None if self.factors.variance is None else self.factors.variance[t]
        if self.method == "analytic":
            return analytic_expected_return(self.params, f_now, sigma2_now)
        return oracle_expected_return(self.params, f_now, sigma2_now, self.draws,
                                      seed=self.seed + t)
