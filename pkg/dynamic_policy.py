"""
動態策略模組 - 分段線性策略 π(s)|_{U_k} = δ⁰_k + δ¹_k·s 的蒙地卡羅價值估計與參數搜尋
參數搜尋沿用優化器的叢集細化流程，目標函數為策略價值估計
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from feasible_sampler import FeasibleRegion, zero_completion
from optimizer import OptimizationResult, OptimizerConfig, optimize

logger = logging.getLogger(__name__)

# 截斷視界使 γ^H 小於此值
HORIZON_EPS = 1e-6

Reward = Callable[[np.ndarray], np.ndarray]                                 # (R, d) -> (R,)
Transition = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]     # (s, a, noise) -> s'
NoiseSampler = Callable[[np.random.Generator, int], np.ndarray]             # (rng, R) -> (R, p)
InitialState = Callable[[np.random.Generator, int], np.ndarray]             # (rng, R) -> (R, d)


def _no_noise(rng: np.random.Generator, rollouts: int) -> np.ndarray:
    return np.zeros((rollouts, 0))


def truncation_horizon(gamma: float) -> int:
    """γ^H < 1e-6 的最小 H；γ = 0 時只有即期報酬"""
    if gamma == 0.0:
        return 1
    return int(math.ceil(math.log(HORIZON_EPS) / math.log(gamma)))


@dataclass(eq=False)
class Mdp:
    """連續狀態/動作的箱型 MDP，所有函數都對 rollouts 向量化"""
    state_low: np.ndarray
    state_high: np.ndarray
    action_low: np.ndarray
    action_high: np.ndarray
    reward: Reward
    transition: Transition
    initial_state: InitialState
    gamma: float = 0.9
    noise_sampler: NoiseSampler = _no_noise
    horizon: Optional[int] = None

    def __post_init__(self):
        for name in ("state_low", "state_high", "action_low", "action_high"):
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        if self.state_low.shape != self.state_high.shape or np.any(self.state_low >= self.state_high):
            raise ValueError("狀態空間上下界無效")
        if self.action_low.shape != self.action_high.shape or np.any(self.action_low > self.action_high):
            raise ValueError("動作空間上下界無效")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"折現因子必須介於 [0, 1)，當前為 {self.gamma}")
        if self.horizon is None:
            self.horizon = truncation_horizon(self.gamma)
        if self.horizon < 1:
            raise ValueError("horizon 必須 >= 1")

    @property
    def d(self) -> int:
        return self.state_low.size

    @property
    def q(self) -> int:
        return self.action_low.size

    def truncation_bound(self, reward_bound: float) -> float:
        """截斷誤差上界 |R|max · γ^H / (1 - γ)"""
        return reward_bound * self.gamma ** self.horizon / (1.0 - self.gamma)


@dataclass(frozen=True, eq=False)
class CellGrid:
    """狀態箱型上的均勻網格，K = Π divisions 個不相交格子"""
    low: np.ndarray
    high: np.ndarray
    divisions: Tuple[int, ...]

    def __post_init__(self):
        low = np.atleast_1d(np.asarray(self.low, dtype=float))
        high = np.atleast_1d(np.asarray(self.high, dtype=float))
        divisions = tuple(int(v) for v in self.divisions)
        if len(divisions) != low.size or any(v < 1 for v in divisions):
            raise ValueError(f"divisions {divisions} 與狀態維度 {low.size} 不符或含非正值")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)
        object.__setattr__(self, "divisions", divisions)

    @classmethod
    def over(cls, mdp: Mdp, divisions: Sequence[int]) -> "CellGrid":
        return cls(mdp.state_low, mdp.state_high, tuple(divisions))

    @property
    def K(self) -> int:
        return int(np.prod(self.divisions))

    def locate(self, states: np.ndarray) -> np.ndarray:
        """每個狀態所在的格子編號（上界落在最後一格）"""
        states = np.atleast_2d(states)
        divisions = np.asarray(self.divisions)
        scaled = (states - self.low) / (self.high - self.low) * divisions
        coords = np.clip(np.floor(scaled).astype(int), 0, divisions - 1)
        return np.ravel_multi_index(coords.T, self.divisions)

    def boxes(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        width = (self.high - self.low) / np.asarray(self.divisions)
        boxes = []
        for k in range(self.K):
            coords = np.asarray(np.unravel_index(k, self.divisions))
            lo = self.low + coords * width
            boxes.append((lo, lo + width))
        return boxes


@dataclass(frozen=True, eq=False)
class PiecewisePolicy:
    """每個格子一組仿射參數，輸出動作截斷到動作空間內"""
    grid: CellGrid
    intercepts: np.ndarray     # (K, q)
    slopes: np.ndarray         # (K, q, d)
    action_low: np.ndarray
    action_high: np.ndarray

    def __post_init__(self):
        intercepts = np.asarray(self.intercepts, dtype=float)
        slopes = np.asarray(self.slopes, dtype=float)
        K = self.grid.K
        q = np.atleast_1d(self.action_low).size
        d = self.grid.low.size
        if intercepts.shape != (K, q) or slopes.shape != (K, q, d):
            raise ValueError(f"策略參數形狀錯誤: {intercepts.shape}, {slopes.shape}，應為 {(K, q)}, {(K, q, d)}")
        object.__setattr__(self, "intercepts", intercepts)
        object.__setattr__(self, "slopes", slopes)
        object.__setattr__(self, "action_low", np.atleast_1d(np.asarray(self.action_low, dtype=float)))
        object.__setattr__(self, "action_high", np.atleast_1d(np.asarray(self.action_high, dtype=float)))

    @classmethod
    def from_vector(cls, grid: CellGrid, theta: np.ndarray, mdp: Mdp) -> "PiecewisePolicy":
        """參數向量排列：先 K·q 個截距，再 K·q·d 個斜率"""
        K, q, d = grid.K, mdp.q, mdp.d
        theta = np.asarray(theta, dtype=float)
        if theta.size != K * q * (1 + d):
            raise ValueError(f"參數向量長度 {theta.size} 應為 {K * q * (1 + d)}")
        intercepts = theta[:K * q].reshape(K, q)
        slopes = theta[K * q:].reshape(K, q, d)
        return cls(grid, intercepts, slopes, mdp.action_low, mdp.action_high)

    def act(self, states: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(states)
        cells = self.grid.locate(states)
        actions = self.intercepts[cells] + np.einsum("rqd,rd->rq", self.slopes[cells], states)
        return np.clip(actions, self.action_low, self.action_high)

    def to_dict(self) -> Dict:
        return {
            'cells': [{'low': lo.tolist(), 'high': hi.tolist()} for lo, hi in self.grid.boxes()],
            'divisions': list(self.grid.divisions),
            'intercepts': self.intercepts.tolist(),
            'slopes': self.slopes.tolist(),
            'action_low': self.action_low.tolist(),
            'action_high': self.action_high.tolist()
        }


def evaluate_policy(mdp: Mdp, policy: PiecewisePolicy, rollouts: int,
                    seed: int = 0) -> Tuple[float, float]:
    """
    蒙地卡羅估計 Σ_{t<H} γ^t R(s_t) 的期望值

    亂數只用於初始狀態與轉移擾動，抽取次數與策略無關，
    因此相同 seed 下不同策略共用同一組隨機數（common random numbers）

    Returns:
        (價值估計, 標準誤)
    """
    if rollouts < 1:
        raise ValueError(f"rollouts 必須 >= 1，當前為 {rollouts}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
    states = np.atleast_2d(mdp.initial_state(rng, rollouts)).reshape(rollouts, mdp.d)
    totals = np.zeros(rollouts)
    discount = 1.0
    for t in range(mdp.horizon):
        totals += discount * np.asarray(mdp.reward(states), dtype=float)
        if t == mdp.horizon - 1:
            break
        noise = mdp.noise_sampler(rng, rollouts)
        actions = policy.act(states)
        states = np.clip(mdp.transition(states, actions, noise), mdp.state_low, mdp.state_high)
        discount *= mdp.gamma
    value = float(totals.mean())
    se = float(totals.std(ddof=1) / np.sqrt(rollouts)) if rollouts > 1 else 0.0
    return value, se


@dataclass
class ParameterBox:
    """截距與斜率的搜尋範圍；上下界相同的分量視為固定值"""
    intercept_low: float
    intercept_high: float
    slope_low: float = 0.0
    slope_high: float = 0.0

    def bounds(self, grid: CellGrid, mdp: Mdp) -> Tuple[np.ndarray, np.ndarray]:
        n_intercepts = grid.K * mdp.q
        n_slopes = n_intercepts * mdp.d
        lower = np.concatenate([np.full(n_intercepts, self.intercept_low), np.full(n_slopes, self.slope_low)])
        upper = np.concatenate([np.full(n_intercepts, self.intercept_high), np.full(n_slopes, self.slope_high)])
        if np.any(lower > upper):
            raise ValueError("參數下界大於上界")
        return lower, upper


@dataclass
class PolicySearchConfig:
    """策略搜尋設定"""
    mdp: str = "two_state"        # two_state | target
    gamma: float = 0.9
    divisions: List[int] = field(default_factory=lambda: [2])
    intercept_low: Optional[float] = None     # None 代表動作空間下界
    intercept_high: Optional[float] = None
    slope_low: float = 0.0
    slope_high: float = 0.0
    rollouts: int = 256
    seed: int = 0
    target: float = 0.3

    def __post_init__(self):
        if self.mdp not in TOY_MDPS:
            raise ValueError(f"未知的 MDP: {self.mdp}，可用: {sorted(TOY_MDPS)}")
        if self.rollouts < 1:
            raise ValueError("rollouts 必須 >= 1")

    def parameter_box(self, mdp: Mdp) -> ParameterBox:
        low = float(mdp.action_low.min()) if self.intercept_low is None else self.intercept_low
        high = float(mdp.action_high.max()) if self.intercept_high is None else self.intercept_high
        return ParameterBox(low, high, self.slope_low, self.slope_high)

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class PolicySearchResult:
    policy: PiecewisePolicy
    value: float
    standard_error: float
    optimization: OptimizationResult

    def to_dict(self) -> Dict:
        return {
            'value': self.value,
            'standard_error': self.standard_error,
            'evaluations': self.optimization.evaluations,
            'levels': len(self.optimization.trace),
            'policy': self.policy.to_dict()
        }


def search_policy(mdp: Mdp, grid: CellGrid, box: ParameterBox, config: OptimizerConfig,
                  rollouts: int = 256, seed: int = 0) -> PolicySearchResult:
    """
    把所有 (δ⁰_k, δ¹_k) 攤平成參數向量，在參數箱型內抽樣並以叢集細化選出最佳策略

    固定分量（上下界相同）不進入搜尋；搜尋向量最後附一個零補全的輔助座標
    """
    lower, upper = box.bounds(grid, mdp)
    free = lower < upper
    fixed = lower.copy()
    region = FeasibleRegion(np.append(lower[free], -1.0), np.append(upper[free], 1.0),
                            completion=zero_completion)

    def to_policy(w: np.ndarray) -> PiecewisePolicy:
        theta = fixed.copy()
        theta[free] = w[:-1]
        return PiecewisePolicy.from_vector(grid, theta, mdp)

    def objective(w: np.ndarray) -> float:
        return evaluate_policy(mdp, to_policy(w), rollouts, seed)[0]

    result = optimize(region, objective, config)
    policy = to_policy(result.best_weights)
    value, se = evaluate_policy(mdp, policy, rollouts, seed)
    logger.info("✅ 策略搜尋完成: 自由參數=%d, 價值=%.6f ± %.6f", int(free.sum()), value, se)
    return PolicySearchResult(policy, value, se, result)


# 雙狀態鏈：狀態 0/1 以 0.25/0.75 嵌入 [0, 1]，動作以 0.5 為界離散化
TWO_STATE_REPRESENTATIVES = (0.25, 0.75)
TWO_STATE_UP_PROBABILITY = np.array([[0.2, 0.7],     # 狀態 0: 動作 0 / 1 轉到狀態 1 的機率
                                     [0.9, 0.5]])    # 狀態 1


def two_state_mdp(gamma: float = 0.9, initial: int = 0) -> Mdp:
    """報酬 R(s) = 1{狀態 1}；從狀態 0 起步"""
    low, high = TWO_STATE_REPRESENTATIVES

    def reward(states: np.ndarray) -> np.ndarray:
        return (states[:, 0] >= 0.5).astype(float)

    def transition(states: np.ndarray, actions: np.ndarray, noise: np.ndarray) -> np.ndarray:
        state = (states[:, 0] >= 0.5).astype(int)
        action = (actions[:, 0] >= 0.5).astype(int)
        up = noise[:, 0] < TWO_STATE_UP_PROBABILITY[state, action]
        return np.where(up, high, low)[:, None]

    def noise_sampler(rng: np.random.Generator, rollouts: int) -> np.ndarray:
        return rng.random((rollouts, 1))

    def initial_state(rng: np.random.Generator, rollouts: int) -> np.ndarray:
        return np.full((rollouts, 1), TWO_STATE_REPRESENTATIVES[initial])

    return Mdp(0.0, 1.0, 0.0, 1.0, reward, transition, initial_state, gamma, noise_sampler)


def target_mdp(gamma: float = 0.9, target: float = 0.3, start: float = 0.8) -> Mdp:
    """確定性一維追蹤：s' = a，R(s) = -(s - target)²，最佳動作恆為 target"""

    def reward(states: np.ndarray) -> np.ndarray:
        return -(states[:, 0] - target) ** 2

    def transition(states: np.ndarray, actions: np.ndarray, noise: np.ndarray) -> np.ndarray:
        return actions.copy()

    def initial_state(rng: np.random.Generator, rollouts: int) -> np.ndarray:
        return np.full((rollouts, 1), start)

    return Mdp(0.0, 1.0, 0.0, 1.0, reward, transition, initial_state, gamma)


TOY_MDPS = {
    'two_state': lambda config: two_state_mdp(config.gamma),
    'target': lambda config: target_mdp(config.gamma, config.target),
}


def build_mdp(config: PolicySearchConfig) -> Mdp:
    return TOY_MDPS[config.mdp](config)
