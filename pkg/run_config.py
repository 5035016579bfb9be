"""
執行設定模組 - 以 dataclass 彙整各模組設定，從 YAML/JSON 載入並拒絕未知鍵
"""

import hashlib
import json
import logging
import os
from dataclasses import MISSING, asdict, dataclass, field, fields, is_dataclass
from typing import Any, Dict, List, Optional

import yaml

from backtest import BacktestConfig
from dynamic_policy import PolicySearchConfig
from exceptions import ConfigError
from market_simulator import DgpConfig
from objectives import ObjectiveKind, ObjectiveSpec
from optimizer import OptimizerConfig
from universe import PartitionConfig, RegionTemplate

logger = logging.getLogger(__name__)


@dataclass
class ObjectiveConfig:
    """目標函數設定"""
    kind: str = "mean_variance"          # mean_variance | mvsk_ratio | crra
    risk_aversion: Optional[float] = None
    window: int = 252
    crra_form: str = "paper"             # paper | standard（convex 為 paper 的別名）
    forecast: str = "none"               # none | historical（simulate 另用 dgp.forecaster）

    def __post_init__(self):
        ObjectiveKind(self.kind)
        if self.crra_form not in ("paper", "convex", "standard"):
            raise ValueError(f"未知的 crra_form: {self.crra_form}")
        if self.forecast not in ("none", "historical"):
            raise ValueError(f"未知的 forecast: {self.forecast}")

    def to_spec(self) -> ObjectiveSpec:
        return ObjectiveSpec(kind=ObjectiveKind(self.kind), risk_aversion=self.risk_aversion,
                             window=self.window, crra_form=self.crra_form)


@dataclass
class StabilityConfig:
    """樣本數穩定性測試設定"""
    m_list: List[int] = field(default_factory=lambda: [2000, 8000, 32000])
    benchmark_m: int = 64000

    def __post_init__(self):
        if not self.m_list:
            raise ValueError("m_list 不可為空")
        if self.benchmark_m < max(self.m_list):
            raise ValueError("benchmark_m 必須 >= max(m_list)")


@dataclass
class InputConfig:
    """輸入檔案"""
    prices: Optional[str] = None
    price_column: str = "price"
    labels: Optional[str] = None         # asset,label 兩欄的產業標籤檔


@dataclass
class RunConfig:
    """一次執行的完整設定"""
    seed: Optional[int] = None
    log_file: Optional[str] = None
    input: InputConfig = field(default_factory=InputConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    optimizer: OptimizerConfig = field(default_factory=lambda: OptimizerConfig(m=5000))
    region: RegionTemplate = field(default_factory=lambda: RegionTemplate(sampling_cap_multiple=2.0))
    partition: PartitionConfig = field(default_factory=lambda: PartitionConfig(method="auto"))
    backtest: BacktestConfig = field(default_factory=BacktestConfig)
    dgp: DgpConfig = field(default_factory=DgpConfig)
    stability: StabilityConfig = field(default_factory=StabilityConfig)
    policy: PolicySearchConfig = field(default_factory=PolicySearchConfig)

    def apply_seed(self, seed: Optional[int] = None) -> "RunConfig":
        """全域種子依固定位移覆寫各段落的種子"""
        seed = self.seed if seed is None else seed
        if seed is None:
            return self
        self.seed = int(seed)
        self.optimizer.seed = self.seed
        self.dgp.seed = self.seed + 1
        self.partition.seed = self.seed + 2
        self.policy.seed = self.seed + 3
        return self

    def to_dict(self) -> Dict:
        return asdict(self)

    def config_hash(self) -> str:
        """標準化 JSON 的 sha256"""
        canonical = json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def _default_of(f) -> Any:
    if f.default_factory is not MISSING:
        return f.default_factory()
    return f.default


def _build(cls, data: Any, path: str, template: Any = None):
    """遞迴建立 dataclass；未知鍵以完整路徑回報"""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path or '<root>'} 應為對照表，實際為 {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"未知的設定鍵: {', '.join(f'{path}.{key}'.lstrip('.') for key in unknown)}")

    kwargs = {}
    for name, f in known.items():
        default = getattr(template, name) if template is not None else _default_of(f)
        if is_dataclass(default):
            kwargs[name] = _build(type(default), data.get(name), f"{path}.{name}", default)
        elif name in data:
            kwargs[name] = data[name]
        else:
            kwargs[name] = default
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path or '<root>'}: {e}") from e


def config_from_dict(data: Optional[Dict]) -> RunConfig:
    config = _build(RunConfig, data, "")
    return config.apply_seed()


def load_run_config(path: Optional[str]) -> RunConfig:
    """載入 YAML 或 JSON 設定檔；未提供路徑時使用預設值"""
    if path is None:
        return config_from_dict({})
    if not os.path.exists(path):
        raise ConfigError(f"找不到設定檔: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        try:
            if path.lower().endswith('.json'):
                data = json.load(f)
            else:
                data = yaml.safe_load(f)
        except (json.JSONDecodeError, yaml.YAMLError) as e:
            raise ConfigError(f"設定檔解析失敗 {path}: {e}") from e
    logger.info("📄 載入設定檔: %s", path)
    return config_from_dict(data)


DESCRIPTIONS = {
    'seed': "全域種子；設定時覆寫各段落種子（optimizer +0, dgp +1, partition +2, policy +3）",
    'log_file': "額外寫入的日誌檔（相對於輸出目錄）",
    'input.prices': "長格式價格 CSV：date,asset,price[,factor_1..factor_K]",
    'input.price_column': "價格欄位名稱",
    'input.labels': "產業標籤 CSV：asset,label（partition.method = labels 時使用）",
    'objective.kind': "mean_variance | mvsk_ratio | crra",
    'objective.risk_aversion': "風險趨避係數；預設 mean_variance 為 1、crra 為 3",
    'objective.window': "估計動差的尾端視窗長度",
    'objective.crra_form': "paper（別名 convex）: (1-(1+x)^γ)/(1-γ)；standard: (1+x)^(1-γ)/(1-γ)",
    'objective.forecast': "none | historical：以歷史平均報酬取代樣本平均",
    'optimizer.m': "第 0 層樣本數",
    'optimizer.k': "固定叢集數；null 代表 ⌊√存活數⌋",
    'optimizer.k_max': "自動叢集數上限",
    'optimizer.k_per_level': "逐層叢集數清單，超出長度時沿用最後一個",
    'optimizer.max_levels': "最大細化層數",
    'optimizer.diameter_tol': "勝出叢集直徑小於此值時停止",
    'optimizer.improvement_tol': "單層最佳分數進步小於此值時停止",
    'optimizer.seed': "優化器種子",
    'optimizer.center_projection': "complete_then_nearest | nearest：不可行中心的修正方式",
    'optimizer.replenish_factor': "存活樣本少於 k × factor 時補樣",
    'optimizer.replenish_target': "補樣後的目標樣本數（上限 m）",
    'optimizer.replenish_budget': "補樣提案上限 = 缺額 × budget",
    'optimizer.kmeans.max_iter': "第 0 層 k-means 最大迭代次數",
    'optimizer.kmeans.tol': "k-means 慣性相對下降小於此值時停止",
    'optimizer.kmeans.refine_max_iter': "細化層（level >= 1）k-means 最大迭代次數",
    'optimizer.max_workers': "平行評估執行緒數；0 代表實體核心數",
    'optimizer.sampler.batch_size': "拒絕抽樣每批提案數",
    'optimizer.sampler.acceptance_floor': "接受率下限，低於時回報不可行",
    'optimizer.sampler.floor_check_after': "累積多少提案後才檢查接受率",
    'region.lower': "每個資產的權重下界（開區間）",
    'region.upper': "每個資產的權重上界（開區間）",
    'region.max_weight_multiple': "對任意資產數都把上界改為 min(upper, c/n)；null 代表不限制",
    'region.inequalities': "額外限制式清單：{kind: concentration, limit} 或 {kind: linear, coefficients, offset}",
    'region.sampling_cap_multiple': "資產數超過 sampling_cap_above 時上界改為 min(upper, c/n)，維持拒絕抽樣的接受率；null 代表不限制",
    'region.sampling_cap_above': "sampling_cap_multiple 生效的資產數門檻（與 partition.auto_threshold 預設相同）",
    'partition.method': "auto | none | score | kmeans | labels",
    'partition.buckets': "分數分組數",
    'partition.k': "因子 k-means 分組數",
    'partition.seed': "因子 k-means 種子",
    'partition.labels': "資產 → 產業標籤對照表",
    'partition.auto_threshold': "auto 模式下資產數超過此值且有因子時改用分數分組",
    'backtest.rebalance_every': "再平衡間隔期數",
    'backtest.lookback': "估計視窗長度",
    'backtest.periods_per_year': "年化期數",
    'backtest.benchmark': "equal_weight 或資產代碼；null 代表不計算超額報酬",
    'backtest.show_progress': "顯示回測進度條",
    'dgp.n': "模擬資產數",
    'dgp.T': "樣本外期數（實際模擬 T + lookback 期）",
    'dgp.seed': "模擬種子",
    'dgp.burn_in': "丟棄的暖機期數",
    'dgp.noise_amplitude': "報酬擾動項半寬",
    'dgp.return_scale': "報酬 = scale · sin(f)",
    'dgp.forecaster': "oracle | analytic | historical",
    'dgp.oracle_draws': "巢狀模擬內層抽樣數",
    'stability.m_list': "受測樣本數清單",
    'stability.benchmark_m': "基準樣本數（>= max(m_list)）",
    'policy.mdp': "two_state | target",
    'policy.gamma': "折現因子",
    'policy.divisions': "狀態空間每一維的格數",
    'policy.intercept_low': "截距下界；null 代表動作下界",
    'policy.intercept_high': "截距上界；null 代表動作上界",
    'policy.slope_low': "斜率下界",
    'policy.slope_high': "斜率上界（與下界相同時固定不搜尋）",
    'policy.rollouts': "每次價值估計的模擬路徑數",
    'policy.seed': "價值估計的共同隨機數種子",
    'policy.target': "target MDP 的目標狀態",
}


def config_schema() -> Dict:
    """所有設定鍵的預設值與說明"""
    schema = {}

    def walk(instance, prefix: str):
        for f in fields(instance):
            key = f"{prefix}{f.name}"
            value = getattr(instance, f.name)
            if is_dataclass(value):
                walk(value, f"{key}.")
            else:
                schema[key] = {'default': value, 'description': DESCRIPTIONS.get(key, "")}

    walk(RunConfig(), "")
    return schema
