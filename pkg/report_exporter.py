"""
報表匯出模組 - 權益曲線、權重紀錄、績效指標、穩定性表、策略參數與執行清單
數值統一以 12 位小數輸出；清單不含時間戳記，相同設定重跑時檔案位元組相同
"""

import logging
import math
import platform
from importlib import metadata
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from backtest import BacktestResult, EquityCurve, MetricsReport
from dynamic_policy import PolicySearchResult
from file_manager import FileManager
from optimizer import OptimizationResult
from universe import BottomUpResult

logger = logging.getLogger(__name__)

TRACKED_PACKAGES = ('numpy', 'pandas', 'scipy', 'PyYAML', 'tqdm', 'psutil', 'matplotlib')


def _finite_or_label(value: float) -> Any:
    """JSON 不支援無限大，以字串標記"""
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


def _date_strings(dates: pd.Index) -> List[str]:
    """日期格式化為 YYYY-MM-DD；期數索引（超長模擬）原樣輸出"""
    if pd.api.types.is_integer_dtype(pd.Index(dates)):
        return [str(d) for d in dates]
    return [pd.Timestamp(d).strftime('%Y-%m-%d') for d in dates]


def package_versions() -> Dict[str, str]:
    versions = {'python': platform.python_version()}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "not installed"
    return versions


class ReportExporter:
    """把各命令的結果寫到輸出目錄"""

    def __init__(self, file_manager: FileManager):
        self.files = file_manager

    def export_equity(self, curve: EquityCurve, name: str = "equity.csv") -> str:
        """兩欄 date,value"""
        frame = pd.DataFrame({'date': _date_strings(curve.dates), 'value': curve.values})
        return self.files.write_csv(name, frame)

    def export_weight_log(self, result: BacktestResult) -> str:
        frame = result.weight_log()
        frame['date'] = _date_strings(pd.Index(frame['date']))
        return self.files.write_csv("weights.csv", frame)

    def export_weights(self, date, assets, weights: np.ndarray) -> str:
        """單一決策日的權重（optimize 命令）"""
        frame = pd.DataFrame({'date': _date_strings(pd.Index([date] * len(assets))),
                              'asset': list(assets), 'weight': np.asarray(weights, dtype=float)})
        return self.files.write_csv("weights.csv", frame)

    def export_metrics(self, metrics: MetricsReport, result: Optional[BacktestResult] = None,
                       periods_per_year: int = 252, name: str = "metrics.json") -> str:
        report = {
            'metrics': {key: _finite_or_label(value) for key, value in metrics.to_dict().items()},
            'conventions': {
                'risk_free_rate': 0.0,
                'sortino_target': 0.0,
                'std_denominator': 'population',
                'periods_per_year': periods_per_year,
                'transaction_costs': 'none'
            }
        }
        if result is not None:
            report['rebalances'] = int(len(result.weights))
            report['turnover'] = {
                'mean': float(result.turnover.mean()),
                'total': float(result.turnover.sum()),
                'per_rebalance': dict(zip(_date_strings(result.turnover.index),
                                          result.turnover.astype(float).tolist()))
            }
            report['terminal_value'] = float(result.curve.values[-1])
        return self.files.write_json(name, report)

    def export_backtest(self, result: BacktestResult, metrics: MetricsReport,
                        periods_per_year: int) -> List[str]:
        paths = [self.export_equity(result.curve), self.export_weight_log(result),
                 self.export_metrics(metrics, result, periods_per_year)]
        if result.benchmark is not None:
            paths.append(self.export_equity(result.benchmark, "benchmark.csv"))
            paths.append(self.export_equity(result.excess, "excess.csv"))
        return paths

    def export_optimization(self, result: Union[OptimizationResult, BottomUpResult], score: float) -> str:
        """單次優化的分數與逐層紀錄；分組優化的 trace.csv 多一個 stage 欄"""
        self.files.write_csv("trace.csv", result.trace_frame())
        report = {
            'best_score': score,
            'evaluations': result.evaluations,
            'levels': result.levels
        }
        if isinstance(result, BottomUpResult):
            report['groups'] = len(result.partition)
            report['partition_method'] = result.partition.method
        return self.files.write_json("optimization.json", report)

    def export_stability(self, table: pd.DataFrame) -> str:
        return self.files.write_csv("stability.csv", table[['m', 'rmse', 'rmsre']])

    def export_policy(self, result: PolicySearchResult, mdp_name: str, gamma: float) -> str:
        report = {'mdp': mdp_name, 'gamma': gamma, **result.to_dict()}
        return self.files.write_json("policy.json", report)

    def write_manifest(self, command: str, config_hash: str, seed: Optional[int],
                       config: Dict) -> str:
        """執行清單：設定雜湊、種子、命令、套件版本與產出檔案"""
        manifest = {
            'command': command,
            'config_hash': config_hash,
            'seed': seed,
            'versions': package_versions(),
            'artifacts': self.files.get_artifacts(),
            'config': config
        }
        path = self.files.write_json("manifest.json", manifest)
        logger.info("📊 %s 完成，產出 %d 個檔案於 %s", command, len(manifest['artifacts']),
                    self.files.output_dir)
        return path

    def write_error(self, command: str, error: BaseException) -> str:
        report = {'error': type(error).__name__, 'message': str(error), 'command': command}
        row = getattr(error, 'row', None)
        if row is not None:
            report['row'] = row
        return self.files.write_json("error.json", report)
