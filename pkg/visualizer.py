"""
視覺化模組 - 權益曲線、超額報酬曲線與樣本數穩定性圖
"""

import logging
from typing import Optional

import pandas as pd

from backtest import EquityCurve
from file_manager import FileManager

try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    PLOTTING_AVAILABLE = True
except ImportError:
    PLOTTING_AVAILABLE = False

logger = logging.getLogger(__name__)


class RunVisualizer:
    """把結果畫成 PNG，經由 FileManager 存檔並列入執行清單"""

    def __init__(self, file_manager: FileManager):
        self.files = file_manager

    def _save(self, fig, name: str) -> str:
        path = self.files.path(name)
        fig.savefig(path, dpi=150, bbox_inches='tight')
        plt.close(fig)
        self.files.record(name)
        logger.info("📊 圖表已儲存: %s", path)
        return path

    def plot_equity(self, curve: EquityCurve, benchmark: Optional[EquityCurve] = None,
                    excess: Optional[EquityCurve] = None) -> Optional[str]:
        """策略（與基準）權益曲線；有超額曲線時畫在下方子圖"""
        if not PLOTTING_AVAILABLE:
            logger.warning("⚠️ matplotlib 未安裝，略過權益曲線圖")
            return None

        rows = 2 if excess is not None else 1
        fig, axes = plt.subplots(rows, 1, figsize=(12, 4 * rows), squeeze=False)
        ax = axes[0, 0]
        ax.plot(curve.dates, curve.values, label='Strategy', linewidth=2)
        if benchmark is not None:
            ax.plot(benchmark.dates, benchmark.values, label='Benchmark', linewidth=1.5, alpha=0.8)
        ax.set_title('Equity Curve')
        ax.set_ylabel('Value')
        ax.legend()
        ax.grid(True, alpha=0.3)

        if excess is not None:
            ax = axes[1, 0]
            ax.plot(excess.dates, excess.values, color='green', linewidth=2)
            ax.axhline(1.0, color='gray', linewidth=1, linestyle='--')
            ax.set_title('Equity Curve of Excess Returns')
            ax.set_ylabel('Value')
            ax.grid(True, alpha=0.3)

        fig.tight_layout()
        return self._save(fig, "equity.png")

    def plot_stability(self, table: pd.DataFrame) -> Optional[str]:
        """RMSE / RMSRE 對樣本數"""
        if not PLOTTING_AVAILABLE:
            logger.warning("⚠️ matplotlib 未安裝，略過穩定性圖")
            return None

        fig, axes = plt.subplots(1, 2, figsize=(12, 4))
        axes[0].plot(table['m'], table['rmse'], marker='o', linewidth=2)
        axes[0].set_title('RMSE vs benchmark')
        axes[1].plot(table['m'], 100 * table['rmsre'], marker='o', linewidth=2, color='orange')
        axes[1].set_title('RMSRE (%) vs benchmark')
        for ax in axes:
            ax.set_xlabel('Samples per level (m)')
            ax.set_xscale('log')
            ax.grid(True, alpha=0.3)
        fig.tight_layout()
        return self._save(fig, "stability.png")
