"""
平行評估模組 - 以執行緒池並行計算目標函數，結果依索引歸約
評估次數、失敗與耗時都記錄在統計中
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, Optional

import numpy as np

from exceptions import NonFiniteScore, ObjectiveFailure

logger = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], float]


def resolve_workers(max_workers: int) -> int:
    """0 代表使用實體核心數"""
    if max_workers > 0:
        return max_workers
    try:
        import psutil
        return psutil.cpu_count(logical=False) or 1
    except ImportError:
        return 1


class ParallelEvaluator:
    """目標函數評估器"""

    def __init__(self, objective: Objective, max_workers: int = 1):
        self.objective = objective
        self.max_workers = resolve_workers(max_workers)
        self.stats = {
            'evaluations': 0,
            'failures': 0,
            'batches': 0,
            'elapsed_seconds': 0.0
        }

    def _call(self, w: np.ndarray) -> float:
        try:
            value = float(self.objective(w))
        except Exception as e:
            raise ObjectiveFailure(f"目標函數在可行點上失敗: {e}", w) from e
        if not np.isfinite(value):
            raise ObjectiveFailure("目標函數回傳非有限值", w) from NonFiniteScore(str(value))
        return value

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """逐列評估，回傳與輸入同順序的分數"""
        points = np.atleast_2d(points)
        started = time.perf_counter()
        try:
            if self.max_workers == 1 or points.shape[0] < 2:
                scores = [self._call(w) for w in points]
            else:
                with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
                    # map 保留輸入順序，與完成先後無關
                    scores = list(executor.map(self._call, points))
        except ObjectiveFailure:
            self.stats['failures'] += 1
            raise
        finally:
            self.stats['elapsed_seconds'] += time.perf_counter() - started
        self.stats['evaluations'] += points.shape[0]
        self.stats['batches'] += 1
        return np.asarray(scores, dtype=float)

    @property
    def evaluations(self) -> int:
        return self.stats['evaluations']

    def get_stats(self) -> Dict:
        """取得評估統計"""
        calls = max(self.stats['evaluations'], 1)
        return {
            **self.stats,
            'max_workers': self.max_workers,
            'mean_seconds_per_call': self.stats['elapsed_seconds'] / calls
        }
