"""
例外定義模組 - 優化器、回測與資料載入共用的錯誤類型
"""

from typing import Optional

import numpy as np


class PortfolioOptimizerError(Exception):
    """所有領域錯誤的基底類別"""


class InfeasibleRegion(PortfolioOptimizerError):
    """可行域為空或測度為零，抽樣接受率低於下限"""

    def __init__(self, message: str, acceptance_rate: Optional[float] = None,
                 proposals: int = 0):
        super().__init__(message)
        self.acceptance_rate = acceptance_rate
        self.proposals = proposals


class TooFewPoints(PortfolioOptimizerError, ValueError):
    """點數少於叢集數"""


class DimensionMismatch(PortfolioOptimizerError, ValueError):
    """權重維度與報酬面板寬度不符"""


class ZeroVariance(PortfolioOptimizerError, ArithmeticError):
    """序列變異數為零，無法計算偏度/峰度"""


class NonFiniteScore(PortfolioOptimizerError, ArithmeticError):
    """目標函數產生非有限值"""


class ObjectiveFailure(PortfolioOptimizerError):
    """目標函數在可行點上失敗，保留出錯的權重"""

    def __init__(self, message: str, weights: np.ndarray):
        super().__init__(message)
        self.weights = np.array(weights, dtype=float, copy=True)


class DegenerateFactor(PortfolioOptimizerError, ValueError):
    """所有因子在橫截面上皆為常數"""


class InsufficientHistory(PortfolioOptimizerError, ValueError):
    """歷史資料長度不足以回測"""


class ZeroVol(PortfolioOptimizerError, ArithmeticError):
    """報酬波動度為零，無法計算資訊比率"""


class DateMisalignment(PortfolioOptimizerError, ValueError):
    """兩條曲線的日期不一致"""


class ParseError(PortfolioOptimizerError, ValueError):
    """CSV 解析失敗，記錄出錯的列號"""

    def __init__(self, message: str, row: Optional[int] = None):
        super().__init__(message)
        self.row = row


class EmptyPanel(PortfolioOptimizerError, ValueError):
    """對齊後沒有任何資產或日期"""


class ConfigError(PortfolioOptimizerError, ValueError):
    """設定檔含未知鍵值或型別錯誤"""
