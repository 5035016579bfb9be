"""
測試共用工具：合成報酬面板、網格搜尋與計數包裝
"""

import itertools

import numpy as np
import pandas as pd

from objectives import ReturnPanel


def make_panel(T: int = 60, n: int = 3, seed: int = 0, scale: float = 0.01,
               drift: float = 0.0005) -> ReturnPanel:
    rng = np.random.default_rng(seed)
    returns = drift * np.arange(1, n + 1) + scale * rng.standard_normal((T, n))
    dates = pd.bdate_range("2020-01-01", periods=T)
    return ReturnPanel(returns, dates, tuple(f"A{j}" for j in range(n)))


def simplex_grid(n: int, step: float) -> np.ndarray:
    """閉單純形上步長 step 的所有格點"""
    units = int(round(1.0 / step))
    rows = []
    for head in itertools.product(range(units + 1), repeat=n - 1):
        rest = units - sum(head)
        if rest >= 0:
            rows.append(list(head) + [rest])
    return np.asarray(rows, dtype=float) / units


class CountingObjective:
    """記錄每次呼叫的點"""

    def __init__(self, fn):
        self.fn = fn
        self.calls = []

    def __call__(self, w):
        self.calls.append(np.array(w, copy=True))
        return self.fn(w)


