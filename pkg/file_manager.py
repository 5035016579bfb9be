"""
檔案管理模組 - 輸出目錄管理、長格式價格/因子 CSV 讀入與模擬世界匯出
CSV 欄位：date,asset,price[,factor_1..factor_K]
"""

import json
import logging
import os
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from exceptions import EmptyPanel, ParseError
from objectives import ReturnPanel
from universe import FactorPanel

logger = logging.getLogger(__name__)

# 檔案第 1 行是表頭，資料列從第 2 行開始
_FIRST_DATA_LINE = 2


class FileManager:
    """輸出目錄管理器，單一寫入者"""

    def __init__(self, output_dir: str):
        self.output_dir = os.path.abspath(output_dir)
        os.makedirs(self.output_dir, exist_ok=True)
        self.written: List[str] = []

    def path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    def write_json(self, name: str, data: Any) -> str:
        """寫入 JSON（鍵排序，確保重跑時位元組相同）"""
        path = self.path(name)
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            json.dump(data, f, indent=2, ensure_ascii=False, sort_keys=True)
            f.write('\n')
        self.record(name)
        return path

    def write_csv(self, name: str, frame: pd.DataFrame, float_format: Optional[str] = '%.12f') -> str:
        path = self.path(name)
        frame.to_csv(path, index=False, float_format=float_format, lineterminator='\n')
        self.record(name)
        return path

    def record(self, name: str):
        if name not in self.written:
            self.written.append(name)

    def get_artifacts(self) -> List[str]:
        """本次執行寫出的檔案（依寫入順序）"""
        return list(self.written)


def _read_long_csv(path: str, price_column: str) -> pd.DataFrame:
    if not os.path.exists(path):
        raise ParseError(f"找不到價格檔: {path}", row=0)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise ParseError(f"CSV 解析失敗: {e}", row=0) from e
    frame.columns = frame.columns.str.strip()
    missing = [c for c in ('date', 'asset', price_column) if c not in frame.columns]
    if missing:
        raise ParseError(f"缺少必要欄位: {missing}", row=1)
    if frame.empty:
        raise EmptyPanel(f"價格檔沒有資料列: {path}")
    return frame


def _float_or_nan(text) -> float:
    try:
        return float(text)
    except (TypeError, ValueError):
        return np.nan


def _to_float(values: pd.Series) -> pd.Series:
    """字串欄位轉浮點數，與 float() 的十進位解析一致（可精確還原 %.17g 輸出）；無法解析者為 NaN"""
    try:
        return values.astype(float)
    except (TypeError, ValueError):
        return values.map(_float_or_nan).astype(float)


def _parse_rows(frame: pd.DataFrame, price_column: str) -> pd.DataFrame:
    """逐欄轉型，第一個無法解析的列以檔案行號回報"""
    dates = pd.to_datetime(frame['date'], format='ISO8601', errors='coerce')
    prices = _to_float(frame[price_column])
    assets = frame['asset'].str.strip()
    bad = dates.isna() | ~np.isfinite(prices) | ~(prices > 0) | (assets == '')
    if bad.any():
        index = int(np.flatnonzero(bad.to_numpy())[0])
        raise ParseError(f"第 {index + _FIRST_DATA_LINE} 行格式錯誤: {frame.iloc[index].to_dict()}",
                         row=index + _FIRST_DATA_LINE)
    duplicated = pd.DataFrame({'date': dates, 'asset': assets}).duplicated()
    if duplicated.any():
        index = int(np.flatnonzero(duplicated.to_numpy())[0])
        raise ParseError(f"第 {index + _FIRST_DATA_LINE} 行日期與資產重複", row=index + _FIRST_DATA_LINE)

    parsed = pd.DataFrame({'date': dates, 'asset': assets, 'price': prices})
    for column in frame.columns:
        if column in ('date', 'asset', price_column):
            continue
        values = frame[column].str.strip()
        numeric = _to_float(values.replace('', np.nan))
        malformed = numeric.isna() & (values != '')
        if malformed.any():
            index = int(np.flatnonzero(malformed.to_numpy())[0])
            raise ParseError(f"第 {index + _FIRST_DATA_LINE} 行因子欄位 {column} 無法解析",
                             row=index + _FIRST_DATA_LINE)
        parsed[column] = numeric
    return parsed


def ingest_market_data(path: str, price_column: str = 'price') -> Tuple[ReturnPanel, Optional[FactorPanel]]:
    """
    讀入長格式 CSV，轉成對齊的報酬面板與（若有因子欄位）因子面板

    任何日期缺價或缺因子的資產整檔剔除；第一個日期只用於計算第一期報酬

    Raises:
        ParseError: 列格式錯誤（附行號）
        EmptyPanel: 剔除後沒有資產或少於兩個日期
    """
    parsed = _parse_rows(_read_long_csv(path, price_column), price_column)
    factor_columns = [c for c in parsed.columns if c not in ('date', 'asset', 'price')]
    asset_order = list(dict.fromkeys(parsed['asset']))

    prices = parsed.pivot(index='date', columns='asset', values='price').sort_index()
    prices = prices.reindex(columns=asset_order)
    keep = prices.notna().all(axis=0)

    factor_frames = {}
    for column in factor_columns:
        table = parsed.pivot(index='date', columns='asset', values=column).sort_index()
        table = table.reindex(index=prices.index, columns=asset_order).iloc[1:]
        factor_frames[column] = table
        keep &= table.notna().all(axis=0)

    dropped = int((~keep).sum())
    if dropped:
        logger.warning("⚠️ 剔除 %d 個有缺漏日期的資產", dropped)
    prices = prices.loc[:, keep]
    if prices.shape[1] == 0 or prices.shape[0] < 2:
        raise EmptyPanel(f"對齊後沒有可用的報酬資料: {prices.shape[1]} 個資產, {prices.shape[0]} 個日期")

    returns = (prices / prices.shift(1) - 1.0).iloc[1:]
    panel = ReturnPanel.from_frame(returns)
    factors = None
    if factor_columns:
        values = np.stack([factor_frames[c].loc[:, keep].to_numpy(dtype=float) for c in factor_columns], axis=2)
        factors = FactorPanel(values, tuple(factor_columns), panel.dates, panel.assets)
    logger.info("✅ 讀入 %s: %d 個資產 × %d 期報酬, %d 個因子",
                path, panel.n, panel.T, len(factor_columns))
    return panel, factors


def ingest_prices(path: str, price_column: str = 'price') -> ReturnPanel:
    """只取報酬面板"""
    return ingest_market_data(path, price_column)[0]


def export_market_data(path: str, panel: ReturnPanel, factors: Optional[FactorPanel] = None,
                       initial_price: float = 100.0) -> str:
    """
    把報酬面板（與因子）寫成可再讀入的長格式價格 CSV

    起始日為第一個報酬日的前一個營業日，價格 = initial_price，因子欄位留空
    """
    if not isinstance(panel.dates, pd.DatetimeIndex):
        raise ValueError("長格式價格檔需要日期索引，期數索引的模擬結果無法匯出")
    start = panel.dates[0] - pd.offsets.BDay(1)
    dates = pd.DatetimeIndex([start]).append(pd.DatetimeIndex(panel.dates))
    prices = initial_price * np.vstack([np.ones(panel.n), np.cumprod(1.0 + panel.returns, axis=0)])

    frame = pd.DataFrame({
        'date': np.repeat(dates.strftime('%Y-%m-%d'), panel.n),
        'asset': np.tile(panel.assets, len(dates)),
        'price': prices.reshape(-1)
    })
    if factors is not None:
        for k, name in enumerate(factors.names):
            column = np.vstack([np.full(panel.n, np.nan), factors.values[:, :, k]])
            frame[name] = column.reshape(-1)
    frame.to_csv(path, index=False, float_format='%.17g', lineterminator='\n')
    logger.info("📊 市場資料已匯出: %s", path)
    return path


def load_labels(path: str) -> Dict[str, str]:
    """asset,label 兩欄的產業標籤檔"""
    frame = pd.read_csv(path, dtype=str)
    if not {'asset', 'label'} <= set(frame.columns):
        raise ParseError("標籤檔需要 asset,label 兩欄", row=1)
    return dict(zip(frame['asset'].str.strip(), frame['label'].str.strip()))
