"""
叢集模組 - k-means（Lloyd 迭代 + k-means++ 初始化）與叢集直徑
同時服務優化器的細化迴圈與資產空間分解
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import sparse
from scipy.spatial.distance import cdist

from exceptions import TooFewPoints

logger = logging.getLogger(__name__)

# 直徑計算的分塊大小
_DIAMETER_BLOCK = 2048


@dataclass
class KMeansConfig:
    """k-means 參數；細化層（level >= 1）改用較低的 refine_max_iter"""
    max_iter: int = 30
    tol: float = 1e-4
    refine_max_iter: int = 10

    def __post_init__(self):
        if self.max_iter < 1 or self.refine_max_iter < 1:
            raise ValueError(f"max_iter 與 refine_max_iter 必須 >= 1，當前為 "
                             f"{self.max_iter}, {self.refine_max_iter}")
        if self.tol < 0:
            raise ValueError("tol 必須 >= 0")

    def iterations_for(self, level: int) -> int:
        return self.max_iter if level == 0 else self.refine_max_iter


@dataclass
class Clustering:
    """叢集結果"""
    k: int
    centers: np.ndarray          # (k, d)
    assignment: np.ndarray       # (N,)
    inertia: float
    n_iter: int = 0
    inertia_history: List[float] = field(default_factory=list)

    def members(self, index: int) -> np.ndarray:
        """回傳指定叢集的點索引"""
        return np.flatnonzero(self.assignment == index)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)


def _assign(points: np.ndarray, centers: np.ndarray, squared_norms: Optional[np.ndarray] = None):
    """每個點指派到最近的中心，距離相同時取最小編號（argmin 取第一個）"""
    if squared_norms is None:
        squared_norms = np.einsum("ij,ij->i", points, points)
    # |x - c|² = |x|² - 2x·c + |c|²，以矩陣乘法計算，負的捨入誤差截為 0
    d2 = squared_norms[:, None] - 2.0 * (points @ centers.T) + np.einsum("ij,ij->i", centers, centers)[None, :]
    np.maximum(d2, 0.0, out=d2)
    labels = np.argmin(d2, axis=1)
    nearest = d2[np.arange(points.shape[0]), labels]
    return labels, nearest


def _kmeans_plus_plus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ 初始化：依與現有中心距離平方加權抽選"""
    n_points = points.shape[0]
    chosen = [int(rng.integers(n_points))]
    closest = cdist(points, points[chosen], "sqeuclidean")[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            index = int(rng.choice(n_points, p=closest / total))
        else:
            # 全部點都與中心重合，改為均勻抽選未使用過的點
            unused = np.setdiff1d(np.arange(n_points), chosen)
            index = int(rng.choice(unused)) if unused.size else int(rng.integers(n_points))
        chosen.append(index)
        closest = np.minimum(closest, cdist(points, points[[index]], "sqeuclidean")[:, 0])
    return points[chosen].copy()


def _update_centers(points: np.ndarray, labels: np.ndarray, nearest: np.ndarray,
                    centers: np.ndarray) -> np.ndarray:
    """重新計算中心；空叢集改以目前離中心最遠的點重新播種，保持 K 不變"""
    k = centers.shape[0]
    n_points = points.shape[0]
    # one-hot (k, N) 稀疏矩陣乘上點雲即為各叢集的座標和
    one_hot = sparse.csr_matrix((np.ones(n_points), (labels, np.arange(n_points))), shape=(k, n_points))
    sums = np.asarray(one_hot @ points)
    counts = np.bincount(labels, minlength=k)
    new_centers = centers.copy()
    filled = counts > 0
    new_centers[filled] = sums[filled] / counts[filled, None]

    empty = np.flatnonzero(~filled)
    if empty.size:
        distances = nearest.copy()
        for index in empty:
            farthest = int(np.argmax(distances))
            new_centers[index] = points[farthest]
            distances[farthest] = -1.0
        logger.debug("重新播種 %d 個空叢集", empty.size)
    return new_centers


def kmeans(points: np.ndarray, k: int, seed: int = 0, max_iter: int = 30,
           tol: float = 1e-4) -> Clustering:
    """
    k-means 分群

    Args:
        points: (N, d) 點雲
        k: 叢集數
        seed: 初始化種子
        max_iter: 最大迭代次數
        tol: 慣性相對下降 (I_prev - I) / I_prev <= tol 時停止；指派不再變動時一律停止

    Returns:
        Clustering: 中心、指派、慣性與逐次慣性紀錄

    Raises:
        TooFewPoints: 點數少於 k
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    n_points = points.shape[0]
    if k < 1:
        raise ValueError(f"叢集數必須 >= 1，當前為 {k}")
    if n_points < k:
        raise TooFewPoints(f"點數 {n_points} 少於叢集數 {k}")
    if tol < 0:
        raise ValueError("tol 必須 >= 0")

    # 先以字典序排列，使結果與輸入順序無關（只差在標籤排列）
    order = np.lexsort(points.T[::-1])
    # 以質心為原點計算距離
    ordered = points[order]
    offset = ordered.mean(axis=0)
    ordered = ordered - offset

    rng = np.random.default_rng(np.random.SeedSequence([int(seed), k]))
    centers = _kmeans_plus_plus(ordered, k, rng)
    squared_norms = np.einsum("ij,ij->i", ordered, ordered)
    labels, nearest = _assign(ordered, centers, squared_norms)
    history = [float(nearest.sum())]

    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        centers = _update_centers(ordered, labels, nearest, centers)
        previous_labels = labels
        labels, nearest = _assign(ordered, centers, squared_norms)
        history.append(float(nearest.sum()))
        if np.array_equal(labels, previous_labels):
            break
        if history[-2] - history[-1] <= tol * history[-2]:
            break

    assignment = np.empty(n_points, dtype=int)
    assignment[order] = labels
    return Clustering(k=k, centers=centers + offset, assignment=assignment,
                      inertia=history[-1], n_iter=n_iter, inertia_history=history)


def cluster_diameter(clustering: Clustering, points: np.ndarray, index: int) -> float:
    """叢集內最大兩點距離；單點叢集為 0"""
    if not 0 <= index < clustering.k:
        raise IndexError(f"叢集編號 {index} 超出範圍 [0, {clustering.k})")
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    members = points[clustering.assignment == index]
    return point_cloud_diameter(members)


def point_cloud_diameter(members: np.ndarray) -> float:
    """點集合的最大兩點距離，分塊計算避免一次配置 N×N 矩陣"""
    if members.shape[0] < 2:
        return 0.0
    best = 0.0
    for start in range(0, members.shape[0], _DIAMETER_BLOCK):
        block = members[start:start + _DIAMETER_BLOCK]
        best = max(best, float(cdist(block, members[start:], "sqeuclidean").max()))
    return float(np.sqrt(best))
