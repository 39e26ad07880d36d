"""Expanded Cross Neighborhood (ECN) re-ranking.

Every item's expanded neighbourhood is its ``top_t`` nearest neighbours in the
joint query+gallery set plus, for each of those, their own ``expand_q``
nearest neighbours (a multiset; self is never its own neighbour). The new
query-gallery distance averages the original distances from each side's
neighbourhood to the other item.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyNeighborhood, ShapeMismatch


@dataclass
class EcnConfig:
    top_t: int = 3
    expand_q: int = 8

    def __post_init__(self):
        if self.top_t < 1 or self.expand_q < 0:
            raise ValueError("need top_t >= 1 and expand_q >= 0")


def joint_distances(dist_qg, dist_qq, dist_gg) -> np.ndarray:
    dist_qg = np.asarray(dist_qg, dtype=np.float64)
    dist_qq = np.asarray(dist_qq, dtype=np.float64)
    dist_gg = np.asarray(dist_gg, dtype=np.float64)
    q, g = dist_qg.shape
    if dist_qq.shape != (q, q) or dist_gg.shape != (g, g):
        raise ShapeMismatch(f"inconsistent shapes qg={dist_qg.shape} qq={dist_qq.shape} gg={dist_gg.shape}")
    return np.block([[dist_qq, dist_qg], [dist_qg.T, dist_gg]])


def nearest_neighbors(full: np.ndarray, k: int) -> np.ndarray:
    """``k`` nearest neighbours of every row, self excluded, ties by index."""
    n = full.shape[0]
    masked = full.copy()
    np.fill_diagonal(masked, np.inf)
    order = np.argsort(masked, axis=1, kind="stable")
    return order[:, :min(k, n - 1)]


def expanded_neighbors(full: np.ndarray, cfg: EcnConfig) -> np.ndarray:
    """(n, M) index array of each item's expanded neighbour multiset."""
    n = full.shape[0]
    if n < 2:
        raise EmptyNeighborhood("need at least two items to form neighbourhoods")
    direct = nearest_neighbors(full, cfg.top_t)
    parts = [direct]
    if cfg.expand_q > 0:
        second = nearest_neighbors(full, cfg.expand_q)
        parts.append(second[direct].reshape(n, -1))
    return np.concatenate(parts, axis=1)


def ecn_rerank(dist_qg, dist_qq, dist_gg, cfg: EcnConfig | None = None) -> np.ndarray:
    cfg = cfg or EcnConfig()
    full = joint_distances(dist_qg, dist_qq, dist_gg)
    if np.any(full < 0):
        raise ValueError("distances must be non-negative")
    q = np.shape(dist_qg)[0]
    nb = expanded_neighbors(full, cfg)
    m = nb.shape[1]
    # agg[x, z] = sum of dist(y, z) over y in N*(x)
    agg = np.zeros_like(full)
    for col in range(m):
        agg += full[nb[:, col]]
    return (agg[:q, q:] + agg[q:, :q].T) / (2.0 * m)
