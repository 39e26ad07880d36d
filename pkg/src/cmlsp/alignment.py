"""Shortest-path alignment distance between two images' stripe sets.

The recurrence is the usual monotone lattice DP: starting at the top-left
cell, each step moves one stripe right or one stripe down, and the cost of a
path is the sum of the stripe distances it visits. Indices are 0-based here;
cell ``(i, j)`` corresponds to the 1-based ``(i + 1, j + 1)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch, ShapeMismatch, TooLarge
from .numerics import as_feature_map, horizontal_max_pool, minmax_scale

BRUTE_FORCE_MAX_H = 12


@dataclass
class DistanceMatrix:
    d: np.ndarray
    s: np.ndarray | None = None

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=np.float64)
        if self.d.ndim != 2 or self.d.shape[0] != self.d.shape[1] or self.d.shape[0] == 0:
            raise ShapeMismatch(f"distance matrix must be square and non-empty, got {self.d.shape}")
        if not np.all(np.isfinite(self.d)) or np.any(self.d < 0):
            raise ValueError("distance matrix entries must be finite and >= 0")

    @property
    def h(self) -> int:
        return self.d.shape[0]


def stripe_distance(f_r, f_t) -> float:
    f_r = np.asarray(f_r, dtype=np.float64)
    f_t = np.asarray(f_t, dtype=np.float64)
    if f_r.shape != f_t.shape:
        raise LengthMismatch(f"stripe lengths differ: {f_r.shape} vs {f_t.shape}")
    return float(np.abs(minmax_scale(f_r) - minmax_scale(f_t)).sum())


def build_distance_matrix(a, b) -> DistanceMatrix:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape != b.shape:
        raise ShapeMismatch(f"stripe sets must have equal (parts, dim), got {a.shape} vs {b.shape}")
    h = a.shape[0]
    d = np.empty((h, h))
    for i in range(h):
        for j in range(h):
            d[i, j] = stripe_distance(a[i], b[j])
    return DistanceMatrix(d)


def shortest_path_distance(m: DistanceMatrix) -> float:
    """Minimal right/down path cost from (0, 0) to (h-1, h-1); fills ``m.s``."""
    d = m.d
    h = d.shape[0]
    s = np.empty_like(d)
    s[0, 0] = d[0, 0]
    for j in range(1, h):
        s[0, j] = s[0, j - 1] + d[0, j]
    for i in range(1, h):
        s[i, 0] = s[i - 1, 0] + d[i, 0]
        for j in range(1, h):
            s[i, j] = min(s[i, j - 1], s[i - 1, j]) + d[i, j]
    m.s = s
    return float(s[-1, -1])


def brute_force_path(m: DistanceMatrix) -> float:
    """Enumerate every monotone lattice path; test oracle for the DP."""
    h = m.h
    if h > BRUTE_FORCE_MAX_H:
        raise TooLarge(f"h={h} exceeds brute-force limit {BRUTE_FORCE_MAX_H}")
    n_steps = 2 * (h - 1)
    best = np.inf
    # a path is the set of step indices at which it moves down
    for downs in itertools.combinations(range(n_steps), h - 1):
        down_set = set(downs)
        i = j = 0
        total = m.d[0, 0]
        for step in range(n_steps):
            if step in down_set:
                i += 1
            else:
                j += 1
            total += m.d[i, j]
        best = min(best, total)
    return float(best)


def align_distance(map_a, map_b, parts: int) -> float:
    a = as_feature_map(map_a)
    b = as_feature_map(map_b)
    if a.shape[0] != b.shape[0]:
        raise ShapeMismatch(f"channel counts differ: {a.shape[0]} vs {b.shape[0]}")
    dm = build_distance_matrix(horizontal_max_pool(a, parts), horizontal_max_pool(b, parts))
    return shortest_path_distance(dm)


def _scale_rows(stripes: np.ndarray) -> np.ndarray:
    centred = stripes - stripes.mean(axis=-1, keepdims=True)
    span = stripes.max(axis=-1, keepdims=True) - stripes.min(axis=-1, keepdims=True)
    safe = np.where(span == 0, 1.0, span)
    return np.where(span == 0, 0.0, centred / safe)


def pairwise_align_distances(stripes_q, stripes_g, chunk: int = 256) -> np.ndarray:
    """Alignment distance for every (query, gallery) pair of stripe sets.

    ``stripes_q`` is ``(Q, parts, dim)`` and ``stripes_g`` is ``(G, parts, dim)``.
    Same values as calling the scalar path pair by pair.
    """
    sq = _scale_rows(np.asarray(stripes_q, dtype=np.float64))
    sg = _scale_rows(np.asarray(stripes_g, dtype=np.float64))
    if sq.ndim != 3 or sg.ndim != 3 or sq.shape[1:] != sg.shape[1:]:
        raise ShapeMismatch(f"stripe banks disagree: {sq.shape} vs {sg.shape}")
    h = sq.shape[1]
    out = np.empty((sq.shape[0], sg.shape[0]))
    for lo in range(0, sq.shape[0], chunk):
        q = sq[lo:lo + chunk]
        # (q, g, i, j)
        d = np.abs(q[:, None, :, None, :] - sg[None, :, None, :, :]).sum(axis=-1)
        s = np.empty_like(d)
        s[..., 0, 0] = d[..., 0, 0]
        for j in range(1, h):
            s[..., 0, j] = s[..., 0, j - 1] + d[..., 0, j]
        for i in range(1, h):
            s[..., i, 0] = s[..., i - 1, 0] + d[..., i, 0]
            for j in range(1, h):
                s[..., i, j] = np.minimum(s[..., i, j - 1], s[..., i - 1, j]) + d[..., i, j]
        out[lo:lo + chunk] = s[..., -1, -1]
    return out
