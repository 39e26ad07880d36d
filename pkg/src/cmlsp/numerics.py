"""Pooling and scaling primitives on C x H x W feature maps.

A feature map is a float64 ``ndarray`` of shape ``(C, H, W)``; a stripe set is
an ``ndarray`` of shape ``(parts, dim)`` whose rows run top to bottom.
"""
from __future__ import annotations

import numpy as np

from .errors import PartsExceedHeight, ShapeMismatch


def as_feature_map(x) -> np.ndarray:
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 3 or 0 in m.shape:
        raise ShapeMismatch(f"feature map must be a non-empty C x H x W array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("feature map contains non-finite values")
    return m


def adaptive_avg_pool(fmap) -> np.ndarray:
    """Per-channel mean over all spatial positions -> vector of length C."""
    m = as_feature_map(fmap)
    return m.mean(axis=(1, 2))


def band_bounds(height: int, parts: int) -> list[tuple[int, int]]:
    """Contiguous row bands covering ``range(height)``.

    Band sizes differ by at most one; the larger bands come first.
    """
    if parts < 1:
        raise ValueError("parts must be >= 1")
    if parts > height:
        raise PartsExceedHeight(f"cannot split {height} rows into {parts} parts")
    base, extra = divmod(height, parts)
    bounds = []
    start = 0
    for i in range(parts):
        size = base + (1 if i < extra else 0)
        bounds.append((start, start + size))
        start += size
    return bounds


def horizontal_max_pool(fmap, parts: int) -> np.ndarray:
    """Max over each horizontal band (all columns) -> ``(parts, C)`` stripes."""
    m = as_feature_map(fmap)
    bounds = band_bounds(m.shape[1], parts)
    return np.stack([m[:, lo:hi, :].max(axis=(1, 2)) for lo, hi in bounds])


def minmax_scale(v) -> np.ndarray:
    """Centre on the mean and divide by the value range.

    A constant vector maps to zeros.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ShapeMismatch("minmax_scale expects a non-empty vector")
    span = v.max() - v.min()
    if span == 0:
        return np.zeros_like(v)
    return (v - v.mean()) / span
