"""Batch-normalised global feature enhancement.

The enhanced global feature of one image is its average-pooled feature map
plus the average-pooled, channel-reweighted batch-norm output of the same
map. Channel weights are the normalised magnitudes of the BN scale factors.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGamma, EmptyBatch, ShapeMismatch

DEFAULT_EPS = 1e-5
DEFAULT_MOMENTUM = 0.1


@dataclass
class BnParams:
    gamma: np.ndarray
    beta: np.ndarray
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.gamma.shape != self.beta.shape or self.gamma.ndim != 1:
            raise ShapeMismatch("gamma and beta must be vectors of equal length")
        if not self.eps > 0:
            raise ValueError("eps must be positive")

    @classmethod
    def identity(cls, channels: int, eps: float = DEFAULT_EPS) -> "BnParams":
        return cls(np.ones(channels), np.zeros(channels), eps)


@dataclass
class BatchStats:
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.var = np.asarray(self.var, dtype=np.float64)
        if np.any(self.var < 0):
            raise ValueError("variance must be non-negative")


@dataclass
class RunningStats:
    """Exponential moving averages used in place of batch statistics at inference."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = DEFAULT_MOMENTUM
    updates: int = field(default=0)

    @classmethod
    def fresh(cls, channels: int, momentum: float = DEFAULT_MOMENTUM) -> "RunningStats":
        return cls(np.zeros(channels), np.ones(channels), momentum)

    def update(self, stats: BatchStats) -> None:
        self.mean = (1 - self.momentum) * self.mean + self.momentum * stats.mean
        self.var = (1 - self.momentum) * self.var + self.momentum * stats.var
        self.updates += 1

    def as_batch_stats(self) -> BatchStats:
        return BatchStats(self.mean.copy(), self.var.copy())


def _as_batch(batch) -> np.ndarray:
    if isinstance(batch, (list, tuple)):
        if len(batch) == 0:
            raise EmptyBatch("batch is empty")
        shapes = {np.shape(m) for m in batch}
        if len(shapes) != 1:
            raise ShapeMismatch(f"batch maps have differing shapes: {sorted(shapes)}")
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 4:
        raise ShapeMismatch(f"batch must be B x C x H x W, got {x.shape}")
    if x.shape[0] == 0:
        raise EmptyBatch("batch is empty")
    return x


def batch_statistics(batch) -> BatchStats:
    x = _as_batch(batch)
    return BatchStats(x.mean(axis=(0, 2, 3)), x.var(axis=(0, 2, 3)))


def batch_norm_apply(batch, p: BnParams, stats: BatchStats) -> np.ndarray:
    """Normalise with given statistics (inference path)."""
    x = _as_batch(batch)
    if x.shape[1] != p.gamma.shape[0]:
        raise ShapeMismatch(f"batch has {x.shape[1]} channels, BN has {p.gamma.shape[0]}")
    inv_std = 1.0 / np.sqrt(stats.var + p.eps)
    scale = (p.gamma * inv_std)[None, :, None, None]
    return (x - stats.mean[None, :, None, None]) * scale + p.beta[None, :, None, None]


def batch_norm_forward(batch, p: BnParams) -> tuple[np.ndarray, BatchStats]:
    """Training-mode BN: statistics over batch, height and width of each channel."""
    x = _as_batch(batch)
    stats = batch_statistics(x)
    return batch_norm_apply(x, p, stats), stats


def batch_norm_backward(grad_out: np.ndarray, x: np.ndarray, p: BnParams, stats: BatchStats):
    """Gradients of training-mode BN w.r.t. input, gamma and beta."""
    axes = (0, 2, 3)
    n = x.shape[0] * x.shape[2] * x.shape[3]
    inv_std = 1.0 / np.sqrt(stats.var + p.eps)
    xhat = (x - stats.mean[None, :, None, None]) * inv_std[None, :, None, None]
    dbeta = grad_out.sum(axis=axes)
    dgamma = (grad_out * xhat).sum(axis=axes)
    dxhat = grad_out * p.gamma[None, :, None, None]
    dx = (inv_std[None, :, None, None] / n) * (
        n * dxhat
        - dxhat.sum(axis=axes)[None, :, None, None]
        - xhat * (dxhat * xhat).sum(axis=axes)[None, :, None, None]
    )
    return dx, dgamma, dbeta


def bn_weight_vector(p: BnParams, mode: str = "abs") -> np.ndarray:
    """Channel weights ``lambda_j / sum(lambda)`` with ``lambda = |gamma|`` (or signed gamma)."""
    lam = _lambda(p.gamma, mode)
    total = lam.sum()
    if total == 0:
        raise DegenerateGamma("BN scale factors sum to zero")
    return lam / total


def bn_weight_vector_backward(grad_v: np.ndarray, gamma: np.ndarray, mode: str = "abs") -> np.ndarray:
    lam = _lambda(gamma, mode)
    total = lam.sum()
    # d(v_j)/d(lam_k) = (delta_jk - v_j) / total
    v = lam / total
    grad_lam = (grad_v - np.dot(grad_v, v)) / total
    if mode == "abs":
        return grad_lam * np.sign(gamma)
    return grad_lam


def _lambda(gamma: np.ndarray, mode: str) -> np.ndarray:
    gamma = np.asarray(gamma, dtype=np.float64)
    if mode == "abs":
        return np.abs(gamma)
    if mode == "signed":
        return gamma.copy()
    raise ValueError(f"unknown bn_weight_mode {mode!r}")


def enhance_from_bn(f_glo: np.ndarray, bn_out: np.ndarray, v_bn: np.ndarray) -> np.ndarray:
    """Batched enhancement given the BN output: ``f_glo + avg(v_bn * bn_out)``."""
    return f_glo + (bn_out * v_bn[None, :, None, None]).mean(axis=(2, 3))


def enhance_global(f_glo, f_d, batch, p: BnParams, mode: str = "abs") -> np.ndarray:
    """Enhanced global feature of ``f_d``, with BN statistics from ``batch``.

    ``f_d`` must be one of the maps in ``batch``.
    """
    x = _as_batch(batch)
    f_d = np.asarray(f_d, dtype=np.float64)
    if not any(np.array_equal(f_d, m) for m in x):
        raise ValueError("f_d is not a member of the batch")
    stats = batch_statistics(x)
    bn_out = batch_norm_apply(f_d[None], p, stats)
    v = bn_weight_vector(p, mode)
    return enhance_from_bn(np.asarray(f_glo, dtype=np.float64)[None], bn_out, v)[0]
