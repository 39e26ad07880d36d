"""A tiny two-stream network with hand-written backprop.

Every layer is a per-pixel (1x1) linear map followed by ReLU, so spatial
layout survives to the shared feature map and horizontal stripes keep their
meaning. Visible rows pass through the visible stream, thermal rows through
the thermal stream, and both continue through the same two fusion layers.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .. import enhancement as enh
from ..losses import THERMAL, VISIBLE, LabeledBatch
from ..numerics import band_bounds

# everything except the classifier heads trains at the backbone rate
HEADS = ("cls_g_w", "cls_g_b", "cls_e_w", "cls_e_b", "cls_l_w", "cls_l_b")


@dataclass(frozen=True)
class ModelShape:
    in_channels: int
    stream_dim: int
    hidden_dim: int
    embed_dim: int
    local_dim: int
    parts: int
    num_classes: int


def _pix(w, b, x):
    bsz, c, h, wd = x.shape
    z = np.matmul(w, x.reshape(bsz, c, h * wd)) + b[None, :, None]
    return z.reshape(bsz, w.shape[0], h, wd)


def _pix_back(w, x, dz):
    bsz, c, h, wd = x.shape
    xf = x.transpose(1, 0, 2, 3).reshape(c, -1)
    dzf = dz.transpose(1, 0, 2, 3).reshape(w.shape[0], -1)
    dx = np.matmul(w.T, dz.reshape(bsz, w.shape[0], h * wd)).reshape(x.shape)
    return dzf @ xf.T, dzf.sum(axis=1), dx


class ToyModel:
    def __init__(self, shape: ModelShape, seed: int = 0, eps: float = enh.DEFAULT_EPS,
                 bn_momentum: float = enh.DEFAULT_MOMENTUM, bn_weight_mode: str = "abs"):
        self.shape = shape
        self.eps = eps
        self.bn_weight_mode = bn_weight_mode
        rng = np.random.default_rng([seed, 1])
        s = shape

        def he(o, i):
            return rng.standard_normal((o, i)) * np.sqrt(2.0 / i)

        vmn = he(s.stream_dim, s.in_channels)
        self.params = {
            "vmn_w": vmn,
            # both streams start identical so modality differences are learned, not initial
            "tmn_w": vmn.copy(),
            "vmn_b": np.zeros(s.stream_dim),
            "tmn_b": np.zeros(s.stream_dim),
            "fmn1_w": he(s.hidden_dim, s.stream_dim),
            "fmn1_b": np.zeros(s.hidden_dim),
            "fmn2_w": he(s.embed_dim, s.hidden_dim),
            "fmn2_b": np.zeros(s.embed_dim),
            "bn_gamma": np.ones(s.embed_dim),
            "bn_beta": np.zeros(s.embed_dim),
            "loc_w": rng.standard_normal((s.local_dim, s.embed_dim)) / np.sqrt(s.embed_dim),
            "cls_g_w": 0.01 * rng.standard_normal((s.num_classes, s.embed_dim)),
            "cls_g_b": np.zeros(s.num_classes),
            "cls_e_w": 0.01 * rng.standard_normal((s.num_classes, s.embed_dim)),
            "cls_e_b": np.zeros(s.num_classes),
            "cls_l_w": 0.01 * rng.standard_normal((s.parts, s.num_classes, s.local_dim)),
            "cls_l_b": np.zeros((s.parts, s.num_classes)),
        }
        self.running = enh.RunningStats.fresh(s.embed_dim, bn_momentum)

    # -- helpers ---------------------------------------------------------------

    @property
    def bn(self) -> enh.BnParams:
        return enh.BnParams(self.params["bn_gamma"], self.params["bn_beta"], self.eps)

    def param_names(self):
        return list(self.params)

    def copy(self) -> "ToyModel":
        other = ToyModel.__new__(ToyModel)
        other.shape = self.shape
        other.eps = self.eps
        other.bn_weight_mode = self.bn_weight_mode
        other.params = {k: v.copy() for k, v in self.params.items()}
        other.running = enh.RunningStats(self.running.mean.copy(), self.running.var.copy(),
                                         self.running.momentum, self.running.updates)
        return other

    # -- forward ---------------------------------------------------------------

    def feature_maps(self, images, modality):
        """Shared feature maps F^d for a batch, plus the cache for backprop."""
        p = self.params
        x = np.asarray(images, dtype=np.float64)
        modality = np.asarray(modality)
        vis = modality == VISIBLE
        z1 = np.where(vis[:, None, None, None], _pix(p["vmn_w"], p["vmn_b"], x),
                      _pix(p["tmn_w"], p["tmn_b"], x))
        h1 = np.maximum(z1, 0)
        z2 = _pix(p["fmn1_w"], p["fmn1_b"], h1)
        h2 = np.maximum(z2, 0)
        z3 = _pix(p["fmn2_w"], p["fmn2_b"], h2)
        fd = np.maximum(z3, 0)
        return fd, dict(x=x, vis=vis, z1=z1, h1=h1, z2=z2, h2=h2, z3=z3, fd=fd)

    def forward(self, images, modality, identity=None, train: bool = False):
        """Run the network; returns (LabeledBatch, cache).

        In training mode BN uses batch statistics and updates the running
        averages; otherwise the running averages are used.
        """
        p = self.params
        s = self.shape
        fd, cache = self.feature_maps(images, modality)
        f_glo = fd.mean(axis=(2, 3))
        bn = self.bn
        if train:
            bn_out, stats = enh.batch_norm_forward(fd, bn)
            self.running.update(stats)
        else:
            stats = self.running.as_batch_stats()
            bn_out = enh.batch_norm_apply(fd, bn, stats)
        v = enh.bn_weight_vector(bn, self.bn_weight_mode)
        f_eglo = enh.enhance_from_bn(f_glo, bn_out, v)

        bounds = band_bounds(fd.shape[2], s.parts)
        stripes = np.empty((fd.shape[0], s.parts, fd.shape[1]))
        argmax = []
        for j, (lo, hi) in enumerate(bounds):
            band = fd[:, :, lo:hi, :].reshape(fd.shape[0], fd.shape[1], -1)
            am = band.argmax(axis=2)
            argmax.append(am)
            stripes[:, j] = np.take_along_axis(band, am[..., None], axis=2)[..., 0]
        local = stripes @ p["loc_w"].T

        logits_g = f_glo @ p["cls_g_w"].T + p["cls_g_b"]
        logits_e = f_eglo @ p["cls_e_w"].T + p["cls_e_b"]
        logits_l = np.einsum("bjd,jnd->jbn", local, p["cls_l_w"]) + p["cls_l_b"][:, None, :]

        b = fd.shape[0]
        ident = np.zeros(b, dtype=np.int64) if identity is None else np.asarray(identity)
        batch = LabeledBatch(f_glo, f_eglo, local, logits_g, logits_e, logits_l, ident,
                             np.asarray(modality))
        cache.update(stats=stats, bn_out=bn_out, v=v, f_glo=f_glo, f_eglo=f_eglo, bounds=bounds,
                     argmax=argmax, stripes=stripes, local=local, train=train)
        return batch, cache

    # -- backward --------------------------------------------------------------

    def backward(self, cache, grads) -> dict[str, np.ndarray]:
        """Parameter gradients from gradients w.r.t. the LabeledBatch fields.

        Only valid for a training-mode forward (BN statistics depend on the batch).
        """
        if not cache["train"]:
            raise ValueError("backward needs a training-mode forward pass")
        p = self.params
        g = {k: np.zeros_like(v) for k, v in p.items()}
        fd = cache["fd"]
        b, c, h, w = fd.shape
        hw = h * w

        gl_g = grads["logits_global"]
        gl_e = grads["logits_enh"]
        gl_l = grads["logits_local"]
        g["cls_g_w"] = gl_g.T @ cache["f_glo"]
        g["cls_g_b"] = gl_g.sum(0)
        g["cls_e_w"] = gl_e.T @ cache["f_eglo"]
        g["cls_e_b"] = gl_e.sum(0)
        g["cls_l_w"] = np.einsum("jbn,bjd->jnd", gl_l, cache["local"])
        g["cls_l_b"] = gl_l.sum(axis=1)

        d_eglo = grads["enh_embeddings"] + gl_e @ p["cls_e_w"]
        d_glo = grads["embeddings"] + gl_g @ p["cls_g_w"] + d_eglo
        d_local = grads["stripe_embeddings"] + np.einsum("jbn,jnd->bjd", gl_l, p["cls_l_w"])

        # enhancement branch: f_eglo - f_glo = mean_hw(v * bn_out)
        bn_out = cache["bn_out"]
        d_v = (d_eglo * bn_out.mean(axis=(2, 3))).sum(0)
        d_bn_out = np.broadcast_to((d_eglo * cache["v"])[:, :, None, None] / hw, bn_out.shape)
        d_fd, d_gamma, d_beta = enh.batch_norm_backward(d_bn_out, fd, self.bn, cache["stats"])
        g["bn_gamma"] = d_gamma + enh.bn_weight_vector_backward(d_v, p["bn_gamma"], self.bn_weight_mode)
        g["bn_beta"] = d_beta

        d_fd = d_fd + d_glo[:, :, None, None] / hw

        # local branch
        g["loc_w"] = np.einsum("bjl,bjd->ld", d_local, cache["stripes"])
        d_stripes = d_local @ p["loc_w"]
        for j, (lo, hi) in enumerate(cache["bounds"]):
            band_grad = np.zeros((b, c, (hi - lo) * w))
            np.put_along_axis(band_grad, cache["argmax"][j][..., None], d_stripes[:, j][..., None], axis=2)
            d_fd[:, :, lo:hi, :] += band_grad.reshape(b, c, hi - lo, w)

        dz3 = d_fd * (cache["z3"] > 0)
        g["fmn2_w"], g["fmn2_b"], dh2 = _pix_back(p["fmn2_w"], cache["h2"], dz3)
        dz2 = dh2 * (cache["z2"] > 0)
        g["fmn1_w"], g["fmn1_b"], dh1 = _pix_back(p["fmn1_w"], cache["h1"], dz2)
        dz1 = dh1 * (cache["z1"] > 0)
        vis = cache["vis"]
        x = cache["x"]
        for prefix, mask in (("vmn", vis), ("tmn", ~vis)):
            if mask.any():
                gw, gb, _ = _pix_back(p[prefix + "_w"], x[mask], dz1[mask])
                g[prefix + "_w"], g[prefix + "_b"] = gw, gb
        return g

    # -- inference ---------------------------------------------------------------

    def embed(self, images, modality, chunk: int = 256) -> "Features":
        """Inference-mode features for a set of images, in row order."""
        out = {k: [] for k in Features._fields}
        images = np.asarray(images)
        modality = np.asarray(modality)
        for lo in range(0, len(images), chunk):
            batch, cache = self.forward(images[lo:lo + chunk], modality[lo:lo + chunk], train=False)
            out["glo"].append(batch.embeddings)
            out["eglo"].append(batch.enh_embeddings)
            out["stripes"].append(batch.stripe_embeddings)
            out["maps"].append(cache["fd"])
        return Features(*(np.concatenate(out[k]) for k in Features._fields))


class Features(NamedTuple):
    glo: np.ndarray       # (N, D) average-pooled
    eglo: np.ndarray      # (N, D) enhanced
    stripes: np.ndarray   # (N, parts, D_loc) local features
    maps: np.ndarray      # (N, D, H, W) shared feature maps


__all__ = ["ToyModel", "ModelShape", "Features", "HEADS", "VISIBLE", "THERMAL"]
