"""Multi-granularity fusion loss with analytic gradients.

Seven terms are summed: identity cross-entropy on global and enhanced-global
logits, a heterogeneous-centre triplet loss on global and enhanced-global
embeddings, per-stripe identity losses on visible and on thermal rows, and a
batch-hard triplet on stripe features.

Subgradient conventions: a hinge at exactly zero contributes zero gradient;
argmin/argmax ties resolve to the lowest row index; the gradient of a
Euclidean distance that is exactly zero is taken as zero.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import LabelOutOfRange, NeedTwoIdentities, ShapeMismatch

VISIBLE = 0
THERMAL = 1

COMPONENTS = ("id_g", "id_eg", "tri_g", "tri_eg", "id_lv", "id_lt", "pa_vt")


@dataclass
class LossConfig:
    m_g: float = 0.3
    m_l: float = 0.3
    # 1 sums the per-stripe terms over every stripe, 2 skips the top stripe
    sum_from: int = 1


@dataclass
class LabeledBatch:
    embeddings: np.ndarray          # (B, D) global
    enh_embeddings: np.ndarray      # (B, D) enhanced global
    stripe_embeddings: np.ndarray   # (B, parts, D_loc)
    logits_global: np.ndarray       # (B, N)
    logits_enh: np.ndarray          # (B, N)
    logits_local: np.ndarray        # (parts, B, N)
    identity: np.ndarray            # (B,) ints in [0, N)
    modality: np.ndarray            # (B,) VISIBLE / THERMAL

    def __post_init__(self):
        b = len(self.identity)
        self.identity = np.asarray(self.identity, dtype=np.int64)
        self.modality = np.asarray(self.modality, dtype=np.int64)
        checks = {
            "embeddings": self.embeddings.shape[0],
            "enh_embeddings": self.enh_embeddings.shape[0],
            "stripe_embeddings": self.stripe_embeddings.shape[0],
            "logits_global": self.logits_global.shape[0],
            "logits_enh": self.logits_enh.shape[0],
            "logits_local": self.logits_local.shape[1],
            "modality": self.modality.shape[0],
        }
        bad = {k: v for k, v in checks.items() if v != b}
        if bad:
            raise ShapeMismatch(f"batch size {b} disagrees with {bad}")

    # flat views used by gradient checks
    GRAD_FIELDS = ("embeddings", "enh_embeddings", "stripe_embeddings",
                   "logits_global", "logits_enh", "logits_local")


@dataclass
class LossReport:
    id_g: float
    id_eg: float
    tri_g: float
    tri_eg: float
    id_lv: float
    id_lt: float
    pa_vt: float
    total: float

    def as_dict(self) -> dict:
        return asdict(self)


# -- identity losses ---------------------------------------------------------

def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_labels(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ShapeMismatch(f"logits {logits.shape} vs labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise LabelOutOfRange(f"labels must lie in [0, {logits.shape[1]})")
    return labels


def id_loss_global_and_grad(logits, identity):
    logits = np.asarray(logits, dtype=np.float64)
    labels = _check_labels(logits, identity)
    n = logits.shape[0]
    if n == 0:
        return 0.0, np.zeros_like(logits)
    logp = _log_softmax(logits)
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return float(loss), grad / n


def id_loss_global(logits, identity) -> float:
    """Mean softmax cross-entropy against one-hot identity targets."""
    return id_loss_global_and_grad(logits, identity)[0]


def _stripe_range(parts: int, sum_from: int) -> range:
    if sum_from not in (1, 2):
        raise ValueError("sum_from must be 1 or 2")
    return range(sum_from - 1, parts)


def id_loss_local_and_grad(logits_local, identity, sum_from: int = 1):
    logits_local = np.asarray(logits_local, dtype=np.float64)
    grad = np.zeros_like(logits_local)
    total = 0.0
    for j in _stripe_range(logits_local.shape[0], sum_from):
        v, g = id_loss_global_and_grad(logits_local[j], identity)
        total += v
        grad[j] = g
    return total, grad


def id_loss_local(logits_local, identity, sum_from: int = 1) -> float:
    """Sum over stripes of the per-stripe identity loss."""
    return id_loss_local_and_grad(logits_local, identity, sum_from)[0]


# -- metric losses -----------------------------------------------------------

def _unit(diff: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(diff, axis=-1, keepdims=True)
    return np.divide(diff, norm, out=np.zeros_like(diff), where=norm > 0)


def _cells(identity: np.ndarray, modality: np.ndarray):
    ids = np.unique(identity)
    if ids.size < 2:
        raise NeedTwoIdentities(f"need at least two identities, got {ids.size}")
    for i in ids:
        for k in (VISIBLE, THERMAL):
            if not np.any((identity == i) & (modality == k)):
                raise ShapeMismatch(f"identity {i} has no samples of modality {k}")
    return ids


def hetero_center_triplet_and_grad(embeddings, identity, modality, m_g: float):
    x = np.asarray(embeddings, dtype=np.float64)
    identity = np.asarray(identity)
    modality = np.asarray(modality)
    ids = _cells(identity, modality)
    p = ids.size
    # centres: rows 0..p-1 visible, p..2p-1 thermal
    members = []
    for k in (VISIBLE, THERMAL):
        for i in ids:
            members.append(np.flatnonzero((identity == i) & (modality == k)))
    centres = np.stack([x[m].mean(axis=0) for m in members])
    owner = np.tile(np.arange(p), 2)

    diff = centres[:, None, :] - centres[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    unit = _unit(diff)

    loss = 0.0
    g_centres = np.zeros_like(centres)
    for a in range(2 * p):
        pos = (a + p) % (2 * p)
        neg_cand = np.flatnonzero(owner != owner[a])
        neg = neg_cand[np.argmin(dist[a, neg_cand])]
        term = m_g + dist[a, pos] - dist[a, neg]
        if term > 0:
            loss += term
            g_centres[a] += unit[a, pos] - unit[a, neg]
            g_centres[pos] -= unit[a, pos]
            g_centres[neg] += unit[a, neg]

    grad = np.zeros_like(x)
    for c, m in enumerate(members):
        grad[m] += g_centres[c] / m.size
    return float(loss), grad


def hetero_center_triplet(embeddings, identity, modality, m_g: float) -> float:
    """Triplet hinge on per-identity, per-modality embedding centres.

    Each centre is an anchor; its positive is the same identity's centre in
    the other modality, its negative the nearest centre of any other identity
    in either modality. Terms are summed over all 2P anchors.
    """
    return hetero_center_triplet_and_grad(embeddings, identity, modality, m_g)[0]


def part_align_loss_and_grad(stripe_embeddings, identity, modality, m_l: float, sum_from: int = 1):
    f = np.asarray(stripe_embeddings, dtype=np.float64)
    identity = np.asarray(identity)
    _cells(identity, np.asarray(modality))
    b, parts, _ = f.shape
    same = identity[:, None] == identity[None, :]
    pos_mask = same & ~np.eye(b, dtype=bool)
    neg_mask = ~same

    loss = 0.0
    grad = np.zeros_like(f)
    for j in _stripe_range(parts, sum_from):
        fj = f[:, j, :]
        diff = fj[:, None, :] - fj[None, :, :]
        dist = np.linalg.norm(diff, axis=-1)
        unit = _unit(diff)
        for a in range(b):
            pos_cand = np.flatnonzero(pos_mask[a])
            if pos_cand.size == 0:
                continue
            neg_cand = np.flatnonzero(neg_mask[a])
            pos = pos_cand[np.argmax(dist[a, pos_cand])]
            neg = neg_cand[np.argmin(dist[a, neg_cand])]
            term = m_l + dist[a, pos] - dist[a, neg]
            if term > 0:
                loss += term
                grad[a, j] += unit[a, pos] - unit[a, neg]
                grad[pos, j] -= unit[a, pos]
                grad[neg, j] += unit[a, neg]
    return float(loss), grad


def part_align_loss(stripe_embeddings, identity, modality, m_l: float, sum_from: int = 1) -> float:
    """Batch-hard triplet on every stripe, summed over anchors and stripes."""
    return part_align_loss_and_grad(stripe_embeddings, identity, modality, m_l, sum_from)[0]


# -- total -------------------------------------------------------------------

def _id_term(logits_field):
    def term(batch, cfg):
        v, g = id_loss_global_and_grad(getattr(batch, logits_field), batch.identity)
        return v, {logits_field: g}
    return term


def _center_term(emb_field):
    def term(batch, cfg):
        v, g = hetero_center_triplet_and_grad(getattr(batch, emb_field), batch.identity, batch.modality, cfg.m_g)
        return v, {emb_field: g}
    return term


def _local_id_term(modality):
    def term(batch, cfg):
        mask = batch.modality == modality
        v, g_sub = id_loss_local_and_grad(batch.logits_local[:, mask], batch.identity[mask], cfg.sum_from)
        g = np.zeros_like(batch.logits_local, dtype=np.float64)
        g[:, mask] = g_sub
        return v, {"logits_local": g}
    return term


def _part_align_term(batch, cfg):
    v, g = part_align_loss_and_grad(batch.stripe_embeddings, batch.identity, batch.modality, cfg.m_l, cfg.sum_from)
    return v, {"stripe_embeddings": g}


_TERMS = {
    "id_g": _id_term("logits_global"),
    "id_eg": _id_term("logits_enh"),
    "tri_g": _center_term("embeddings"),
    "tri_eg": _center_term("enh_embeddings"),
    "id_lv": _local_id_term(VISIBLE),
    "id_lt": _local_id_term(THERMAL),
    "pa_vt": _part_align_term,
}


def component_value_and_grad(batch: LabeledBatch, name: str, cfg: LossConfig | None = None):
    """One term: ``(value, {field: grad})``."""
    if name not in _TERMS:
        raise KeyError(f"unknown loss component {name!r}")
    return _TERMS[name](batch, cfg or LossConfig())


def component_values_and_grads(batch: LabeledBatch, cfg: LossConfig | None = None):
    """Per-term ``{name: (value, {field: grad})}`` for the seven terms."""
    cfg = cfg or LossConfig()
    return {name: _TERMS[name](batch, cfg) for name in COMPONENTS}


def total_loss(batch: LabeledBatch, cfg: LossConfig | None = None) -> LossReport:
    comps = component_values_and_grads(batch, cfg)
    values = {k: comps[k][0] for k in COMPONENTS}
    total = 0.0
    for k in COMPONENTS:
        total += values[k]
    return LossReport(**values, total=total)


def loss_backward(batch: LabeledBatch, cfg: LossConfig | None = None) -> dict[str, np.ndarray]:
    """Gradient of the total loss w.r.t. every embedding and logit field."""
    comps = component_values_and_grads(batch, cfg)
    grads = {f: np.zeros_like(getattr(batch, f), dtype=np.float64) for f in LabeledBatch.GRAD_FIELDS}
    for k in COMPONENTS:
        for field_name, g in comps[k][1].items():
            grads[field_name] += g
    return grads


def total_loss_and_grad(batch: LabeledBatch, cfg: LossConfig | None = None):
    comps = component_values_and_grads(batch, cfg)
    values = {k: comps[k][0] for k in COMPONENTS}
    grads = {f: np.zeros_like(getattr(batch, f), dtype=np.float64) for f in LabeledBatch.GRAD_FIELDS}
    total = 0.0
    for k in COMPONENTS:
        total += values[k]
        for field_name, g in comps[k][1].items():
            grads[field_name] += g
    return LossReport(**values, total=total), grads
