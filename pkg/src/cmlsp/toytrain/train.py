"""Training configuration, learning-rate schedule and the SGD loop."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..losses import COMPONENTS, LossConfig, total_loss_and_grad
from .data import SynthDataset, pk_sample
from .model import HEADS, ModelShape, ToyModel

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step",) + COMPONENTS + ("total", "lr")


@dataclass
class TrainConfig:
    P: int = 4
    K: int = 2
    parts: int = 3
    local_dim: int = 32
    m_g: float = 0.3
    m_l: float = 0.3
    eps: float = 1e-5
    lr_backbone: float = 0.01
    lr_head: float = 0.1
    lr_decay_every: int = 10
    lr_decay_factor: float = 10.0
    epochs: int = 30
    seed: int = 0
    momentum: float = 0.0
    sum_from: int = 1
    bn_weight_mode: str = "abs"
    bn_momentum: float = 0.1
    stream_dim: int = 16
    hidden_dim: int = 32
    embed_dim: int = 64
    # 0 means len(dataset) // (2 * P * K)
    batches_per_epoch: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.P < 2 or self.K < 1:
            raise ConfigError("need P >= 2 and K >= 1")
        if self.lr_backbone < 0 or self.lr_head < 0:
            raise ConfigError("learning rates must be non-negative")
        if self.lr_decay_factor <= 1:
            raise ConfigError("lr_decay_factor must exceed 1")
        if self.lr_decay_every < 1 or self.parts < 1 or self.epochs < 0:
            raise ConfigError("lr_decay_every and parts must be >= 1, epochs >= 0")
        if self.sum_from not in (1, 2):
            raise ConfigError("sum_from must be 1 or 2")
        if self.bn_weight_mode not in ("abs", "signed"):
            raise ConfigError("bn_weight_mode must be abs or signed")

    @property
    def loss(self) -> LossConfig:
        return LossConfig(m_g=self.m_g, m_l=self.m_l, sum_from=self.sum_from)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in dataclasses.fields(self))

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
            key, val = (t.strip() for t in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            conv = {"int": int, "float": float, "str": str}[types[key]]
            try:
                values[key] = conv(val)
            except ValueError as e:
                raise ConfigError(f"line {lineno}: bad value for {key}: {val!r}") from e
        return cls(**values)


def lr_at(epoch: int, cfg: TrainConfig) -> tuple[float, float]:
    """Step schedule: both rates divided by ``lr_decay_factor`` every ``lr_decay_every`` epochs."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    scale = cfg.lr_decay_factor ** -(epoch // cfg.lr_decay_every)
    return cfg.lr_backbone * scale, cfg.lr_head * scale


def build_model(cfg: TrainConfig, in_channels: int, num_classes: int) -> ToyModel:
    shape = ModelShape(in_channels=in_channels, stream_dim=cfg.stream_dim, hidden_dim=cfg.hidden_dim,
                       embed_dim=cfg.embed_dim, local_dim=cfg.local_dim, parts=cfg.parts,
                       num_classes=num_classes)
    return ToyModel(shape, seed=cfg.seed, eps=cfg.eps, bn_momentum=cfg.bn_momentum,
                    bn_weight_mode=cfg.bn_weight_mode)


def train_step(model: ToyModel, dataset: SynthDataset, idx: np.ndarray, cfg: TrainConfig,
               lr_backbone: float, lr_head: float, velocity: dict | None = None):
    """One SGD step on rows ``idx``; returns the LossReport computed before the update."""
    batch, cache = model.forward(dataset.images[idx], dataset.modality[idx], dataset.identity[idx],
                                 train=True)
    report, grads = total_loss_and_grad(batch, cfg.loss)
    pgrads = model.backward(cache, grads)
    for name, g in pgrads.items():
        lr = lr_head if name in HEADS else lr_backbone
        if cfg.momentum and velocity is not None:
            vel = velocity.setdefault(name, np.zeros_like(g))
            vel *= cfg.momentum
            vel += g
            g = vel
        model.params[name] -= lr * g
    return report


def train(model: ToyModel, dataset: SynthDataset, cfg: TrainConfig):
    """Run ``cfg.epochs`` epochs of PK batches; returns (log rows, model).

    Each log row holds the step index, the seven loss components, their
    total and the backbone learning rate. ``model`` is updated in place.
    """
    rng = np.random.default_rng([cfg.seed, 2])
    per_epoch = cfg.batches_per_epoch or max(1, len(dataset) // (2 * cfg.P * cfg.K))
    velocity: dict = {}
    rows = []
    step = 0
    for epoch in range(cfg.epochs):
        lr_b, lr_h = lr_at(epoch, cfg)
        for _ in range(per_epoch):
            idx = pk_sample(dataset, cfg.P, cfg.K, rng)
            report = train_step(model, dataset, idx, cfg, lr_b, lr_h, velocity)
            row = {"step": step, **{k: getattr(report, k) for k in COMPONENTS},
                   "total": report.total, "lr": lr_b}
            rows.append(row)
            step += 1
        if rows:
            log.debug("epoch %d: mean total %.4f", epoch,
                      np.mean([r["total"] for r in rows[-per_epoch:]]))
    return rows, model


def epoch_means(rows, per_epoch: int) -> np.ndarray:
    totals = np.array([r["total"] for r in rows])
    return totals[: len(totals) // per_epoch * per_epoch].reshape(-1, per_epoch).mean(axis=1)
