"""Synthetic bimodal identity data and PK batch sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InsufficientSamples
from ..losses import THERMAL, VISIBLE

DEFAULT_SHAPE = (4, 12, 4)


@dataclass
class SynthSample:
    image: np.ndarray
    identity: int
    modality: int
    camera: int


@dataclass
class SynthDataset:
    images: np.ndarray      # (N, C0, H0, W0)
    identity: np.ndarray
    modality: np.ndarray
    camera: np.ndarray

    def __len__(self):
        return self.images.shape[0]

    def __getitem__(self, i) -> SynthSample:
        return SynthSample(self.images[i], int(self.identity[i]), int(self.modality[i]), int(self.camera[i]))

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    @property
    def num_ids(self) -> int:
        return int(self.identity.max()) + 1

    def subset(self, idx) -> "SynthDataset":
        idx = np.asarray(idx)
        return SynthDataset(self.images[idx], self.identity[idx], self.modality[idx], self.camera[idx])


@dataclass(frozen=True)
class SynthWorld:
    """Fixed per-modality channel transforms shared by every identity."""

    shape: tuple[int, int, int]
    mix_visible: np.ndarray
    mix_thermal: np.ndarray
    bias_visible: np.ndarray
    bias_thermal: np.ndarray

    @classmethod
    def make(cls, shape=DEFAULT_SHAPE, seed: int = 0) -> "SynthWorld":
        rng = np.random.default_rng([seed, 0xC0FFEE])
        c = shape[0]
        mv = np.eye(c) + 0.3 * rng.standard_normal((c, c))
        # thermal mixes channels much more strongly: a different sensor response
        mt = rng.standard_normal((c, c))
        return cls(tuple(shape), mv, mt, 0.2 * rng.standard_normal(c), 0.2 * rng.standard_normal(c))

    def render(self, prototype: np.ndarray, modality: int) -> np.ndarray:
        mix, bias = ((self.mix_visible, self.bias_visible) if modality == VISIBLE
                     else (self.mix_thermal, self.bias_thermal))
        return np.einsum("oc,chw->ohw", mix, prototype) + bias[:, None, None]


def _vshift(img: np.ndarray, s: int) -> np.ndarray:
    if s == 0:
        return img
    out = np.empty_like(img)
    if s > 0:
        out[:, s:] = img[:, :-s]
        out[:, :s] = img[:, :1]
    else:
        out[:, :s] = img[:, -s:]
        out[:, s:] = img[:, -1:]
    return out


def _prototype(rng, shape, bands, separation, texture):
    c, h, w = shape
    colours = separation * rng.standard_normal((bands, c))
    rows = np.minimum(np.arange(h) * bands // h, bands - 1)
    return colours[rows].T[:, :, None] + texture * rng.standard_normal(shape)


def synth_dataset(num_ids: int = 20, per_id_per_modality: int = 10, seed: int = 0, *,
                  shape=DEFAULT_SHAPE, noise: float = 0.3, separation: float = 1.0,
                  max_shift: int = 1, bands: int = 4, texture: float = 0.2,
                  world: SynthWorld | None = None) -> SynthDataset:
    """Identity prototypes rendered through two modality transforms plus jitter.

    A prototype is ``bands`` horizontal blocks of constant colour (scale
    ``separation``) with a per-pixel texture of scale ``texture`` on top,
    a stand-in for a person's clothing parts from head to foot.

    Jitter is additive Gaussian noise of scale ``noise`` and a random vertical
    shift of up to ``max_shift`` rows (edge rows replicated). Rows are ordered
    identity-major, visible before thermal. Visible samples get camera 0 or 1,
    thermal samples camera 2 or 3.
    """
    if num_ids < 2:
        raise ValueError("need at least two identities")
    if per_id_per_modality < 2:
        raise ValueError("need at least two samples per identity per modality")
    world = world or SynthWorld.make(shape)
    rng = np.random.default_rng(seed)
    images, ids, mods, cams = [], [], [], []
    for ident in range(num_ids):
        proto = _prototype(rng, world.shape, bands, separation, texture)
        for mod in (VISIBLE, THERMAL):
            clean = world.render(proto, mod)
            for _ in range(per_id_per_modality):
                shift = int(rng.integers(-max_shift, max_shift + 1)) if max_shift else 0
                img = _vshift(clean, shift) + noise * rng.standard_normal(world.shape)
                images.append(img)
                ids.append(ident)
                mods.append(mod)
                cams.append(2 * mod + int(rng.integers(0, 2)))
    return SynthDataset(np.stack(images), np.array(ids), np.array(mods), np.array(cams))


def pk_sample(dataset: SynthDataset, P: int, K: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of a 2PK batch: P identities, each with K visible then K thermal rows."""
    cells = {}
    for ident in np.unique(dataset.identity):
        pair = []
        for mod in (VISIBLE, THERMAL):
            pair.append(np.flatnonzero((dataset.identity == ident) & (dataset.modality == mod)))
        cells[int(ident)] = pair
    eligible = [i for i, (v, t) in cells.items() if v.size >= K and t.size >= K]
    if len(eligible) < P:
        raise InsufficientSamples(f"only {len(eligible)} identities have >= {K} samples per modality, need {P}")
    chosen = rng.choice(np.array(eligible), size=P, replace=False)
    out = []
    for ident in chosen:
        for cell in cells[int(ident)]:
            out.extend(rng.choice(cell, size=K, replace=False))
    return np.asarray(out, dtype=np.int64)
