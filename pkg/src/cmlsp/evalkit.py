"""Retrieval metrics (CMC, mAP, mINP) and the repeated random-split protocol.

Distance ties are broken by ascending gallery index, so every metric is a
pure function of the ranking.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .alignment import pairwise_align_distances
from .errors import DimMismatch, NoMatchForQuery, ShapeMismatch
from .losses import THERMAL, VISIBLE
from .numerics import horizontal_max_pool


@dataclass
class EmbeddingBank:
    vectors: np.ndarray
    identity: np.ndarray
    modality: np.ndarray
    camera: np.ndarray
    # optional per-row inputs for alignment distances: stripe sets
    # (N x parts x dim) or raw C x H x W maps that get pooled on demand
    stripes: np.ndarray | None = None
    maps: np.ndarray | None = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.identity = np.asarray(self.identity, dtype=np.int64)
        self.modality = np.asarray(self.modality, dtype=np.int64)
        self.camera = np.asarray(self.camera, dtype=np.int64)
        n = self.vectors.shape[0]
        if self.vectors.ndim != 2:
            raise ShapeMismatch("bank vectors must be N x D")
        if not (len(self.identity) == len(self.modality) == len(self.camera) == n):
            raise ShapeMismatch("bank label arrays must match the number of vectors")
        if self.stripes is not None:
            self.stripes = np.asarray(self.stripes, dtype=np.float64)
            if self.stripes.ndim != 3 or self.stripes.shape[0] != n:
                raise ShapeMismatch("bank stripes must be N x parts x dim")
        if self.maps is not None:
            self.maps = np.asarray(self.maps, dtype=np.float64)
            if self.maps.ndim != 4 or self.maps.shape[0] != n:
                raise ShapeMismatch("bank maps must be N x C x H x W")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("bank vectors must be finite")

    def __len__(self):
        return self.vectors.shape[0]

    def subset(self, idx) -> "EmbeddingBank":
        idx = np.asarray(idx, dtype=np.int64)
        stripes = None if self.stripes is None else self.stripes[idx]
        maps = None if self.maps is None else self.maps[idx]
        return EmbeddingBank(self.vectors[idx], self.identity[idx], self.modality[idx],
                             self.camera[idx], stripes, maps)

    def stripe_sets(self, parts: int | None = None) -> np.ndarray:
        """Stored stripe sets, or ``parts`` stripes max-pooled from the maps."""
        if self.stripes is not None:
            if parts is not None and parts != self.stripes.shape[1]:
                raise DimMismatch(f"bank holds {self.stripes.shape[1]} stripes, asked for {parts}")
            return self.stripes
        if self.maps is None:
            raise ValueError("alignment distances need stripe sets or feature maps in the bank")
        return stripe_bank(self.maps, 3 if parts is None else parts)


@dataclass
class RankingResult:
    cmc: np.ndarray
    map: float
    minp: float

    def rank(self, k: int) -> float:
        """CMC at 1-based rank ``k`` (saturates past the gallery size)."""
        return float(self.cmc[min(k, len(self.cmc)) - 1])


REPORT_RANKS = (1, 10, 20)
METRICS = ("rank1", "rank10", "rank20", "map", "minp")


@dataclass
class ProtocolResult:
    mean: dict[str, float]
    std: dict[str, float]
    runs: list[RankingResult] = field(default_factory=list)


def euclidean_distances(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.sqrt(np.maximum(sq, 0.0))


def pairwise_distances(query: EmbeddingBank, gallery: EmbeddingBank, mode: str = "euclidean",
                       parts: int | None = None, align_weight: float = 1.0) -> np.ndarray:
    """Q x G distances.

    ``mode`` is ``euclidean`` on the vectors, ``align`` for the stripe
    alignment distance (see ``EmbeddingBank.stripe_sets``), or ``both`` for
    their sum with the alignment part weighted by ``align_weight``.
    """
    if mode not in ("euclidean", "align", "both"):
        raise ValueError(f"unknown distance mode {mode!r}")
    dist = 0.0
    if mode in ("euclidean", "both"):
        if query.vectors.shape[1] != gallery.vectors.shape[1]:
            raise DimMismatch(f"query dim {query.vectors.shape[1]} != gallery dim {gallery.vectors.shape[1]}")
        dist = euclidean_distances(query.vectors, gallery.vectors)
    if mode in ("align", "both"):
        sq, sg = query.stripe_sets(parts), gallery.stripe_sets(parts)
        if sq.shape[1:] != sg.shape[1:]:
            raise DimMismatch(f"stripe shapes differ: {sq.shape[1:]} vs {sg.shape[1:]}")
        weight = 1.0 if mode == "align" else align_weight
        dist = dist + weight * pairwise_align_distances(sq, sg)
    return dist


def stripe_bank(maps: np.ndarray, parts: int) -> np.ndarray:
    return np.stack([horizontal_max_pool(m, parts) for m in maps])


def _match_rows(dist, q_ids, g_ids, q_cams=None, g_cams=None) -> list[np.ndarray]:
    """Per query, the boolean match vector in ranked order (same-camera matches removed)."""
    dist = np.asarray(dist, dtype=np.float64)
    q_ids = np.asarray(q_ids)
    g_ids = np.asarray(g_ids)
    if dist.shape != (len(q_ids), len(g_ids)):
        raise ShapeMismatch(f"distance matrix {dist.shape} vs labels ({len(q_ids)}, {len(g_ids)})")
    order = np.argsort(dist, axis=1, kind="stable")
    rows = []
    for qi in range(dist.shape[0]):
        ranked = order[qi]
        keep = np.ones(len(ranked), dtype=bool)
        if q_cams is not None and g_cams is not None:
            keep = ~((g_ids[ranked] == q_ids[qi]) & (np.asarray(g_cams)[ranked] == q_cams[qi]))
        matches = g_ids[ranked][keep] == q_ids[qi]
        if not matches.any():
            raise NoMatchForQuery(f"query {qi} (identity {q_ids[qi]}) has no true match in the gallery")
        rows.append(matches)
    return rows


def _cmc_from_rows(rows, max_rank) -> np.ndarray:
    out = np.zeros(max_rank)
    for m in rows:
        first = int(np.argmax(m))
        if first < max_rank:
            out[first:] += 1
    return out / len(rows)


def _ap(m: np.ndarray) -> float:
    hits = np.flatnonzero(m)
    return float(np.mean(np.arange(1, hits.size + 1) / (hits + 1)))


def _inp(m: np.ndarray) -> float:
    hits = np.flatnonzero(m)
    return hits.size / float(hits[-1] + 1)


def cmc(dist, q_ids, g_ids, max_rank: int | None = None, q_cams=None, g_cams=None) -> np.ndarray:
    """``cmc[k-1]``: fraction of queries with a correct match among the top ``k``."""
    rows = _match_rows(dist, q_ids, g_ids, q_cams, g_cams)
    return _cmc_from_rows(rows, max_rank or np.shape(dist)[1])


def mean_average_precision(dist, q_ids, g_ids, q_cams=None, g_cams=None) -> float:
    rows = _match_rows(dist, q_ids, g_ids, q_cams, g_cams)
    return float(np.mean([_ap(m) for m in rows]))


def mean_inverse_negative_penalty(dist, q_ids, g_ids, q_cams=None, g_cams=None) -> float:
    """Mean over queries of (#true matches) / (rank of the last true match)."""
    rows = _match_rows(dist, q_ids, g_ids, q_cams, g_cams)
    return float(np.mean([_inp(m) for m in rows]))


def evaluate(dist, q_ids, g_ids, q_cams=None, g_cams=None, max_rank: int | None = None) -> RankingResult:
    rows = _match_rows(dist, q_ids, g_ids, q_cams, g_cams)
    return RankingResult(
        cmc=_cmc_from_rows(rows, max_rank or np.shape(dist)[1]),
        map=float(np.mean([_ap(m) for m in rows])),
        minp=float(np.mean([_inp(m) for m in rows])),
    )


def summarize(result: RankingResult) -> dict[str, float]:
    return {"rank1": result.rank(1), "rank10": result.rank(10), "rank20": result.rank(20),
            "map": result.map, "minp": result.minp}


# -- protocol ----------------------------------------------------------------

Splitter = Callable[[EmbeddingBank, np.random.Generator], tuple[np.ndarray, np.ndarray]]


@dataclass
class CrossModalSplitter:
    """Queries from one modality, a random gallery drawn from the other.

    ``gallery_shots`` samples per identity go into the gallery; ``None`` uses
    every gallery-modality sample, which makes the split deterministic.
    """

    direction: str = "t2v"
    gallery_shots: int | None = 1

    def __call__(self, bank: EmbeddingBank, rng: np.random.Generator):
        if self.direction == "t2v":
            q_mod, g_mod = THERMAL, VISIBLE
        elif self.direction == "v2t":
            q_mod, g_mod = VISIBLE, THERMAL
        else:
            raise ValueError(f"unknown direction {self.direction!r}")
        q_idx = np.flatnonzero(bank.modality == q_mod)
        g_pool = np.flatnonzero(bank.modality == g_mod)
        if self.gallery_shots is None:
            return q_idx, g_pool
        g_idx = []
        for ident in np.unique(bank.identity[g_pool]):
            cand = g_pool[bank.identity[g_pool] == ident]
            take = min(self.gallery_shots, cand.size)
            g_idx.extend(np.sort(rng.choice(cand, size=take, replace=False)))
        return q_idx, np.asarray(g_idx, dtype=np.int64)


@dataclass
class RoleSplitter:
    """First ``n_query`` rows are queries; the gallery is sampled from the rest.

    Used when query and gallery come from separate files and are stacked into
    one bank. ``gallery_shots=None`` keeps the whole gallery.
    """

    n_query: int
    gallery_shots: int | None = 1

    def __call__(self, bank: EmbeddingBank, rng: np.random.Generator):
        q_idx = np.arange(self.n_query)
        pool = np.arange(self.n_query, len(bank))
        if self.gallery_shots is None:
            return q_idx, pool
        g_idx = []
        for ident in np.unique(bank.identity[pool]):
            cand = pool[bank.identity[pool] == ident]
            g_idx.extend(np.sort(rng.choice(cand, size=min(self.gallery_shots, cand.size), replace=False)))
        return q_idx, np.asarray(g_idx, dtype=np.int64)


def concat_banks(a: EmbeddingBank, b: EmbeddingBank) -> EmbeddingBank:
    def cat(x, y):
        return None if x is None or y is None else np.concatenate([x, y])
    return EmbeddingBank(np.concatenate([a.vectors, b.vectors]), np.concatenate([a.identity, b.identity]),
                         np.concatenate([a.modality, b.modality]), np.concatenate([a.camera, b.camera]),
                         cat(a.stripes, b.stripes), cat(a.maps, b.maps))


def protocol_run(bank: EmbeddingBank, splitter: Splitter, repeats: int = 10, seed: int = 0,
                 distance: Callable[[EmbeddingBank, EmbeddingBank], np.ndarray] | None = None,
                 rerank: Callable | None = None, use_cameras: bool = False) -> ProtocolResult:
    """Evaluate ``repeats`` random splits and report per-metric mean and std.

    ``rerank`` takes ``(dist_qg, dist_qq, dist_gg)`` and returns a new Q x G
    matrix; it only touches the distance stage.
    """
    distance = distance or pairwise_distances
    rng = np.random.default_rng(seed)
    runs = []
    for _ in range(repeats):
        q_idx, g_idx = splitter(bank, rng)
        q, g = bank.subset(q_idx), bank.subset(g_idx)
        dist = distance(q, g)
        if rerank is not None:
            dist = rerank(dist, distance(q, q), distance(g, g))
        cams = (q.camera, g.camera) if use_cameras else (None, None)
        runs.append(evaluate(dist, q.identity, g.identity, *cams))
    table = np.array([[summarize(r)[m] for m in METRICS] for r in runs])
    mean = dict(zip(METRICS, table.mean(axis=0).tolist()))
    std = dict(zip(METRICS, table.std(axis=0).tolist()))
    return ProtocolResult(mean, std, runs)
