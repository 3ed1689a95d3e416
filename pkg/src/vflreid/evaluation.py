"""Retrieval evaluation: distances, cross-camera ranking, CMC Top-k and mAP."""

from __future__ import annotations

import math

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .data import FeatureRecord
from .errors import DimensionError, DomainError, ProtocolError

METRICS = ("euclidean", "cosine")


def _row_distances(q: np.ndarray, G: np.ndarray, metric: str) -> np.ndarray:
    if metric == "euclidean":
        diff = G - q[None, :]
        return np.sqrt((diff * diff).sum(axis=1))
    if metric == "cosine":
        qn = np.sqrt((q * q).sum())
        gn = np.sqrt((G * G).sum(axis=1))
        if qn == 0 or np.any(gn == 0):
            raise DomainError("cosine distance is undefined for zero vectors")
        return 1.0 - (G @ q) / (gn * qn)
    raise ValueError(f"metric must be one of {METRICS}, got {metric!r}")


def distance(a, b, metric: str = "cosine") -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DimensionError(f"vectors differ in width: {a.size} vs {b.size}")
    return float(_row_distances(a, b[None, :], metric)[0])


@dataclass
class EmbeddingSet:
    ids: list[str]
    cameras: list[str | None]
    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            self.vectors = self.vectors.reshape(len(self.ids), -1)
        if not (len(self.ids) == len(self.cameras) == self.vectors.shape[0]):
            raise DimensionError(
                f"ids ({len(self.ids)}), cameras ({len(self.cameras)}) and vectors "
                f"({self.vectors.shape[0]}) must have equal length"
            )
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("embedding vectors must be finite")

    @classmethod
    def from_records(cls, records: Sequence[FeatureRecord]) -> "EmbeddingSet":
        if not records:
            return cls([], [], np.zeros((0, 0)))
        return cls(
            [r.id for r in records],
            [r.camera for r in records],
            np.stack([r.vector for r in records]),
        )

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i: int) -> FeatureRecord:
        return FeatureRecord(self.ids[i], self.vectors[i], self.cameras[i])

    @property
    def width(self) -> int:
        return self.vectors.shape[1]

    def scaled(self, factor: float) -> "EmbeddingSet":
        return EmbeddingSet(list(self.ids), list(self.cameras), self.vectors * factor)


@dataclass
class RankedResult:
    query_index: int
    order: np.ndarray
    matches: np.ndarray
    distances: np.ndarray

    @property
    def first_match_rank(self) -> int | None:
        """1-based rank of the first correct match, or ``None``."""
        hits = np.flatnonzero(self.matches)
        return int(hits[0]) + 1 if hits.size else None


def rank_query(
    q: FeatureRecord,
    gallery: EmbeddingSet,
    metric: str = "cosine",
    query_index: int = 0,
) -> RankedResult:
    """Rank the gallery for one query.

    When the query and gallery carry camera tags, gallery items sharing both
    identity and camera with the query are dropped. Ordering is by ascending
    distance, ties by ascending gallery index.
    """
    vec = np.asarray(q.vector, dtype=np.float64).reshape(-1)
    if len(gallery) and vec.size != gallery.width:
        raise DimensionError(f"query width {vec.size} differs from gallery width {gallery.width}")
    ids = np.asarray(gallery.ids, dtype=object)
    eligible = np.ones(len(gallery), dtype=bool)
    if q.camera is not None:
        cams = np.asarray(gallery.cameras, dtype=object)
        eligible &= ~((ids == q.id) & (cams == q.camera))
    idx = np.flatnonzero(eligible)
    if idx.size == 0:
        raise ProtocolError(f"query {query_index} ({q.id!r}) has no eligible gallery items")
    d = _row_distances(vec, gallery.vectors[idx], metric)
    perm = np.argsort(d, kind="stable")
    order = idx[perm]
    return RankedResult(query_index, order, ids[order] == q.id, d[perm])


def rank_all(queries: EmbeddingSet, gallery: EmbeddingSet, metric: str = "cosine") -> list[RankedResult]:
    return [rank_query(queries[i], gallery, metric, i) for i in range(len(queries))]


def cmc_top_k(results: Sequence[RankedResult], k: int) -> float:
    """Fraction of queries with a correct match within the first ``k`` ranks."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not results:
        return 0.0
    hits = 0
    for r in results:
        rank = r.first_match_rank
        if rank is not None and rank <= k:
            hits += 1
    return hits / len(results)


def cmc_curve(results: Sequence[RankedResult], max_rank: int) -> np.ndarray:
    return np.array([cmc_top_k(results, k) for k in range(1, max_rank + 1)])


def average_precision(result: RankedResult) -> float:
    hits = np.flatnonzero(result.matches)
    if hits.size == 0:
        raise ProtocolError(f"query {result.query_index} has no relevant gallery items")
    # fsum is correctly rounded, so the value does not depend on summation order
    precisions = (np.arange(hits.size) + 1) / (hits + 1)
    return math.fsum(precisions.tolist()) / hits.size


def mean_average_precision(results: Sequence[RankedResult]) -> float:
    if not results:
        raise ProtocolError("no queries to evaluate")
    return math.fsum(average_precision(r) for r in results) / len(results)


@dataclass
class EvalReport:
    top1: float
    top5: float
    map: float
    n_query: int
    n_gallery: int
    metric: str
    extra_top_k: dict[int, float] | None = None

    def record(self) -> str:
        parts = [f"top1={self.top1:.6f}", f"top5={self.top5:.6f}"]
        for k, v in sorted((self.extra_top_k or {}).items()):
            parts.append(f"top{k}={v:.6f}")
        parts += [f"map={self.map:.6f}", f"n_query={self.n_query}", f"n_gallery={self.n_gallery}", f"metric={self.metric}"]
        return " ".join(parts)

    def table(self) -> str:
        rows = [("Top-1", self.top1), ("Top-5", self.top5)]
        rows += [(f"Top-{k}", v) for k, v in sorted((self.extra_top_k or {}).items())]
        rows.append(("mAP", self.map))
        lines = [f"{'metric':<8} {'value':>8}", "-" * 17]
        lines += [f"{name:<8} {100 * v:>7.2f}%" for name, v in rows]
        lines.append(f"queries={self.n_query} gallery={self.n_gallery} distance={self.metric}")
        return "\n".join(lines)


def evaluate(
    queries: EmbeddingSet,
    gallery: EmbeddingSet,
    metric: str = "cosine",
    top_k: Iterable[int] = (),
) -> EvalReport:
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}, got {metric!r}")
    if len(queries) and len(gallery) and queries.width != gallery.width:
        raise DimensionError(f"query width {queries.width} differs from gallery width {gallery.width}")
    results = rank_all(queries, gallery, metric)
    extra = {int(k): cmc_top_k(results, int(k)) for k in top_k if int(k) not in (1, 5)}
    return EvalReport(
        top1=cmc_top_k(results, 1),
        top5=cmc_top_k(results, 5),
        map=mean_average_precision(results),
        n_query=len(queries),
        n_gallery=len(gallery),
        metric=metric,
        extra_top_k=extra or None,
    )
