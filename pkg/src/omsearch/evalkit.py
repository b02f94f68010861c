"""Ranking metrics and run analyses: per-movie mAP, cumulative R@k, cache
size statistics and the similarity profile of memory updates."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .engine import OTHER, MovieResult
from .features import MODALITIES
from .memory import MemoryUpdateEvent

log = logging.getLogger(__name__)

RECALL_KS = (1, 3, 5)


class EvalError(ValueError):
    pass


def average_precision(relevance: Sequence[int]) -> Optional[float]:
    """Mean precision at the ranks of the relevant items.

    Returns ``None`` when nothing is relevant; such queries are left out of
    any mean.
    """
    hits = 0
    total = 0.0
    for rank, rel in enumerate(relevance, start=1):
        if rel:
            hits += 1
            total += hits / rank
    if hits == 0:
        return None
    return total / hits


def _mean(values: Iterable[Optional[float]]) -> Optional[float]:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def movie_map(result: MovieResult) -> tuple[Optional[float], dict[str, Optional[float]]]:
    """mAP over the casts of one movie plus the per-cast AP."""
    missing = [i for i, truth in result.truth.items() if truth is None]
    if missing:
        raise EvalError(f"movie {result.movie_id}: {len(missing)} instances lack ground truth (e.g. {missing[0]!r})")
    per_cast = {}
    for cast in result.casts:
        ranking = result.ranking(cast)
        per_cast[cast] = average_precision([int(result.truth[i] == cast) for i, _ in ranking])
    skipped = [c for c, ap in per_cast.items() if ap is None]
    if skipped:
        log.info("movie %s: %d queries without relevant instances skipped", result.movie_id, len(skipped))
    return _mean(per_cast.values()), per_cast


def map_per_movie(results: Sequence[MovieResult]) -> tuple[dict[str, Optional[float]], Optional[float]]:
    """Per-movie mAP and their unweighted mean over movies."""
    per_movie = {r.movie_id: movie_map(r)[0] for r in results}
    return per_movie, _mean(per_movie.values())


def top_k_hit(scores: np.ndarray, true_index: int, k: int) -> bool:
    """Whether ``true_index`` is among the ``k`` best scores (ties to lower index)."""
    order = sorted(range(len(scores)), key=lambda j: (-scores[j], j))
    return true_index in order[:k]


def recall_at_k_curve(result: MovieResult, k: int) -> list[tuple[int, float]]:
    """Cumulative R@k after each finalization of a labeled cast instance.

    Each point is ``(finalization step, fraction of correct so far)``;
    distractors and unlabeled instances are skipped.
    """
    hits = 0
    seen = 0
    curve = []
    index = {c: j for j, c in enumerate(result.casts)}
    for iid in result.finalization_order():
        truth = result.truth.get(iid)
        if truth is None or truth == OTHER:
            continue
        seen += 1
        hits += top_k_hit(result.final_scores[iid], index[truth], k)
        curve.append((result.finalized_at[iid], hits / seen))
    return curve


def update_similarity_stats(update_log: Sequence[MemoryUpdateEvent]) -> dict[str, Optional[tuple[float, float]]]:
    """Mean and (population) std of each modality's similarity at update time.

    A modality contributes only from events where it was compared, i.e. the
    memory slot was already filled and the instance carried it.
    """
    out = {}
    for m, name in enumerate(MODALITIES):
        vals = [e.similarity.per_modality[m] for e in update_log if e.similarity.per_modality[m] is not None]
        out[name] = (float(np.mean(vals)), float(np.std(vals))) if vals else None
    return out


@dataclass
class EvalReport:
    method: str
    per_movie_map: dict[str, Optional[float]]
    mean_map: Optional[float]
    recall_curves: dict[str, dict[int, list[tuple[int, float]]]] = field(default_factory=dict)
    final_recall: dict[int, Optional[float]] = field(default_factory=dict)
    mean_cache_size: Optional[float] = None
    cache_series: dict[str, list[tuple[int, int, int]]] = field(default_factory=dict)
    update_similarity: dict[str, Optional[tuple[float, float]]] = field(default_factory=dict)
    online: bool = True

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "online": self.online,
            "per_movie_map": self.per_movie_map,
            "mean_map": self.mean_map,
            "final_recall": {str(k): v for k, v in self.final_recall.items()},
            "mean_cache_size": self.mean_cache_size,
            "update_similarity": {
                k: None if v is None else {"mean": v[0], "std": v[1]} for k, v in self.update_similarity.items()
            },
            "recall_curves": {
                movie: {str(k): [list(p) for p in curve] for k, curve in curves.items()}
                for movie, curves in self.recall_curves.items()
            },
            "cache_series": {movie: [list(p) for p in s] for movie, s in self.cache_series.items()},
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "EvalReport":
        return cls(
            method=obj["method"],
            per_movie_map=obj["per_movie_map"],
            mean_map=obj["mean_map"],
            recall_curves={
                movie: {int(k): [tuple(p) for p in curve] for k, curve in curves.items()}
                for movie, curves in obj.get("recall_curves", {}).items()
            },
            final_recall={int(k): v for k, v in obj.get("final_recall", {}).items()},
            mean_cache_size=obj.get("mean_cache_size"),
            cache_series={m: [tuple(p) for p in s] for m, s in obj.get("cache_series", {}).items()},
            update_similarity={
                k: None if v is None else (v["mean"], v["std"]) for k, v in obj.get("update_similarity", {}).items()
            },
            online=obj.get("online", True),
        )


def evaluate(results: Sequence[MovieResult], method: str | None = None) -> EvalReport:
    if not results:
        raise EvalError("no results to evaluate")
    per_movie, overall = map_per_movie(results)
    curves = {}
    final_recall = {}
    for k in RECALL_KS:
        finals = []
        for r in results:
            c = recall_at_k_curve(r, k)
            curves.setdefault(r.movie_id, {})[k] = c
            if c:
                finals.append(c[-1][1])
        final_recall[k] = _mean(finals)
    events = [e for r in results for e in r.update_log]
    with_series = [r for r in results if r.cache_series]
    return EvalReport(
        method=method or results[0].method,
        per_movie_map=per_movie,
        mean_map=overall,
        recall_curves=curves,
        final_recall=final_recall,
        mean_cache_size=_mean(r.mean_cache_size for r in with_series) if with_series else None,
        cache_series={r.movie_id: list(r.cache_series) for r in with_series},
        update_similarity=update_similarity_stats(events),
        online=all(r.online for r in results),
    )
