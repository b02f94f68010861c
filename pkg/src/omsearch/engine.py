"""Online search loop over a movie stream, plus the face-matching and
two-step baselines it is compared against."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .cache import UncertainCache
from .controller import ManualController
from .features import (
    BODY,
    AUDIO,
    FACE,
    MODALITIES,
    DimensionError,
    MultiModalFeature,
    ScoreBreakdown,
    score_from_dots,
)
from .memory import DEFAULT_MU, MemoryBank, MemoryUpdateEvent, init_memory

log = logging.getLogger(__name__)

# ground-truth label of a gallery instance that belongs to no listed cast
OTHER = "<other>"


class StreamError(ValueError):
    pass


@dataclass
class Instance:
    instance_id: str
    feature: MultiModalFeature
    truth: Optional[str] = None  # cast id, OTHER, or None when unlabeled


@dataclass
class MovieStream:
    movie_id: str
    casts: list[str]
    portraits: dict[str, MultiModalFeature]
    instances: list[Instance]

    @property
    def d(self) -> int:
        return self.portraits[self.casts[0]].d

    @property
    def truth(self) -> dict[str, Optional[str]]:
        return {x.instance_id: x.truth for x in self.instances}

    def validate(self) -> None:
        if not self.casts:
            raise StreamError(f"movie {self.movie_id}: empty cast list")
        if len(set(self.casts)) != len(self.casts):
            raise StreamError(f"movie {self.movie_id}: duplicate cast id")
        d = self.d
        seen = set()
        for x in self.instances:
            if x.instance_id in seen:
                raise StreamError(f"movie {self.movie_id}: duplicate instance id {x.instance_id!r}")
            seen.add(x.instance_id)
            if x.feature.d != d:
                raise DimensionError(f"instance {x.instance_id!r} has d={x.feature.d}, expected {d}")
            if x.truth not in (None, OTHER) and x.truth not in self.portraits:
                raise StreamError(f"instance {x.instance_id!r} has unknown cast {x.truth!r}")


@dataclass(frozen=True)
class EngineConfig:
    """Knobs of the online engine.

    ``gates_enabled=False`` forces G1 and G2 to zero; ``use_cache=False``
    skips G2 entirely so unresolved instances are finalized on arrival.
    """

    mu: float = DEFAULT_MU
    first_write: bool = True
    use_cache: bool = True
    modalities: tuple[str, ...] = MODALITIES
    gates_enabled: bool = True

    def __post_init__(self):
        bad = [m for m in self.modalities if m not in MODALITIES]
        if bad:
            raise ValueError(f"unknown modalities {bad}")
        object.__setattr__(self, "modalities", tuple(m for m in MODALITIES if m in self.modalities))


STRICT_BASELINE = EngineConfig(mu=0.0, first_write=False, use_cache=False,
                               modalities=("face",), gates_enabled=False)


@dataclass
class StepTrace:
    t: int
    instance_id: str
    scores: list[ScoreBreakdown]
    g1: list[int]
    g2: Optional[int]
    g3: dict[str, int]
    updated_cast: Optional[str]
    pushed: bool
    popped: list[str]
    finalized: list[str]
    controller: str

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "instance_id": self.instance_id,
            "scores": [s.to_dict() for s in self.scores],
            "g1": self.g1,
            "g2": self.g2,
            "g3": self.g3,
            "updated_cast": self.updated_cast,
            "pushed": self.pushed,
            "popped": self.popped,
            "finalized": self.finalized,
            "controller": self.controller,
        }


@dataclass
class Finalization:
    step: int
    scores: list[ScoreBreakdown]

    @property
    def combined(self) -> np.ndarray:
        return np.array([s.combined for s in self.scores])


@dataclass
class DecisionTrace:
    steps: list[StepTrace] = field(default_factory=list)
    # insertion order is finalization order
    finalized: dict[str, Finalization] = field(default_factory=dict)
    flushed: list[str] = field(default_factory=list)

    def finalize(self, instance_id: str, step: int, scores: list[ScoreBreakdown]) -> None:
        if instance_id in self.finalized:
            raise StreamError(f"instance {instance_id!r} finalized twice")
        self.finalized[instance_id] = Finalization(step, list(scores))


@dataclass
class MovieResult:
    movie_id: str
    method: str
    casts: list[str]
    final_scores: dict[str, np.ndarray]  # instance id -> per-cast score
    finalized_at: dict[str, int]
    truth: dict[str, Optional[str]]
    trace: Optional[DecisionTrace] = None
    update_log: list[MemoryUpdateEvent] = field(default_factory=list)
    cache_series: list[tuple[int, int, int]] = field(default_factory=list)  # (t, total, current)
    online: bool = True
    memory: Optional[dict] = None
    # finalization order when no trace is attached (e.g. rebuilt from files)
    order: Optional[list[str]] = None

    def ranking(self, cast: str) -> list[tuple[str, float]]:
        """Instances in descending score for ``cast``.

        Ties go to the earlier finalization, then the smaller instance id.
        """
        j = self.casts.index(cast)
        keys = sorted(self.final_scores, key=lambda i: (-self.final_scores[i][j], self.finalized_at[i], i))
        return [(i, float(self.final_scores[i][j])) for i in keys]

    def rankings(self) -> dict[str, list[tuple[str, float]]]:
        return {c: self.ranking(c) for c in self.casts}

    def finalization_order(self) -> list[str]:
        if self.trace is not None:
            return list(self.trace.finalized)
        if self.order is not None:
            return list(self.order)
        return sorted(self.finalized_at, key=lambda i: (self.finalized_at[i], i))

    @property
    def mean_cache_size(self) -> float:
        if not self.cache_series:
            return 0.0
        return float(np.mean([cur for _, _, cur in self.cache_series]))


class OnlineSearcher:
    """Run state of one movie: memory, cache, controller and step counter."""

    def __init__(self, stream: MovieStream, controller=None, config: EngineConfig | None = None):
        self.stream = stream
        self.controller = controller or ManualController()
        self.config = config or EngineConfig()
        self.bank: MemoryBank = init_memory(
            [(c, stream.portraits[c]) for c in stream.casts],
            mu=self.config.mu,
            first_write=self.config.first_write,
        )
        self.cache = UncertainCache()
        self.trace = DecisionTrace()
        self.cache_series: list[tuple[int, int, int]] = []
        self.t = 0
        self._seen: set[str] = set()

    def step(self, instance: Instance) -> StepTrace:
        if instance.instance_id in self._seen:
            raise StreamError(f"duplicate instance id {instance.instance_id!r}")
        if instance.feature.d != self.bank.d:
            raise DimensionError(f"instance {instance.instance_id!r} has d={instance.feature.d}, memory has d={self.bank.d}")
        self._seen.add(instance.instance_id)
        cfg, ctrl, bank, t = self.config, self.controller, self.bank, self.t
        f = instance.feature.restrict(cfg.modalities)
        iid = instance.instance_id

        scores = bank.predict(f)
        n = len(scores)
        g1 = ctrl.gate1(bank, f, scores) if cfg.gates_enabled else [0] * n
        g2 = None
        g3: dict[str, int] = {}
        popped: list[str] = []
        finalized: list[str] = []
        updated = None
        pushed = False

        firing = [j for j in range(n) if g1[j]]
        if firing:
            best = firing[0]
            for j in firing[1:]:
                if scores[j].combined > scores[best].combined:
                    best = j
            bank.update(best, f, t, scores[best])
            updated = bank.casts[best]
            self.trace.finalize(iid, t, scores)
            finalized.append(iid)
            if cfg.use_cache and len(self.cache):
                def release(entry_scores, dt):
                    return ctrl.gate3(entry_scores, dt)
                ages = {e.instance_id: t - e.inserted_at for e in self.cache.entries}
                out, _ = self.cache.recall(bank, t, release)
                out_ids = {e.instance_id for e, _ in out}
                g3 = {i: int(i in out_ids) for i in ages}
                for entry, entry_scores in out:
                    self.trace.finalize(entry.instance_id, t, entry_scores)
                    popped.append(entry.instance_id)
                    finalized.append(entry.instance_id)
        else:
            g2 = ctrl.gate2(bank, f, scores) if (cfg.use_cache and cfg.gates_enabled) else 0
            if g2:
                self.cache.push(f, iid, t, scores)
                pushed = True
            else:
                self.trace.finalize(iid, t, scores)
                finalized.append(iid)

        rec = StepTrace(t, iid, scores, list(g1), g2, g3, updated, pushed, popped, finalized, ctrl.kind)
        self.trace.steps.append(rec)
        self.cache_series.append((t, self.cache.push_count, len(self.cache)))
        self.t += 1
        return rec

    def finish(self) -> list[str]:
        """Flush the cache against the final memory."""
        ids = []
        for entry, scores in self.cache.flush(self.bank):
            self.trace.finalize(entry.instance_id, self.t, scores)
            ids.append(entry.instance_id)
        self.trace.flushed = ids
        return ids


def run_movie(stream: MovieStream, controller=None, config: EngineConfig | None = None,
              method: str = "oms") -> MovieResult:
    searcher = OnlineSearcher(stream, controller, config)
    for instance in stream.instances:
        searcher.step(instance)
    searcher.finish()
    trace = searcher.trace
    return MovieResult(
        movie_id=stream.movie_id,
        method=method,
        casts=list(stream.casts),
        final_scores={i: fin.combined for i, fin in trace.finalized.items()},
        finalized_at={i: fin.step for i, fin in trace.finalized.items()},
        truth=stream.truth,
        trace=trace,
        update_log=list(searcher.bank.update_log),
        cache_series=searcher.cache_series,
        online=True,
        memory=searcher.bank.snapshot(),
    )


def _face_matrix(stream: MovieStream) -> np.ndarray:
    return np.stack([stream.portraits[c].vectors[FACE] for c in stream.casts])


def _static_trace(stream: MovieStream, per_instance: list[list[ScoreBreakdown]], kind: str) -> DecisionTrace:
    trace = DecisionTrace()
    n = len(stream.casts)
    for t, (x, scores) in enumerate(zip(stream.instances, per_instance)):
        trace.finalize(x.instance_id, t, scores)
        trace.steps.append(StepTrace(t, x.instance_id, scores, [0] * n, None, {}, None,
                                     False, [], [x.instance_id], kind))
    return trace


def face_match(stream: MovieStream) -> MovieResult:
    """Score every instance against the fixed portrait faces only."""
    # same contraction as the memory bank so degenerate OMS runs agree bit for bit
    slots = np.zeros((len(stream.casts), 3, stream.d))
    slots[:, FACE] = _face_matrix(stream)
    per_instance = []
    shared = np.array([True, False, False])
    none = np.array([False, False, False])
    for x in stream.instances:
        if x.feature.presence[FACE]:
            dots = np.einsum("cmd,md->cm", slots, x.feature.vectors)
            per_instance.append([score_from_dots(row, shared) for row in dots])
        else:
            per_instance.append([score_from_dots(np.zeros(3), none) for _ in stream.casts])
    trace = _static_trace(stream, per_instance, "face_match")
    return MovieResult(
        movie_id=stream.movie_id,
        method="face_match",
        casts=list(stream.casts),
        final_scores={i: fin.combined for i, fin in trace.finalized.items()},
        finalized_at={i: fin.step for i, fin in trace.finalized.items()},
        truth=stream.truth,
        trace=trace,
        online=True,
    )


def two_step(stream: MovieStream, use_audio: bool = False, theta1: float = 0.89,
             weights: Sequence[float] = (0.9, 0.1)) -> MovieResult:
    """Offline baseline: label confident face matches, then compare the rest
    against per-cast mean body (and audio) features of the labeled set."""
    base = face_match(stream)
    n = len(stream.casts)
    w_body, w_audio = float(weights[0]), float(weights[1]) if use_audio else 0.0
    labeled: dict[str, int] = {}
    for x in stream.instances:
        s = base.final_scores[x.instance_id]
        j = int(np.argmax(s))
        if x.feature.presence[FACE] and s[j] >= theta1:
            labeled[x.instance_id] = j

    d = stream.d
    protos = np.zeros((n, 3, d))
    has = np.zeros((n, 3), dtype=bool)
    for m in (BODY, AUDIO):
        sums = np.zeros((n, d))
        for x in stream.instances:
            j = labeled.get(x.instance_id)
            if j is not None and x.feature.presence[m]:
                sums[j] += x.feature.vectors[m]
        norms = np.linalg.norm(sums, axis=1)
        for j in range(n):
            if norms[j] > 0:
                protos[j, m] = sums[j] / norms[j]
                has[j, m] = True
    fallback = [j for j in range(n) if not (has[j, BODY] or (use_audio and has[j, AUDIO]))]
    for j in fallback:
        log.info("two_step: cast %s has no labeled body/audio evidence, using face scores", stream.casts[j])

    final = {}
    for x in stream.instances:
        face_scores = base.final_scores[x.instance_id]
        if x.instance_id in labeled:
            final[x.instance_id] = face_scores.copy()
            continue
        s = np.zeros(n)
        for j in range(n):
            if j in fallback:
                s[j] = face_scores[j]
                continue
            if x.feature.presence[BODY] and has[j, BODY]:
                s[j] += w_body * float(protos[j, BODY] @ x.feature.vectors[BODY])
            if use_audio and x.feature.presence[AUDIO] and has[j, AUDIO]:
                s[j] += w_audio * float(protos[j, AUDIO] @ x.feature.vectors[AUDIO])
        final[x.instance_id] = s
    return MovieResult(
        movie_id=stream.movie_id,
        method="two_step_fba" if use_audio else "two_step_fb",
        casts=list(stream.casts),
        final_scores=final,
        finalized_at=dict(base.finalized_at),
        truth=stream.truth,
        trace=None,
        online=False,
    )
