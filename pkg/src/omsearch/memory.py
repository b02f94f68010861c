"""Dynamic per-cast memory of face/body/audio templates."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .features import (
    FACE,
    MODALITIES,
    DimensionError,
    FeatureError,
    MultiModalFeature,
    ScoreBreakdown,
    normalize_feature,
    score_from_dots,
)

DEFAULT_MU = 0.01


class MemoryBankError(ValueError):
    pass


@dataclass(frozen=True)
class MemoryUpdateEvent:
    step: int
    cast: str
    similarity: ScoreBreakdown
    written: frozenset

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "cast": self.cast,
            "similarity": self.similarity.to_dict(),
            "written": [m for m in MODALITIES if m in self.written],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "MemoryUpdateEvent":
        return cls(
            int(obj["step"]),
            str(obj["cast"]),
            ScoreBreakdown.from_dict(obj["similarity"]),
            frozenset(obj["written"]),
        )


@dataclass
class MemoryBank:
    """Memory slots of shape ``(C, 3, d)`` with per-slot filled flags.

    ``first_write`` controls how an empty slot is filled: when true the
    incoming vector is copied verbatim, otherwise the blend rule is applied
    to the zero slot as well (and with ``mu=0`` nothing ever changes).
    """

    casts: list[str]
    slots: np.ndarray
    filled: np.ndarray
    mu: float = DEFAULT_MU
    first_write: bool = True
    update_log: list[MemoryUpdateEvent] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.mu <= 1.0:
            raise MemoryBankError(f"updating factor must lie in [0, 1], got {self.mu}")
        self._index = {c: i for i, c in enumerate(self.casts)}

    @property
    def d(self) -> int:
        return self.slots.shape[2]

    @property
    def n_casts(self) -> int:
        return len(self.casts)

    def index(self, cast: str) -> int:
        try:
            return self._index[cast]
        except KeyError:
            raise MemoryBankError(f"unknown cast {cast!r}") from None

    def copy(self) -> "MemoryBank":
        return MemoryBank(
            list(self.casts),
            self.slots.copy(),
            self.filled.copy(),
            self.mu,
            self.first_write,
            list(self.update_log),
        )

    def slot_feature(self, j: int) -> MultiModalFeature:
        """Cast ``j``'s memory viewed as a feature (unfilled slots absent)."""
        return MultiModalFeature(self.slots[j], tuple(bool(x) for x in self.filled[j]))

    def dots(self, f: MultiModalFeature) -> tuple[np.ndarray, np.ndarray]:
        """Per-cast, per-modality dot products and the shared mask, each ``(C, 3)``."""
        if f.d != self.d:
            raise DimensionError(f"feature has d={f.d}, memory has d={self.d}")
        dots = np.einsum("cmd,md->cm", self.slots, f.vectors)
        shared = self.filled & f.presence_mask[None, :]
        return dots, shared

    def predict(self, f: MultiModalFeature) -> list[ScoreBreakdown]:
        dots, shared = self.dots(f)
        return [score_from_dots(dots[j], shared[j]) for j in range(self.n_casts)]

    def update(self, j: int, f: MultiModalFeature, step: int, similarity: ScoreBreakdown) -> None:
        """Blend ``f`` into cast ``j``'s slots in place and log the event."""
        written = set()
        mu = self.mu
        for m in range(3):
            if not f.presence[m]:
                continue
            if not self.filled[j, m]:
                if not self.first_write:
                    blended = mu * f.vectors[m]
                    norm = np.linalg.norm(blended)
                    if norm == 0.0:
                        continue
                    self.slots[j, m] = blended / norm
                else:
                    self.slots[j, m] = f.vectors[m]
                self.filled[j, m] = True
                written.add(MODALITIES[m])
                continue
            if mu == 0.0:
                continue
            blended = (1.0 - mu) * self.slots[j, m] + mu * f.vectors[m]
            norm = np.linalg.norm(blended)
            # antipodal vectors with mu=0.5 cancel; keep the old slot
            if norm > 0.0:
                self.slots[j, m] = blended / norm
            written.add(MODALITIES[m])
        self.update_log.append(MemoryUpdateEvent(step, self.casts[j], similarity, frozenset(written)))

    def snapshot(self) -> dict:
        """JSON-friendly dump: cast id -> modality -> vector and filled flag."""
        return {
            c: {
                MODALITIES[m]: {
                    "vector": self.slots[j, m].tolist(),
                    "filled": bool(self.filled[j, m]),
                }
                for m in range(3)
            }
            for j, c in enumerate(self.casts)
        }


def init_memory(
    portraits: Mapping[str, MultiModalFeature] | Sequence[tuple[str, MultiModalFeature]],
    mu: float = DEFAULT_MU,
    first_write: bool = True,
) -> MemoryBank:
    """Seed face slots from portraits; body and audio start empty."""
    items = list(portraits.items()) if isinstance(portraits, Mapping) else list(portraits)
    if not items:
        raise MemoryBankError("at least one cast portrait is required")
    casts = [c for c, _ in items]
    if len(set(casts)) != len(casts):
        dup = next(c for c in casts if casts.count(c) > 1)
        raise MemoryBankError(f"duplicate cast id {dup!r}")
    dims = {p.d for _, p in items}
    if len(dims) != 1:
        raise DimensionError(f"portraits disagree on dimension: {sorted(dims)}")
    (d,) = dims
    slots = np.zeros((len(casts), 3, d))
    filled = np.zeros((len(casts), 3), dtype=bool)
    for j, (cast, portrait) in enumerate(items):
        if not portrait.presence[FACE]:
            raise FeatureError(f"portrait requires face feature (cast {cast!r})")
        face_only = MultiModalFeature(portrait.vectors, (True, False, False))
        slots[j, FACE] = normalize_feature(face_only).vectors[FACE]
        filled[j, FACE] = True
    return MemoryBank(casts, slots, filled, mu, first_write)


def predict(bank: MemoryBank, f: MultiModalFeature) -> list[ScoreBreakdown]:
    return bank.predict(f)


def apply_update(
    bank: MemoryBank,
    cast: str,
    f: MultiModalFeature,
    gate: int,
    step: int = 0,
    similarity: ScoreBreakdown | None = None,
) -> MemoryBank:
    """Gated blend of ``f`` into ``cast``'s memory; mutates and returns ``bank``."""
    j = bank.index(cast)
    if gate not in (0, 1):
        raise ValueError(f"gate must be 0 or 1, got {gate!r}")
    if gate == 0:
        return bank
    if similarity is None:
        dots, shared = bank.dots(f)
        similarity = score_from_dots(dots[j], shared[j])
    bank.update(j, f, step, similarity)
    return bank
