"""Holding area for instances that could not be resolved on arrival."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .features import MultiModalFeature, ScoreBreakdown
from .memory import MemoryBank

# (per-cast scores, age in steps) -> release bit
ReleaseGate = Callable[[list[ScoreBreakdown], int], int]


class CacheError(ValueError):
    pass


@dataclass
class CacheEntry:
    instance_id: str
    feature: MultiModalFeature
    inserted_at: int
    last_scores: list[ScoreBreakdown]


@dataclass
class UncertainCache:
    entries: list[CacheEntry] = field(default_factory=list)
    push_count: int = 0
    pop_count: int = 0
    flush_count: int = 0

    def __len__(self):
        return len(self.entries)

    def __contains__(self, instance_id):
        return any(e.instance_id == instance_id for e in self.entries)

    def push(self, f: MultiModalFeature, instance_id: str, t: int,
             scores: list[ScoreBreakdown] | None = None) -> "UncertainCache":
        if instance_id in self:
            raise CacheError(f"instance {instance_id!r} is already cached")
        self.entries.append(CacheEntry(instance_id, f, t, list(scores or [])))
        self.push_count += 1
        return self

    def recall(self, bank: MemoryBank, t_now: int, g3: ReleaseGate):
        """Re-score every entry against ``bank`` and release those ``g3`` accepts.

        Returns the released ``(entry, scores)`` pairs in cache order; the
        survivors keep their relative order.
        """
        popped, kept = [], []
        for entry in self.entries:
            scores = bank.predict(entry.feature)
            entry.last_scores = scores
            if g3(scores, t_now - entry.inserted_at):
                popped.append((entry, scores))
            else:
                kept.append(entry)
        self.entries = kept
        self.pop_count += len(popped)
        return popped, self

    def flush(self, bank: MemoryBank):
        """Finalize every remaining entry against the final memory."""
        out = [(e, bank.predict(e.feature)) for e in self.entries]
        self.entries = []
        self.flush_count += len(out)
        return out

    def conserved(self) -> bool:
        return self.push_count == len(self.entries) + self.pop_count + self.flush_count
