"""Multi-modal instance features and the similarity primitives built on them.

Every instance carries up to three modality vectors (face, body, audio) of a
shared dimension ``d``. Absent modalities are stored as zero rows so that they
contribute nothing to any inner product.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

MODALITIES = ("face", "body", "audio")
FACE, BODY, AUDIO = 0, 1, 2
UNIT_TOL = 1e-12


class FeatureError(ValueError):
    """Raised for malformed feature vectors."""


class DimensionError(FeatureError):
    """Raised when two features (or a feature and a memory) disagree on d."""


@dataclass(frozen=True, eq=False)
class MultiModalFeature:
    """Stacked ``(3, d)`` modality matrix plus presence flags.

    Rows of absent modalities are all zero.
    """

    vectors: np.ndarray
    presence: tuple[bool, bool, bool]

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != 3:
            raise FeatureError(f"expected a (3, d) matrix, got shape {v.shape}")
        pres = tuple(bool(p) for p in self.presence)
        if len(pres) != 3:
            raise FeatureError("presence needs exactly three flags")
        v = v.copy()
        for m in range(3):
            if not pres[m]:
                v[m] = 0.0
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "presence", pres)

    @classmethod
    def from_parts(
        cls,
        face: Optional[Sequence[float]] = None,
        body: Optional[Sequence[float]] = None,
        audio: Optional[Sequence[float]] = None,
        d: Optional[int] = None,
    ) -> "MultiModalFeature":
        parts = [face, body, audio]
        dims = {len(p) for p in parts if p is not None}
        if d is not None:
            dims.add(d)
        if len(dims) != 1:
            if not dims:
                raise FeatureError("cannot infer d: no modality present and d not given")
            raise DimensionError(f"modality vectors disagree on dimension: {sorted(dims)}")
        (dim,) = dims
        vectors = np.zeros((3, dim))
        for m, p in enumerate(parts):
            if p is not None:
                vectors[m] = np.asarray(p, dtype=np.float64)
        return cls(vectors, tuple(p is not None for p in parts))

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    @property
    def face(self) -> Optional[np.ndarray]:
        return self.vectors[FACE] if self.presence[FACE] else None

    @property
    def body(self) -> Optional[np.ndarray]:
        return self.vectors[BODY] if self.presence[BODY] else None

    @property
    def audio(self) -> Optional[np.ndarray]:
        return self.vectors[AUDIO] if self.presence[AUDIO] else None

    @property
    def presence_mask(self) -> np.ndarray:
        return np.array(self.presence, dtype=bool)

    def concatenated(self) -> np.ndarray:
        """The holistic ``3d`` vector ``[face, body, audio]``."""
        return self.vectors.reshape(-1)

    def restrict(self, modalities: Sequence[str]) -> "MultiModalFeature":
        """Drop every modality not named in ``modalities``."""
        keep = [name in modalities for name in MODALITIES]
        pres = tuple(p and k for p, k in zip(self.presence, keep))
        if pres == self.presence:
            return self
        return MultiModalFeature(self.vectors, pres)

    def __eq__(self, other):
        if not isinstance(other, MultiModalFeature):
            return NotImplemented
        return self.presence == other.presence and np.array_equal(self.vectors, other.vectors)

    def __repr__(self):
        names = [n for n, p in zip(MODALITIES, self.presence) if p]
        return f"MultiModalFeature(d={self.d}, present={names})"


@dataclass(frozen=True)
class ScoreBreakdown:
    """Per-modality cosines (``None`` where not shared) and their mean."""

    per_modality: tuple[Optional[float], Optional[float], Optional[float]]
    combined: float
    shared_modalities: int

    def to_dict(self) -> dict:
        return {
            "per_modality": list(self.per_modality),
            "combined": self.combined,
            "shared": self.shared_modalities,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ScoreBreakdown":
        pm = tuple(None if v is None else float(v) for v in obj["per_modality"])
        return cls(pm, float(obj["combined"]), int(obj["shared"]))


EMPTY_SCORE = ScoreBreakdown((None, None, None), 0.0, 0)


def normalize_feature(raw: MultiModalFeature) -> MultiModalFeature:
    """Rescale every present modality vector to unit L2 norm."""
    out = np.array(raw.vectors)
    for m, name in enumerate(MODALITIES):
        if not raw.presence[m]:
            continue
        v = out[m]
        if not np.all(np.isfinite(v)):
            raise FeatureError(f"non-finite {name} vector")
        norm = np.linalg.norm(v)
        if norm == 0.0:
            raise FeatureError(f"zero-norm {name} vector")
        # leave unit vectors bit-identical so manifests round-trip exactly
        if abs(norm - 1.0) > UNIT_TOL:
            out[m] = v / norm
    return MultiModalFeature(out, raw.presence)


def _check_dims(a: MultiModalFeature, b: MultiModalFeature) -> None:
    if a.d != b.d:
        raise DimensionError(f"dimension mismatch: {a.d} vs {b.d}")


def concat_score(a: MultiModalFeature, b: MultiModalFeature) -> float:
    """Raw inner product of the two concatenated ``3d`` vectors, in [-3, 3]."""
    _check_dims(a, b)
    return float(np.dot(a.concatenated(), b.concatenated()))


def score_from_dots(dots: np.ndarray, shared: np.ndarray) -> ScoreBreakdown:
    """Build a breakdown from three modality dot products and a shared mask."""
    n = int(shared.sum())
    per = tuple(float(dots[m]) if shared[m] else None for m in range(3))
    if n == 0:
        return ScoreBreakdown(per, 0.0, 0)
    total = 0.0
    for m in range(3):
        if shared[m]:
            total += float(dots[m])
    return ScoreBreakdown(per, total / n, n)


def modality_scores(a: MultiModalFeature, b: MultiModalFeature) -> ScoreBreakdown:
    """Per-modality cosine over modalities present on both sides.

    ``combined`` is the mean over shared modalities, 0 when none are shared.
    Both inputs are assumed normalized, so cosine equals the dot product.
    """
    _check_dims(a, b)
    dots = np.einsum("md,md->m", a.vectors, b.vectors)
    shared = a.presence_mask & b.presence_mask
    return score_from_dots(dots, shared)
