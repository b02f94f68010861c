"""Seeded synthetic movie streams standing in for extracted tracklet features."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .engine import OTHER, Instance, MovieStream
from .features import MultiModalFeature, normalize_feature


class SyntheticError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticParams:
    movies: int = 10
    casts: int = 6
    instances: int = 400
    d: int = 16
    sigma: tuple[float, float, float] = (0.35, 0.35, 0.35)
    presence: tuple[float, float, float] = (1.0, 0.9, 0.4)
    drift: float = 0.01
    distractor_fraction: float = 0.1
    quality_spread: float = 1.0
    portrait_gap: float = 0.3
    cast_similarity: float = 0.8
    seed: int = 0

    def __post_init__(self):
        sigma = self.sigma
        if np.isscalar(sigma):
            sigma = (float(sigma),) * 3
        object.__setattr__(self, "sigma", tuple(float(s) for s in sigma))
        object.__setattr__(self, "presence", tuple(float(q) for q in self.presence))
        if self.d < 2:
            raise SyntheticError(f"d must be at least 2, got {self.d}")
        if self.movies < 1 or self.casts < 1 or self.instances < 0:
            raise SyntheticError("movies and casts must be positive, instances non-negative")
        if len(self.sigma) != 3 or min(self.sigma) < 0:
            raise SyntheticError("sigma must be three non-negative values")
        if len(self.presence) != 3 or not all(0.0 <= q <= 1.0 for q in self.presence):
            raise SyntheticError("presence probabilities must lie in [0, 1]")
        if self.quality_spread < 0:
            raise SyntheticError("quality spread must be non-negative")
        if self.drift < 0:
            raise SyntheticError("drift must be non-negative")
        if not 0.0 <= self.distractor_fraction <= 1.0:
            raise SyntheticError("distractor fraction must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


def _unit(rng: np.random.Generator, shape) -> np.ndarray:
    v = rng.standard_normal(shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def generate_movie(params: SyntheticParams, rng: np.random.Generator, movie_id: str) -> MovieStream:
    c, d = params.casts, params.d
    sigma = np.array(params.sigma)
    presence = np.array(params.presence)
    protos = _unit(rng, (c, 3, d))
    if params.cast_similarity > 0:
        rho = params.cast_similarity
        faces = np.sqrt(rho) * _unit(rng, (1, d)) + np.sqrt(1 - rho) * protos[:, 0]
        protos[:, 0] = faces / np.linalg.norm(faces, axis=1, keepdims=True)
    casts = [f"{movie_id}_c{j}" for j in range(c)]
    portraits = {
        cid: MultiModalFeature(np.vstack([protos[j, 0], np.zeros((2, d))]), (True, False, False))
        for j, cid in enumerate(casts)
    }
    if params.portrait_gap > 0:
        offset = rng.standard_normal((c, d)) * params.portrait_gap / np.sqrt(d)
        protos[:, 0] = protos[:, 0] + offset
        protos[:, 0] /= np.linalg.norm(protos[:, 0], axis=1, keepdims=True)
    instances = []
    for t in range(params.instances):
        is_distractor = rng.random() < params.distractor_fraction
        j = int(rng.integers(c))
        if is_distractor:
            centre = _unit(rng, (3, d))
        else:
            if params.drift > 0:
                step = rng.standard_normal((3, d)) * params.drift
                protos[j] = protos[j] + step
                protos[j] /= np.linalg.norm(protos[j], axis=1, keepdims=True)
            centre = protos[j]
        quality = rng.lognormal(0.0, params.quality_spread, size=3) if params.quality_spread > 0 else np.ones(3)
        noise = rng.standard_normal((3, d)) * (sigma * quality)[:, None] / np.sqrt(d)
        present = rng.random(3) < presence
        vecs = centre + noise
        feature = normalize_feature(MultiModalFeature(vecs, tuple(bool(p) for p in present)))
        truth = OTHER if is_distractor else casts[j]
        instances.append(Instance(f"{movie_id}_{t:05d}", feature, truth))
    return MovieStream(movie_id, casts, portraits, instances)


def generate_synthetic(params: SyntheticParams, seed: int | None = None,
                       out_dir: str | Path | None = None) -> list[MovieStream]:
    """Generate ``params.movies`` streams; one child generator per movie.

    With ``out_dir`` each stream is also written as ``<movie_id>.jsonl``.
    """
    seed = params.seed if seed is None else seed
    children = np.random.SeedSequence(seed).spawn(params.movies)
    streams = [
        generate_movie(params, np.random.default_rng(child), f"s{seed}m{k:02d}")
        for k, child in enumerate(children)
    ]
    if out_dir is not None:
        from .dataio import write_movie

        out_dir = Path(out_dir)
        for s in streams:
            write_movie(s, out_dir / f"{s.movie_id}.jsonl")
    return streams
