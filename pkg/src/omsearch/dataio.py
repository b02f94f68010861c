"""JSON Lines manifests for movie streams, and result/report writers.

A manifest starts with a header line::

    {"movie_id": "m0", "d": 16, "cast": [{"cast_id": "c0", "face": [...]}, ...]}

followed by one line per instance in stream order::

    {"instance_id": "m0_00000", "t": 0, "cast_id": "c0", "face": [...], "body": null, "audio": [...]}

``"cast_id": null`` marks a distractor; omitting the key leaves the instance
unlabeled.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable

import numpy as np

from .engine import OTHER, Instance, MovieResult, MovieStream, StreamError
from .features import MODALITIES, DimensionError, FeatureError, MultiModalFeature, normalize_feature


class ManifestError(ValueError):
    pass


def _vector(value, d, what, lineno):
    if value is None:
        return None
    if not isinstance(value, list):
        raise ManifestError(f"line {lineno}: {what} must be a list or null")
    if len(value) != d:
        raise ManifestError(f"line {lineno}: {what} has length {len(value)}, expected d={d}")
    return [float(v) for v in value]


def _feature(parts, d, lineno):
    try:
        return normalize_feature(MultiModalFeature.from_parts(*parts, d=d))
    except FeatureError as exc:
        raise ManifestError(f"line {lineno}: {exc}") from None


def stream_to_lines(stream: MovieStream) -> list[str]:
    header = {
        "movie_id": stream.movie_id,
        "d": stream.d,
        "cast": [{"cast_id": c, "face": stream.portraits[c].vectors[0].tolist()} for c in stream.casts],
    }
    lines = [json.dumps(header)]
    for t, x in enumerate(stream.instances):
        rec = {"instance_id": x.instance_id, "t": t}
        if x.truth is not None:
            rec["cast_id"] = None if x.truth == OTHER else x.truth
        for m, name in enumerate(MODALITIES):
            rec[name] = x.feature.vectors[m].tolist() if x.feature.presence[m] else None
        lines.append(json.dumps(rec))
    return lines


def write_movie(stream: MovieStream, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(stream_to_lines(stream)) + "\n")
    return path


def parse_movie(lines: Iterable[str], source: str = "<manifest>") -> MovieStream:
    it = iter(enumerate(lines, start=1))
    header = None
    for lineno, line in it:
        if line.strip():
            header = _json(line, lineno, source)
            break
    if header is None:
        raise ManifestError(f"{source}: empty manifest")
    try:
        movie_id = str(header["movie_id"])
        d = int(header["d"])
        cast_recs = header["cast"]
    except (KeyError, TypeError, ValueError):
        raise ManifestError(f"{source}: line {lineno}: header needs movie_id, d and cast") from None
    casts, portraits = [], {}
    for rec in cast_recs:
        cid = str(rec["cast_id"])
        if cid in portraits:
            raise ManifestError(f"{source}: line {lineno}: duplicate cast id {cid!r}")
        face = _vector(rec.get("face"), d, f"portrait face of {cid}", lineno)
        if face is None:
            raise ManifestError(f"{source}: line {lineno}: portrait requires face feature ({cid})")
        casts.append(cid)
        portraits[cid] = _feature((face, None, None), d, lineno)
    if not casts:
        raise ManifestError(f"{source}: line {lineno}: empty cast list")

    instances, seen = [], set()
    for lineno, line in it:
        if not line.strip():
            continue
        rec = _json(line, lineno, source)
        try:
            iid = str(rec["instance_id"])
        except (KeyError, TypeError):
            raise ManifestError(f"{source}: line {lineno}: missing instance_id") from None
        if iid in seen:
            raise ManifestError(f"{source}: line {lineno}: duplicate instance id {iid!r}")
        seen.add(iid)
        if "cast_id" not in rec:
            truth = None
        elif rec["cast_id"] is None:
            truth = OTHER
        else:
            truth = str(rec["cast_id"])
            if truth not in portraits:
                raise ManifestError(f"{source}: line {lineno}: unknown cast id {truth!r}")
        try:
            parts = [_vector(rec.get(name), d, name, lineno) for name in MODALITIES]
        except ManifestError as exc:
            raise ManifestError(f"{source}: {exc}") from None
        instances.append(Instance(iid, _feature(parts, d, lineno), truth))
    return MovieStream(movie_id, casts, portraits, instances)


def _json(line, lineno, source):
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{source}: line {lineno}: malformed JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise ManifestError(f"{source}: line {lineno}: expected a JSON object")
    return obj


def load_movie(path) -> MovieStream:
    path = Path(path)
    with path.open() as fh:
        return parse_movie(fh, str(path))


def load_portraits(path) -> dict[str, MultiModalFeature]:
    """Portraits from a manifest header (instance lines are ignored)."""
    path = Path(path)
    with path.open() as fh:
        first = next((ln for ln in fh if ln.strip()), "")
    stream = parse_movie([first], str(path))
    return stream.portraits


def manifest_paths(path) -> list[Path]:
    """A single manifest, or every ``*.jsonl`` in a directory (sorted)."""
    path = Path(path)
    if path.is_dir():
        found = sorted(path.glob("*.jsonl"))
        if not found:
            raise ManifestError(f"no *.jsonl manifests in {path}")
        return found
    if not path.exists():
        raise ManifestError(f"no such manifest: {path}")
    return [path]


def load_movies(path) -> list[MovieStream]:
    return [load_movie(p) for p in manifest_paths(path)]


# -- result files ---------------------------------------------------------

RANKING_FIELDS = ["movie_id", "cast_id", "rank", "instance_id", "score"]


def write_rankings(result: MovieResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RANKING_FIELDS)
        for cast, ranking in result.rankings().items():
            for rank, (iid, score) in enumerate(ranking, start=1):
                w.writerow([result.movie_id, cast, rank, iid, repr(score)])


def read_rankings(path) -> dict[str, dict[str, list[tuple[str, float]]]]:
    """movie id -> cast id -> ranked (instance id, score) list."""
    out: dict[str, dict[str, list]] = {}
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    rows.sort(key=lambda r: (r["movie_id"], r["cast_id"], int(r["rank"])))
    for r in rows:
        out.setdefault(r["movie_id"], {}).setdefault(r["cast_id"], []).append((r["instance_id"], float(r["score"])))
    return out


def write_trace(result: MovieResult, path) -> None:
    """Step records (online methods only) followed by one line listing every
    finalized instance in order with its step and per-cast scores."""
    with open(path, "w") as fh:
        steps = result.trace.steps if result.trace is not None else []
        for step in steps:
            fh.write(json.dumps(step.to_dict()) + "\n")
        final = {
            "flushed": result.trace.flushed if result.trace is not None else [],
            "finalized": [
                {"instance_id": i, "step": result.finalized_at[i], "scores": result.final_scores[i].tolist()}
                for i in result.finalization_order()
            ],
        }
        fh.write(json.dumps(final) + "\n")


def read_trace(path) -> tuple[list[dict], dict]:
    steps, final = [], {}
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            if "finalized" in obj and "t" not in obj:
                final = obj
            else:
                steps.append(obj)
    return steps, final


def write_cache_series(result: MovieResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["movie_id", "t", "total_size", "current_size"])
        for t, total, cur in result.cache_series:
            w.writerow([result.movie_id, t, total, cur])


def read_cache_series(path) -> list[tuple[int, int, int]]:
    with open(path, newline="") as fh:
        return [(int(r["t"]), int(r["total_size"]), int(r["current_size"])) for r in csv.DictReader(fh)]


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def result_from_files(stream: MovieStream, trace_path, method: str, online: bool = True,
                      cache_series=None, update_log=None) -> MovieResult:
    """Rebuild the parts of a MovieResult that evaluation needs from a written trace."""
    _, final = read_trace(trace_path)
    if not final:
        raise ManifestError(f"{trace_path}: trace has no finalization record")
    scores, steps = {}, {}
    for rec in final["finalized"]:
        scores[rec["instance_id"]] = np.array(rec["scores"], dtype=np.float64)
        steps[rec["instance_id"]] = int(rec["step"])
    missing = set(stream.truth) - set(scores)
    if missing:
        raise ManifestError(f"{trace_path}: {len(missing)} instances of {stream.movie_id} never finalized")
    return MovieResult(
        movie_id=stream.movie_id,
        method=method,
        casts=list(stream.casts),
        final_scores=scores,
        finalized_at=steps,
        truth=stream.truth,
        update_log=list(update_log or []),
        cache_series=list(cache_series or []),
        online=online,
        order=[rec["instance_id"] for rec in final["finalized"]],
    )


def check_same_dim(streams: list[MovieStream]) -> int:
    dims = {s.d for s in streams}
    if len(dims) != 1:
        raise DimensionError(f"manifests disagree on d: {sorted(dims)}")
    return dims.pop()


__all__ = [
    "ManifestError",
    "StreamError",
    "load_movie",
    "load_movies",
    "load_portraits",
    "manifest_paths",
    "parse_movie",
    "write_movie",
    "write_rankings",
    "read_rankings",
    "write_trace",
    "read_trace",
    "write_cache_series",
    "read_cache_series",
    "write_json",
    "result_from_files",
]
