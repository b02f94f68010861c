"""Command line interface: simulate, train, run, eval, sweep and report."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .controller import ControllerError, ManualController, ManualControllerConfig, load_controller
from .dataio import (
    RANKING_FIELDS, ManifestError, check_same_dim, load_movies, result_from_files, write_json, write_trace,
)
from .engine import EngineConfig, face_match, run_movie, two_step
from .evalkit import RECALL_KS, EvalError, EvalReport, evaluate
from .features import MODALITIES, FeatureError
from .memory import MemoryUpdateEvent
from .qlearner import TrainConfig, TrainingError, train_agents
from .qnet import NetworkError
from .synthetic import SyntheticError, SyntheticParams, generate_synthetic

log = logging.getLogger("omsearch")

DEFAULT_TAUS = (0.0, 0.04, 0.08, 0.12, 0.16, 0.20)
MODALITY_GRID = (("face",), ("face", "body"), ("face", "body", "audio"))
BASELINES = ("face-match", "two-step", "two-step-audio")


class CliError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _modalities(text: str) -> tuple[str, ...]:
    mods = tuple(m.strip() for m in text.replace("+", ",").split(",") if m.strip())
    bad = [m for m in mods if m not in MODALITIES]
    if bad or not mods:
        raise argparse.ArgumentTypeError(f"modalities must be drawn from {','.join(MODALITIES)}")
    return mods


def _triple(text: str) -> tuple[float, ...]:
    vals = _floats(text)
    if len(vals) == 1:
        vals = vals * 3
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("expected one value or three comma-separated values")
    return tuple(vals)


# -- simulate ---------------------------------------------------------------

def cmd_simulate(args) -> None:
    params = SyntheticParams(
        movies=args.movies, casts=args.cast, instances=args.instances, d=args.d, sigma=args.sigma,
        presence=args.presence, drift=args.drift, distractor_fraction=args.distractors,
        quality_spread=args.quality_spread, portrait_gap=args.portrait_gap,
        cast_similarity=args.cast_similarity, seed=args.seed,
    )
    out = Path(args.out)
    streams = generate_synthetic(params, out_dir=out)
    write_json(params.to_dict(), out / "params.json")
    print(f"wrote {len(streams)} manifests to {out}")


# -- train ------------------------------------------------------------------

def cmd_train(args) -> None:
    movies = load_movies(args.data)
    check_same_dim(movies)
    cfg = TrainConfig(
        learning_rate=args.lr, epochs=args.epochs, iterations_per_movie=args.iterations, horizon=args.horizon,
        epsilon_start=args.eps_start, epsilon_end=args.eps_end, batch_size=args.batch, hidden_dim=args.hidden,
        state_mode=args.state_mode, seed=args.seed,
    )
    release = ManualControllerConfig(gamma=args.gamma, tau=args.tau)
    t0 = time.perf_counter()
    g1, g2, logs = train_agents(movies, cfg, release=release)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    g1.save(out / "g1.json")
    g2.save(out / "g2.json")
    write_json({"config": cfg.__dict__, "movies": [m.movie_id for m in movies],
                "seconds": round(time.perf_counter() - t0, 3),
                "epochs": [e.to_dict() for e in logs]}, out / "train_log.json")
    write_json({"kind": "learned", "checkpoint": ".", "state_mode": cfg.state_mode,
                "gamma": release.gamma, "tau": release.tau}, out / "controller.json")
    print(f"trained on {len(movies)} movies for {cfg.epochs} epochs; checkpoints in {out}")


# -- run --------------------------------------------------------------------

def _controller_from_args(args):
    if args.controller == "manual":
        cfg = {"kind": "manual"}
        base = Path(".")
        if args.config:
            cfg = json.loads(Path(args.config).read_text())
            base = Path(args.config).parent
    else:
        path = Path(args.controller)
        if path.is_dir():
            path = path / "controller.json"
        if not path.exists():
            raise CliError(f"controller config not found: {path}")
        cfg = json.loads(path.read_text())
        base = path.parent
    for key in ("alpha", "beta", "gamma", "tau"):
        value = getattr(args, key)
        if value is not None:
            cfg[key] = value
    return load_controller(cfg, base)


def _engine_from_args(args) -> EngineConfig:
    mods = args.modalities
    if args.face_only:
        mods = ("face",)
    return EngineConfig(mu=args.mu, use_cache=not args.no_cache, modalities=mods or MODALITIES)


def _method_name(args, engine: EngineConfig, controller) -> str:
    if args.method:
        return args.method
    if args.baseline:
        return args.baseline.replace("-", "_")
    parts = ["oms", controller.kind]
    if not engine.use_cache:
        parts.append("nocache")
    parts.append("+".join(engine.modalities))
    return "_".join(parts)


def run_results(movies, args):
    if args.baseline:
        fn = {"face-match": face_match,
              "two-step": lambda m: two_step(m, use_audio=False),
              "two-step-audio": lambda m: two_step(m, use_audio=True)}[args.baseline]
        method = _method_name(args, None, None)
        results = []
        for m in movies:
            r = fn(m)
            r.method = method
            results.append(r)
        return results, {"baseline": args.baseline}, None
    controller = _controller_from_args(args)
    engine = _engine_from_args(args)
    method = _method_name(args, engine, controller)
    results = [run_movie(m, controller, engine, method) for m in movies]
    return results, controller.to_config(), engine


def write_run(results, out: Path, meta: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "traces").mkdir(exist_ok=True)
    (out / "memory").mkdir(exist_ok=True)
    with open(out / "rankings.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RANKING_FIELDS)
        for r in results:
            for cast, ranking in r.rankings().items():
                for rank, (iid, score) in enumerate(ranking, start=1):
                    w.writerow([r.movie_id, cast, rank, iid, repr(score)])
    for r in results:
        write_trace(r, out / "traces" / f"{r.movie_id}.jsonl")
        write_json({"memory": r.memory, "updates": [e.to_dict() for e in r.update_log]},
                   out / "memory" / f"{r.movie_id}.json")
    with open(out / "cache_series.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["movie_id", "t", "total_size", "current_size"])
        for r in results:
            for t, total, cur in r.cache_series:
                w.writerow([r.movie_id, t, total, cur])
    write_json(meta, out / "run.json")


def cmd_run(args) -> None:
    movies = load_movies(args.data)
    results, ctrl_cfg, engine = run_results(movies, args)
    meta = {
        "method": results[0].method,
        "online": results[0].online,
        "data": str(Path(args.data).resolve()),
        "movies": [m.movie_id for m in movies],
        "controller": ctrl_cfg,
        "engine": None if engine is None else {
            "mu": engine.mu, "first_write": engine.first_write, "use_cache": engine.use_cache,
            "modalities": list(engine.modalities), "gates_enabled": engine.gates_enabled,
        },
    }
    write_run(results, Path(args.out), meta)
    print(f"ran {meta['method']} on {len(movies)} movies; results in {args.out}")


# -- eval -------------------------------------------------------------------

def load_run(run_dir: Path, data=None):
    meta_path = run_dir / "run.json"
    if not meta_path.exists():
        raise CliError(f"not a run directory (missing run.json): {run_dir}")
    meta = json.loads(meta_path.read_text())
    movies = {m.movie_id: m for m in load_movies(data or meta["data"])}
    series: dict[str, list] = {}
    with open(run_dir / "cache_series.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            series.setdefault(row["movie_id"], []).append(
                (int(row["t"]), int(row["total_size"]), int(row["current_size"])))
    results = []
    for movie_id in meta["movies"]:
        if movie_id not in movies:
            raise CliError(f"movie {movie_id} from {meta_path} not found in the data directory")
        mem_path = run_dir / "memory" / f"{movie_id}.json"
        updates = []
        if mem_path.exists():
            updates = [MemoryUpdateEvent.from_dict(e) for e in json.loads(mem_path.read_text())["updates"]]
        results.append(result_from_files(movies[movie_id], run_dir / "traces" / f"{movie_id}.jsonl",
                                         meta["method"], meta.get("online", True),
                                         series.get(movie_id), updates))
    return results, meta


def write_report_csv(report: EvalReport, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "movie_id", "map"])
        for movie, value in report.per_movie_map.items():
            w.writerow([report.method, movie, "" if value is None else repr(value)])
        w.writerow([report.method, "mean", "" if report.mean_map is None else repr(report.mean_map)])


def cmd_eval(args) -> None:
    run_dir = Path(args.run)
    results, meta = load_run(run_dir, args.data)
    report = evaluate(results, meta["method"])
    out = Path(args.out) if args.out else run_dir / "eval.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_json(report.to_dict(), out)
    write_report_csv(report, out.with_suffix(".csv"))
    shown = "absent" if report.mean_map is None else f"{100 * report.mean_map:.2f}"
    print(f"{report.method}: mAP {shown} over {len(results)} movies; report in {out}")


# -- sweep ------------------------------------------------------------------

def cmd_sweep(args) -> None:
    movies = load_movies(args.data)
    rows = []
    for tau in args.tau:
        ctrl = ManualController(ManualControllerConfig(tau=tau))
        rep = evaluate([run_movie(m, ctrl, EngineConfig(mu=args.mu)) for m in movies])
        rows.append({"grid": "tau", "setting": f"{tau:g}", "map": rep.mean_map, "mean_cache_size": rep.mean_cache_size})
    for mods in MODALITY_GRID:
        rep = evaluate([run_movie(m, ManualController(), EngineConfig(mu=args.mu, modalities=mods)) for m in movies])
        rows.append({"grid": "modalities", "setting": "+".join(mods), "map": rep.mean_map,
                     "mean_cache_size": rep.mean_cache_size})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["grid", "setting", "map", "mean_cache_size"])
        w.writeheader()
        w.writerows(rows)
    lines = [f"{'grid':<11}{'setting':<18}{'mAP':>8}{'mean cache':>12}"]
    for r in rows:
        m = "-" if r["map"] is None else f"{100 * r['map']:.2f}"
        lines.append(f"{r['grid']:<11}{r['setting']:<18}{m:>8}{r['mean_cache_size'] or 0:>12.2f}")
    (out / "sweep.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))


# -- report -----------------------------------------------------------------

def format_table(reports: list[EvalReport]) -> str:
    head = f"{'method':<32}{'online':>7}{'mAP':>8}" + "".join(f"{'R@' + str(k):>8}" for k in RECALL_KS)
    head += f"{'cache':>8}"
    lines = [head, "-" * len(head)]
    for rep in reports:
        m = "-" if rep.mean_map is None else f"{100 * rep.mean_map:.2f}"
        recalls = "".join(
            f"{'-' if rep.final_recall.get(k) is None else format(100 * rep.final_recall[k], '.2f'):>8}"
            for k in RECALL_KS
        )
        cache = "-" if rep.mean_cache_size is None else f"{rep.mean_cache_size:.1f}"
        lines.append(f"{rep.method:<32}{'yes' if rep.online else 'no':>7}{m:>8}{recalls}{cache:>8}")
    return "\n".join(lines) + "\n"


def cmd_report(args) -> None:
    reports = []
    for p in args.reports:
        path = Path(p)
        if path.is_dir():
            path = path / "eval.json"
        if not path.exists():
            raise CliError(f"report not found: {path}")
        reports.append(EvalReport.from_dict(json.loads(path.read_text())))
    table = format_table(reports)
    if args.out:
        Path(args.out).write_text(table)
    print(table, end="")


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="omsearch", description="Online multi-modal person search on movie streams.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    d = SyntheticParams()
    s = sub.add_parser("simulate", help="generate synthetic movie manifests")
    s.add_argument("--out", required=True, help="output directory for <movie>.jsonl manifests")
    s.add_argument("--movies", type=int, default=d.movies, help="number of movies")
    s.add_argument("--cast", type=int, default=d.casts, help="casts per movie")
    s.add_argument("--instances", type=int, default=d.instances, help="instances per movie")
    s.add_argument("--d", type=int, default=d.d, help="feature dimension per modality")
    s.add_argument("--sigma", type=_triple, default=d.sigma, help="noise std, one value or face,body,audio")
    s.add_argument("--presence", type=_triple, default=d.presence, help="presence probabilities face,body,audio")
    s.add_argument("--drift", type=float, default=d.drift, help="per-step prototype random-walk std")
    s.add_argument("--distractors", type=float, default=d.distractor_fraction, help="fraction of distractor instances")
    s.add_argument("--quality-spread", type=float, default=d.quality_spread,
                   help="log-normal spread of per-instance noise scale")
    s.add_argument("--portrait-gap", type=float, default=d.portrait_gap,
                   help="offset between portrait and in-movie face prototype")
    s.add_argument("--cast-similarity", type=float, default=d.cast_similarity,
                   help="weight of the face direction shared by all casts of a movie")
    s.add_argument("--seed", type=int, default=d.seed)
    s.set_defaults(func=cmd_simulate)

    t_d = TrainConfig()
    t = sub.add_parser("train", help="train the learned G1/G2 gates")
    t.add_argument("--data", required=True, help="manifest file or directory of training movies")
    t.add_argument("--out", required=True, help="checkpoint directory")
    t.add_argument("--epochs", type=int, default=t_d.epochs)
    t.add_argument("--iterations", type=int, default=t_d.iterations_per_movie, help="train steps per movie per epoch")
    t.add_argument("--lr", type=float, default=t_d.learning_rate)
    t.add_argument("--horizon", type=int, default=t_d.horizon, help="return horizon T")
    t.add_argument("--eps-start", type=float, default=t_d.epsilon_start)
    t.add_argument("--eps-end", type=float, default=t_d.epsilon_end)
    t.add_argument("--batch", type=int, default=t_d.batch_size)
    t.add_argument("--hidden", type=int, default=t_d.hidden_dim)
    t.add_argument("--state-mode", choices=("summary", "raw"), default=t_d.state_mode)
    t.add_argument("--gamma", type=float, default=ManualControllerConfig().gamma, help="release threshold used in rollouts")
    t.add_argument("--tau", type=float, default=ManualControllerConfig().tau, help="aging weight used in rollouts")
    t.add_argument("--seed", type=int, default=t_d.seed)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("run", help="run a method over manifests and write result files")
    r.add_argument("--data", required=True, help="manifest file or directory")
    r.add_argument("--out", required=True, help="result directory")
    r.add_argument("--controller", default="manual",
                   help="'manual' or a learned controller.json (or the directory holding it)")
    r.add_argument("--config", help="JSON controller config for the manual controller")
    r.add_argument("--alpha", type=float, help="G1 threshold")
    r.add_argument("--beta", type=float, help="G2 threshold")
    r.add_argument("--gamma", type=float, help="G3 threshold")
    r.add_argument("--tau", type=float, help="cache aging weight")
    r.add_argument("--mu", type=float, default=EngineConfig().mu, help="memory update rate")
    r.add_argument("--no-cache", action="store_true", help="disable the uncertain instance cache")
    r.add_argument("--face-only", action="store_true", help="use the face modality only")
    r.add_argument("--modalities", type=_modalities, help="comma-separated subset of face,body,audio")
    r.add_argument("--baseline", choices=BASELINES, help="run a static baseline instead of the online engine")
    r.add_argument("--method", help="method name recorded in outputs")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="evaluate a run directory")
    e.add_argument("--run", required=True, help="directory written by 'run'")
    e.add_argument("--data", help="manifests (defaults to the path recorded in run.json)")
    e.add_argument("--out", help="report JSON path (default <run>/eval.json); a CSV is written next to it")
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("sweep", help="cache aging and modality ablation grids")
    w.add_argument("--data", required=True)
    w.add_argument("--out", required=True)
    w.add_argument("--tau", type=_floats, default=list(DEFAULT_TAUS), help="comma-separated aging weights")
    w.add_argument("--mu", type=float, default=EngineConfig().mu)
    w.set_defaults(func=cmd_sweep)

    o = sub.add_parser("report", help="collate evaluation reports into a text table")
    o.add_argument("reports", nargs="+", help="eval.json files or run directories")
    o.add_argument("--out", help="write the table to this file too")
    o.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (CliError, ManifestError, FeatureError, SyntheticError, TrainingError, NetworkError,
            ControllerError, EvalError, ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"omsearch {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
