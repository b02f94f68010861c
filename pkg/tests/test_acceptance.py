"""Acceptance gate: one check per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` or ``python3 tests/test_acceptance.py``.
"""

import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from omsearch.controller import LearnedController, ManualController, ManualControllerConfig
from omsearch.engine import STRICT_BASELINE, EngineConfig, face_match, run_movie, two_step
from omsearch.evalkit import average_precision, map_per_movie, recall_at_k_curve
from omsearch.qlearner import TrainConfig, Transition, q_train_step, train_agents
from omsearch.qnet import QNetwork, q_forward
from omsearch.synthetic import SyntheticParams, generate_synthetic

sys.path.insert(0, str(Path(__file__).parent))
from oracle import learned_gates, manual_gates, mismatches, simulate  # noqa: E402

BENCH_SEEDS = range(5)
TRAIN_SEED = 1000
ZERO_NOISE = dict(sigma=0.0, drift=0.0, presence=(1.0, 1.0, 1.0), portrait_gap=0.0, quality_spread=0.0)
TAUS = (0.0, 0.04, 0.08, 0.12, 0.16, 0.20)
FACE_NOCACHE = EngineConfig(use_cache=False, modalities=("face",))
FACE_CACHE = EngineConfig(modalities=("face",))


# collected lines are echoed in the terminal summary by conftest.py
RESULTS: list[str] = []


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    return ok


@pytest.fixture(scope="module")
def benchmark():
    return {seed: generate_synthetic(SyntheticParams(seed=seed)) for seed in BENCH_SEEDS}


@pytest.fixture(scope="module")
def learned():
    train = generate_synthetic(SyntheticParams(seed=TRAIN_SEED, movies=5))
    g1, g2, _ = train_agents(train, TrainConfig())
    return LearnedController(g1, g2)


@pytest.fixture(scope="module")
def bench_runs(benchmark, learned):
    runs = {}
    for seed, movies in benchmark.items():
        runs[seed] = {
            "face_match": [face_match(m) for m in movies],
            "oms_manual": [run_movie(m, ManualController(), EngineConfig()) for m in movies],
            "oms_face_nocache": [run_movie(m, ManualController(), FACE_NOCACHE) for m in movies],
            "oms_face_cache": [run_movie(m, ManualController(), FACE_CACHE) for m in movies],
            "oms_rmq": [run_movie(m, learned, EngineConfig()) for m in movies],
        }
    return runs


def mean_maps(bench_runs):
    out = {}
    for method in next(iter(bench_runs.values())):
        out[method] = float(np.mean([map_per_movie(r[method])[1] for r in bench_runs.values()]))
    return out


def fixed_learned(d, k):
    rng = np.random.default_rng(10_000 + k)
    mode = "summary" if k % 2 == 0 else "raw"
    dim = 10 if mode == "summary" else 6 * d
    g1 = QNetwork.initialize(dim, 16, rng, state_mode=mode)
    g2 = QNetwork.initialize(dim, 16, rng, state_mode=mode)
    return LearnedController(g1, g2, mode, ManualControllerConfig(tau=float(rng.choice([0.04, 0.08, 0.2]))))


def test_criterion_1_trace_oracle():
    t0 = time.perf_counter()
    bad = []
    kinds = {"manual": 0, "learned": 0}
    for k in range(100):
        rng = np.random.default_rng(k)
        params = SyntheticParams(movies=1, casts=int(rng.integers(1, 7)), instances=int(rng.integers(1, 201)),
                                 d=int(rng.integers(2, 9)), seed=k, portrait_gap=float(rng.uniform(0, 0.3)),
                                 presence=(1.0, float(rng.uniform(0.3, 1)), float(rng.uniform(0, 1))))
        stream = generate_synthetic(params)[0]
        mu = float(rng.choice([0.0, 0.01, 0.1]))
        config = EngineConfig(mu=mu, use_cache=bool(rng.random() < 0.8))
        if k % 2:
            ctrl = fixed_learned(stream.d, k)
            gates = learned_gates(ctrl)
            kinds["learned"] += 1
        else:
            cfg = ManualControllerConfig(alpha=float(rng.uniform(0.6, 0.95)), beta=0.5, gamma=0.6,
                                         tau=float(rng.choice(TAUS)))
            ctrl, gates = ManualController(cfg), manual_gates(cfg)
            kinds["manual"] += 1
        result = run_movie(stream, ctrl, config)
        diff = mismatches(result, simulate(stream, gates, mu=mu, use_cache=config.use_cache))
        if diff:
            bad.append((k, diff[0]))
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed < 60
    assert report(1, ok, f"100 movies ({kinds['manual']} manual, {kinds['learned']} learned), "
                         f"{len(bad)} mismatching, {elapsed:.1f}s"), bad[:3]


def test_criterion_2_zero_noise(learned):
    maps = {}
    for seed in BENCH_SEEDS:
        movies = generate_synthetic(SyntheticParams(seed=seed, **ZERO_NOISE))
        variants = {
            "face_match": [face_match(m) for m in movies],
            "two_step": [two_step(m) for m in movies],
            "two_step_audio": [two_step(m, use_audio=True) for m in movies],
        }
        for name, ctrl in (("manual", ManualController()), ("learned", learned)):
            for cname, cfg in (("full", EngineConfig()), ("nocache", EngineConfig(use_cache=False)),
                               ("face", FACE_CACHE), ("face_nocache", FACE_NOCACHE)):
                variants[f"oms_{name}_{cname}"] = [run_movie(m, ctrl, cfg) for m in movies]
        for name, results in variants.items():
            maps.setdefault(name, []).append(map_per_movie(results)[1])
    worst = min(min(v) for v in maps.values())
    ok = all(v == 1.0 for vals in maps.values() for v in vals)
    assert report(2, ok, f"{len(maps)} methods x {len(BENCH_SEEDS)} seeds, worst mAP {worst!r}")


def test_criterion_3_degeneration(benchmark):
    total = same = 0
    for movies in benchmark.values():
        for m in movies:
            total += 1
            same += run_movie(m, ManualController(), STRICT_BASELINE).rankings() == face_match(m).rankings()
    assert report(3, same == total, f"{same}/{total} movies with identical rankings")


def test_criterion_4_table1_ordering(bench_runs):
    maps = mean_maps(bench_runs)
    gap_a = maps["oms_manual"] - maps["face_match"]
    gap_b = maps["oms_rmq"] - maps["oms_face_nocache"]
    ok = gap_a >= 0.01 and gap_b >= 0.01
    detail = ", ".join(f"{k} {100 * v:.2f}" for k, v in maps.items())
    assert report(4, ok, f"{detail}; gaps {100 * gap_a:.2f} and {100 * gap_b:.2f} points")


def test_criterion_5_tau_sweep(benchmark):
    movies = benchmark[0]
    sizes = []
    for tau in TAUS:
        ctrl = ManualController(ManualControllerConfig(tau=tau))
        sizes.append(float(np.mean([run_movie(m, ctrl).mean_cache_size for m in movies])))
    ok = all(a >= b for a, b in zip(sizes, sizes[1:])) and sizes[0] == max(sizes)
    assert report(5, ok, "mean cache " + " ".join(f"{t:g}:{s:.1f}" for t, s in zip(TAUS, sizes)))


def test_criterion_6_modalities(bench_runs):
    rows = []
    for seed, runs in bench_runs.items():
        rows.append((seed, map_per_movie(runs["oms_manual"])[1], map_per_movie(runs["oms_face_cache"])[1]))
    ok = all(full >= face for _, full, face in rows)
    assert report(6, ok, " ".join(f"seed{s}: {100 * a:.2f}>={100 * b:.2f}" for s, a, b in rows))


def _grad_error(seed):
    rng = np.random.default_rng(seed)
    i, h, b = (int(x) for x in rng.integers(1, 9, size=3))
    net = QNetwork.initialize(i, h, rng)
    net.b1 = rng.normal(size=h)
    s, a, y = rng.normal(size=(b, i)), rng.integers(2, size=b), rng.normal(size=b) * 5
    _, grads = net.loss_and_grads(s, a, y)
    worst = 0.0
    for p, g in zip(net.params(), grads):
        flat, gf = p.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + 1e-5
            lp = net.loss_and_grads(s, a, y)[0]
            flat[k] = old - 1e-5
            lm = net.loss_and_grads(s, a, y)[0]
            flat[k] = old
            num = (lp - lm) / 2e-5
            worst = max(worst, abs(num - gf[k]) / max(abs(num), abs(gf[k]), 1e-6))
    return worst


def test_criterion_7_qlearner_numerics(tmp_path):
    grad = max(_grad_error(s) for s in range(100))
    rng = np.random.default_rng(0)
    net = QNetwork.initialize(1, 8, rng)
    for _ in range(5000):
        a = int(rng.integers(2))
        net, _ = q_train_step(net, [Transition(np.ones(1), a, 5.0 * a, "bandit", 0)], 0.01)
    q1 = q_forward(net, np.ones(1))[1]
    movies = generate_synthetic(SyntheticParams(movies=2, casts=3, instances=60, d=8, seed=3))
    cfg = TrainConfig(epochs=2, iterations_per_movie=10, seed=5)
    blobs = []
    for run in range(2):
        g1, g2, _ = train_agents(movies, cfg)
        g1.save(tmp_path / f"g1_{run}.json")
        g2.save(tmp_path / f"g2_{run}.json")
        blobs.append((tmp_path / f"g1_{run}.json").read_bytes() + (tmp_path / f"g2_{run}.json").read_bytes())
    ok = grad < 1e-4 and abs(q1 - 5) <= 0.1 and blobs[0] == blobs[1]
    assert report(7, ok, f"max grad rel err {grad:.2e}, bandit Q1 {q1:.4f}, checkpoints identical {blobs[0] == blobs[1]}")


def test_criterion_8_metrics(bench_runs):
    ap = average_precision([1, 0, 1, 0])
    mono = conserved = True
    runs = 0
    for by_method in bench_runs.values():
        for results in by_method.values():
            for r in results:
                runs += 1
                curves = [recall_at_k_curve(r, k) for k in (1, 2, 3, 4, 5, 6)]
                for pts in zip(*curves):
                    if any(a[1] > b[1] for a, b in zip(pts, pts[1:])):
                        mono = False
                steps = r.trace.steps
                pushes = sum(s.pushed for s in steps)
                pops = sum(len(s.popped) for s in steps)
                if pushes != pops + len(r.trace.flushed):
                    conserved = False
    ok = abs(ap - 0.8333333333333334) <= 1e-9 and mono and conserved
    assert report(8, ok, f"AP {ap:.10f}, R@k monotone {mono}, cache conserved {conserved} over {runs} runs")


def test_criterion_9_cli(tmp_path):
    t0 = time.perf_counter()

    def cli(*argv):
        proc = subprocess.run([sys.executable, "-m", "omsearch", *argv], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        return proc.stdout

    data, ckpt = tmp_path / "data", tmp_path / "ckpt"
    cli("simulate", "--out", str(data), "--seed", "7")
    cli("simulate", "--out", str(tmp_path / "train"), "--seed", "1000", "--movies", "5")
    cli("train", "--data", str(tmp_path / "train"), "--out", str(ckpt), "--epochs", "1")
    cli("run", "--data", str(data), "--out", str(tmp_path / "rmq"), "--controller", str(ckpt))
    cli("run", "--data", str(data), "--out", str(tmp_path / "oms"))
    cli("run", "--data", str(data), "--out", str(tmp_path / "fm"), "--baseline", "face-match")
    for run in ("rmq", "oms", "fm"):
        cli("eval", "--run", str(tmp_path / run))
    table = cli("report", *(str(tmp_path / r) for r in ("fm", "oms", "rmq")), "--out", str(tmp_path / "table.txt"))
    cli("sweep", "--data", str(data), "--out", str(tmp_path / "sweep"))
    expected = [ckpt / "g1.json", ckpt / "g2.json", ckpt / "train_log.json", ckpt / "controller.json",
                tmp_path / "table.txt", tmp_path / "sweep" / "sweep.csv"]
    for run in ("rmq", "oms", "fm"):
        expected += [tmp_path / run / n for n in ("rankings.csv", "cache_series.csv", "run.json", "eval.json", "eval.csv")]
    missing = [str(p) for p in expected if not p.exists()]
    n_traces = len(list((tmp_path / "rmq" / "traces").glob("*.jsonl")))
    elapsed = time.perf_counter() - t0
    ok = not missing and n_traces == 10 and len(table.splitlines()) == 5 and elapsed < 600
    assert report(9, ok, f"pipeline in {elapsed:.1f}s, {len(expected) - len(missing)}/{len(expected)} files, "
                         f"{n_traces} traces"), missing


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
