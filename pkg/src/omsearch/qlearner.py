"""Training of the G1/G2 gate agents by regressing Q(s, a) onto truncated
Monte-Carlo returns collected from epsilon-greedy rollouts of the engine."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .controller import SUMMARY, LearnedController, ManualControllerConfig, encode_states, state_dim, top_cast
from .engine import OTHER, EngineConfig, MovieStream, OnlineSearcher
from .qnet import DEFAULT_HIDDEN, QNetwork

log = logging.getLogger(__name__)

G1 = "G1"
G2 = "G2"


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 100
    iterations_per_movie: int = 200
    horizon: int = 30
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    batch_size: int = 32
    hidden_dim: int = DEFAULT_HIDDEN
    state_mode: str = SUMMARY
    # transitions kept across rollouts per agent; 0 trains on the latest rollout only
    replay_capacity: int = 50_000
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 1 or self.iterations_per_movie < 1:
            raise ValueError("learning rate, epochs and iterations must be positive")
        if self.horizon < 0 or self.batch_size < 1 or self.hidden_dim < 1 or self.replay_capacity < 0:
            raise ValueError("horizon must be non-negative, batch and hidden sizes positive")
        for eps in (self.epsilon_start, self.epsilon_end):
            if not 0.0 <= eps <= 1.0:
                raise ValueError(f"epsilon {eps} outside [0, 1]")

    def epsilon(self, rollout: int, total: int) -> float:
        if total <= 1:
            return self.epsilon_start
        frac = rollout / (total - 1)
        return self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac


@dataclass
class Transition:
    state: np.ndarray
    action: int
    ret: float
    movie_id: str
    step: int


def reward(action: int, is_match: bool, gate_kind: str = G1) -> float:
    """1 when the action agrees with the label, else 0.

    For G1 ``is_match`` means the instance really is the cast being gated;
    for G2 it means the immediate top-1 prediction would be wrong, so
    caching is the right call.
    """
    if gate_kind not in (G1, G2):
        raise ValueError(f"unknown gate kind {gate_kind!r}")
    return 1.0 if (action == 1) == bool(is_match) else 0.0


def n_step_return(rewards: Sequence[float], t: int, horizon: int) -> float:
    """Inclusive sum ``rewards[t] + ... + rewards[t + horizon]``, truncated at the end."""
    if not 0 <= t < len(rewards):
        raise IndexError(f"step {t} outside [0, {len(rewards)})")
    return float(sum(rewards[t:t + horizon + 1]))


def q_train_step(net: QNetwork, batch: Sequence[Transition], lr: float) -> tuple[QNetwork, float]:
    """One SGD step on the squared error between ``Q(s, a)`` and the return.

    Returns the updated copy of ``net`` and the loss before the step.
    """
    if not batch:
        raise TrainingError("empty batch")
    states = np.stack([tr.state for tr in batch])
    actions = np.array([tr.action for tr in batch])
    targets = np.array([tr.ret for tr in batch])
    with np.errstate(invalid="ignore", over="ignore"):
        loss, grads = net.loss_and_grads(states, actions, targets)
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite loss {loss} (lr={lr}, batch of {len(batch)})")
    out = net.copy()
    for p, g in zip(out.params(), grads):
        p -= lr * g
    return out, loss


class ExplorationController(LearnedController):
    """Epsilon-greedy version of the learned controller that records every
    decision it makes, for turning a rollout into transitions."""

    def __init__(self, g1_net, g2_net, state_mode, release, epsilon: float, rng: np.random.Generator):
        super().__init__(g1_net, g2_net, state_mode, release)
        self.epsilon = epsilon
        self.rng = rng
        self.g1_records: list[tuple[int, np.ndarray, list[int]]] = []
        self.g2_records: list[tuple[int, np.ndarray, int, int]] = []
        self._t = -1

    def _explore(self, greedy: int) -> int:
        if self.rng.random() < self.epsilon:
            return int(self.rng.integers(2))
        return greedy

    def gate1(self, bank, f, scores):
        self._t += 1
        states = self._states(bank, f)
        q = self.g1_net.forward(states)
        bits = [self._explore(int(q[j, 1] > q[j, 0])) for j in range(len(scores))]
        self.g1_records.append((self._t, states, bits))
        return bits

    def gate2(self, bank, f, scores):
        best = top_cast(scores)
        state = self._states(bank, f)[best]
        q = self.g2_net.forward(state)
        bit = self._explore(int(q[1] > q[0]))
        self.g2_records.append((self._t, state, bit, best))
        return bit


def collect_transitions(stream: MovieStream, ctrl: ExplorationController, horizon: int,
                        engine_config: EngineConfig | None = None):
    """Roll one movie and convert the recorded decisions into transitions."""
    if any(x.truth is None for x in stream.instances):
        raise TrainingError(f"movie {stream.movie_id} has instances without ground truth")
    searcher = OnlineSearcher(stream, ctrl, engine_config or EngineConfig())
    for x in stream.instances:
        searcher.step(x)
    searcher.finish()

    n, c = len(stream.instances), len(stream.casts)
    cast_index = {cid: j for j, cid in enumerate(stream.casts)}
    truth = [cast_index.get(x.truth) if x.truth != OTHER else None for x in stream.instances]

    r1 = np.zeros((c, n))
    for t, _, bits in ctrl.g1_records:
        if truth[t] is None:
            continue
        for j in range(c):
            r1[j, t] = reward(bits[j], truth[t] == j, G1)
    g1 = []
    for t, states, bits in ctrl.g1_records:
        if truth[t] is None:
            continue
        for j in range(c):
            g1.append(Transition(states[j], bits[j], n_step_return(r1[j], t, horizon), stream.movie_id, t))

    r2 = np.zeros(n)
    for t, _, bit, best in ctrl.g2_records:
        if truth[t] is not None:
            r2[t] = reward(bit, best != truth[t], G2)
    g2 = [
        Transition(state, bit, n_step_return(r2, t, horizon), stream.movie_id, t)
        for t, state, bit, _ in ctrl.g2_records
        if truth[t] is not None
    ]
    return g1, g2, searcher


def _sgd(net, transitions, cfg, rng, iterations):
    if not transitions:
        return net, None
    losses = []
    for _ in range(iterations):
        idx = rng.integers(len(transitions), size=min(cfg.batch_size, len(transitions)))
        net, loss = q_train_step(net, [transitions[i] for i in idx], cfg.learning_rate)
        losses.append(loss)
    return net, float(np.mean(losses))


@dataclass
class EpochLog:
    epoch: int
    epsilon: float
    g1_mean_return: Optional[float]
    g2_mean_return: Optional[float]
    g1_loss: Optional[float]
    g2_loss: Optional[float]
    g1_steps: int
    g2_steps: int

    def to_dict(self):
        return asdict(self)


def _mean_or_none(xs):
    xs = [x for x in xs if x is not None]
    return float(np.mean(xs)) if xs else None


def train_agents(movies: Sequence[MovieStream], cfg: TrainConfig = TrainConfig(),
                 engine_config: EngineConfig | None = None,
                 release: ManualControllerConfig | None = None):
    """Train the G1 and G2 agents; returns ``(g1_net, g2_net, epoch logs)``.

    Each epoch visits every movie in order: one epsilon-greedy rollout,
    then ``iterations_per_movie`` minibatch steps per agent. Minibatches are
    drawn from a replay buffer holding the latest ``cfg.replay_capacity``
    transitions (just the current rollout when it is 0). Everything is
    driven by ``cfg.seed``.
    """
    if not movies:
        raise TrainingError("no training movies")
    for m in movies:
        if any(x.truth is None for x in m.instances):
            raise TrainingError(f"movie {m.movie_id} has instances without ground truth")
    dims = {m.d for m in movies}
    if len(dims) != 1:
        raise TrainingError(f"training movies disagree on d: {sorted(dims)}")
    in_dim = state_dim(cfg.state_mode, dims.pop())
    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    meta = {"state_mode": cfg.state_mode, "seed": cfg.seed, "epoch": 0}
    g1_net = QNetwork.initialize(in_dim, cfg.hidden_dim, np.random.default_rng(seeds[0]), **meta)
    g2_net = QNetwork.initialize(in_dim, cfg.hidden_dim, np.random.default_rng(seeds[1]), **meta)
    explore_rng = np.random.default_rng(seeds[2])
    batch_rng = np.random.default_rng(seeds[3])
    release = release or ManualControllerConfig()

    buf1: list[Transition] = []
    buf2: list[Transition] = []
    logs = []
    total = cfg.epochs * len(movies)
    rollout = 0
    for epoch in range(cfg.epochs):
        rets1, rets2, losses1, losses2 = [], [], [], []
        steps1 = steps2 = 0
        eps = cfg.epsilon(rollout, total)
        for movie in movies:
            eps = cfg.epsilon(rollout, total)
            ctrl = ExplorationController(g1_net, g2_net, cfg.state_mode, release, eps, explore_rng)
            t1, t2, _ = collect_transitions(movie, ctrl, cfg.horizon, engine_config)
            rets1.extend(tr.ret for tr in t1)
            rets2.extend(tr.ret for tr in t2)
            if cfg.replay_capacity:
                buf1 = (buf1 + t1)[-cfg.replay_capacity:]
                buf2 = (buf2 + t2)[-cfg.replay_capacity:]
                t1, t2 = buf1, buf2
            g1_net, l1 = _sgd(g1_net, t1, cfg, batch_rng, cfg.iterations_per_movie)
            g2_net, l2 = _sgd(g2_net, t2, cfg, batch_rng, cfg.iterations_per_movie)
            steps1 += cfg.iterations_per_movie if t1 else 0
            steps2 += cfg.iterations_per_movie if t2 else 0
            losses1.append(l1)
            losses2.append(l2)
            rollout += 1
        logs.append(EpochLog(epoch, eps, _mean_or_none(rets1), _mean_or_none(rets2),
                             _mean_or_none(losses1), _mean_or_none(losses2), steps1, steps2))
        log.info("epoch %d: eps=%.3f G1 loss=%s G2 loss=%s", epoch, eps, logs[-1].g1_loss, logs[-1].g2_loss)
    for net in (g1_net, g2_net):
        net.meta.update(epoch=cfg.epochs)
    return g1_net, g2_net, logs
