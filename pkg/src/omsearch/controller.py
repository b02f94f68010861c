"""Gate controllers: memory update (G1), cache insertion (G2), cache release (G3).

The manual gates are thresholds with the convention ``sgn(0) = 1``; the
learned controller replaces G1 and G2 with Q-networks and keeps a manual G3.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .features import MultiModalFeature, ScoreBreakdown
from .memory import MemoryBank
from .qnet import QNetwork

SUMMARY = "summary"
RAW = "raw"
STATE_MODES = (SUMMARY, RAW)
SUMMARY_DIM = 10
# summary cosines are shifted and scaled so the match/non-match boundary sits
# near zero at unit scale; without this the network learns the threshold slowly
SUMMARY_CENTER = 0.7
SUMMARY_SCALE = 0.15


class ControllerError(ValueError):
    pass


@dataclass(frozen=True)
class ManualControllerConfig:
    alpha: float = 0.89
    beta: float = 0.75
    gamma: float = 0.6
    tau: float = 0.08

    def __post_init__(self):
        if self.beta > self.alpha:
            raise ControllerError(f"beta ({self.beta}) must not exceed alpha ({self.alpha})")
        if self.tau < 0:
            raise ControllerError("tau must be non-negative")


def _sgn(x: float) -> int:
    return 1 if x >= 0 else 0


def manual_gate1(p: float, alpha: float) -> int:
    return _sgn(p - alpha)


def manual_gate2(p_all: Sequence[float], beta: float) -> int:
    out = 1
    for p in p_all:
        out *= _sgn(beta - p)
    return out


def aging(dt: int, tau: float) -> float:
    return tau * dt


def manual_gate3(p_all: Sequence[float], dt: int, gamma: float, tau: float) -> int:
    """Release once the aged score of some cast strictly exceeds ``gamma``.

    Negative scores are clamped to zero so aging can never flip a sign.
    """
    if dt < 0:
        raise ControllerError(f"negative cache age {dt}")
    weight = aging(dt, tau)
    prod = 1
    for p in p_all:
        prod *= _sgn(gamma - weight * max(p, 0.0))
    return 1 - prod


def state_dim(mode: str, d: int) -> int:
    if mode == SUMMARY:
        return SUMMARY_DIM
    if mode == RAW:
        return 6 * d
    raise ControllerError(f"unknown state mode {mode!r}")


def encode_states(bank: MemoryBank, f: MultiModalFeature, mode: str = SUMMARY) -> np.ndarray:
    """Encode the state of every cast at once, shape ``(C, state_dim)``."""
    if mode == RAW:
        flat_f = f.concatenated()
        mem = bank.slots.reshape(bank.n_casts, -1) * np.repeat(bank.filled, bank.d, axis=1)
        return np.hstack([mem, np.broadcast_to(flat_f, mem.shape)])
    if mode != SUMMARY:
        raise ControllerError(f"unknown state mode {mode!r}")
    dots, shared = bank.dots(f)
    raw_cos = np.where(shared, dots, 0.0)
    cos = np.where(shared, (dots - SUMMARY_CENTER) / SUMMARY_SCALE, 0.0)
    n_shared = shared.sum(axis=1)
    combined = np.where(n_shared > 0, raw_cos.sum(axis=1) / np.maximum(n_shared, 1), 0.0)
    c = bank.n_casts
    others = np.zeros(c)
    for j in range(c):
        if c > 1:
            others[j] = np.max(np.delete(combined, j))
    others = (others - SUMMARY_CENTER) / SUMMARY_SCALE
    presence = np.broadcast_to(f.presence_mask.astype(np.float64), (c, 3))
    return np.hstack([cos, presence, bank.filled.astype(np.float64), others[:, None]])


def encode_state(bank: MemoryBank, cast: str | int, f: MultiModalFeature, mode: str = SUMMARY) -> np.ndarray:
    """State of one (cast, instance) pair.

    ``summary`` is ``[3 cosines, 3 presence flags, 3 filled flags, best other score]``
    where cosines and the other-cast score are mapped through
    ``(x - SUMMARY_CENTER) / SUMMARY_SCALE`` and unshared cosines are 0;
    ``raw`` is the cast's three memory slots followed by the three feature vectors.
    """
    j = cast if isinstance(cast, (int, np.integer)) else bank.index(cast)
    return encode_states(bank, f, mode)[j]


def learned_gate(state: np.ndarray, net: QNetwork) -> int:
    """Greedy action; ties go to 0."""
    q = net.forward(np.asarray(state, dtype=np.float64).reshape(-1))
    return int(q[1] > q[0])


def top_cast(scores: Sequence[ScoreBreakdown]) -> int:
    """Index of the best combined score, lowest index on ties."""
    best = 0
    for j in range(1, len(scores)):
        if scores[j].combined > scores[best].combined:
            best = j
    return best


class ManualController:
    kind = "manual"

    def __init__(self, config: ManualControllerConfig | None = None):
        self.config = config or ManualControllerConfig()

    def gate1(self, bank: MemoryBank, f: MultiModalFeature, scores: list[ScoreBreakdown]) -> list[int]:
        return [manual_gate1(s.combined, self.config.alpha) for s in scores]

    def gate2(self, bank: MemoryBank, f: MultiModalFeature, scores: list[ScoreBreakdown]) -> int:
        return manual_gate2([s.combined for s in scores], self.config.beta)

    def gate3(self, scores: list[ScoreBreakdown], dt: int) -> int:
        return manual_gate3([s.combined for s in scores], dt, self.config.gamma, self.config.tau)

    def to_config(self) -> dict:
        return {"kind": self.kind, **asdict(self.config)}


class LearnedController:
    """Q-network gates for G1 and G2, manual release gate for the cache."""

    kind = "learned"

    def __init__(self, g1_net: QNetwork, g2_net: QNetwork, state_mode: str = SUMMARY,
                 release: ManualControllerConfig | None = None):
        if state_mode not in STATE_MODES:
            raise ControllerError(f"unknown state mode {state_mode!r}")
        if g1_net.input_dim != g2_net.input_dim:
            raise ControllerError("G1 and G2 networks disagree on input dimension")
        self.g1_net = g1_net
        self.g2_net = g2_net
        self.state_mode = state_mode
        self.release = release or ManualControllerConfig()

    def _states(self, bank, f):
        states = encode_states(bank, f, self.state_mode)
        if states.shape[1] != self.g1_net.input_dim:
            raise ControllerError(
                f"state length {states.shape[1]} does not match network input {self.g1_net.input_dim}")
        return states

    def gate1(self, bank, f, scores):
        q = self.g1_net.forward(self._states(bank, f))
        return [int(x) for x in (q[:, 1] > q[:, 0])]

    def gate2(self, bank, f, scores):
        state = self._states(bank, f)[top_cast(scores)]
        return learned_gate(state, self.g2_net)

    def gate3(self, scores, dt):
        return manual_gate3([s.combined for s in scores], dt, self.release.gamma, self.release.tau)

    def to_config(self) -> dict:
        return {"kind": self.kind, "state_mode": self.state_mode,
                "gamma": self.release.gamma, "tau": self.release.tau}


def load_controller(config: dict, base_dir: str | Path = "."):
    """Build a controller from a JSON config block.

    Learned controllers read ``g1.json`` and ``g2.json`` from the
    ``checkpoint`` directory.
    """
    kind = config.get("kind", "manual")
    defaults = ManualControllerConfig()
    thresholds = ManualControllerConfig(
        alpha=float(config.get("alpha", defaults.alpha)),
        beta=float(config.get("beta", defaults.beta)),
        gamma=float(config.get("gamma", defaults.gamma)),
        tau=float(config.get("tau", defaults.tau)),
    )
    if kind == "manual":
        return ManualController(thresholds)
    if kind == "learned":
        if "checkpoint" not in config:
            raise ControllerError("learned controller needs a 'checkpoint' directory")
        ckpt = Path(base_dir) / config["checkpoint"]
        g1 = QNetwork.load(ckpt / "g1.json")
        g2 = QNetwork.load(ckpt / "g2.json")
        mode = config.get("state_mode") or g1.meta.get("state_mode") or SUMMARY
        return LearnedController(g1, g2, mode, thresholds)
    raise ControllerError(f"unknown controller kind {kind!r}")
