"""Two-layer fully connected action-value network, in plain numpy."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

N_ACTIONS = 2
DEFAULT_HIDDEN = 64


class NetworkError(ValueError):
    pass


@dataclass(eq=False)
class QNetwork:
    """``Q(s) = W2 · relu(W1 · s + b1) + b2`` with two outputs.

    ``w1`` has shape ``(hidden, input)`` and ``w2`` shape ``(2, hidden)``.
    ``meta`` carries checkpoint bookkeeping (state mode, seed, epoch).
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        self.b2 = np.asarray(self.b2, dtype=np.float64)
        h, i = self.w1.shape
        if self.b1.shape != (h,) or self.w2.shape != (N_ACTIONS, h) or self.b2.shape != (N_ACTIONS,):
            raise NetworkError("inconsistent parameter shapes")

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    @classmethod
    def initialize(cls, input_dim: int, hidden_dim: int = DEFAULT_HIDDEN,
                   rng: np.random.Generator | int | None = 0, **meta) -> "QNetwork":
        rng = np.random.default_rng(rng)
        w1 = rng.normal(0.0, np.sqrt(2.0 / input_dim), size=(hidden_dim, input_dim))
        w2 = rng.normal(0.0, np.sqrt(1.0 / hidden_dim), size=(N_ACTIONS, hidden_dim))
        return cls(w1, np.zeros(hidden_dim), w2, np.zeros(N_ACTIONS), dict(meta))

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int = DEFAULT_HIDDEN, **meta) -> "QNetwork":
        return cls(np.zeros((hidden_dim, input_dim)), np.zeros(hidden_dim),
                   np.zeros((N_ACTIONS, hidden_dim)), np.zeros(N_ACTIONS), dict(meta))

    def copy(self) -> "QNetwork":
        return QNetwork(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy(), dict(self.meta))

    def params(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]

    def _check(self, states: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=np.float64)
        if states.shape[-1] != self.input_dim:
            raise NetworkError(f"state has length {states.shape[-1]}, network expects {self.input_dim}")
        return states

    def forward(self, states: np.ndarray) -> np.ndarray:
        """Q-values for one state ``(I,)`` -> ``(2,)`` or a batch ``(B, I)`` -> ``(B, 2)``."""
        s = self._check(states)
        hidden = np.maximum(s @ self.w1.T + self.b1, 0.0)
        return hidden @ self.w2.T + self.b2

    def loss_and_grads(self, states, actions, targets):
        """Mean squared error of ``Q(s, a)`` against ``targets`` and its gradients."""
        s = self._check(states)
        if s.ndim == 1:
            s = s[None, :]
        a = np.asarray(actions, dtype=np.int64)
        y = np.asarray(targets, dtype=np.float64)
        n = s.shape[0]
        pre = s @ self.w1.T + self.b1
        hidden = np.maximum(pre, 0.0)
        q = hidden @ self.w2.T + self.b2
        rows = np.arange(n)
        err = q[rows, a] - y
        loss = float(np.mean(err ** 2))

        dq = np.zeros_like(q)
        dq[rows, a] = 2.0 * err / n
        gw2 = dq.T @ hidden
        gb2 = dq.sum(axis=0)
        dh = (dq @ self.w2) * (pre > 0.0)
        gw1 = dh.T @ s
        gb1 = dh.sum(axis=0)
        return loss, [gw1, gb1, gw2, gb2]

    def to_dict(self) -> dict:
        out = {
            "input_dim": self.input_dim,
            "hidden_dim": self.hidden_dim,
            "w1": self.w1.reshape(-1).tolist(),
            "b1": self.b1.tolist(),
            "w2": self.w2.reshape(-1).tolist(),
            "b2": self.b2.tolist(),
        }
        for key in ("state_mode", "seed", "epoch"):
            out[key] = self.meta.get(key)
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "QNetwork":
        try:
            i, h = int(obj["input_dim"]), int(obj["hidden_dim"])
            w1 = np.array(obj["w1"], dtype=np.float64).reshape(h, i)
            w2 = np.array(obj["w2"], dtype=np.float64).reshape(N_ACTIONS, h)
            b1 = np.array(obj["b1"], dtype=np.float64)
            b2 = np.array(obj["b2"], dtype=np.float64)
        except (KeyError, ValueError) as exc:
            raise NetworkError(f"malformed checkpoint: {exc}") from None
        meta = {k: obj.get(k) for k in ("state_mode", "seed", "epoch") if obj.get(k) is not None}
        net = cls(w1, b1, w2, b2, meta)
        if not all(np.all(np.isfinite(p)) for p in net.params()):
            raise NetworkError("checkpoint contains non-finite parameters")
        return net

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "QNetwork":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def same_as(self, other: "QNetwork") -> bool:
        return all(np.array_equal(p, q) for p, q in zip(self.params(), other.params()))


def q_forward(net: QNetwork, state) -> tuple[float, float]:
    q = net.forward(np.asarray(state, dtype=np.float64).reshape(-1))
    return float(q[0]), float(q[1])
