"""Deep Q-learning in numpy: MLP with hand-written backprop, RMSProp, replay memory,
and the train / episode / target network loop."""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .seeding import stream

DEFAULT_SIZES = (15, 300, 200, 100)
BUDGET_RULES = ("terminate", "store_terminal")


class TrainingDivergedError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class QNetwork:
    """Fully connected net, ReLU hidden layers, linear output.

    ``weights[i]`` has shape (fan_in, fan_out).  ``updates`` counts optimizer
    steps applied so far.
    """

    def __init__(self, sizes: Sequence[int] = DEFAULT_SIZES, rng: np.random.Generator | None = None):
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"bad layer sizes {sizes}")
        self.sizes = tuple(int(s) for s in sizes)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        self.updates = 0
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            if rng is None:
                w = np.zeros((fan_in, fan_out))
            else:
                limit = math.sqrt(6.0 / (fan_in + fan_out))
                w = rng.uniform(-limit, limit, (fan_in, fan_out))
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
        return h

    def loss_and_grads(self, x: np.ndarray, actions: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray]]:
        """Mean of ``(y - Q(x)[a])**2`` and its gradient w.r.t. ``params``."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        actions = np.asarray(actions, dtype=np.int64)
        y = np.asarray(y, dtype=np.float64)
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        n = len(x)
        rows = np.arange(n)
        err = acts[-1][rows, actions] - y
        loss = float(np.mean(err**2))
        delta = np.zeros_like(acts[-1])
        delta[rows, actions] = 2.0 * err / n
        grads: list[np.ndarray] = [None] * (2 * len(self.weights))  # type: ignore[list-item]
        for i in range(last, -1, -1):
            grads[2 * i] = acts[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (acts[i] > 0)
        return loss, grads

    def copy_from(self, other: "QNetwork") -> None:
        if other.sizes != self.sizes:
            raise ValueError("layer sizes differ")
        for dst, src in zip(self.params, other.params):
            dst[...] = src
        self.updates = other.updates

    def clone(self) -> "QNetwork":
        net = QNetwork(self.sizes)
        net.copy_from(self)
        return net

    def same_weights(self, other: "QNetwork") -> bool:
        return self.sizes == other.sizes and all(np.array_equal(a, b) for a, b in zip(self.params, other.params))


def q_forward(net: QNetwork, state) -> np.ndarray:
    g = getattr(state, "g", state)
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (net.sizes[0],):
        raise ValueError(f"state must have {net.sizes[0]} features")
    return net.forward(g)


class RMSProp:
    def __init__(self, params: Sequence[np.ndarray], lr: float = 1e-4, decay: float = 0.95, eps: float = 1e-6):
        self.lr = lr
        self.decay = decay
        self.eps = eps
        self.cache = [np.zeros_like(p) for p in params]

    def apply(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        for p, g, c in zip(params, grads, self.cache):
            c *= self.decay
            c += (1.0 - self.decay) * g * g
            p -= self.lr * g / (np.sqrt(c) + self.eps)


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray | None  # None marks a terminal transition

    def __post_init__(self) -> None:
        if not math.isfinite(self.r):
            raise ValueError("reward must be finite")


class ReplayMemory:
    """Fixed-capacity FIFO ring buffer stored as arrays."""

    def __init__(self, capacity: int, state_dim: int = DEFAULT_SIZES[0]):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity)
        self.s_next = np.zeros((capacity, state_dim))
        self.terminal = np.zeros(capacity, dtype=bool)
        self._next = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(self, t: Transition) -> None:
        i = self._next
        self.s[i] = getattr(t.s, "g", t.s)
        self.a[i] = t.a
        self.r[i] = t.r
        if t.s_next is None:
            self.s_next[i] = 0.0
            self.terminal[i] = True
        else:
            self.s_next[i] = getattr(t.s_next, "g", t.s_next)
            self.terminal[i] = False
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _order(self) -> np.ndarray:
        start = self._next if self.size == self.capacity else 0
        return (start + np.arange(self.size)) % self.capacity

    def transitions(self) -> list[Transition]:
        """Stored transitions, oldest first."""
        return [self._get(i) for i in self._order()]

    def _get(self, i: int) -> Transition:
        nxt = None if self.terminal[i] else self.s_next[i].copy()
        return Transition(self.s[i].copy(), int(self.a[i]), float(self.r[i]), nxt)

    def sample(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        """Indices of a uniform sample with replacement."""
        if self.size == 0:
            raise ValueError("cannot sample from an empty memory")
        return rng.integers(0, self.size, size=batch_size)


@dataclass
class TrainerConfig:
    gamma: float = 1.0
    lr: float = 1e-4
    batch_size: int = 300
    target_sync: int = 1000
    memory_capacity: int = 100_000
    episodes: int = 200
    horizon: int = 24
    eps_start: float = 1.0
    eps_end: float = 0.0
    eps_fraction: float = 0.8
    rms_decay: float = 0.95
    rms_eps: float = 1e-6
    sizes: tuple[int, ...] = DEFAULT_SIZES
    budget_rule: str = "terminate"
    seed: int = 0

    def __post_init__(self) -> None:
        self.sizes = tuple(self.sizes)
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.batch_size < 1 or self.batch_size > self.memory_capacity:
            raise ValueError("need 1 <= batch_size <= memory_capacity")
        if self.target_sync < 1:
            raise ValueError("target_sync must be >= 1")
        if not 0.0 < self.eps_fraction <= 1.0:
            raise ValueError("eps_fraction must lie in (0, 1]")
        if self.budget_rule not in BUDGET_RULES:
            raise ValueError(f"budget_rule must be one of {BUDGET_RULES}")

    @property
    def total_steps(self) -> int:
        return self.episodes * self.horizon

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sizes"] = list(self.sizes)
        return d


def epsilon_at(step: int, total_steps: int, start: float = 1.0, end: float = 0.0, fraction: float = 0.8) -> float:
    """Linear decay from ``start`` to ``end`` over the first ``fraction`` of the steps."""
    span = max(fraction * total_steps, 1.0)
    frac = min(step / span, 1.0)
    return start + (end - start) * frac


def select_action(net: QNetwork, state, eps: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy; ties in the greedy branch go to the lowest index.

    One uniform is always drawn first, so the stream does not depend on eps.
    """
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    n = net.sizes[-1]
    if rng.random() < eps:
        return int(rng.integers(0, n))
    return int(np.argmax(q_forward(net, state)))


def compute_targets(rewards, next_states, terminal, target_net: QNetwork, gamma: float) -> np.ndarray:
    """``r`` for terminal transitions, ``r + gamma * max_a Q_target(s', a)`` otherwise."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    rewards = np.asarray(rewards, dtype=np.float64)
    terminal = np.asarray(terminal, dtype=bool)
    y = rewards.copy()
    live = ~terminal
    if gamma > 0 and live.any():
        y[live] += gamma * target_net.forward(np.asarray(next_states)[live]).max(axis=1)
    return y


def train_step(net: QNetwork, states, actions, targets, opt: RMSProp) -> float:
    """One RMSProp step on the taken-action squared error; returns the pre-update loss."""
    if len(actions) == 0:
        raise ValueError("empty batch")
    loss, grads = net.loss_and_grads(states, actions, targets)
    if not math.isfinite(loss):
        raise TrainingDivergedError(f"non-finite loss {loss} after {net.updates} updates")
    opt.apply(net.params, grads)
    net.updates += 1
    return loss


def sync_episode(episode_net: QNetwork, train_net: QNetwork) -> None:
    episode_net.copy_from(train_net)


def sync_target(target_net: QNetwork, train_net: QNetwork) -> None:
    target_net.copy_from(train_net)


class DqnAgent:
    """One learner: train net (updated), episode net (acts), target net (bootstraps)."""

    def __init__(self, config: TrainerConfig, rng: np.random.Generator | None = None, name: str = "agent"):
        self.config = config
        base = config.seed
        self.rng = rng if rng is not None else stream(base, "explore", name)
        self.train_net = QNetwork(config.sizes, stream(base, "init", name))
        self.episode_net = self.train_net.clone()
        self.target_net = self.train_net.clone()
        self.opt = RMSProp(self.train_net.params, config.lr, config.rms_decay, config.rms_eps)
        self.memory = ReplayMemory(config.memory_capacity, config.sizes[0])
        self._batch_rng = stream(base, "replay", name)
        self.global_step = 0
        self.batches = 0
        self.target_sync_steps: list[int] = []

    @property
    def epsilon(self) -> float:
        c = self.config
        return epsilon_at(self.global_step, c.total_steps, c.eps_start, c.eps_end, c.eps_fraction)

    def act(self, state) -> int:
        return select_action(self.episode_net, state, self.epsilon, self.rng)

    def observe(self, transition: Transition | None) -> float | None:
        """Count one environment step; store ``transition`` unless it is None and learn.

        Returns the batch loss when a gradient step was taken.
        """
        loss = None
        if transition is not None:
            self.memory.push(transition)
            if len(self.memory) >= self.config.batch_size:
                loss = self._learn()
        self.global_step += 1
        if self.global_step % self.config.target_sync == 0:
            sync_target(self.target_net, self.train_net)
            self.target_sync_steps.append(self.global_step)
        return loss

    def _learn(self) -> float:
        m = self.memory
        idx = m.sample(self.config.batch_size, self._batch_rng)
        y = compute_targets(m.r[idx], m.s_next[idx], m.terminal[idx], self.target_net, self.config.gamma)
        loss = train_step(self.train_net, m.s[idx], m.a[idx], y, self.opt)
        self.batches += 1
        return loss

    def end_episode(self) -> None:
        sync_episode(self.episode_net, self.train_net)


class Env(Protocol):
    budget: float
    budget_left: float

    def reset(self): ...

    def step(self, action: int): ...


@dataclass
class TrainingLog:
    losses: list[tuple[int, float, int]] = field(default_factory=list)  # (batch, loss, episode)
    episodes: list[dict] = field(default_factory=list)

    def episode_pur_amt(self) -> list[float]:
        return [e["pur_amt"] for e in self.episodes]

    def rows(self) -> list[tuple[int, float, int, float]]:
        """(batch, loss, episode, episode pur_amt) per gradient step."""
        pa = {e["episode"]: e["pur_amt"] for e in self.episodes}
        return [(b, l, ep, pa.get(ep, float("nan"))) for b, l, ep in self.losses]


def run_training_episode(agent: DqnAgent, env: Env, episode: int, log: TrainingLog) -> dict:
    """One episode of the learning loop on ``env``; rewards are scaled by the day's budget."""
    state = env.reset()
    total, cost0, steps, overspent = 0.0, env.budget_left, 0, False
    scale = env.budget if env.budget > 0 else 1.0
    while state is not None:
        a = agent.act(state)
        nxt, r, done = env.step(a)
        total += r
        steps += 1
        overspent = env.budget_left < 0
        if overspent and agent.config.budget_rule == "terminate":
            agent.observe(None)
            break
        terminal = done or overspent
        loss = agent.observe(Transition(state.g, a, r / scale, None if terminal else nxt.g))
        if loss is not None:
            log.losses.append((agent.batches, loss, episode))
        if terminal:
            break
        state = nxt
    agent.end_episode()
    rec = {"episode": episode, "pur_amt": total, "cost": cost0 - env.budget_left, "steps": steps, "overspent": overspent}
    log.episodes.append(rec)
    return rec


def train(env_factory: Callable[[int], Env], config: TrainerConfig, name: str = "agent") -> tuple[DqnAgent, TrainingLog]:
    """Learning loop over ``config.episodes`` days; ``env_factory(i)`` builds episode i's environment."""
    agent = DqnAgent(config, name=name)
    log = TrainingLog()
    for ep in range(config.episodes):
        run_training_episode(agent, env_factory(ep), ep, log)
    return agent, log


# ---------------------------------------------------------------------------
# checkpoints

_MAGIC = b"SSRTBQN\x00"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: str | Path, net: QNetwork, opt: RMSProp | None = None, meta: dict | None = None) -> None:
    """Magic, version, JSON header, row-major float64 weights (+ optimizer caches), CRC32."""
    header = {
        "sizes": list(net.sizes),
        "updates": net.updates,
        "optimizer": None if opt is None else {"lr": opt.lr, "decay": opt.decay, "eps": opt.eps},
        "meta": meta or {},
    }
    hb = json.dumps(header, sort_keys=True).encode()
    body = bytearray()
    body += _MAGIC
    body += struct.pack("<II", CHECKPOINT_VERSION, len(hb))
    body += hb
    for p in net.params:
        body += np.ascontiguousarray(p, dtype="<f8").tobytes()
    if opt is not None:
        for c in opt.cache:
            body += np.ascontiguousarray(c, dtype="<f8").tobytes()
    body += struct.pack("<I", zlib.crc32(bytes(body)))
    Path(path).write_bytes(bytes(body))


def load_checkpoint(path: str | Path) -> tuple[QNetwork, RMSProp | None, dict]:
    data = Path(path).read_bytes()
    if len(data) < len(_MAGIC) + 12 or data[: len(_MAGIC)] != _MAGIC:
        raise CheckpointError(f"{path}: not a Q-network checkpoint or truncated header")
    version, hlen = struct.unpack_from("<II", data, len(_MAGIC))
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    off = len(_MAGIC) + 8
    if len(data) < off + hlen + 4:
        raise CheckpointError(f"{path}: truncated checkpoint")
    try:
        header = json.loads(data[off : off + hlen])
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    off += hlen
    net = QNetwork(header["sizes"])
    opt = None
    if header["optimizer"] is not None:
        o = header["optimizer"]
        opt = RMSProp(net.params, o["lr"], o["decay"], o["eps"])
    arrays = net.params + (opt.cache if opt else [])
    need = sum(a.size for a in arrays) * 8
    if len(data) != off + need + 4:
        raise CheckpointError(f"{path}: truncated or oversized checkpoint ({len(data)} bytes)")
    (crc,) = struct.unpack_from("<I", data, off + need)
    if crc != zlib.crc32(data[: off + need]):
        raise CheckpointError(f"{path}: checksum mismatch")
    for a in arrays:
        n = a.size * 8
        a[...] = np.frombuffer(data, dtype="<f8", count=a.size, offset=off).reshape(a.shape)
        off += n
    net.updates = int(header["updates"])
    return net, opt, header["meta"]
