"""Dual-head DQN over the 50×2 threshold-level grid."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import BinaryMask, Image2D, RngStream, concat_state
from .nncore import Adam, ConcatCh, Conv2D, Dense, Network, ReLU
from .threshenv import (
    N_LEVELS,
    EpisodeResult,
    RewardConfig,
    ThresholdLevels,
    combine_masks,
    env_reset,
    env_step,
)


@dataclass(frozen=True)
class QNetworkSpec:
    input_size: int = 64
    channels: tuple[int, ...] = (8, 16, 32)
    hidden: int = 64

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.9
    batch: int = 32
    lr: float = 1e-3
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_fraction: float = 0.5
    target_sync_every: int = 250
    buffer_capacity: int = 10_000
    train_every: int = 1
    patience: int = 5
    min_delta: float = 1e-3
    ma_window: int = 3
    # store swapped pairs as (max, min) so the upper head learns the larger level
    canonical_actions: bool = True

    def __post_init__(self):
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")
        for e in (self.eps_start, self.eps_end):
            if not 0 <= e <= 1:
                raise ValueError("epsilons must lie in [0, 1]")


def build_qnet(spec: QNetworkSpec = QNetworkSpec()) -> Network:
    layers = []
    c_in, size = 2, spec.input_size
    for i, c in enumerate(spec.channels):
        layers.append((f"conv{i}", Conv2D(in_ch=c_in, out_ch=c, k=3, stride=2, pad=1)))
        layers.append((f"relu{i}", ReLU()))
        c_in, size = c, (size + 1) // 2
    layers += [
        ("neck", Dense(n_in=c_in * size * size, n_out=spec.hidden)),
        ("neck_relu", ReLU()),
        ("head_upper", Dense(n_in=spec.hidden, n_out=N_LEVELS)),
        ("head_lower", Dense(src="neck_relu", n_in=spec.hidden, n_out=N_LEVELS)),
        ("heads", ConcatCh(src="head_upper", sources=("head_lower",))),
    ]
    return Network(layers)


def resize_nearest(arr: np.ndarray, size: int) -> np.ndarray:
    """Nearest-neighbour resize of the last two axes to size×size."""
    h, w = arr.shape[-2:]
    if (h, w) == (size, size):
        return arr
    rows = np.minimum(((np.arange(size) + 0.5) * h / size).astype(int), h - 1)
    cols = np.minimum(((np.arange(size) + 0.5) * w / size).astype(int), w - 1)
    return arr[..., rows[:, None], cols[None, :]]


def observe(image: Image2D, mask: BinaryMask, size: int) -> np.ndarray:
    return resize_nearest(concat_state(image, mask), size)


# --------------------------------------------------------------------------
# replay

@dataclass
class Transition:
    state: np.ndarray
    actions: ThresholdLevels
    reward: float
    next_state: np.ndarray
    done: bool


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions."""

    def __init__(self, capacity: int = 10_000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: list[Optional[Transition]] = [None] * capacity
        self._next = 0
        self.size = 0

    def __len__(self):
        return self.size

    def push(self, t: Transition) -> None:
        self._items[self._next] = t
        self._next = (self._next + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def contents(self) -> list[Transition]:
        """Oldest first."""
        if self.size < self.capacity:
            return self._items[:self.size]
        return self._items[self._next:] + self._items[:self._next]

    def sample(self, n: int, gen: np.random.Generator) -> list[Transition]:
        idx = gen.integers(0, self.size, size=n)
        return [self._items[i] for i in idx]


# --------------------------------------------------------------------------
# acting

def greedy_level(q_head: np.ndarray) -> int:
    # np.argmax returns the first maximum, i.e. the lowest index on ties
    return int(np.argmax(q_head))


def q_values(qnet: Network, state: np.ndarray) -> np.ndarray:
    return qnet.forward(state[None], cache=False)[0]


def canonical_levels(lv: ThresholdLevels) -> ThresholdLevels:
    """The equivalent pair with the upper level not below the lower one."""
    return ThresholdLevels(max(lv.level_upper, lv.level_lower), min(lv.level_upper, lv.level_lower))


def select_actions(qnet, state: np.ndarray, epsilon: float, gen: np.random.Generator) -> ThresholdLevels:
    """Epsilon-greedy per head. ``qnet`` may be a Network or a precomputed
    100-vector of Q-values (upper head first)."""
    if not 0 <= epsilon <= 1:
        raise ValueError("epsilon must lie in [0, 1]")
    q = np.asarray(qnet) if not isinstance(qnet, Network) else None
    levels = []
    for h in range(2):
        if epsilon > 0 and gen.random() < epsilon:
            levels.append(int(gen.integers(0, N_LEVELS)))
        else:
            if q is None:
                q = q_values(qnet, state)
            levels.append(greedy_level(q[h * N_LEVELS:(h + 1) * N_LEVELS]))
    return ThresholdLevels(*levels)


def epsilon_at(step: int, planned: int, cfg: AgentConfig) -> float:
    horizon = max(1.0, cfg.eps_fraction * planned)
    frac = min(1.0, step / horizon)
    return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac


# --------------------------------------------------------------------------
# learning

def td_targets(target_net: Network, batch: Sequence[Transition], gamma: float) -> np.ndarray:
    """(N, 2) Bellman targets, one column per head."""
    if not batch:
        raise ValueError("empty batch")
    rewards = np.array([t.reward for t in batch], dtype=np.float64)
    done = np.array([t.done for t in batch], dtype=bool)
    y = np.repeat(rewards[:, None], 2, axis=1)
    live = np.flatnonzero(~done)
    if live.size and gamma > 0:
        nxt = np.stack([batch[i].next_state for i in live])
        qn = target_net.forward(nxt, cache=False).astype(np.float64)
        y[live, 0] += gamma * qn[:, :N_LEVELS].max(axis=1)
        y[live, 1] += gamma * qn[:, N_LEVELS:].max(axis=1)
    return y


def td_loss_and_grad(qnet: Network, batch: Sequence[Transition], targets: np.ndarray):
    states = np.stack([t.state for t in batch])
    q = qnet.forward(states)
    n = len(batch)
    idx = np.arange(n)
    a_up = np.array([t.actions.level_upper for t in batch])
    a_lo = np.array([t.actions.level_lower for t in batch]) + N_LEVELS
    err_up = q[idx, a_up].astype(np.float64) - targets[:, 0]
    err_lo = q[idx, a_lo].astype(np.float64) - targets[:, 1]
    loss = float((np.sum(err_up ** 2) + np.sum(err_lo ** 2)) / (2 * n))
    dq = np.zeros(q.shape, dtype=np.float64)
    dq[idx, a_up] = err_up / n
    dq[idx, a_lo] = err_lo / n
    return loss, dq


@dataclass
class Learner:
    """Online/target network pair with its optimizer and replay memory."""

    qnet: Network
    target: Network
    opt: Adam
    buffer: ReplayBuffer
    cfg: AgentConfig
    steps: int = 0

    @classmethod
    def create(cls, qnet: Network, cfg: AgentConfig) -> "Learner":
        return cls(qnet, qnet.copy(), Adam(lr=cfg.lr), ReplayBuffer(cfg.buffer_capacity), cfg)

    def sync_target(self) -> None:
        self.target.params[...] = self.qnet.params


def train_step(learner: Learner, gen: np.random.Generator) -> Optional[float]:
    """One TD update on a uniformly sampled batch; None if the buffer is too small."""
    cfg = learner.cfg
    if len(learner.buffer) < cfg.batch:
        return None
    batch = learner.buffer.sample(cfg.batch, gen)
    targets = td_targets(learner.target, batch, cfg.gamma)
    loss, dq = td_loss_and_grad(learner.qnet, batch, targets)
    learner.qnet.backward(dq)
    learner.opt.step(learner.qnet)
    learner.steps += 1
    if learner.steps % cfg.target_sync_every == 0:
        learner.sync_target()
    return loss


def run_episode_greedy(qnet: Network, image: Image2D, input_size: int = 64) -> EpisodeResult:
    """Three epsilon-free steps; no reward is computed."""
    state = env_reset(image)
    masks, levels = [], []
    while not state.done:
        lv = select_actions(q_values(qnet, observe(image, state.mask, input_size)), None, 0.0, None)
        state, _, _ = env_step(state, lv)
        masks.append(state.mask)
        levels.append(lv)
    return EpisodeResult(masks, combine_masks(masks), [], levels)


@dataclass
class DRLStats:
    epoch_rewards: list[float] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)
    env_steps: int = 0
    train_steps: int = 0
    stopped_early: bool = False

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else 0.0


def train_local_drl(samples, epochs: int, cfg: AgentConfig, rng: RngStream,
                    qnet: Optional[Network] = None, spec: QNetworkSpec = QNetworkSpec(),
                    reward_cfg: RewardConfig = RewardConfig(), early_stopping: bool = True,
                    step_offset: int = 0, planned_steps: Optional[int] = None):
    """Train a Q-network on local samples.

    Each epoch runs one exploratory 3-step episode per training image in a
    shuffled order, pushing every transition and taking a TD step every
    ``cfg.train_every`` environment steps. Epsilon decays linearly over the
    first ``eps_fraction`` of ``planned_steps`` (default: this call's own
    budget); ``step_offset`` continues a schedule across federated rounds.

    Returns ``(qnet, DRLStats)``.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("empty dataset")
    if qnet is None:
        qnet = build_qnet(spec)
        qnet.init_params(rng.child(0))
    stats = DRLStats()
    if epochs <= 0:
        return qnet, stats
    gen = rng.child(1).generator()
    learner = Learner.create(qnet, cfg)
    planned = planned_steps or epochs * len(samples) * 3
    step = step_offset
    best_ma, stale = -np.inf, 0
    for _ in range(epochs):
        ep_rewards, losses = [], []
        for i in gen.permutation(len(samples)):
            s = samples[i]
            state = env_reset(s.image, s.gt, reward_cfg)
            obs = observe(s.image, state.mask, spec.input_size)
            total = 0.0
            while not state.done:
                eps = epsilon_at(step, planned, cfg)
                lv = select_actions(qnet, obs, eps, gen)
                state, r, done = env_step(state, lv, reward_cfg)
                nxt = observe(s.image, state.mask, spec.input_size)
                if cfg.canonical_actions:
                    lv = canonical_levels(lv)
                learner.buffer.push(Transition(obs, lv, r, nxt, done))
                obs = nxt
                total += r
                step += 1
                stats.env_steps += 1
                if stats.env_steps % cfg.train_every == 0:
                    loss = train_step(learner, gen)
                    if loss is not None:
                        losses.append(loss)
            ep_rewards.append(total)
        stats.epoch_rewards.append(float(np.mean(ep_rewards)))
        stats.epoch_losses.append(float(np.mean(losses)) if losses else 0.0)
        # rewards are only comparable once exploration has reached its floor
        if early_stopping and epsilon_at(step, planned, cfg) == cfg.eps_end:
            ma = float(np.mean(stats.epoch_rewards[-cfg.ma_window:]))
            if ma > best_ma + cfg.min_delta:
                best_ma, stale = ma, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    stats.stopped_early = True
                    break
    stats.train_steps = learner.steps
    return qnet, stats
