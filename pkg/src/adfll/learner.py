"""Action-value learning over observation patches.

Two interchangeable backends: a tabular store keyed by the FNV-1a hash of
the patch bytes, and a linear model over one-hot features (one feature per
patch cell per quantized level, 27 x 8 = 216 at defaults). Training is
plain one-step Q-learning driven by mixed replay batches; evaluation runs
the greedy policy from seeded start points and reports terminal distance
errors per task.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .env import (
    Action,
    TaskEnvironment,
    obs_key,
    observe,
    sample_start,
    step,
)
from .hashing import fnv1a64
from .replay import (
    DEFAULT_MIX,
    ErbMeta,
    ExperienceReplayBuffer,
    Transition,
    erb_id,
    sample_mixed,
)
from .rng import Pcg32

N_ACTIONS = 6
TABULAR = "tabular"
LINEAR = "linear"

CHECKPOINT_MAGIC = b"ADQF"


class NumericalError(ArithmeticError):
    """A TD target became non-finite."""

    def __init__(self, index: int, value: float):
        super().__init__(f"non-finite TD target {value} at batch index {index}")
        self.index = index


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.05
    gamma: float = 0.9
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    episodes_per_round: int = 200
    max_steps_per_episode: int = 200
    batch_size: int = 32
    updates_per_step: int = 1
    erb_capacity: int = 4096
    mix: tuple[float, float, float] = DEFAULT_MIX
    backend: str = LINEAR
    half_extent: int = 1
    terminal_radius: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")
        for eps in (self.epsilon_start, self.epsilon_end):
            if not 0.0 <= eps <= 1.0:
                raise ValueError("epsilon must be in [0, 1]")
        if self.backend not in (TABULAR, LINEAR):
            raise ValueError(f"unknown backend {self.backend!r}")
        if min(self.mix) < 0.0 or sum(self.mix) <= 0.0:
            raise ValueError("mix weights must be nonnegative, not all zero")

    @property
    def n_cells(self) -> int:
        return (2 * self.half_extent + 1) ** 3

    def with_mix(self, mix: tuple[float, float, float]) -> "TrainConfig":
        return replace(self, mix=mix)


def epsilon_for_episode(cfg: TrainConfig, episode: int) -> float:
    n = cfg.episodes_per_round
    if n <= 1:
        return cfg.epsilon_start
    frac = episode / (n - 1)
    return cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac


class QFunction:
    """Mutable action-value function owned by a single agent."""

    def __init__(self, backend: str = LINEAR, n_cells: int = 27, levels: int = 8):
        if backend not in (TABULAR, LINEAR):
            raise ValueError(f"unknown backend {backend!r}")
        self.backend = backend
        self.n_cells = n_cells
        self.levels = levels
        self.feature_dim = n_cells * levels
        if backend == LINEAR:
            self.weights = np.zeros((N_ACTIONS, self.feature_dim), dtype=np.float64)
            self.table: dict[int, np.ndarray] = {}
        else:
            self.weights = None
            self.table = {}
        self._cell_base = np.arange(n_cells, dtype=np.int64) * levels

    def feature_indices(self, obs: bytes) -> np.ndarray:
        levels = np.frombuffer(obs, dtype=np.uint8).astype(np.int64)
        if len(levels) != self.n_cells:
            raise ValueError(
                f"observation of {len(levels)} cells, expected {self.n_cells}"
            )
        return self._cell_base + levels

    def batch_feature_indices(self, observations: list[bytes]) -> np.ndarray:
        joined = np.frombuffer(b"".join(observations), dtype=np.uint8)
        if len(joined) != len(observations) * self.n_cells:
            raise ValueError("observation length mismatch in batch")
        return joined.reshape(len(observations), self.n_cells) + self._cell_base

    def q_values(self, obs: bytes) -> np.ndarray:
        if self.backend == TABULAR:
            row = self.table.get(obs_key(obs))
            return row.copy() if row is not None else np.zeros(N_ACTIONS)
        return self.weights[:, self.feature_indices(obs)].sum(axis=1)

    def checkpoint_bytes(self) -> bytes:
        import struct

        head = CHECKPOINT_MAGIC + struct.pack(
            "<HB", 1, 0 if self.backend == TABULAR else 1
        )
        if self.backend == LINEAR:
            body = struct.pack("<II", N_ACTIONS, self.feature_dim)
            body += self.weights.astype("<f8").tobytes()
        else:
            body = struct.pack("<I", len(self.table))
            for key in sorted(self.table):
                body += struct.pack("<Q", key)
                body += self.table[key].astype("<f8").tobytes()
        return head + body

    def checkpoint_hash(self) -> int:
        return fnv1a64(self.checkpoint_bytes())


def q_values(qf: QFunction, obs: bytes) -> np.ndarray:
    return qf.q_values(obs)


def select_action(qf: QFunction, obs: bytes, epsilon: float, rng: Pcg32) -> Action:
    """Epsilon-greedy; greedy ties break toward the lowest action code and
    the greedy branch consumes no randomness."""
    if epsilon > 0.0 and rng.chance(epsilon):
        return Action(rng.below(N_ACTIONS))
    return Action(int(np.argmax(qf.q_values(obs))))


def td_update(qf: QFunction, batch: list[Transition], cfg: TrainConfig) -> QFunction:
    """One-step Q-learning over a batch.

    Targets are r + gamma * max_a' Q(s', a'), with no bootstrap on terminal
    transitions. The tabular backend applies updates sequentially; the linear
    backend takes one mini-batch gradient step (targets and errors computed
    at the pre-update weights), which is algebraically the same update and
    much faster vectorized.
    """
    if not batch:
        raise ValueError("empty batch")
    if qf.backend == TABULAR:
        for i, t in enumerate(batch):
            if t.terminal:
                target = t.reward
            else:
                target = t.reward + cfg.gamma * float(np.max(qf.q_values(t.next_state)))
            if not math.isfinite(target):
                raise NumericalError(i, target)
            key = obs_key(t.state)
            row = qf.table.get(key)
            if row is None:
                row = np.zeros(N_ACTIONS)
                qf.table[key] = row
            row[t.action] += cfg.alpha * (target - row[t.action])
        return qf
    n = len(batch)
    cells = qf.n_cells
    idx = qf.batch_feature_indices([t.state for t in batch])
    nidx = qf.batch_feature_indices([t.next_state for t in batch])
    rewards = np.array([t.reward for t in batch])
    terminal = np.array([t.terminal for t in batch])
    actions = np.array([t.action for t in batch], dtype=np.int64)
    q_next = qf.weights[:, nidx].sum(axis=2).max(axis=0)
    targets = rewards + cfg.gamma * np.where(terminal, 0.0, q_next)
    if not np.all(np.isfinite(targets)):
        bad = int(np.flatnonzero(~np.isfinite(targets))[0])
        raise NumericalError(bad, float(targets[bad]))
    q_sa = qf.weights[actions[:, None], idx].sum(axis=1)
    scaled = cfg.alpha * (targets - q_sa)
    flat = (actions[:, None] * qf.feature_dim + idx).ravel()
    qf.weights += np.bincount(
        flat, weights=np.repeat(scaled, cells), minlength=qf.weights.size
    ).reshape(qf.weights.shape)
    return qf


@dataclass
class RoundResult:
    published_erb: ExperienceReplayBuffer
    consumed_erb_ids: frozenset[int]
    eval_errors: dict[str, float] = field(default_factory=dict)
    steps: int = 0
    episodes: int = 0


def run_episodes(
    qf: QFunction,
    pick_env,
    n_episodes: int,
    current: ExperienceReplayBuffer,
    personal: list[ExperienceReplayBuffer],
    incoming: list[ExperienceReplayBuffer],
    cfg: TrainConfig,
    rng: Pcg32,
) -> int:
    """Core training loop shared by agent rounds and baseline schedules.

    `pick_env` maps the episode index to the TaskEnvironment to roll out in.
    Returns the total environment steps taken.
    """
    total_steps = 0
    for ep in range(n_episodes):
        env = pick_env(ep)
        eps = epsilon_for_episode(cfg, ep)
        box = sample_start(env, rng, cfg.terminal_radius, cfg.half_extent)
        obs = observe(env, box)
        for _ in range(cfg.max_steps_per_episode):
            action = select_action(qf, obs, eps, rng)
            box, reward, terminal = step(
                env, box, action, terminal_radius=cfg.terminal_radius
            )
            next_obs = observe(env, box)
            current.offer(Transition(obs, int(action), reward, next_obs, terminal), rng)
            for _ in range(cfg.updates_per_step):
                batch = sample_mixed(
                    current, personal, incoming, cfg.batch_size, cfg.mix, rng
                )
                td_update(qf, batch, cfg)
            obs = next_obs
            total_steps += 1
            if terminal:
                break
    return total_steps


def train_round(
    qf: QFunction,
    env: TaskEnvironment,
    personal: list[ExperienceReplayBuffer],
    incoming: list[ExperienceReplayBuffer],
    cfg: TrainConfig,
    rng: Pcg32,
    agent_id: str = "agent",
    round_index: int = 1,
    created_seq: int = 0,
) -> RoundResult:
    """One training round on a single task; publishes the round's ERB."""
    current = ExperienceReplayBuffer(
        meta=ErbMeta(agent_id, env.task_id, round_index, created_seq),
        capacity=cfg.erb_capacity,
    )
    steps = run_episodes(
        qf, lambda _ep: env, cfg.episodes_per_round, current, personal, incoming, cfg, rng
    )
    return RoundResult(
        published_erb=current.freeze(),
        consumed_erb_ids=frozenset(erb_id(e) for e in incoming),
        steps=steps,
        episodes=cfg.episodes_per_round,
    )


def evaluate(
    qf: QFunction,
    envs: list[TaskEnvironment],
    episodes_per_env: int,
    rng: Pcg32,
    max_steps: int = 200,
    terminal_radius: float = 1.0,
    half_extent: int = 1,
) -> dict[str, float]:
    """Greedy rollouts from rng-drawn starts; mean terminal distance per task.

    Greedy action selection consumes no randomness, so agents evaluated with
    identically seeded generators share the exact same start points.
    """
    if episodes_per_env < 1:
        raise ValueError("episodes_per_env must be >= 1")
    out: dict[str, float] = {}
    for env in envs:
        errors = []
        for _ in range(episodes_per_env):
            box = sample_start(env, rng, terminal_radius, half_extent)
            for _ in range(max_steps):
                action = select_action(qf, observe(env, box), 0.0, rng)
                box, _, terminal = step(
                    env, box, action, terminal_radius=terminal_radius
                )
                if terminal:
                    break
            errors.append(env.goal_distance(box.center))
        out[env.task_id] = sum(errors) / len(errors)
    return out
