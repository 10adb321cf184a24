"""Experiment configuration: agents, hubs, schedules, seeds, JSON round-trip.

A config fully determines a run. Task environments are derived from task ids
plus experiment-level volume parameters: the landmark position and the noise
seed of each task come from FNV-1a hashes of (env_seed, task_id), so the
same config always renders the same volumes.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .env import (
    ConfigError,
    EnvSpec,
    Orientation,
    TaskEnvironment,
    make_environment,
    parse_task_id,
)
from .hashing import hash_parts
from .learner import TrainConfig
from .rng import Pcg32, derive_rng

ASYNC_EVENT = "async_event"
SYNC_LOCKSTEP = "sync_lockstep"

BASELINE_ALL_KNOWING = "ALL_KNOWING"
BASELINE_PARTIAL = "PARTIAL"
BASELINE_SEQUENTIAL_LL = "SEQUENTIAL_LL"
BASELINE_KINDS = (BASELINE_ALL_KNOWING, BASELINE_PARTIAL, BASELINE_SEQUENTIAL_LL)


@dataclass(frozen=True)
class AgentSpec:
    agent_id: str
    hub_id: str
    speed: float = 1.0
    join_round: int = 1
    leave_round: int | None = None
    task_schedule: tuple[str, ...] = ()

    def __post_init__(self):
        if self.speed <= 0:
            raise ConfigError(f"{self.agent_id}: speed must be positive")
        if self.join_round < 1:
            raise ConfigError(f"{self.agent_id}: join_round must be >= 1")
        if self.leave_round is not None and self.leave_round <= self.join_round:
            raise ConfigError(f"{self.agent_id}: leave_round must exceed join_round")

    def active_in(self, round_index: int) -> bool:
        if round_index < self.join_round:
            return False
        return self.leave_round is None or round_index < self.leave_round


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    agents: tuple[AgentSpec, ...]
    hubs: tuple[str, ...]
    hub_edges: tuple[tuple[str, str], ...]
    mode: str = ASYNC_EVENT
    dropout_p: float = 0.0
    rounds_to_complete: int = 3
    sync_period_rounds: int = 1
    master_seed: int = 0
    dims: tuple[int, int, int] = (16, 16, 16)
    env_seed: int = 0
    base_round_time: float = 1.0
    train: TrainConfig = field(default_factory=TrainConfig)
    eval_task_ids: tuple[str, ...] = ()
    eval_episodes: int = 5
    eval_max_steps: int | None = None
    eval_every_round: bool = False
    baselines: tuple[str, ...] = ()

    def __post_init__(self):
        hub_set = set(self.hubs)
        if len(hub_set) != len(self.hubs):
            raise ConfigError("duplicate hub ids")
        seen = set()
        for a in self.agents:
            if a.agent_id in seen:
                raise ConfigError(f"duplicate agent id {a.agent_id}")
            seen.add(a.agent_id)
            if a.hub_id not in hub_set:
                raise ConfigError(f"{a.agent_id}: unknown hub {a.hub_id}")
            for tid in a.task_schedule:
                parse_task_id(tid)
        for u, v in self.hub_edges:
            if u not in hub_set or v not in hub_set:
                raise ConfigError(f"hub edge ({u}, {v}) references unknown hub")
            if u == v:
                raise ConfigError("hub edge endpoints must differ")
        if self.mode not in (ASYNC_EVENT, SYNC_LOCKSTEP):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not 0.0 <= self.dropout_p <= 1.0:
            raise ConfigError("dropout_p must be in [0, 1]")
        if self.rounds_to_complete < 1:
            raise ConfigError("rounds_to_complete must be >= 1")
        if self.sync_period_rounds < 1:
            raise ConfigError("sync_period_rounds must be >= 1")
        for tid in self.eval_task_ids:
            parse_task_id(tid)
        for b in self.baselines:
            if b not in BASELINE_KINDS:
                raise ConfigError(f"unknown baseline {b!r}")

    # Seed discipline: every random stream is derived from the master seed
    # and a component label, never shared.

    def agent_rng(self, agent_id: str) -> Pcg32:
        return derive_rng(self.master_seed, "agent", agent_id)

    def transfer_rng(self, agent_id: str) -> Pcg32:
        return derive_rng(self.master_seed, "xfer", agent_id)

    def sync_rng(self) -> Pcg32:
        return derive_rng(self.master_seed, "sync")

    def eval_rng(self) -> Pcg32:
        """Fresh generator per evaluation call; identical for every agent."""
        return derive_rng(self.master_seed, "eval")

    def baseline_rng(self, kind: str) -> Pcg32:
        return derive_rng(self.master_seed, "baseline", kind)

    @property
    def eval_seed_digest(self) -> int:
        return hash_parts(self.master_seed, "state", "eval")

    def env_spec_for_task(self, task_id: str) -> EnvSpec:
        pathology, sequence, orientation = parse_task_id(task_id)
        landmark = derive_landmark(self.env_seed, task_id, self.dims, orientation)
        return EnvSpec(
            landmark=landmark,
            dims=self.dims,
            pathology=pathology,
            sequence=sequence,
            orientation=orientation,
            seed=hash_parts(self.env_seed, task_id, "noise"),
        )

    def env_for_task(self, task_id: str) -> TaskEnvironment:
        return make_environment(self.env_spec_for_task(task_id))

    def eval_envs(self) -> list[TaskEnvironment]:
        return [self.env_for_task(t) for t in self.eval_task_ids]

    def effective_eval_max_steps(self) -> int:
        return (
            self.eval_max_steps
            if self.eval_max_steps is not None
            else self.train.max_steps_per_episode
        )


def derive_landmark(
    env_seed: int,
    task_id: str,
    dims: tuple[int, int, int],
    orientation: Orientation,
) -> tuple[int, int, int]:
    """Deterministic per-task landmark inside a margin of the rendered box."""
    p = orientation.perm
    extents = (dims[p[0]], dims[p[1]], dims[p[2]])
    coords = []
    for axis, ext in enumerate(extents):
        margin = max(1, ext // 4)
        span = max(1, ext - 2 * margin)
        coords.append(margin + hash_parts(env_seed, task_id, "landmark", axis) % span)
    return tuple(coords)  # type: ignore[return-value]


def to_json_dict(cfg: ExperimentConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["agents"] = [dataclasses.asdict(a) for a in cfg.agents]
    d["train"] = dataclasses.asdict(cfg.train)
    d["hub_edges"] = [list(e) for e in cfg.hub_edges]
    for a in d["agents"]:
        a["task_schedule"] = list(a["task_schedule"])
    return d


def from_json_dict(d: dict) -> ExperimentConfig:
    try:
        agents = tuple(
            AgentSpec(
                agent_id=a["agent_id"],
                hub_id=a["hub_id"],
                speed=a.get("speed", 1.0),
                join_round=a.get("join_round", 1),
                leave_round=a.get("leave_round"),
                task_schedule=tuple(a.get("task_schedule", ())),
            )
            for a in d["agents"]
        )
        train_d = dict(d.get("train", {}))
        if "mix" in train_d:
            train_d["mix"] = tuple(train_d["mix"])
        train = TrainConfig(**train_d)
        return ExperimentConfig(
            name=d["name"],
            agents=agents,
            hubs=tuple(d["hubs"]),
            hub_edges=tuple((e[0], e[1]) for e in d.get("hub_edges", [])),
            mode=d.get("mode", ASYNC_EVENT),
            dropout_p=d.get("dropout_p", 0.0),
            rounds_to_complete=d.get("rounds_to_complete", 3),
            sync_period_rounds=d.get("sync_period_rounds", 1),
            master_seed=d.get("master_seed", 0),
            dims=tuple(d.get("dims", (16, 16, 16))),
            env_seed=d.get("env_seed", 0),
            base_round_time=d.get("base_round_time", 1.0),
            train=train,
            eval_task_ids=tuple(d.get("eval_task_ids", ())),
            eval_episodes=d.get("eval_episodes", 5),
            eval_max_steps=d.get("eval_max_steps"),
            eval_every_round=d.get("eval_every_round", False),
            baselines=tuple(d.get("baselines", ())),
        )
    except (KeyError, TypeError) as e:
        raise ConfigError(f"malformed config: {e}") from None


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(to_json_dict(cfg), f, indent=2, sort_keys=True)
        f.write("\n")


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as f:
        return from_json_dict(json.load(f))
