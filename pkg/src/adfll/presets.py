"""Canned experiment configurations.

Three presets mirror the system's reference experiments at desk scale:

* deployment: 4 agents on 3 hubs, heterogeneous speeds, asynchronous rounds,
  8 tasks, 3 rounds per agent, baselines enabled.
* addition: lockstep growth from 4 to 16 agents over 4 rounds (4, 8, 12, 16)
  under 75% transfer dropout, evaluated on the full 24-task grid.
* deletion: lockstep shrink from 24 agents to 1 over 5 rounds
  (24, 12, 6, 3, 1) under 75% dropout.
"""

from __future__ import annotations

from .config import (
    ASYNC_EVENT,
    BASELINE_ALL_KNOWING,
    BASELINE_PARTIAL,
    BASELINE_SEQUENTIAL_LL,
    SYNC_LOCKSTEP,
    AgentSpec,
    ExperimentConfig,
)
from .env import all_task_ids
from .learner import TrainConfig

# The 8-task suite: pathology x sequence x orientation picks spanning both
# pathologies, all four sequences, and all three orientations.
DEPLOYMENT_TASKS = (
    "P0-S1-AXIAL",
    "P0-S1-SAGITTAL",
    "P0-S1-CORONAL",
    "P0-S3-AXIAL",
    "P1-S3-SAGITTAL",
    "P1-S3-CORONAL",
    "P1-S2-CORONAL",
    "P1-S0-SAGITTAL",
)

_HUBS = ("H1", "H2", "H3")
_ALL_EDGES = (("H1", "H2"), ("H1", "H3"), ("H2", "H3"))


def preset_deployment(master_seed: int = 2) -> ExperimentConfig:
    """4 agents, 3 hubs, async rounds, dropout 0, 3 rounds each.

    Schedules are arranged so every task some slow agent never trains is
    still published early enough (by a fast agent or a first slow round)
    to reach both slow agents before their final round.
    """
    t = DEPLOYMENT_TASKS
    agents = (
        AgentSpec("A1", "H1", speed=1.0, task_schedule=(t[0], t[2], t[4])),
        AgentSpec("A2", "H2", speed=1.0, task_schedule=(t[1], t[5], t[6])),
        AgentSpec("A3", "H3", speed=4.0, task_schedule=(t[2], t[6], t[4])),
        AgentSpec("A4", "H3", speed=4.0, task_schedule=(t[3], t[7], t[5])),
    )
    return ExperimentConfig(
        name="deployment",
        agents=agents,
        hubs=_HUBS,
        hub_edges=_ALL_EDGES,
        mode=ASYNC_EVENT,
        dropout_p=0.0,
        rounds_to_complete=3,
        master_seed=master_seed,
        dims=(8, 8, 8),
        env_seed=master_seed,
        train=TrainConfig(
            alpha=0.0006,
            episodes_per_round=200,
            max_steps_per_episode=50,
            batch_size=64,
            erb_capacity=2048,
            half_extent=2,
            mix=(0.4, 0.2, 0.4),
        ),
        eval_task_ids=t,
        eval_episodes=20,
        eval_every_round=True,
        baselines=(BASELINE_ALL_KNOWING, BASELINE_PARTIAL, BASELINE_SEQUENTIAL_LL),
    )


def _ablation_train() -> TrainConfig:
    return TrainConfig(
        alpha=0.0006,
        episodes_per_round=90,
        max_steps_per_episode=50,
        batch_size=32,
        erb_capacity=1024,
        half_extent=2,
        mix=(0.4, 0.2, 0.4),
    )


def preset_addition(master_seed: int = 1) -> ExperimentConfig:
    """Lockstep agent growth 4 -> 16 over rounds (4, 8, 12, 16), dropout 75%.

    Tasks are assigned in pairs (two agents per task per round) so that every
    agent's received-buffer task coverage is identical at each round end.
    """
    tasks = all_task_ids()
    joins = {i: 1 + (i - 1) // 4 for i in range(1, 17)}  # 4 joiners per round
    schedules: dict[int, list[str]] = {i: [] for i in range(1, 17)}
    offset = 0
    for rnd in range(1, 5):
        active = [i for i in range(1, 17) if joins[i] <= rnd]
        for pos, i in enumerate(sorted(active)):
            schedules[i].append(tasks[(offset + pos // 2) % len(tasks)])
        offset += len(active) // 2
    agents = tuple(
        AgentSpec(
            f"A{i:02d}",
            _HUBS[(i - 1) % 3],
            join_round=joins[i],
            task_schedule=tuple(schedules[i]),
        )
        for i in range(1, 17)
    )
    return ExperimentConfig(
        name="addition",
        agents=agents,
        hubs=_HUBS,
        hub_edges=_ALL_EDGES,
        mode=SYNC_LOCKSTEP,
        dropout_p=0.75,
        rounds_to_complete=4,
        master_seed=master_seed,
        dims=(8, 8, 8),
        env_seed=master_seed,
        train=_ablation_train(),
        eval_task_ids=tuple(tasks),
        eval_episodes=3,
        eval_every_round=True,
    )


def preset_deletion(master_seed: int = 1) -> ExperimentConfig:
    """Lockstep agent shrink 24 -> 1 over rounds (24, 12, 6, 3, 1), dropout 75%.

    Round-robin task assignment with a one-step offset shift per round, so
    the surviving agent receives every one of the 24 tasks from its peers."""
    tasks = all_task_ids()
    active_counts = (24, 12, 6, 3, 1)
    leaves: dict[int, int | None] = {}
    for i in range(1, 25):
        leaves[i] = None
        for rnd, count in enumerate(active_counts, start=1):
            if i > count:
                leaves[i] = rnd
                break
    schedules: dict[int, list[str]] = {i: [] for i in range(1, 25)}
    assigned = 0
    for rnd, count in enumerate(active_counts, start=1):
        start = (assigned - (rnd - 1)) % len(tasks)
        for pos in range(count):
            schedules[pos + 1].append(tasks[(start + pos) % len(tasks)])
        assigned += count
    agents = tuple(
        AgentSpec(
            f"A{i:02d}",
            _HUBS[(i - 1) % 3],
            leave_round=leaves[i],
            task_schedule=tuple(schedules[i]),
        )
        for i in range(1, 25)
    )
    return ExperimentConfig(
        name="deletion",
        agents=agents,
        hubs=_HUBS,
        hub_edges=_ALL_EDGES,
        mode=SYNC_LOCKSTEP,
        dropout_p=0.75,
        rounds_to_complete=5,
        master_seed=master_seed,
        dims=(8, 8, 8),
        env_seed=master_seed,
        train=_ablation_train(),
        eval_task_ids=tuple(tasks),
        eval_episodes=2,
        eval_every_round=True,
    )


PRESETS = {
    "deployment": preset_deployment,
    "addition": preset_addition,
    "deletion": preset_deletion,
}
