import pytest

from adfll.config import AgentSpec, ExperimentConfig
from adfll.env import EnvSpec, make_environment
from adfll.learner import TrainConfig


@pytest.fixture
def env16():
    return make_environment(EnvSpec(landmark=(8, 8, 8), dims=(16, 16, 16)))


@pytest.fixture
def tiny_train():
    return TrainConfig(
        alpha=0.0006,
        episodes_per_round=5,
        max_steps_per_episode=20,
        batch_size=8,
        erb_capacity=64,
        half_extent=2,
    )


def make_tiny_config(**overrides) -> ExperimentConfig:
    defaults = dict(
        name="tiny",
        agents=(
            AgentSpec("A1", "H1", task_schedule=("P0-S0-AXIAL", "P0-S1-AXIAL")),
            AgentSpec("A2", "H2", speed=2.0, task_schedule=("P1-S2-CORONAL", "P0-S3-AXIAL")),
        ),
        hubs=("H1", "H2"),
        hub_edges=(("H1", "H2"),),
        rounds_to_complete=2,
        master_seed=9,
        dims=(8, 8, 8),
        train=TrainConfig(
            alpha=0.0006,
            episodes_per_round=5,
            max_steps_per_episode=20,
            batch_size=8,
            erb_capacity=64,
            half_extent=2,
        ),
        eval_task_ids=("P0-S0-AXIAL",),
        eval_episodes=2,
    )
    defaults.update(overrides)
    return ExperimentConfig(**defaults)
