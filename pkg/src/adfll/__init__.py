"""Asynchronous decentralized federated lifelong learning, desk scale.

Reinforcement-learning agents solve synthetic 3D landmark-localization
tasks and share experience replay buffers through hub nodes that
synchronize pairwise. The package provides the environment generator, the
replay and learning machinery, the hub network, a deterministic simulator
with experiment presets, a TCP hub/agent mode, and report tooling.
"""

from .env import (
    Action,
    AgentBox,
    EnvSpec,
    Orientation,
    Pathology,
    Sequence,
    TaskEnvironment,
    distance_error,
    make_environment,
    observe,
    sample_start,
    step,
)
from .config import AgentSpec, ExperimentConfig, load_config, save_config
from .hubnet import HubDatabase, TransferOutcome, db_digest, hub_sync
from .learner import QFunction, TrainConfig, evaluate, select_action, td_update, train_round
from .replay import ErbMeta, ExperienceReplayBuffer, Transition, erb_id, sample_mixed
from .rng import Pcg32, derive_rng
from .sim import SimResult, run_simulation
from .wire import deserialize_erb, serialize_erb

__version__ = "0.1.0"

__all__ = [
    "Action",
    "AgentBox",
    "AgentSpec",
    "EnvSpec",
    "ErbMeta",
    "ExperienceReplayBuffer",
    "ExperimentConfig",
    "HubDatabase",
    "Orientation",
    "Pathology",
    "Pcg32",
    "QFunction",
    "Sequence",
    "SimResult",
    "TaskEnvironment",
    "TrainConfig",
    "TransferOutcome",
    "Transition",
    "db_digest",
    "derive_rng",
    "deserialize_erb",
    "distance_error",
    "erb_id",
    "evaluate",
    "hub_sync",
    "load_config",
    "make_environment",
    "observe",
    "run_simulation",
    "sample_mixed",
    "sample_start",
    "save_config",
    "select_action",
    "serialize_erb",
    "step",
    "td_update",
    "train_round",
]
