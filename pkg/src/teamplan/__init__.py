"""Multi-agent planning for skill-constrained target coverage on a grid.

A recurrent MAPPO policy (numpy implementation) trained on randomly generated
scenarios, an exhaustive-search schedule baseline, and an evaluation harness.
"""
from .env import (
    Action,
    AgentSpec,
    EnvState,
    GenerationConfig,
    Scenario,
    Target,
    TargetKind,
    generate_scenario,
    reset,
    step,
)
from .es import Objective, bfs_oracle, exhaustive_search
from .estimator import ExhaustiveSearchPlanner, MAPPOPlanner
from .evaluate import compare_to_optimal, evaluate_policy, replanning_experiment, run_episode
from .obs import build_joint_observation, build_observation
from .reward import Phase, RewardWeights
from .trainer import PhaseConfig, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Action", "AgentSpec", "EnvState", "GenerationConfig", "Scenario", "Target", "TargetKind",
    "generate_scenario", "reset", "step", "Objective", "bfs_oracle", "exhaustive_search",
    "ExhaustiveSearchPlanner", "MAPPOPlanner", "evaluate_policy", "replanning_experiment",
    "run_episode", "compare_to_optimal", "build_observation", "build_joint_observation", "Phase", "RewardWeights", "PhaseConfig", "TrainConfig", "train",
]
