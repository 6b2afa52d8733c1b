"""Per-agent reward terms, phase gating and the weighted total.

Term order everywhere is ``(AR, TR, WC, SC, TC, TB)``:

* AR  attraction toward unsolved targets sharing a skill with the agent
* TR  shared payout of ``1/M`` per newly solved target
* WC  -1 per unsolved target under the agent with no common skill
* SC  -1 for any non-stay action
* TC  ``|unsolved| / (M * T_max)``, kept as a magnitude and subtracted
* TB  1 on the step the last target is solved
"""
from __future__ import annotations

import math
from dataclasses import astuple, dataclass
from enum import Enum

import numpy as np

from .env import Action, EnvState, Scenario, StepEvents
from .exceptions import InvalidConfigError

TERMS = ("AR", "TR", "WC", "SC", "TC", "TB")


class Phase(str, Enum):
    BOOTSTRAP = "bootstrap"
    REFINEMENT = "refinement"


# which terms each phase keeps
PHASE_GATES = {
    Phase.BOOTSTRAP: np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0]),
    Phase.REFINEMENT: np.ones(6),
}
# TC is reported as a positive magnitude but acts as a cost
TERM_SIGNS = np.array([1.0, 1.0, 1.0, 1.0, -1.0, 1.0])


@dataclass(frozen=True)
class RewardWeights:
    w_ar: float = 1.0
    w_tr: float = 1.0
    w_wc: float = 0.25
    w_sc: float = 0.3
    w_tc: float = 0.5
    w_tb: float = 0.2
    c_ar: float = 0.0075

    def validate(self) -> "RewardWeights":
        for name, value in zip(("w_ar", "w_tr", "w_wc", "w_sc", "w_tc", "w_tb"), self.vector()):
            if not value >= 0:
                raise InvalidConfigError(f"{name} must be >= 0, got {value}")
        if not self.c_ar > 0:
            raise InvalidConfigError(f"c_ar must be positive, got {self.c_ar}")
        return self

    def vector(self) -> np.ndarray:
        return np.array([self.w_ar, self.w_tr, self.w_wc, self.w_sc, self.w_tc, self.w_tb])


def effective_weights(weights: RewardWeights, phase: Phase) -> np.ndarray:
    """Signed, gated weights: ``total = components @ effective_weights``."""
    return weights.vector() * PHASE_GATES[Phase(phase)] * TERM_SIGNS


@dataclass(frozen=True)
class RewardBreakdown:
    ar: float
    tr: float
    wc: float
    sc: float
    tc: float
    tb: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)


def _overlap(a: int, b: int) -> bool:
    return a & b != 0


def attraction_reward(state: EnvState, scenario: Scenario, agent_index: int, c_ar: float) -> float:
    M = len(state.targets)
    skills = scenario.agents[agent_index].skills
    ar, ac = state.positions[agent_index]
    total = 0.0
    for k, t in enumerate(state.targets):
        if state.solved[k] or not _overlap(skills, t.skills):
            continue
        dist = math.hypot(t.position[0] - ar, t.position[1] - ac)
        total += math.exp(-c_ar * dist)
    return total / (M * scenario.horizon)


def target_reward(events: StepEvents, n_targets: int) -> float:
    return len(events.newly_solved) / n_targets


def wrong_target_cost(state: EnvState, scenario: Scenario, agent_index: int) -> float:
    skills = scenario.agents[agent_index].skills
    pos = state.positions[agent_index]
    cost = 0.0
    for k, t in enumerate(state.targets):
        if not state.solved[k] and t.position == pos and not _overlap(skills, t.skills):
            cost -= 1.0
    return cost


def step_cost(previous_action: int) -> float:
    return 0.0 if Action(int(previous_action)) == Action.STAY else -1.0


def solve_time_cost(state: EnvState, n_targets: int, horizon: int) -> float:
    return len(state.unsolved) / (n_targets * horizon)


def terminal_bonus(prev_state: EnvState, state: EnvState) -> float:
    return 1.0 if not all(prev_state.solved) and all(state.solved) else 0.0


def compute_breakdown(
    prev_state: EnvState,
    state: EnvState,
    events: StepEvents,
    scenario: Scenario,
    agent_index: int,
    c_ar: float,
) -> RewardBreakdown:
    M = len(state.targets)
    return RewardBreakdown(
        ar=attraction_reward(state, scenario, agent_index, c_ar),
        tr=target_reward(events, M),
        wc=wrong_target_cost(state, scenario, agent_index),
        sc=step_cost(state.last_actions[agent_index]),
        tc=solve_time_cost(state, M, scenario.horizon),
        tb=terminal_bonus(prev_state, state),
    )


def total_reward(breakdown: RewardBreakdown, weights: RewardWeights, phase: Phase) -> float:
    return float(breakdown.as_array() @ effective_weights(weights, phase))
