"""Per-agent observation vectors and the replanning target buffer.

Layout of one agent's observation for ``N`` agents and ``M`` target slots::

    [ own (row, col), other agents' (row, col) ...      2N
      offset to target 0 ... target M-1 (drow, dcol)    2M   (0, 0) once solved
      skill code of self, other agents ...              N
      skill code of target 0 ... target M-1             M
      goal-type flag of target 0 ... target M-1 ]       M    1 = AND, 0 = OR

Other agents follow in ascending index order.  Values are raw cell units;
:func:`normalize_observation` rescales the position block for the networks.
"""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .env import EnvState, Scenario, Target
from .exceptions import BufferFullError


def encode_skill_set(skills: int) -> int:
    """Integer code of a skill set; the bitmask itself is already injective."""
    return int(skills)


def observation_length(n_agents: int, n_targets: int) -> int:
    return 2 * n_agents + 2 * n_targets + n_agents + n_targets + n_targets


def agent_order(agent_index: int, n_agents: int) -> list[int]:
    return [agent_index] + [k for k in range(n_agents) if k != agent_index]


def masked_offset(state: EnvState, agent_index: int, target_index: int) -> tuple[int, int]:
    if state.solved[target_index]:
        return (0, 0)
    tr, tc = state.targets[target_index].position
    ar, ac = state.positions[agent_index]
    return (tr - ar, tc - ac)


def build_observation(state: EnvState, scenario: Scenario, agent_index: int) -> np.ndarray:
    order = agent_order(agent_index, scenario.n_agents)
    M = len(state.targets)
    pos = [c for k in order for c in state.positions[k]]
    offsets = [c for t in range(M) for c in masked_offset(state, agent_index, t)]
    agent_codes = [encode_skill_set(scenario.agents[k].skills) for k in order]
    target_codes = [encode_skill_set(t.skills) for t in state.targets]
    kinds = [int(t.kind) for t in state.targets]
    return np.array(pos + offsets + agent_codes + target_codes + kinds, dtype=np.int64)


def build_joint_observation(state: EnvState, scenario: Scenario) -> np.ndarray:
    return np.concatenate([build_observation(state, scenario, i) for i in range(scenario.n_agents)])


def position_scale(width: int, height: int) -> float:
    return 1.0 / max(width, height)


def normalize_observation(obs: np.ndarray, n_agents: int, n_targets: int, width: int, height: int) -> np.ndarray:
    """Scale the position and offset block of (a stack of) observations."""
    out = np.asarray(obs, dtype=np.float64).copy()
    n_pos = 2 * n_agents + 2 * n_targets
    out[..., :n_pos] *= position_scale(width, height)
    return out


def inject_target(state: EnvState, scenario: Scenario, new_target: Target) -> tuple[EnvState, int]:
    """Overwrite the lowest-index solved slot with ``new_target``.

    The new target starts unsolved; it is first checked on the next step.
    """
    for slot, solved in enumerate(state.solved):
        if solved:
            break
    else:
        raise BufferFullError("no solved target slot available for injection")
    targets = list(state.targets)
    targets[slot] = new_target
    flags = list(state.solved)
    flags[slot] = False
    new_state = replace(
        state, targets=tuple(targets), solved=tuple(flags), injected=state.injected + (slot,)
    )
    return new_state, slot
