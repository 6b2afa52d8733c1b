"""Grid world with skill-bearing agents and AND/OR collaborative targets.

Coordinates are ``(row, col)`` with row 0 at the top, so ``UP`` decrements the
row.  Skill sets are bitmask integers over an alphabet of ``n_skills`` skills:
skill ``k`` is bit ``1 << k``.

Every transition is a pure function of ``(state, scenario, joint_action)``;
states are frozen dataclasses and may be shared freely.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Iterable, Sequence

import numpy as np

from .exceptions import EpisodeOverError, InvalidConfigError

SCENARIO_SCHEMA_VERSION = 1


class Action(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3
    STAY = 4


# row/col delta per action, indexed by the integer encoding
MOVES = np.array([[-1, 0], [1, 0], [0, -1], [0, 1], [0, 0]], dtype=np.int64)
N_ACTIONS = len(Action)


class TargetKind(IntEnum):
    """Goal type; the integer value is the observation flag."""

    OR = 0
    AND = 1


def popcount(mask: int) -> int:
    return bin(int(mask)).count("1")


def skills_to_mask(skills: Iterable[int]) -> int:
    mask = 0
    for k in skills:
        mask |= 1 << int(k)
    return mask


def mask_to_skills(mask: int) -> tuple[int, ...]:
    mask = int(mask)
    return tuple(k for k in range(mask.bit_length()) if mask >> k & 1)


def is_satisfied(required: int, kind: TargetKind, present: int) -> bool:
    """Solve predicate for a target given the union of skills on its cell."""
    if kind == TargetKind.AND:
        return required & present == required
    return required & present != 0


@dataclass(frozen=True)
class Target:
    position: tuple[int, int]
    skills: int
    kind: TargetKind = TargetKind.OR

    def __post_init__(self):
        object.__setattr__(self, "position", (int(self.position[0]), int(self.position[1])))
        object.__setattr__(self, "skills", int(self.skills))
        object.__setattr__(self, "kind", TargetKind(self.kind))
        if self.skills <= 0:
            raise InvalidConfigError(f"target required skill set must be non-empty, got {self.skills}")


@dataclass(frozen=True)
class AgentSpec:
    position: tuple[int, int]
    skills: int

    def __post_init__(self):
        object.__setattr__(self, "position", (int(self.position[0]), int(self.position[1])))
        object.__setattr__(self, "skills", int(self.skills))
        if self.skills <= 0:
            raise InvalidConfigError(f"agent skill set must be non-empty, got {self.skills}")


@dataclass(frozen=True)
class Scenario:
    width: int
    height: int
    agents: tuple[AgentSpec, ...]
    targets: tuple[Target, ...]
    horizon: int = 128
    seed: int = 0
    n_skills: int = 2

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "targets", tuple(self.targets))
        if self.width <= 0 or self.height <= 0:
            raise InvalidConfigError("grid dimensions must be positive")
        if self.horizon <= 0:
            raise InvalidConfigError("horizon must be positive")
        if not self.agents:
            raise InvalidConfigError("scenario needs at least one agent")
        full = (1 << self.n_skills) - 1
        for item in (*self.agents, *self.targets):
            if not self.in_bounds(item.position):
                raise InvalidConfigError(f"position {item.position} outside {self.height}x{self.width} grid")
            if item.skills & ~full:
                raise InvalidConfigError(f"skill mask {item.skills} outside alphabet of {self.n_skills}")
        team = self.team_skills
        for k, t in enumerate(self.targets):
            if not is_satisfied(t.skills, t.kind, team):
                raise InvalidConfigError(f"target {k} cannot be solved by the team (skills {team})")

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def n_targets(self) -> int:
        return len(self.targets)

    @property
    def team_skills(self) -> int:
        mask = 0
        for a in self.agents:
            mask |= a.skills
        return mask

    def in_bounds(self, pos) -> bool:
        return 0 <= pos[0] < self.height and 0 <= pos[1] < self.width

    def to_dict(self) -> dict:
        return {
            "version": SCENARIO_SCHEMA_VERSION,
            "grid": {"width": self.width, "height": self.height},
            "n_skills": self.n_skills,
            "agents": [{"pos": list(a.position), "skills": a.skills} for a in self.agents],
            "targets": [
                {"pos": list(t.position), "skills": t.skills, "kind": t.kind.name} for t in self.targets
            ],
            "horizon": self.horizon,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        version = data.get("version", SCENARIO_SCHEMA_VERSION)
        if version != SCENARIO_SCHEMA_VERSION:
            raise InvalidConfigError(f"unsupported scenario schema version {version}")
        return cls(
            width=int(data["grid"]["width"]),
            height=int(data["grid"]["height"]),
            agents=tuple(AgentSpec(tuple(a["pos"]), a["skills"]) for a in data["agents"]),
            targets=tuple(
                Target(tuple(t["pos"]), t["skills"], TargetKind[t["kind"]]) for t in data["targets"]
            ),
            horizon=int(data["horizon"]),
            seed=int(data["seed"]),
            n_skills=int(data.get("n_skills", 2)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        return cls.from_dict(json.loads(text))

    def checksum(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


@dataclass(frozen=True)
class GenerationConfig:
    width: int = 32
    height: int = 32
    n_agents: int = 3
    n_targets: int = 5
    n_skills: int = 2
    horizon: int = 128
    # reject target layouts where a target sits strictly between two other
    # points (agent starts or targets) on a shared row or column
    avoid_pass_through: bool = False

    def validate(self) -> "GenerationConfig":
        if self.n_agents <= 0:
            raise InvalidConfigError("n_agents must be positive")
        if self.n_targets <= 0:
            raise InvalidConfigError("n_targets must be positive")
        if self.n_skills <= 0:
            raise InvalidConfigError("n_skills must be positive")
        if self.width <= 0 or self.height <= 0 or self.horizon <= 0:
            raise InvalidConfigError("width, height and horizon must be positive")
        if self.n_targets > self.width * self.height:
            raise InvalidConfigError("n_targets exceeds the number of grid cells")
        return self


def _has_pass_through(points: Sequence[tuple[int, int]], target_idx: Sequence[int]) -> bool:
    for k in target_idx:
        r, c = points[k]
        for a in range(len(points)):
            for b in range(a + 1, len(points)):
                if k in (a, b):
                    continue
                (ra, ca), (rb, cb) = points[a], points[b]
                if ra == rb == r and min(ca, cb) < c < max(ca, cb):
                    return True
                if ca == cb == c and min(ra, rb) < r < max(ra, rb):
                    return True
    return False


def random_target(rng: np.random.Generator, n_skills: int, position, allowed: int | None = None) -> Target:
    """Draw a target at ``position`` with a uniform non-empty requirement.

    ``allowed`` restricts the requirement to a sub-alphabet (bitmask); the
    requirement is drawn uniformly from its non-empty subsets.
    """
    full = (1 << n_skills) - 1
    allowed = full if allowed is None else allowed
    subsets = [m for m in range(1, full + 1) if m & ~allowed == 0]
    skills = subsets[int(rng.integers(len(subsets)))]
    kind = TargetKind.OR
    if popcount(skills) > 1:
        kind = TargetKind(int(rng.integers(2)))
    return Target(position, skills, kind)


def generate_scenario(config: GenerationConfig, seed: int) -> Scenario:
    """Random solvable scenario, deterministic in ``(config, seed)``."""
    config.validate()
    rng = np.random.default_rng(int(seed))
    full = (1 << config.n_skills) - 1
    n_cells = config.width * config.height

    agent_skills = [int(rng.integers(1, full + 1)) for _ in range(config.n_agents)]
    target_proto = [random_target(rng, config.n_skills, (0, 0)) for _ in range(config.n_targets)]

    def cell(i):
        return (int(i) // config.width, int(i) % config.width)

    for _attempt in range(1000):
        agent_pos = [cell(i) for i in rng.integers(n_cells, size=config.n_agents)]
        target_pos = [cell(i) for i in rng.choice(n_cells, size=config.n_targets, replace=False)]
        if not config.avoid_pass_through:
            break
        points = agent_pos + target_pos
        if not _has_pass_through(points, range(config.n_agents, len(points))):
            break
    else:
        raise InvalidConfigError("could not place targets without pass-through geometry")

    # solvability repair: every required skill must exist somewhere in the team
    required = 0
    for t in target_proto:
        required |= t.skills
    team = 0
    for s in agent_skills:
        team |= s
    for k in mask_to_skills(required & ~team):
        agent_skills[int(rng.integers(config.n_agents))] |= 1 << k

    return Scenario(
        width=config.width,
        height=config.height,
        agents=tuple(AgentSpec(p, s) for p, s in zip(agent_pos, agent_skills)),
        targets=tuple(Target(p, t.skills, t.kind) for p, t in zip(target_pos, target_proto)),
        horizon=config.horizon,
        seed=int(seed),
        n_skills=config.n_skills,
    )


@dataclass(frozen=True)
class EnvState:
    """Episode state.

    ``targets`` is the live target buffer.  It starts as the scenario's
    targets; replanning overwrites solved slots in place (see
    :func:`teamplan.obs.inject_target`).
    """

    positions: tuple[tuple[int, int], ...]
    solved: tuple[bool, ...]
    step: int
    last_actions: tuple[Action, ...]
    targets: tuple[Target, ...]
    injected: tuple[int, ...] = field(default=())

    @property
    def n_solved(self) -> int:
        return sum(self.solved)

    @property
    def unsolved(self) -> tuple[int, ...]:
        return tuple(k for k, s in enumerate(self.solved) if not s)


@dataclass(frozen=True)
class StepEvents:
    newly_solved: tuple[int, ...]
    prev_solved_count: int


def solve_check(positions, targets, solved, agent_skills) -> tuple[tuple[bool, ...], tuple[int, ...]]:
    present: dict[tuple[int, int], int] = {}
    for pos, skills in zip(positions, agent_skills):
        present[pos] = present.get(pos, 0) | skills
    new_solved = list(solved)
    newly = []
    for k, t in enumerate(targets):
        if solved[k]:
            continue
        if is_satisfied(t.skills, t.kind, present.get(t.position, 0)):
            new_solved[k] = True
            newly.append(k)
    return tuple(new_solved), tuple(newly)


def reset(scenario: Scenario) -> tuple[EnvState, StepEvents]:
    """Initial state; targets already covered by agents' start cells count as solved."""
    positions = tuple(a.position for a in scenario.agents)
    skills = [a.skills for a in scenario.agents]
    solved, newly = solve_check(positions, scenario.targets, (False,) * scenario.n_targets, skills)
    state = EnvState(
        positions=positions,
        solved=solved,
        step=0,
        last_actions=(Action.STAY,) * scenario.n_agents,
        targets=scenario.targets,
    )
    return state, StepEvents(newly, 0)


def move(pos: tuple[int, int], action: int, height: int, width: int) -> tuple[int, int]:
    dr, dc = MOVES[int(action)]
    r, c = pos[0] + int(dr), pos[1] + int(dc)
    if 0 <= r < height and 0 <= c < width:
        return (r, c)
    return pos


def step(state: EnvState, scenario: Scenario, joint_action: Sequence[int]) -> tuple[EnvState, StepEvents]:
    if len(joint_action) != scenario.n_agents:
        raise ValueError(f"expected {scenario.n_agents} actions, got {len(joint_action)}")
    if is_terminal(state, scenario):
        raise EpisodeOverError(f"episode over at step {state.step}")
    actions = tuple(Action(int(a)) for a in joint_action)
    positions = tuple(
        move(p, a, scenario.height, scenario.width) for p, a in zip(state.positions, actions)
    )
    skills = [a.skills for a in scenario.agents]
    solved, newly = solve_check(positions, state.targets, state.solved, skills)
    new_state = replace(
        state, positions=positions, solved=solved, step=state.step + 1, last_actions=actions
    )
    return new_state, StepEvents(newly, state.n_solved)


def is_terminal(state: EnvState, scenario: Scenario) -> bool:
    return all(state.solved) or state.step >= scenario.horizon
