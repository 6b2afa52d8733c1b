import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from teamplan.env import AgentSpec, GenerationConfig, Scenario, Target, TargetKind  # noqa: E402
from teamplan.nets import ArchDescriptor, init_params  # noqa: E402
from teamplan.obs import observation_length  # noqa: E402

A, B, AB = 1, 2, 3


def make_scenario(agents, targets, width=8, height=8, horizon=64, seed=0):
    """``agents``: [(pos, skills)]; ``targets``: [(pos, skills, kind)]."""
    return Scenario(
        width=width, height=height,
        agents=tuple(AgentSpec(p, s) for p, s in agents),
        targets=tuple(Target(p, s, k) for p, s, k in targets),
        horizon=horizon, seed=seed,
    )


def small_params(n_agents, n_targets, dense=8, hidden=8, seed=0, dtype=np.float64):
    D = observation_length(n_agents, n_targets)
    return init_params(seed, ArchDescriptor(D, dense, hidden, 5), ArchDescriptor(D * n_agents, dense, hidden, 1), dtype)


@pytest.fixture
def tiny_gen():
    return GenerationConfig(width=6, height=6, n_agents=2, n_targets=2, n_skills=2, horizon=32)


@pytest.fixture
def pair_scenario():
    # agent 0 {A} at (0,0), agent 1 {B} at (7,7); AND target {A,B} at (3,3), OR target {A} at (0,5)
    return make_scenario(
        [((0, 0), A), ((7, 7), B)],
        [((3, 3), AB, TargetKind.AND), ((0, 5), A, TargetKind.OR)],
    )


# acceptance summary: tests call record_criterion(n, passed, detail); printed at session end
_CRITERIA: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, passed: bool, detail: str):
    _CRITERIA[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        passed, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
