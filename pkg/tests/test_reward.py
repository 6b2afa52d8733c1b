import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from conftest import AB, A, B, make_scenario
from teamplan.env import Action, GenerationConfig, TargetKind, generate_scenario, is_terminal, reset, step
from teamplan.exceptions import InvalidConfigError
from teamplan.reward import (
    Phase,
    RewardBreakdown,
    RewardWeights,
    attraction_reward,
    compute_breakdown,
    effective_weights,
    solve_time_cost,
    step_cost,
    target_reward,
    terminal_bonus,
    total_reward,
    wrong_target_cost,
)
from teamplan.env import StepEvents

PAPER = (Path(__file__).resolve().parents[1] / "paper.md")


def five_target_scenario(agent_pos=(0, 0), agent_skills=A, first=((0, 0), A), horizon=128, width=128):
    # one agent-matching target plus four targets requiring the other skill, held by a far agent
    targets = [(first[0], first[1], TargetKind.OR)] + [((127, k), B, TargetKind.OR) for k in range(4)]
    return make_scenario([(agent_pos, agent_skills), ((127, 127), B)], targets,
                         width=width, height=128, horizon=horizon)


def test_default_weights_match_published_table():
    w = RewardWeights()
    assert (w.c_ar, w.w_ar, w.w_tr, w.w_wc, w.w_sc, w.w_tc, w.w_tb) == (0.0075, 1.0, 1.0, 0.25, 0.3, 0.5, 0.2)
    if PAPER.exists():
        text = PAPER.read_text()
        assert "0.0075 & 1.0 & 1.0 & 0.25 & 0.3 & 0.5 & 0.2" in text
        assert "0.04 & 1.0 & 1.0 & 0.25 & 0.3 & 0.5 & 0.2" in text


def test_attraction_on_matching_target():
    sc = five_target_scenario(agent_pos=(0, 0), first=((5, 5), A))
    state, _ = reset(sc)
    state = replace(state, positions=((5, 5), (127, 127)))
    # distance 0 to the one matching target; the other four need B
    assert attraction_reward(state, sc, 0, 0.0075) == pytest.approx(1 / (5 * 128), abs=1e-15)
    assert 1 / (5 * 128) == 0.0015625


def test_attraction_at_distance_100():
    sc = five_target_scenario(agent_pos=(0, 0), first=((60, 80), A))
    state, _ = reset(sc)
    value = attraction_reward(state, sc, 0, 0.0075)
    assert value == pytest.approx(math.exp(-0.75) / 640, abs=1e-15)
    assert value == pytest.approx(0.000738, abs=5e-7)


def test_attraction_without_overlap_is_zero():
    sc = make_scenario([((0, 0), A), ((7, 7), B)], [((3, 3), B, TargetKind.OR)])
    state, _ = reset(sc)
    assert attraction_reward(state, sc, 0, 0.0075) == 0.0


def test_target_reward_values():
    assert target_reward(StepEvents((2,), 0), 5) == 0.2
    assert target_reward(StepEvents((), 0), 5) == 0.0


def test_wrong_target_cost_cases():
    sc = make_scenario([((1, 1), A), ((7, 7), B)],
                       [((1, 1), B, TargetKind.OR), ((1, 1), AB, TargetKind.AND), ((5, 5), AB, TargetKind.OR)])
    state, _ = reset(sc)
    assert state.solved == (False, False, False)
    # B target counts -1; the AND {A,B} target shares skill A
    assert wrong_target_cost(state, sc, 0) == -1.0
    assert wrong_target_cost(replace(state, solved=(True, False, False)), sc, 0) == 0.0


def test_step_cost_keys_on_action():
    assert step_cost(Action.STAY) == 0.0
    assert step_cost(Action.UP) == -1.0
    sc = make_scenario([((0, 0), A)], [((5, 5), A, TargetKind.OR)])
    state, _ = reset(sc)
    nxt, _ = step(state, sc, [Action.UP])
    assert nxt.positions == state.positions
    assert step_cost(nxt.last_actions[0]) == -1.0


def test_solve_time_cost_values():
    sc = five_target_scenario()
    state, _ = reset(sc)
    state = replace(state, solved=(True, True, False, False, False))
    assert solve_time_cost(state, 5, 128) == 3 / 640 == 0.0046875
    assert solve_time_cost(replace(state, solved=(True,) * 5), 5, 128) == 0.0
    unsolved = replace(state, solved=(False,) * 5)
    assert sum(solve_time_cost(unsolved, 5, 128) for _ in range(128)) == pytest.approx(1.0, abs=1e-12)


def test_terminal_bonus_cases():
    sc = make_scenario([((0, 0), A)], [((0, 1), A, TargetKind.OR)])
    state, _ = reset(sc)
    done = replace(state, solved=(True,))
    assert terminal_bonus(state, done) == 1.0
    assert terminal_bonus(done, done) == 0.0
    assert terminal_bonus(state, replace(state, step=64)) == 0.0


def test_composite_refinement_total():
    b = RewardBreakdown(ar=0.0015625, tr=0.2, wc=0.0, sc=-1.0, tc=0.0046875, tb=0.0)
    value = total_reward(b, RewardWeights(), Phase.REFINEMENT)
    expected = 1.0 * 0.0015625 + 1.0 * 0.2 + 0.25 * 0 + 0.3 * (-1) - 0.5 * 0.0046875 + 0.2 * 0
    assert abs(value - (-0.10078125)) <= 1e-12
    assert abs(expected - (-0.10078125)) <= 1e-12


def test_bootstrap_gates_costs_and_bonus():
    b = RewardBreakdown(ar=0.0, tr=0.0, wc=0.0, sc=-1.0, tc=0.5, tb=1.0)
    assert total_reward(b, RewardWeights(), Phase.BOOTSTRAP) == 0.0
    assert total_reward(RewardBreakdown(0, 0, 0, 0, 0, 0), RewardWeights(), Phase.REFINEMENT) == 0.0
    np.testing.assert_array_equal(effective_weights(RewardWeights(), "bootstrap")[3:], 0.0)


def test_weights_validation():
    with pytest.raises(InvalidConfigError):
        RewardWeights(w_sc=-1).validate()
    with pytest.raises(InvalidConfigError):
        RewardWeights(c_ar=0).validate()
    RewardWeights(c_ar=0.04).validate()


def test_target_reward_sums_to_solved_fraction_over_random_rollouts():
    gen = GenerationConfig(width=4, height=4, n_agents=2, n_targets=3, horizon=40)
    rng = np.random.default_rng(1)
    for seed in range(1000):
        sc = generate_scenario(gen, seed)
        prev, events = reset(sc)
        total = [0.0, 0.0]
        while not is_terminal(prev, sc):
            state, events = step(prev, sc, rng.integers(0, 5, size=2))
            for i in range(2):
                total[i] += compute_breakdown(prev, state, events, sc, i, 0.0075).tr
            prev = state
        # targets solved at reset give no reward, so count only the ones solved by moving
        _, initial = reset(sc)
        expected = (sum(prev.solved) - len(initial.newly_solved)) / 3
        assert total[0] == pytest.approx(expected, abs=1e-12)
        assert total[0] == total[1]


def test_full_episode_target_reward_sums_to_one():
    sc = make_scenario([((0, 0), AB)], [((0, 1), A, TargetKind.OR), ((0, 2), B, TargetKind.OR)])
    state, _ = reset(sc)
    total = 0.0
    for _ in range(2):
        nxt, ev = step(state, sc, [Action.RIGHT])
        total += compute_breakdown(state, nxt, ev, sc, 0, 0.0075).tr
        state = nxt
    assert total == 1.0
