"""Metrics, greedy policy evaluation, optimality ratios, replanning and timing.

Solve-time and team-effort metrics are only defined for solved episodes;
aggregates skip unsolved ones and report how many were skipped.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .env import Action, Scenario, TargetKind, is_terminal, random_target, reset, step
from .exceptions import EmptyBatchError, MetricUndefinedError, PairingError
from .nets import PolicyParams, actor_forward, greedy_action, initial_hidden
from .obs import build_observation, inject_target, normalize_observation


@dataclass(frozen=True)
class EpisodeResult:
    seed: int
    solved: bool
    t_solved: int | None
    moves: tuple[int, ...]
    horizon: int
    checksum: str = ""
    n_targets_solved: int = 0
    n_injected: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def success_rate(results: Sequence[EpisodeResult]) -> float:
    if not results:
        raise EmptyBatchError("success rate of an empty batch")
    return sum(r.solved for r in results) / len(results)


def solve_time_metric(result: EpisodeResult, T_max: int | None = None) -> int:
    if not result.solved:
        raise MetricUndefinedError("solve time is undefined for an unsolved episode")
    T_max = result.horizon if T_max is None else T_max
    return T_max - result.t_solved


def team_effort_metric(result: EpisodeResult, T_max: int | None = None, N: int | None = None) -> int:
    """Movement budget left over, summed across agents."""
    if not result.solved:
        raise MetricUndefinedError("team effort is undefined for an unsolved episode")
    T_max = result.horizon if T_max is None else T_max
    N = len(result.moves) if N is None else N
    return N * T_max - sum(result.moves)


def _mean_std(values):
    if not values:
        return None, None
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


@dataclass
class MetricsReport:
    label: str
    n_episodes: int
    n_solved: int
    success: float
    st_mean: float | None
    st_std: float | None
    tte_mean: float | None
    tte_std: float | None
    # "sum of all movements" reading of team effort: N*T_max - M_tte
    effort_mean: float | None
    n_excluded: int
    episodes: list[EpisodeResult] = field(default_factory=list, repr=False)

    def row(self) -> dict:
        d = asdict(self)
        d.pop("episodes")
        return d


def aggregate(results: Sequence[EpisodeResult], label: str = "policy") -> MetricsReport:
    rate = success_rate(results)
    solved = [r for r in results if r.solved]
    st = [solve_time_metric(r) for r in solved]
    tte = [team_effort_metric(r) for r in solved]
    effort = [sum(r.moves) for r in solved]
    st_m, st_s = _mean_std(st)
    tte_m, tte_s = _mean_std(tte)
    eff_m, _ = _mean_std(effort)
    return MetricsReport(
        label=label, n_episodes=len(results), n_solved=len(solved), success=rate,
        st_mean=st_m, st_std=st_s, tte_mean=tte_m, tte_std=tte_s, effort_mean=eff_m,
        n_excluded=len(results) - len(solved), episodes=list(results),
    )


def policy_observations(state, scenario: Scenario) -> np.ndarray:
    obs = np.stack([build_observation(state, scenario, i) for i in range(scenario.n_agents)])
    return normalize_observation(obs, scenario.n_agents, len(state.targets), scenario.width, scenario.height)


def run_episode(
    params: PolicyParams,
    scenario: Scenario,
    n_inject: int = 0,
    rng: np.random.Generator | None = None,
    on_step=None,
) -> EpisodeResult:
    """Greedy rollout to termination, injecting a new target per solve event.

    ``on_step(state)`` is called with every state, including the initial one.
    """
    state, events = reset(scenario)
    N = scenario.n_agents
    dtype = params.dtype
    hidden = initial_hidden(params.actor_arch, N, dtype=dtype)
    moves = [0] * N
    remaining = n_inject
    team = scenario.team_skills
    n_solved = 0

    def handle(state, events):
        nonlocal remaining, n_solved
        n_solved += len(events.newly_solved)
        for _ in events.newly_solved:
            if remaining == 0:
                break
            state, _slot = inject_target(state, scenario, _new_target(state, scenario, team, rng))
            remaining -= 1
        return state

    state = handle(state, events)
    if on_step is not None:
        on_step(state)
    t_solved = 0 if all(state.solved) else None
    while not is_terminal(state, scenario):
        obs = policy_observations(state, scenario).astype(dtype)
        probs, hidden = actor_forward(params, obs, hidden)
        actions = [greedy_action(p) for p in probs.astype(np.float64)]
        state, events = step(state, scenario, actions)
        for i, a in enumerate(actions):
            moves[i] += a != Action.STAY
        state = handle(state, events)
        if on_step is not None:
            on_step(state)
        if all(state.solved):
            t_solved = state.step
    solved = all(state.solved) and remaining == 0
    return EpisodeResult(
        seed=scenario.seed, solved=solved, t_solved=t_solved if solved else None,
        moves=tuple(moves), horizon=scenario.horizon, checksum=scenario.checksum(),
        n_targets_solved=n_solved, n_injected=n_inject - remaining,
    )


def _new_target(state, scenario: Scenario, team: int, rng: np.random.Generator):
    """Random target on a cell not held by any unsolved target, solvable by the team."""
    taken = {t.position for k, t in enumerate(state.targets) if not state.solved[k]}
    while True:
        cell = int(rng.integers(scenario.width * scenario.height))
        pos = (cell // scenario.width, cell % scenario.width)
        if pos not in taken:
            break
    return random_target(rng, scenario.n_skills, pos, allowed=team)


def evaluate_policy(params: PolicyParams, scenarios: Iterable[Scenario], T_max: int | None = None,
                    label: str = "policy") -> MetricsReport:
    return replanning_experiment(params, scenarios, n_inject=0, seed=0, T_max=T_max, label=label)


def replanning_experiment(params: PolicyParams, scenarios: Iterable[Scenario], n_inject: int, seed: int = 10,
                          T_max: int | None = None, label: str = "policy") -> MetricsReport:
    """Greedy episodes where each solve event brings in a new target until ``n_inject`` are used.

    Injected targets come from a per-episode stream seeded by ``(seed, scenario seed)``.
    """
    results = []
    for sc in scenarios:
        if T_max is not None:
            sc = replace(sc, horizon=T_max)
        rng = np.random.default_rng([seed, sc.seed])
        results.append(run_episode(params, sc, n_inject=n_inject, rng=rng))
    return aggregate(results, label)


@dataclass(frozen=True)
class OptimalRecord:
    """Exhaustive-search optima for one scenario."""

    seed: int
    checksum: str
    horizon: int
    n_agents: int
    m_st: int
    m_tte: int


@dataclass
class RatioReport:
    label: str
    n_episodes: int
    n_solved: int
    success: float
    st_ratio: float | None
    tte_ratio: float | None

    def row(self) -> dict:
        d = asdict(self)
        for k in ("st_ratio", "tte_ratio"):
            if d[k] is None:
                d[k] = "n/a"
        return d


def compare_to_optimal(policy: MetricsReport | Sequence[EpisodeResult], optimal: Sequence[OptimalRecord],
                       label: str = "policy") -> RatioReport:
    """Ratio of means of policy metrics to optimal metrics over policy-solved episodes."""
    episodes = policy.episodes if isinstance(policy, MetricsReport) else list(policy)
    by_sum = {o.checksum: o for o in optimal}
    if len(by_sum) != len(optimal) or {e.checksum for e in episodes} != set(by_sum) or len(episodes) != len(optimal):
        raise PairingError("policy episodes and optimal records do not cover the same scenarios")
    solved = [e for e in episodes if e.solved]
    rate = success_rate(episodes)
    if not solved:
        return RatioReport(label, len(episodes), 0, rate, None, None)
    st_rl = np.mean([solve_time_metric(e) for e in solved])
    tte_rl = np.mean([team_effort_metric(e) for e in solved])
    st_opt = np.mean([by_sum[e.checksum].m_st for e in solved])
    tte_opt = np.mean([by_sum[e.checksum].m_tte for e in solved])
    st_ratio = float(st_rl / st_opt) if st_opt != 0 else None
    tte_ratio = float(tte_rl / tte_opt) if tte_opt != 0 else None
    return RatioReport(label, len(episodes), len(solved), rate, st_ratio, tte_ratio)


@dataclass(frozen=True)
class TimingStats:
    repetitions: int
    n_steps: int
    total_s: float
    mean_episode_s: float
    std_episode_s: float
    mean_step_s: float


def measure_inference(params: PolicyParams, scenario: Scenario, repetitions: int = 10) -> TimingStats:
    """Wall time of greedy episodes run to the horizon (one batched actor pass per step).

    Once every target is solved the environment stops changing but the actor
    keeps being queried, so every repetition performs exactly ``horizon``
    forward passes.
    """
    if repetitions <= 0:
        raise EmptyBatchError("timing needs at least one repetition")
    N = scenario.n_agents
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        state, _ = reset(scenario)
        hidden = initial_hidden(params.actor_arch, N, dtype=params.dtype)
        for _step in range(scenario.horizon):
            obs = policy_observations(state, scenario).astype(params.dtype)
            probs, hidden = actor_forward(params, obs, hidden)
            actions = [greedy_action(p) for p in probs.astype(np.float64)]
            if not is_terminal(state, scenario):
                state, _ = step(state, scenario, actions)
        times.append(time.perf_counter() - t0)
    arr = np.asarray(times)
    return TimingStats(
        repetitions=repetitions, n_steps=scenario.horizon, total_s=float(arr.sum()),
        mean_episode_s=float(arr.mean()), std_episode_s=float(arr.std()),
        mean_step_s=float(arr.mean() / scenario.horizon),
    )


def dump_episodes(path, episodes: Sequence[EpisodeResult]):
    with open(path, "w") as fh:
        for e in episodes:
            fh.write(json.dumps(e.to_dict()) + "\n")
