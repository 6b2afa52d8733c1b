"""Exact baselines: schedule enumeration and a joint-state search oracle.

The schedule model assigns every unsolved target a minimal cover (a set of
agents whose skills satisfy it) and gives every agent an ordered visit list.
Agents walk Manhattan paths at one cell per step; a multi-agent cover
completes when its last member arrives, the others waiting on the target
cell.  :func:`exhaustive_search` enumerates all such plans; :func:`bfs_oracle`
searches the full joint action space and certifies it on small grids.
"""
from __future__ import annotations

import heapq
import itertools
import math
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

from .env import MOVES, Action, AgentSpec, Scenario, Target, is_satisfied, move, reset, solve_check
from .exceptions import BudgetExceededError, InfeasibleTargetError, InvalidPlanError


class Objective(str, Enum):
    SOLVE_TIME = "solve_time"
    TEAM_EFFORT = "team_effort"


@dataclass(frozen=True)
class CoverOption:
    target: int
    agents: tuple[int, ...]


@dataclass(frozen=True)
class Visit:
    target: int
    cell: tuple[int, int]
    arrival: int
    completion: int


@dataclass(frozen=True)
class PlanSchedule:
    assignment: tuple[tuple[int, tuple[int, ...]], ...]
    orders: tuple[tuple[int, ...], ...]
    visits: tuple[tuple[Visit, ...], ...]
    t_solved: int
    total_moves: int
    moves: tuple[int, ...]

    def to_dict(self, objective: Objective | None = None, seed: int | None = None) -> dict:
        return {
            "objective": Objective(objective).value if objective is not None else None,
            "seed": seed,
            "t_solved": self.t_solved,
            "total_moves": self.total_moves,
            "assignment": {str(k): list(c) for k, c in self.assignment},
            "agents": [
                {
                    "moves": self.moves[i],
                    "waypoints": [
                        {"target": v.target, "pos": list(v.cell), "arrival": v.arrival, "completion": v.completion}
                        for v in visits
                    ],
                }
                for i, visits in enumerate(self.visits)
            ],
        }


def manhattan(a, b) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def enumerate_covers(target: Target, agents: Sequence[AgentSpec], target_index: int = 0) -> list[CoverOption]:
    """Minimal agent subsets satisfying ``target``, ordered by size then indices."""
    covers = []
    for size in range(1, len(agents) + 1):
        for combo in itertools.combinations(range(len(agents)), size):
            present = 0
            for i in combo:
                present |= agents[i].skills
            if not is_satisfied(target.skills, target.kind, present):
                continue
            minimal = True
            for drop in combo:
                rest = 0
                for i in combo:
                    if i != drop:
                        rest |= agents[i].skills
                if size > 1 and is_satisfied(target.skills, target.kind, rest):
                    minimal = False
                    break
            if minimal:
                covers.append(CoverOption(target_index, combo))
    if not covers:
        raise InfeasibleTargetError(f"target {target_index} cannot be satisfied by the team")
    return covers


def _simulate(starts, cells, covers: Mapping[int, tuple[int, ...]], orders):
    """Event simulation of a plan.

    Returns ``(t_solved, moves_per_agent, visits)`` or ``None`` on deadlock
    (two covers each waiting for the other).
    """
    n = len(starts)
    ptr = [0] * n
    ready = [0] * n
    pos = list(starts)
    moves = [0] * n
    visits = [[] for _ in range(n)]
    pending = sorted(covers)
    t_solved = 0
    while pending:
        progressed = False
        still = []
        for k in pending:
            cover = covers[k]
            if all(ptr[a] < len(orders[a]) and orders[a][ptr[a]] == k for a in cover):
                cell = cells[k]
                arrivals = {a: ready[a] + manhattan(pos[a], cell) for a in cover}
                done = max(arrivals.values())
                for a in cover:
                    moves[a] += manhattan(pos[a], cell)
                    pos[a] = cell
                    ready[a] = done
                    ptr[a] += 1
                    visits[a].append(Visit(k, cell, arrivals[a], done))
                t_solved = max(t_solved, done)
                progressed = True
            else:
                still.append(k)
        if not progressed:
            return None
        pending = still
    return t_solved, moves, visits


def _initially_unsolved(scenario: Scenario) -> list[int]:
    state, _ = reset(scenario)
    return [k for k, s in enumerate(state.solved) if not s]


def schedule_cost(scenario: Scenario, assignment, orders: Sequence[Sequence[int]]) -> PlanSchedule:
    """Simulate a plan; ``assignment`` maps each target left unsolved at reset to its cover."""
    covers = {int(k): tuple(sorted(c.agents if isinstance(c, CoverOption) else c)) for k, c in dict(assignment).items()}
    orders = tuple(tuple(int(k) for k in o) for o in orders)
    if len(orders) != scenario.n_agents:
        raise InvalidPlanError(f"expected {scenario.n_agents} agent orders, got {len(orders)}")
    if set(covers) != set(_initially_unsolved(scenario)):
        raise InvalidPlanError("assignment must cover exactly the targets unsolved at reset")
    for k, cover in covers.items():
        if not cover or any(not 0 <= a < scenario.n_agents for a in cover):
            raise InvalidPlanError(f"invalid cover {cover} for target {k}")
        present = 0
        for a in cover:
            present |= scenario.agents[a].skills
        t = scenario.targets[k]
        if not is_satisfied(t.skills, t.kind, present):
            raise InvalidPlanError(f"cover {cover} does not satisfy target {k}")
    for a, order in enumerate(orders):
        expected = sorted(k for k, c in covers.items() if a in c)
        if sorted(order) != expected:
            raise InvalidPlanError(f"agent {a} order {order} does not match its assigned targets {expected}")
    starts = [ag.position for ag in scenario.agents]
    cells = {k: scenario.targets[k].position for k in covers}
    out = _simulate(starts, cells, covers, orders)
    if out is None:
        raise InvalidPlanError("plan deadlocks: covers wait on each other")
    t_solved, moves, visits = out
    return PlanSchedule(
        assignment=tuple(sorted(covers.items())),
        orders=orders,
        visits=tuple(tuple(v) for v in visits),
        t_solved=t_solved,
        total_moves=sum(moves),
        moves=tuple(moves),
    )


def _key(objective: Objective, t_solved: int, total_moves: int) -> tuple[int, int]:
    if objective == Objective.SOLVE_TIME:
        return (t_solved, total_moves)
    return (total_moves, t_solved)


def count_plans(scenario: Scenario, budget: float = math.inf) -> int:
    """Number of (assignment, per-agent order) combinations; stops once above ``budget``."""
    targets = _initially_unsolved(scenario)
    options = [enumerate_covers(scenario.targets[k], scenario.agents, k) for k in targets]
    n_assign = math.prod(len(o) for o in options)
    if n_assign > budget:
        return n_assign
    total = 0
    for combo in itertools.product(*options):
        counts = [0] * scenario.n_agents
        for cover in combo:
            for a in cover.agents:
                counts[a] += 1
        total += math.prod(math.factorial(c) for c in counts)
        if total > budget:
            return total
    return total


def metric_value(scenario: Scenario, plan: PlanSchedule, objective: Objective) -> int:
    """Solve-time metric (time left) or team-effort metric (moves left) of a plan."""
    if Objective(objective) == Objective.SOLVE_TIME:
        return scenario.horizon - plan.t_solved
    return scenario.n_agents * scenario.horizon - plan.total_moves


def exhaustive_search(scenario: Scenario, objective: Objective, budget: float = 5e6,
                      prune: bool = True) -> tuple[PlanSchedule, int]:
    """Optimal schedule under ``objective``.

    Ties break on the other objective, then on enumeration order (covers in
    :func:`enumerate_covers` order, then per-agent permutations in
    lexicographic order).  Returns the plan and its metric value.
    """
    objective = Objective(objective)
    n_plans = count_plans(scenario, budget)
    if n_plans > budget:
        raise BudgetExceededError(f"{n_plans} plans exceed the search budget {budget:g}", bound=n_plans)
    targets = _initially_unsolved(scenario)
    N = scenario.n_agents
    starts = [a.position for a in scenario.agents]
    cells = {k: scenario.targets[k].position for k in targets}
    options = [enumerate_covers(scenario.targets[k], scenario.agents, k) for k in targets]

    best_key = None
    best = None
    for combo in itertools.product(*options):
        covers = {c.target: c.agents for c in combo}
        owned = [tuple(k for k in targets if a in covers[k]) for a in range(N)]
        if prune and best_key is not None:
            t_lb = max((manhattan(starts[a], cells[k]) for k in targets for a in covers[k]), default=0)
            m_lb = sum(max((manhattan(starts[a], cells[k]) for k in owned[a]), default=0) for a in range(N))
            if _key(objective, t_lb, m_lb) > best_key:
                continue
        # depth-first over agents, each trying its permutations in order
        perms = [list(itertools.permutations(o)) for o in owned]
        chosen: list[tuple[int, ...]] = []

        def route_len(a, order):
            length, pos = 0, starts[a]
            for k in order:
                length += manhattan(pos, cells[k])
                pos = cells[k]
            return length

        def dfs(a, fixed_time, fixed_moves):
            nonlocal best_key, best
            if a == N:
                out = _simulate(starts, cells, covers, chosen)
                if out is None:
                    return
                t_solved, moves, _ = out
                key = _key(objective, t_solved, sum(moves))
                if best_key is None or key < best_key:
                    best_key, best = key, (dict(covers), tuple(chosen))
                return
            rest_lb = sum(max((manhattan(starts[b], cells[k]) for k in owned[b]), default=0) for b in range(a + 1, N))
            for order in perms[a]:
                length = route_len(a, order)
                t_lb, m_lb = max(fixed_time, length), fixed_moves + length
                if prune and best_key is not None and _key(objective, t_lb, m_lb + rest_lb) > best_key:
                    continue
                chosen.append(order)
                dfs(a + 1, t_lb, m_lb)
                chosen.pop()

        dfs(0, 0, 0)
    if best is None:
        if targets:
            raise InvalidPlanError("no deadlock-free plan exists")
        best = ({}, tuple(() for _ in range(N)))
    plan = schedule_cost(scenario, best[0], best[1])
    return plan, metric_value(scenario, plan, objective)


def _path_actions(src, dst) -> list[Action]:
    acts = []
    dr, dc = dst[0] - src[0], dst[1] - src[1]
    acts += [Action.DOWN if dr > 0 else Action.UP] * abs(dr)
    acts += [Action.RIGHT if dc > 0 else Action.LEFT] * abs(dc)
    return acts


def plan_actions(scenario: Scenario, plan: PlanSchedule) -> list[list[int]]:
    """Explicit joint actions realising ``plan``: walk rows first, then columns, then wait."""
    per_agent = []
    for a, visits in enumerate(plan.visits):
        acts: list[int] = []
        pos = scenario.agents[a].position
        for v in visits:
            acts += [int(x) for x in _path_actions(pos, v.cell)]
            acts += [int(Action.STAY)] * (v.completion - len(acts))
            pos = v.cell
        acts += [int(Action.STAY)] * (plan.t_solved - len(acts))
        per_agent.append(acts)
    return [list(step) for step in zip(*per_agent)] if per_agent else []


def oracle_state_count(scenario: Scenario) -> int:
    return (scenario.width * scenario.height) ** scenario.n_agents * 2 ** scenario.n_targets


def bfs_oracle(scenario: Scenario, objective: Objective, max_states: int = 2_000_000) -> float:
    """Optimal cost over the full joint action space.

    Cost is the number of steps (solve time) or the number of non-stay actions
    (team effort) until every target is solved, using the environment's own
    move and solve rules.  A move off the grid reverts to staying but still
    costs a move, so it is never part of an optimum and is dropped.
    """
    objective = Objective(objective)
    if oracle_state_count(scenario) > max_states:
        raise BudgetExceededError(
            f"joint state space {oracle_state_count(scenario)} exceeds {max_states}", bound=oracle_state_count(scenario)
        )
    state, _ = reset(scenario)
    skills = [a.skills for a in scenario.agents]
    targets = scenario.targets
    full = (True,) * len(targets)
    start = (state.positions, state.solved)
    if state.solved == full:
        return 0

    def successors(positions):
        options = []
        for pos in positions:
            opts = {pos: 0}
            for act in (Action.UP, Action.DOWN, Action.LEFT, Action.RIGHT):
                nxt = move(pos, act, scenario.height, scenario.width)
                if nxt != pos:
                    opts[nxt] = 1
            options.append(list(opts.items()))
        for combo in itertools.product(*options):
            yield tuple(c for c, _ in combo), sum(m for _, m in combo)

    if objective == Objective.SOLVE_TIME:
        seen = {start}
        frontier = deque([(start, 0)])
        while frontier:
            (positions, solved), dist = frontier.popleft()
            for nxt, _moves in successors(positions):
                new_solved, _ = solve_check(nxt, targets, solved, skills)
                if new_solved == full:
                    return dist + 1
                key = (nxt, new_solved)
                if key not in seen:
                    seen.add(key)
                    frontier.append((key, dist + 1))
        return math.inf

    best = {start: 0}
    heap = [(0, 0, start)]
    counter = 1
    while heap:
        cost, _, key = heapq.heappop(heap)
        if cost > best.get(key, math.inf):
            continue
        positions, solved = key
        if solved == full:
            return cost
        for nxt, moves in successors(positions):
            if moves == 0:
                continue
            new_solved, _ = solve_check(nxt, targets, solved, skills)
            nkey = (nxt, new_solved)
            ncost = cost + moves
            if ncost < best.get(nkey, math.inf):
                best[nkey] = ncost
                heapq.heappush(heap, (ncost, counter, nkey))
                counter += 1
    return math.inf
