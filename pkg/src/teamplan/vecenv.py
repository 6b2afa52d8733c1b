"""Array-batched copy of the env/obs/reward semantics for rollout collection.

Holds ``n_envs`` independent episodes in numpy arrays and steps them together.
Its transitions, observations and reward terms match the scalar reference in
:mod:`teamplan.env`, :mod:`teamplan.obs` and :mod:`teamplan.reward`; the test
suite checks the two against each other.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .env import MOVES, Action, GenerationConfig, Scenario, generate_scenario
from .obs import agent_order, observation_length, position_scale


class BatchedEnv:
    def __init__(self, config: GenerationConfig, n_envs: int, c_ar: float, next_seed: Callable[[], int]):
        config.validate()
        self.config = config
        self.n_envs = n_envs
        self.c_ar = c_ar
        self.next_seed = next_seed
        E, N, M = n_envs, config.n_agents, config.n_targets
        self.N, self.M, self.T_max = N, M, config.horizon
        self.pos = np.zeros((E, N, 2), dtype=np.int64)
        self.agent_skills = np.zeros((E, N), dtype=np.int64)
        self.tpos = np.zeros((E, M, 2), dtype=np.int64)
        self.tskills = np.zeros((E, M), dtype=np.int64)
        self.tkind = np.zeros((E, M), dtype=np.int64)
        self.solved = np.zeros((E, M), dtype=bool)
        self.t = np.zeros(E, dtype=np.int64)
        self.seeds = np.zeros(E, dtype=np.int64)
        self.order = np.array([agent_order(i, N) for i in range(N)])
        self.obs_dim = observation_length(N, M)
        self.scale = position_scale(config.width, config.height)
        self.bounds = np.array([config.height, config.width])
        for e in range(E):
            self._load(e)

    def _load(self, e: int):
        # scenarios solved entirely at reset carry no learning signal; draw again
        while True:
            sc = generate_scenario(self.config, self.next_seed())
            self.load_scenario(e, sc)
            if not self.solved[e].all():
                return

    def load_scenario(self, e: int, sc: Scenario):
        self.pos[e] = [a.position for a in sc.agents]
        self.agent_skills[e] = [a.skills for a in sc.agents]
        self.tpos[e] = [t.position for t in sc.targets]
        self.tskills[e] = [t.skills for t in sc.targets]
        self.tkind[e] = [int(t.kind) for t in sc.targets]
        self.solved[e] = False
        self.t[e] = 0
        self.seeds[e] = sc.seed
        self.solved[e] = self._solve_mask()[e]

    def _solve_mask(self) -> np.ndarray:
        """Targets whose requirement is met by the agents currently on their cells."""
        on = (self.pos[:, :, None, :] == self.tpos[:, None, :, :]).all(-1)  # E,N,M
        present = np.bitwise_or.reduce(np.where(on, self.agent_skills[:, :, None], 0), axis=1)
        hit = present & self.tskills
        ok = np.where(self.tkind == 1, hit == self.tskills, hit != 0)
        return self.solved | ok

    def observations(self, normalized: bool = True) -> np.ndarray:
        """(E, N, obs_dim) per-agent observations in the documented layout."""
        E, N, M = self.n_envs, self.N, self.M
        pos_block = self.pos[:, self.order].reshape(E, N, 2 * N)
        off = self.tpos[:, None, :, :] - self.pos[:, :, None, :]
        off = np.where(self.solved[:, None, :, None], 0, off).reshape(E, N, 2 * M)
        skills = self.agent_skills[:, self.order]
        tsk = np.broadcast_to(self.tskills[:, None, :], (E, N, M))
        kind = np.broadcast_to(self.tkind[:, None, :], (E, N, M))
        if not normalized:
            return np.concatenate([pos_block, off, skills, tsk, kind], axis=-1)
        s = self.scale
        return np.concatenate(
            [pos_block * s, off * s, skills.astype(float), tsk.astype(float), kind.astype(float)], axis=-1
        )

    def reward_components(self, prev_solved, newly, actions) -> np.ndarray:
        """(E, N, 6) terms in (AR, TR, WC, SC, TC, TB) order for the current state."""
        M, T = self.M, self.T_max
        unsolved = ~self.solved
        overlap = (self.agent_skills[:, :, None] & self.tskills[:, None, :]) != 0  # E,N,M
        diff = self.tpos[:, None, :, :] - self.pos[:, :, None, :]
        dist = np.sqrt((diff ** 2).sum(-1))
        ar = (np.exp(-self.c_ar * dist) * (overlap & unsolved[:, None, :])).sum(-1) / (M * T)
        tr = np.broadcast_to((newly.sum(-1) / M)[:, None], ar.shape)
        on = (diff == 0).all(-1)
        wc = -(on & ~overlap & unsolved[:, None, :]).sum(-1).astype(float)
        sc = -(actions != int(Action.STAY)).astype(float)
        tc = np.broadcast_to((unsolved.sum(-1) / (M * T))[:, None], ar.shape)
        tb_env = (~prev_solved.all(-1)) & self.solved.all(-1)
        tb = np.broadcast_to(tb_env[:, None].astype(float), ar.shape)
        return np.stack([ar, tr, wc, sc, tc, tb], axis=-1)

    def step(self, actions: np.ndarray):
        """Advance every episode one step.

        Returns ``(components, done, success, steps)``: reward terms (E, N, 6)
        for the transition, episode-end flags, whether the ended episode was
        fully solved, and its length.  Ended episodes are replaced by freshly
        generated scenarios before returning.
        """
        actions = np.asarray(actions, dtype=np.int64)
        new = self.pos + MOVES[actions]
        inside = ((new >= 0) & (new < self.bounds)).all(-1, keepdims=True)
        self.pos = np.where(inside, new, self.pos)
        prev = self.solved.copy()
        self.solved = self._solve_mask()
        self.t += 1
        comps = self.reward_components(prev, self.solved & ~prev, actions)
        success = self.solved.all(-1)
        done = success | (self.t >= self.T_max)
        steps = self.t.copy()
        for e in np.flatnonzero(done):
            self._load(e)
        return comps, done, success, steps
