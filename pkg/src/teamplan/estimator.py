"""scikit-learn style front ends for the learned planner and the exact baseline.

``MAPPOPlanner.fit`` trains a policy (the scenarios it learns from are
generated internally, so ``X`` is ignored); ``predict`` rolls the greedy
policy out on a list of scenarios.  ``ExhaustiveSearchPlanner`` has the same
surface with a no-op ``fit``.
"""
from __future__ import annotations

import json
from os import PathLike
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .env import GenerationConfig, Scenario
from .es import Objective, exhaustive_search, metric_value
from .evaluate import aggregate, evaluate_policy, run_episode
from .exceptions import DimensionError
from .nets import PolicyParams, actor_forward, initial_hidden, load_checkpoint
from .obs import observation_length
from .reward import RewardWeights
from .trainer import PhaseConfig, TrainConfig, train


def check_scenarios(X, n_agents: int | None = None, n_targets: int | None = None) -> list[Scenario]:
    """Coerce ``X`` into a list of scenarios.

    Accepts a single item or a sequence of :class:`Scenario`, scenario dicts,
    JSON strings or paths to scenario JSON files.  With ``n_agents`` /
    ``n_targets`` given, rejects scenarios of another size.
    """
    if isinstance(X, (Scenario, dict, str, PathLike)):
        X = [X]
    out = []
    for item in X:
        if isinstance(item, Scenario):
            sc = item
        elif isinstance(item, dict):
            sc = Scenario.from_dict(item)
        elif isinstance(item, PathLike) or (isinstance(item, str) and not item.lstrip().startswith("{")):
            sc = Scenario.from_json(Path(item).read_text())
        elif isinstance(item, str):
            sc = Scenario.from_json(item)
        else:
            raise TypeError(f"cannot interpret {type(item).__name__} as a scenario")
        if n_agents is not None and sc.n_agents != n_agents:
            raise DimensionError(f"scenario {sc.seed} has {sc.n_agents} agents, expected {n_agents}")
        if n_targets is not None and sc.n_targets != n_targets:
            raise DimensionError(f"scenario {sc.seed} has {sc.n_targets} targets, expected {n_targets}")
        out.append(sc)
    if not out:
        raise ValueError("no scenarios given")
    return out


def check_policy_matches(params: PolicyParams, n_agents: int, n_targets: int):
    """A policy's observation size pins it to one (agents, targets) pair."""
    expected = observation_length(n_agents, n_targets)
    if params.actor_arch.input_dim != expected or params.critic_arch.input_dim != expected * n_agents:
        raise DimensionError(
            f"policy expects observations of length {params.actor_arch.input_dim}, "
            f"scenarios with {n_agents} agents and {n_targets} targets give {expected}"
        )


class MAPPOPlanner(BaseEstimator):
    def __init__(
        self,
        width=8,
        height=8,
        n_agents=2,
        n_targets=2,
        n_skills=2,
        horizon=64,
        n_envs=64,
        n_steps=64,
        bootstrap_updates=450,
        refinement_updates=150,
        n_minibatches=2,
        update_epochs=4,
        lr=1e-3,
        gamma=0.99,
        gae_lambda=0.95,
        clip_eps=0.2,
        vf_coef=0.5,
        ent_coef=0.01,
        max_grad_norm=0.5,
        dense_dim=64,
        hidden_dim=64,
        c_ar=0.3,
        w_ar=1.0,
        w_tr=1.0,
        w_wc=0.25,
        w_sc=0.005,
        w_tc=0.5,
        w_tb=0.2,
        random_state=0,
    ):
        self.width = width
        self.height = height
        self.n_agents = n_agents
        self.n_targets = n_targets
        self.n_skills = n_skills
        self.horizon = horizon
        self.n_envs = n_envs
        self.n_steps = n_steps
        self.bootstrap_updates = bootstrap_updates
        self.refinement_updates = refinement_updates
        self.n_minibatches = n_minibatches
        self.update_epochs = update_epochs
        self.lr = lr
        self.gamma = gamma
        self.gae_lambda = gae_lambda
        self.clip_eps = clip_eps
        self.vf_coef = vf_coef
        self.ent_coef = ent_coef
        self.max_grad_norm = max_grad_norm
        self.dense_dim = dense_dim
        self.hidden_dim = hidden_dim
        self.c_ar = c_ar
        self.w_ar = w_ar
        self.w_tr = w_tr
        self.w_wc = w_wc
        self.w_sc = w_sc
        self.w_tc = w_tc
        self.w_tb = w_tb
        self.random_state = random_state

    def _configs(self):
        gen = GenerationConfig(self.width, self.height, self.n_agents, self.n_targets, self.n_skills, self.horizon)
        tc = TrainConfig(
            bootstrap=PhaseConfig(self.n_envs, self.bootstrap_updates, self.n_minibatches),
            refinement=PhaseConfig(self.n_envs, self.refinement_updates, self.n_minibatches),
            n_steps=self.n_steps, update_epochs=self.update_epochs, gamma=self.gamma,
            gae_lambda=self.gae_lambda, clip_eps=self.clip_eps, vf_coef=self.vf_coef,
            ent_coef=self.ent_coef, lr=self.lr, max_grad_norm=self.max_grad_norm,
            dense_dim=self.dense_dim, hidden_dim=self.hidden_dim, seed=int(self.random_state or 0),
        )
        w = RewardWeights(self.w_ar, self.w_tr, self.w_wc, self.w_sc, self.w_tc, self.w_tb, self.c_ar)
        return gen, tc, w

    def fit(self, X=None, y=None, out_dir=None):
        gen, tc, w = self._configs()
        result = train(tc, gen, w, out_dir=out_dir)
        self.params_ = result.params
        self.training_log_ = result.log
        self.checkpoints_ = result.checkpoints
        self.n_features_in_ = observation_length(self.n_agents, self.n_targets)
        return self

    @classmethod
    def from_checkpoint(cls, path, **kwargs) -> "MAPPOPlanner":
        params, meta = load_checkpoint(path)
        est = cls(**kwargs)
        gen = meta.get("generation")
        if gen:
            est.set_params(n_agents=gen["n_agents"], n_targets=gen["n_targets"], width=gen["width"],
                           height=gen["height"], n_skills=gen["n_skills"], horizon=gen["horizon"])
        est.params_ = params
        est.n_features_in_ = params.actor_arch.input_dim
        return est

    def action_probabilities(self, observations: np.ndarray, hidden: np.ndarray | None = None):
        """One actor step on normalized per-agent observations of shape (..., n_features_in_)."""
        check_is_fitted(self, "params_")
        observations = np.asarray(observations, dtype=self.params_.dtype)
        if observations.shape[-1] != self.n_features_in_:
            raise DimensionError(f"expected {self.n_features_in_} features, got {observations.shape[-1]}")
        if hidden is None:
            hidden = initial_hidden(self.params_.actor_arch, *observations.shape[:-1], dtype=self.params_.dtype)
        return actor_forward(self.params_, observations, hidden)

    def predict(self, X):
        """Greedy episode results, one per scenario."""
        check_is_fitted(self, "params_")
        scenarios = check_scenarios(X, self.n_agents, self.n_targets)
        return [run_episode(self.params_, sc) for sc in scenarios]

    def evaluate(self, X):
        check_is_fitted(self, "params_")
        return evaluate_policy(self.params_, check_scenarios(X, self.n_agents, self.n_targets))

    def score(self, X, y=None):
        """Fraction of scenarios solved by the greedy policy."""
        return aggregate(self.predict(X)).success


class ExhaustiveSearchPlanner(BaseEstimator):
    def __init__(self, objective="solve_time", budget=5e6, prune=True):
        self.objective = objective
        self.budget = budget
        self.prune = prune

    def fit(self, X=None, y=None):
        self.objective_ = Objective(self.objective)
        return self

    def predict(self, X):
        check_is_fitted(self, "objective_")
        return [exhaustive_search(sc, self.objective_, self.budget, self.prune)[0] for sc in check_scenarios(X)]

    def score(self, X, y=None):
        """Mean optimal metric value (time or moves left) over the scenarios."""
        check_is_fitted(self, "objective_")
        scenarios = check_scenarios(X)
        plans = self.predict(scenarios)
        return float(np.mean([metric_value(sc, p, self.objective_) for sc, p in zip(scenarios, plans)]))


def plans_to_json(plans, scenarios, objective) -> str:
    return json.dumps([p.to_dict(objective, sc.seed) for p, sc in zip(plans, scenarios)])
