"""MAPPO training: batched rollouts, GAE, clipped-surrogate updates, two phases.

One actor is shared by all agents and sees only its own observation; the
critic sees the concatenated joint observation and estimates one value per
environment.  The critic is trained on the team reward (the mean of the
agents' individual rewards), and every agent uses that team advantage.
"""
from __future__ import annotations

import csv
import logging
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .env import GenerationConfig, N_ACTIONS
from .exceptions import InvalidConfigError, NonFiniteLossError
from .nets import (
    PARAM_ORDER,
    ArchDescriptor,
    PolicyParams,
    init_params,
    log_softmax,
    network_step,
    sample_actions,
    save_checkpoint,
    sequence_backward,
    sequence_forward,
    softmax,
)
from .reward import TERMS, Phase, RewardWeights, effective_weights
from .vecenv import BatchedEnv

log = logging.getLogger(__name__)

LOG_FIELDS = (
    "update", "phase", "env_steps", "mean_reward", "success_rate", "policy_loss", "value_loss",
    "entropy", "approx_kl", "clip_frac", "wall_ms",
) + tuple(f"r_{t.lower()}" for t in TERMS)

# training scenarios are drawn from the upper half of the 32-bit seed range,
# leaving [0, 2**31) free for held-out evaluation batches
TRAIN_SEED_LOW = 2 ** 31
TRAIN_SEED_HIGH = 2 ** 32


@dataclass(frozen=True)
class PhaseConfig:
    n_envs: int
    n_updates: int
    n_minibatches: int
    seed: int | None = None

    def validate(self, name: str) -> "PhaseConfig":
        if self.n_envs <= 0 or self.n_minibatches <= 0 or self.n_updates < 0:
            raise InvalidConfigError(f"{name}.n_envs, n_minibatches must be positive and n_updates >= 0")
        if self.n_envs % self.n_minibatches:
            raise InvalidConfigError(
                f"{name}.n_minibatches ({self.n_minibatches}) must divide n_envs ({self.n_envs})"
            )
        return self


@dataclass(frozen=True)
class TrainConfig:
    bootstrap: PhaseConfig = PhaseConfig(n_envs=16384, n_updates=572, n_minibatches=16, seed=2)
    refinement: PhaseConfig = PhaseConfig(n_envs=30720, n_updates=1271, n_minibatches=32, seed=4)
    n_steps: int = 128
    update_epochs: int = 4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    vf_coef: float = 0.5
    ent_coef: float = 0.01
    lr: float = 2.5e-4
    max_grad_norm: float = 0.5
    dense_dim: int = 128
    hidden_dim: int = 128
    seed: int = 0
    dtype: str = "float32"
    log_every: int = 1
    checkpoint_every: int = 0

    def validate(self) -> "TrainConfig":
        self.bootstrap.validate("bootstrap")
        self.refinement.validate("refinement")
        if self.n_steps <= 0 or self.update_epochs <= 0:
            raise InvalidConfigError("n_steps and update_epochs must be positive")
        if not 0 < self.gamma <= 1:
            raise InvalidConfigError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0 <= self.gae_lambda <= 1:
            raise InvalidConfigError(f"gae_lambda must lie in [0, 1], got {self.gae_lambda}")
        if not self.clip_eps >= 0:
            raise InvalidConfigError(f"clip_eps must be >= 0, got {self.clip_eps}")
        if self.lr <= 0 or self.max_grad_norm <= 0:
            raise InvalidConfigError("lr and max_grad_norm must be positive")
        if self.dtype not in ("float32", "float64"):
            raise InvalidConfigError(f"dtype must be float32 or float64, got {self.dtype}")
        return self


def compute_gae(rewards, values, dones, bootstrap_value, gamma, lam):
    """Generalized advantage estimates over time-major arrays.

    ``dones[t]`` marks that the episode ended with step ``t``; the value after
    it is then not bootstrapped.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    notdone = 1.0 - np.asarray(dones, dtype=np.float64)
    adv = np.zeros_like(rewards)
    next_value = np.asarray(bootstrap_value, dtype=np.float64)
    last = np.zeros_like(next_value)
    for t in range(len(rewards) - 1, -1, -1):
        delta = rewards[t] + gamma * next_value * notdone[t] - values[t]
        last = delta + gamma * lam * notdone[t] * last
        adv[t] = last
        next_value = values[t]
    return adv, adv + values


def normalize_advantages(adv):
    return (adv - adv.mean()) / (adv.std() + 1e-8)


class Adam:
    """Bias-corrected adaptive-moment optimizer over nested parameter dicts."""

    def __init__(self, params: PolicyParams, lr, betas=(0.9, 0.999), eps=1e-5):
        self.lr, self.betas, self.eps, self.t = lr, betas, eps, 0
        self.m = {net: {k: np.zeros_like(v) for k, v in getattr(params, net).items()} for net in ("actor", "critic")}
        self.v = {net: {k: np.zeros_like(v) for k, v in getattr(params, net).items()} for net in ("actor", "critic")}

    def step(self, params: PolicyParams, grads: dict):
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for net in ("actor", "critic"):
            p = getattr(params, net)
            for k in PARAM_ORDER:
                g = grads[net][k].astype(p[k].dtype)
                m, v = self.m[net][k], self.v[net][k]
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                p[k] -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p[k].dtype)


def clip_grad_norm(grads: dict, max_norm: float) -> float:
    total = np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for net in grads.values() for g in net.values()))
    if total > max_norm:
        scale = max_norm / (total + 1e-6)
        for net in grads.values():
            for k in net:
                net[k] = net[k] * scale
    return total


@dataclass
class RolloutBatch:
    """Time-major rollout storage.

    Shapes: ``obs`` (T, E, N, D); ``joint_obs`` (T, E, N*D); ``actions`` and
    ``logp`` (T, E, N); ``rewards``, ``values``, ``dones``, ``starts`` (T, E);
    ``components`` (T, E, N, 6) raw reward terms.  ``starts[t]`` resets the
    recurrent state before step ``t``.  ``actor_h0`` (E, N, G) and
    ``critic_h0`` (E, G) are the recurrent states at the first step.
    """

    obs: np.ndarray
    joint_obs: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    starts: np.ndarray
    components: np.ndarray
    actor_h0: np.ndarray
    critic_h0: np.ndarray
    bootstrap_value: np.ndarray
    episodes_done: int = 0
    episodes_solved: int = 0
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None


class RolloutWorker:
    """Owns a batched environment pool and the recurrent state carried across rollouts."""

    def __init__(self, gen: GenerationConfig, n_envs: int, weights: RewardWeights, seed_rng, dtype, params: PolicyParams):
        self.gen = gen
        self.weights = weights
        self.seed_rng = seed_rng
        self.dtype = dtype
        self.env = BatchedEnv(gen, n_envs, weights.c_ar, self._next_seed)
        N = gen.n_agents
        self.actor_h = np.zeros((n_envs, N, params.actor_arch.hidden_dim), dtype=dtype)
        self.critic_h = np.zeros((n_envs, params.critic_arch.hidden_dim), dtype=dtype)
        self.starts = np.ones(n_envs, dtype=bool)

    def _next_seed(self) -> int:
        return int(self.seed_rng.integers(TRAIN_SEED_LOW, TRAIN_SEED_HIGH))

    def collect(self, params: PolicyParams, n_steps: int, phase: Phase, rng: np.random.Generator) -> RolloutBatch:
        env = self.env
        E, N, D = env.n_envs, env.N, env.obs_dim
        dt = self.dtype
        w = effective_weights(self.weights, phase)
        obs = np.zeros((n_steps, E, N, D), dtype=dt)
        actions = np.zeros((n_steps, E, N), dtype=np.int64)
        logp = np.zeros((n_steps, E, N), dtype=np.float64)
        rewards = np.zeros((n_steps, E))
        values = np.zeros((n_steps, E))
        dones = np.zeros((n_steps, E), dtype=bool)
        starts = np.zeros((n_steps, E), dtype=bool)
        comps = np.zeros((n_steps, E, N, 6))
        actor_h0, critic_h0 = self.actor_h.copy(), self.critic_h.copy()
        n_done = n_solved = 0
        for t in range(n_steps):
            o = env.observations().astype(dt)
            obs[t] = o
            starts[t] = self.starts
            keep = (~self.starts)[:, None].astype(dt)
            self.actor_h *= keep[:, :, None]
            self.critic_h *= keep
            logits, self.actor_h = network_step(params.actor, o, self.actor_h)
            v, self.critic_h = network_step(params.critic, o.reshape(E, N * D), self.critic_h)
            probs = softmax(logits.astype(np.float64))
            a = sample_actions(probs, rng)
            actions[t] = a
            logp[t] = np.log(np.take_along_axis(probs, a[..., None], -1)[..., 0])
            values[t] = v[:, 0]
            c, done, success, _ = env.step(a)
            comps[t] = c
            rewards[t] = (c @ w).mean(-1)
            dones[t] = done
            n_done += int(done.sum())
            n_solved += int(success.sum())
            self.starts = done
        o = env.observations().astype(dt)
        keep = (~self.starts)[:, None].astype(dt)
        v, _ = network_step(params.critic, o.reshape(E, N * D), self.critic_h * keep)
        return RolloutBatch(
            obs=obs, joint_obs=obs.reshape(n_steps, E, N * D), actions=actions, logp=logp,
            rewards=rewards, values=values, dones=dones, starts=starts, components=comps,
            actor_h0=actor_h0, critic_h0=critic_h0, bootstrap_value=v[:, 0].astype(np.float64),
            episodes_done=n_done, episodes_solved=n_solved,
        )


def minibatch_env_indices(n_envs: int, n_minibatches: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Split whole environment columns into minibatches; sequences are never cut."""
    perm = rng.permutation(n_envs)
    return np.split(perm, n_minibatches)


def ppo_loss_and_grads(params: PolicyParams, batch: RolloutBatch, idx: np.ndarray, config: TrainConfig):
    """Clipped-surrogate loss on the environment columns ``idx`` and its gradients."""
    T = batch.obs.shape[0]
    b = len(idx)
    N = batch.obs.shape[2]
    dt = params.dtype
    # actor over b*N agent sequences
    xs = batch.obs[:, idx].reshape(T, b * N, -1).astype(dt)
    h0 = batch.actor_h0[idx].reshape(b * N, -1).astype(dt)
    resets = np.repeat(batch.starts[:, idx], N, axis=1)
    Y, _, cache = sequence_forward(params.actor, xs, h0, resets)
    Y = Y.astype(np.float64)
    lp_all = log_softmax(Y)
    probs = np.exp(lp_all)
    acts = batch.actions[:, idx].reshape(T, b * N)
    onehot = np.eye(N_ACTIONS)[acts]
    lp = (lp_all * onehot).sum(-1)
    old = batch.logp[:, idx].reshape(T, b * N)
    adv = np.repeat(batch.advantages[:, idx], N, axis=1)
    ratio = np.exp(lp - old)
    eps = config.clip_eps
    clipped = np.clip(ratio, 1 - eps, 1 + eps)
    surr1, surr2 = ratio * adv, clipped * adv
    n = ratio.size
    policy_loss = -np.minimum(surr1, surr2).mean()
    entropy_each = -(probs * lp_all).sum(-1)
    entropy = entropy_each.mean()
    # d policy_loss / d logp: the unclipped branch is active whenever it is the minimum
    active = surr1 <= surr2
    d_lp = -np.where(active, surr1, 0.0) / n
    d_logits = d_lp[..., None] * (onehot - probs)
    d_logits += config.ent_coef * probs * (lp_all + entropy_each[..., None]) / n
    actor_grads, _ = sequence_backward(params.actor, cache, d_logits.astype(dt))

    xs_c = batch.joint_obs[:, idx].astype(dt)
    V, _, ccache = sequence_forward(params.critic, xs_c, batch.critic_h0[idx].astype(dt), batch.starts[:, idx])
    V = V[..., 0].astype(np.float64)
    ret = batch.returns[:, idx]
    value_loss = ((V - ret) ** 2).mean()
    dV = config.vf_coef * 2.0 * (V - ret) / V.size
    critic_grads, _ = sequence_backward(params.critic, ccache, dV[..., None].astype(dt))

    loss = policy_loss + config.vf_coef * value_loss - config.ent_coef * entropy
    log_ratio = lp - old
    stats = {
        "loss": float(loss),
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "entropy": float(entropy),
        "approx_kl": float(((ratio - 1) - log_ratio).mean()),
        "clip_frac": float((np.abs(ratio - 1) > eps).mean()),
    }
    return stats, {"actor": actor_grads, "critic": critic_grads}


def _dump_state(params: PolicyParams, stats: dict) -> Path:
    path = Path(tempfile.mkdtemp(prefix="teamplan-nonfinite-")) / "state.npz"
    save_checkpoint(path, params, {"stats": {k: repr(v) for k, v in stats.items()}})
    return path


def ppo_update(params: PolicyParams, batch: RolloutBatch, config: TrainConfig, optimizer: Adam,
               n_minibatches: int, rng: np.random.Generator):
    """Epochs of minibatch clipped-surrogate updates; mutates and returns ``params``."""
    totals: dict[str, float] = {}
    count = 0
    E = batch.obs.shape[1]
    for _ in range(config.update_epochs):
        for idx in minibatch_env_indices(E, n_minibatches, rng):
            stats, grads = ppo_loss_and_grads(params, batch, idx, config)
            if not np.isfinite(stats["loss"]):
                raise NonFiniteLossError(f"non-finite loss {stats}", _dump_state(params, stats))
            stats["grad_norm"] = clip_grad_norm(grads, config.max_grad_norm)
            optimizer.step(params, grads)
            for k, v in stats.items():
                totals[k] = totals.get(k, 0.0) + v
            count += 1
    return params, {k: v / count for k, v in totals.items()}


def prepare_batch(batch: RolloutBatch, config: TrainConfig) -> RolloutBatch:
    adv, ret = compute_gae(batch.rewards, batch.values, batch.dones, batch.bootstrap_value,
                           config.gamma, config.gae_lambda)
    batch.returns = ret
    batch.advantages = normalize_advantages(adv)
    return batch


@dataclass
class TrainResult:
    params: PolicyParams
    log: list[dict] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)


def make_arches(gen: GenerationConfig, config: TrainConfig) -> tuple[ArchDescriptor, ArchDescriptor]:
    from .obs import observation_length

    D = observation_length(gen.n_agents, gen.n_targets)
    actor = ArchDescriptor(D, config.dense_dim, config.hidden_dim, N_ACTIONS)
    critic = ArchDescriptor(D * gen.n_agents, config.dense_dim, config.hidden_dim, 1)
    return actor, critic


def _phase_streams(seed: int):
    ss = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(3)]


def train(
    config: TrainConfig,
    gen: GenerationConfig,
    weights: RewardWeights,
    out_dir=None,
    run_metadata: dict | None = None,
    params: PolicyParams | None = None,
) -> TrainResult:
    """Bootstrap phase (AR, TR, WC only) followed by refinement (all terms).

    With ``out_dir`` set, appends rows to ``train_log.csv`` and writes
    checkpoints under ``checkpoints/``.
    """
    config.validate()
    gen.validate()
    weights.validate()
    dtype = np.dtype(config.dtype)
    if params is None:
        actor_arch, critic_arch = make_arches(gen, config)
        params = init_params(np.random.default_rng(config.seed), actor_arch, critic_arch, dtype)
    optimizer = Adam(params, config.lr)
    result = TrainResult(params)
    log_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "train_log.csv"
        with log_path.open("w", newline="") as fh:
            csv.writer(fh).writerow(LOG_FIELDS)

    update = 0
    env_steps = 0
    phases = [(Phase.BOOTSTRAP, config.bootstrap), (Phase.REFINEMENT, config.refinement)]
    for phase_idx, (phase, pc) in enumerate(phases):
        if pc.n_updates == 0:
            continue
        seed = pc.seed if pc.seed is not None else config.seed * 1000 + phase_idx + 1
        sample_rng, scenario_rng, mb_rng = _phase_streams(seed)
        worker = RolloutWorker(gen, pc.n_envs, weights, scenario_rng, dtype, params)
        for _ in range(pc.n_updates):
            t0 = time.perf_counter()
            batch = prepare_batch(worker.collect(params, config.n_steps, phase, sample_rng), config)
            params, stats = ppo_update(params, batch, config, optimizer, pc.n_minibatches, mb_rng)
            update += 1
            env_steps += pc.n_envs * config.n_steps
            gated = (batch.components * effective_weights(weights, phase)).mean(axis=(0, 1, 2))
            row = {
                "update": update,
                "phase": phase.value,
                "env_steps": env_steps,
                "mean_reward": float(batch.rewards.mean()),
                "success_rate": batch.episodes_solved / batch.episodes_done if batch.episodes_done else float("nan"),
                "policy_loss": stats["policy_loss"],
                "value_loss": stats["value_loss"],
                "entropy": stats["entropy"],
                "approx_kl": stats["approx_kl"],
                "clip_frac": stats["clip_frac"],
                "wall_ms": (time.perf_counter() - t0) * 1000.0,
            }
            row.update({f"r_{t.lower()}": float(g) for t, g in zip(TERMS, gated)})
            result.log.append(row)
            if update % config.log_every == 0:
                log.info("update %d %s reward %.4f success %.3f", update, phase.value,
                         row["mean_reward"], row["success_rate"])
            if log_path is not None:
                with log_path.open("a", newline="") as fh:
                    csv.writer(fh).writerow([row[k] for k in LOG_FIELDS])
            last = phase_idx == 1 or config.refinement.n_updates == 0
            final = last and _ == pc.n_updates - 1
            if out_dir is not None and (final or (config.checkpoint_every and update % config.checkpoint_every == 0)):
                meta = {
                    "update": update,
                    "phase": phase.value,
                    "env_steps": env_steps,
                    "rng": {
                        "sample": sample_rng.bit_generator.state,
                        "scenario": scenario_rng.bit_generator.state,
                        "minibatch": mb_rng.bit_generator.state,
                    },
                    "train_config": asdict(config),
                    "generation": asdict(gen),
                    "weights": asdict(weights),
                    "run_config": run_metadata or {},
                }
                path = save_checkpoint(out_dir / "checkpoints" / f"update_{update:06d}.npz", params, meta)
                result.checkpoints.append(path)
    result.params = params
    return result
