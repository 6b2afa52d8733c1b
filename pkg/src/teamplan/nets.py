"""Recurrent actor and critic in plain numpy, with analytic BPTT gradients.

Both networks share one layout::

    x -> tanh(x W_in + b_in) -> GRU -> h W_out + b_out

Matrices use the row-vector convention (``x @ W``).  GRU update with input
``a`` and previous hidden state ``h``::

    z  = sigmoid(a W_z + h U_z + b_z)
    r  = sigmoid(a W_r + h U_r + b_r)
    c  = tanh(a W_h + (r * h) U_h + b_h)
    h' = (1 - z) * h + z * c

The actor head emits logits over the 5 actions, the critic head one value.
"""
from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .env import N_ACTIONS
from .exceptions import DimensionError, DistributionError

PARAM_ORDER = ("W_in", "b_in", "W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h", "W_out", "b_out")
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ArchDescriptor:
    input_dim: int
    dense_dim: int = 64
    hidden_dim: int = 64
    output_dim: int = N_ACTIONS
    activation: str = "tanh"

    def __post_init__(self):
        for name in ("input_dim", "dense_dim", "hidden_dim", "output_dim"):
            if getattr(self, name) <= 0:
                raise DimensionError(f"{name} must be positive")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")

    def shapes(self) -> dict[str, tuple[int, ...]]:
        D, H, G, O = self.input_dim, self.dense_dim, self.hidden_dim, self.output_dim
        return {
            "W_in": (D, H), "b_in": (H,),
            "W_z": (H, G), "U_z": (G, G), "b_z": (G,),
            "W_r": (H, G), "U_r": (G, G), "b_r": (G,),
            "W_h": (H, G), "U_h": (G, G), "b_h": (G,),
            "W_out": (G, O), "b_out": (O,),
        }

    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes().values())


@dataclass
class PolicyParams:
    actor_arch: ArchDescriptor
    critic_arch: ArchDescriptor
    actor: dict[str, np.ndarray]
    critic: dict[str, np.ndarray]

    def astype(self, dtype) -> "PolicyParams":
        return PolicyParams(
            self.actor_arch,
            self.critic_arch,
            {k: v.astype(dtype) for k, v in self.actor.items()},
            {k: v.astype(dtype) for k, v in self.critic.items()},
        )

    def copy(self) -> "PolicyParams":
        return self.astype(self.dtype)

    @property
    def dtype(self):
        return self.actor["W_in"].dtype

    def n_params(self) -> int:
        return self.actor_arch.n_params() + self.critic_arch.n_params()


def sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def orthogonal(rng: np.random.Generator, shape, gain=1.0) -> np.ndarray:
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_network(rng: np.random.Generator, arch: ArchDescriptor, head_gain: float, dtype=np.float32) -> dict:
    params = {}
    for name, shape in arch.shapes().items():
        if name.startswith("b_"):
            params[name] = np.zeros(shape)
        elif name == "W_in":
            params[name] = orthogonal(rng, shape, np.sqrt(2.0))
        elif name == "W_out":
            params[name] = orthogonal(rng, shape, head_gain)
        else:
            params[name] = orthogonal(rng, shape, 1.0)
    return {k: params[k].astype(dtype) for k in PARAM_ORDER}


def init_params(
    rng: np.random.Generator | int,
    actor_arch: ArchDescriptor,
    critic_arch: ArchDescriptor,
    dtype=np.float32,
) -> PolicyParams:
    rng = np.random.default_rng(rng)
    actor = init_network(rng, actor_arch, head_gain=0.01, dtype=dtype)
    critic = init_network(rng, critic_arch, head_gain=1.0, dtype=dtype)
    return PolicyParams(actor_arch, critic_arch, actor, critic)


def _check_input(p: dict, x: np.ndarray, h: np.ndarray):
    D, H = p["W_in"].shape
    G = p["U_z"].shape[0]
    if x.shape[-1] != D:
        raise DimensionError(f"input has {x.shape[-1]} features, network expects {D}")
    if h.shape[-1] != G:
        raise DimensionError(f"hidden state has {h.shape[-1]} entries, network expects {G}")


def gru_cell(p: dict, a: np.ndarray, h: np.ndarray) -> np.ndarray:
    """One GRU update; ``a`` is the GRU input (the dense layer's output)."""
    if a.shape[-1] != p["W_z"].shape[0] or h.shape[-1] != p["U_z"].shape[0]:
        raise DimensionError("GRU input or hidden state has the wrong size")
    z = sigmoid(a @ p["W_z"] + h @ p["U_z"] + p["b_z"])
    r = sigmoid(a @ p["W_r"] + h @ p["U_r"] + p["b_r"])
    c = np.tanh(a @ p["W_h"] + (r * h) @ p["U_h"] + p["b_h"])
    return (1.0 - z) * h + z * c


def network_step(p: dict, x: np.ndarray, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    _check_input(p, x, h)
    a = np.tanh(x @ p["W_in"] + p["b_in"])
    h_new = gru_cell(p, a, h)
    return h_new @ p["W_out"] + p["b_out"], h_new


def actor_forward(params: PolicyParams, observation: np.ndarray, hidden: np.ndarray):
    """Action probabilities for a single agent's observation (batched over leading axes)."""
    logits, h_new = network_step(params.actor, observation, hidden)
    return softmax(logits), h_new


def critic_forward(params: PolicyParams, joint_observation: np.ndarray, hidden: np.ndarray):
    out, h_new = network_step(params.critic, joint_observation, hidden)
    return out[..., 0], h_new


def initial_hidden(arch: ArchDescriptor, *batch, dtype=np.float32) -> np.ndarray:
    return np.zeros((*batch, arch.hidden_dim), dtype=dtype)


@dataclass
class SequenceCache:
    xs: np.ndarray
    A: np.ndarray
    hp: np.ndarray
    z: np.ndarray
    r: np.ndarray
    c: np.ndarray
    H: np.ndarray
    keep: np.ndarray


def sequence_forward(p: dict, xs: np.ndarray, h0: np.ndarray, resets: np.ndarray | None = None):
    """Unrolled forward pass over time-major inputs ``xs`` of shape (T, B, D).

    ``resets[t, b]`` zeroes the hidden state of sequence ``b`` before step ``t``
    (episode boundary).  Returns the head outputs (T, B, O), the final hidden
    state, and the cache needed by :func:`sequence_backward`.
    """
    _check_input(p, xs, h0)
    T, B, _ = xs.shape
    if resets is None:
        resets = np.zeros((T, B), dtype=bool)
    keep = (1.0 - resets.astype(xs.dtype))[..., None]
    A = np.tanh(xs @ p["W_in"] + p["b_in"])
    Xz = A @ p["W_z"] + p["b_z"]
    Xr = A @ p["W_r"] + p["b_r"]
    Xh = A @ p["W_h"] + p["b_h"]
    G = h0.shape[-1]
    hp = np.empty((T, B, G), dtype=xs.dtype)
    z = np.empty_like(hp)
    r = np.empty_like(hp)
    c = np.empty_like(hp)
    H = np.empty_like(hp)
    h = h0
    Uz, Ur, Uh = p["U_z"], p["U_r"], p["U_h"]
    for t in range(T):
        h = h * keep[t]
        hp[t] = h
        z[t] = sigmoid(Xz[t] + h @ Uz)
        r[t] = sigmoid(Xr[t] + h @ Ur)
        c[t] = np.tanh(Xh[t] + (r[t] * h) @ Uh)
        h = h + z[t] * (c[t] - h)
        H[t] = h
    Y = H @ p["W_out"] + p["b_out"]
    return Y, h, SequenceCache(xs, A, hp, z, r, c, H, keep)


def _outer_sum(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def sequence_backward(p: dict, cache: SequenceCache, dY: np.ndarray):
    """Gradients of a scalar loss given ``dY = dL/d outputs`` of shape (T, B, O).

    Returns ``(grads, dh0)``; ``grads`` has one array per parameter.
    """
    T = dY.shape[0]
    hp, z, r, c, keep = cache.hp, cache.z, cache.r, cache.c, cache.keep
    grads = {"W_out": _outer_sum(cache.H, dY), "b_out": dY.sum(axis=(0, 1))}
    dH = dY @ p["W_out"].T
    dXz = np.empty_like(hp)
    dXr = np.empty_like(hp)
    dXh = np.empty_like(hp)
    Uz, Ur, Uh = p["U_z"], p["U_r"], p["U_h"]
    dh_next = np.zeros_like(hp[0])
    for t in range(T - 1, -1, -1):
        dh = dH[t] + dh_next
        dz = dh * (c[t] - hp[t])
        dcp = dh * z[t] * (1.0 - c[t] ** 2)
        dhp = dh * (1.0 - z[t])
        drh = dcp @ Uh.T
        drp = drh * hp[t] * r[t] * (1.0 - r[t])
        dhp += drh * r[t]
        dzp = dz * z[t] * (1.0 - z[t])
        dhp += dzp @ Uz.T + drp @ Ur.T
        dXz[t], dXr[t], dXh[t] = dzp, drp, dcp
        dh_next = dhp * keep[t]
    grads["U_z"] = _outer_sum(hp, dXz)
    grads["U_r"] = _outer_sum(hp, dXr)
    grads["U_h"] = _outer_sum(r * hp, dXh)
    A = cache.A
    dA = np.zeros_like(A)
    for gate, dX in (("z", dXz), ("r", dXr), ("h", dXh)):
        grads[f"W_{gate}"] = _outer_sum(A, dX)
        grads[f"b_{gate}"] = dX.sum(axis=(0, 1))
        dA += dX @ p[f"W_{gate}"].T
    dA_pre = dA * (1.0 - A ** 2)
    grads["W_in"] = _outer_sum(cache.xs, dA_pre)
    grads["b_in"] = dA_pre.sum(axis=(0, 1))
    return {k: grads[k] for k in PARAM_ORDER}, dh_next


def backward(p: dict, cache: SequenceCache, dY: np.ndarray) -> dict:
    grads, _ = sequence_backward(p, cache, dY)
    return grads


def check_distribution(probs: np.ndarray, atol: float = 1e-5) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim < 1 or probs.shape[-1] != N_ACTIONS:
        raise DistributionError(f"expected {N_ACTIONS} probabilities, got shape {probs.shape}")
    if np.any(probs < 0) or not np.all(np.isfinite(probs)):
        raise DistributionError("probabilities must be finite and non-negative")
    if np.any(np.abs(probs.sum(axis=-1) - 1.0) > atol):
        raise DistributionError("probabilities must sum to 1")
    return probs


def sample_actions(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Categorical draws for a (..., 5) batch by inverse CDF, one uniform per row."""
    probs = check_distribution(probs)
    u = rng.random(probs.shape[:-1])
    cdf = np.cumsum(probs, axis=-1)
    idx = (cdf < u[..., None]).sum(axis=-1)
    return np.minimum(idx, N_ACTIONS - 1)


def sample_action(probs: np.ndarray, rng: np.random.Generator) -> int:
    return int(sample_actions(np.asarray(probs)[None], rng)[0])


def greedy_action(probs: np.ndarray) -> int:
    """Argmax; ``np.argmax`` already breaks ties toward the lowest index."""
    return int(np.argmax(check_distribution(probs)))


def _flatten(params: PolicyParams) -> dict[str, np.ndarray]:
    arrays = {f"actor/{k}": params.actor[k] for k in PARAM_ORDER}
    arrays.update({f"critic/{k}": params.critic[k] for k in PARAM_ORDER})
    return arrays


def save_checkpoint(path, params: PolicyParams, metadata: dict | None = None) -> Path:
    """Write an ``.npz`` container: parameter arrays plus a JSON ``meta`` entry.

    Arrays are stored row-major under ``actor/<name>`` and ``critic/<name>`` in
    ``PARAM_ORDER``.  ``meta`` carries the schema version, both arch
    descriptors and any caller metadata (phase, update index, RNG state,
    resolved run configuration).
    """
    meta = {
        "version": CHECKPOINT_VERSION,
        "actor_arch": asdict(params.actor_arch),
        "critic_arch": asdict(params.critic_arch),
        "dtype": str(params.dtype),
        "metadata": metadata or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    np.savez(buf, meta=np.array(json.dumps(meta, sort_keys=True)), **_flatten(params))
    path.write_bytes(buf.getvalue())
    return path


def load_checkpoint(path) -> tuple[PolicyParams, dict]:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        actor = {k: data[f"actor/{k}"].copy() for k in PARAM_ORDER}
        critic = {k: data[f"critic/{k}"].copy() for k in PARAM_ORDER}
    params = PolicyParams(
        ArchDescriptor(**meta["actor_arch"]), ArchDescriptor(**meta["critic_arch"]), actor, critic
    )
    return params, meta["metadata"]
