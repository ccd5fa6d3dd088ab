"""Minimal differentiable actor-critic network.

Position features (dx, dy columns) and speed features (dvx, dvy columns) of
the observation matrix feed two separate 64-unit encoders; the concatenated
codes pass through a 128-unit fusion layer that is shared by a 5-logit actor
head and a scalar critic head. Everything is float64 numpy with hand-written
reverse-mode gradients, which keeps gradient-check tolerances tight.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
import numpy as np

N_ACTIONS = 5
ENCODER_WIDTH = 64
FUSION_WIDTH = 128
FEATURES = 4  # observation columns: dx, dy, dvx, dvy

_MAGIC = b"ACNP"
_VERSION = 1


class TrainingFault(RuntimeError):
    """Raised when a loss or gradient stops being finite."""


class CheckpointError(ValueError):
    """Raised when serialized parameters cannot be loaded."""


@dataclass
class NetworkParams:
    """All weights of one actor-critic network, in declaration order."""

    n_obs: int
    w_pos: np.ndarray  # (2*n_obs, 64)
    b_pos: np.ndarray  # (64,)
    w_vel: np.ndarray  # (2*n_obs, 64)
    b_vel: np.ndarray  # (64,)
    w_fus: np.ndarray  # (128, 128)
    b_fus: np.ndarray  # (128,)
    w_act: np.ndarray  # (128, 5)
    b_act: np.ndarray  # (5,)
    w_val: np.ndarray  # (128, 1)
    b_val: np.ndarray  # (1,)


_ARRAY_FIELDS = (
    "w_pos",
    "b_pos",
    "w_vel",
    "b_vel",
    "w_fus",
    "b_fus",
    "w_act",
    "b_act",
    "w_val",
    "b_val",
)


@dataclass
class NetworkOutput:
    logits: np.ndarray  # (5,)
    action_probs: np.ndarray  # (5,)
    value: float


def init_params(n_obs: int, rng: np.random.Generator, scale: float = 1.0) -> NetworkParams:
    """He-style initialization, deterministic for a given generator state."""
    d_in = 2 * n_obs

    def layer(fan_in: int, fan_out: int) -> np.ndarray:
        std = scale * np.sqrt(2.0 / fan_in)
        return rng.normal(0.0, std, size=(fan_in, fan_out))

    return NetworkParams(
        n_obs=n_obs,
        w_pos=layer(d_in, ENCODER_WIDTH),
        b_pos=np.zeros(ENCODER_WIDTH),
        w_vel=layer(d_in, ENCODER_WIDTH),
        b_vel=np.zeros(ENCODER_WIDTH),
        w_fus=layer(2 * ENCODER_WIDTH, FUSION_WIDTH),
        b_fus=np.zeros(FUSION_WIDTH),
        w_act=layer(FUSION_WIDTH, N_ACTIONS),
        b_act=np.zeros(N_ACTIONS),
        w_val=layer(FUSION_WIDTH, 1),
        b_val=np.zeros(1),
    )


def zeros_like_params(params: NetworkParams) -> NetworkParams:
    return NetworkParams(
        params.n_obs,
        *(np.zeros_like(getattr(params, name)) for name in _ARRAY_FIELDS),
    )


def flatten(params: NetworkParams) -> np.ndarray:
    return np.concatenate([getattr(params, name).ravel() for name in _ARRAY_FIELDS])


def unflatten(vector: np.ndarray, like: NetworkParams) -> NetworkParams:
    arrays = []
    offset = 0
    for name in _ARRAY_FIELDS:
        template = getattr(like, name)
        size = template.size
        arrays.append(vector[offset : offset + size].reshape(template.shape))
        offset += size
    if offset != vector.size:
        raise ValueError("parameter vector has the wrong length")
    return NetworkParams(like.n_obs, *arrays)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def _split_features(obs: np.ndarray, n_obs: int) -> tuple[np.ndarray, np.ndarray]:
    if obs.shape[-2:] != (n_obs, FEATURES):
        raise ValueError(
            f"observation shape {obs.shape} does not match ({n_obs}, {FEATURES})"
        )
    batch = obs.reshape(-1, n_obs, FEATURES)
    pos = batch[:, :, :2].reshape(batch.shape[0], -1)
    vel = batch[:, :, 2:].reshape(batch.shape[0], -1)
    return pos, vel


def _forward_cache(params: NetworkParams, obs: np.ndarray) -> dict:
    pos, vel = _split_features(np.asarray(obs, dtype=np.float64), params.n_obs)
    z_pos = pos @ params.w_pos + params.b_pos
    h_pos = np.maximum(z_pos, 0.0)
    z_vel = vel @ params.w_vel + params.b_vel
    h_vel = np.maximum(z_vel, 0.0)
    h = np.concatenate([h_pos, h_vel], axis=1)
    z_fus = h @ params.w_fus + params.b_fus
    trunk = np.maximum(z_fus, 0.0)
    logits = trunk @ params.w_act + params.b_act
    values = (trunk @ params.w_val + params.b_val)[:, 0]
    return {
        "pos": pos,
        "vel": vel,
        "z_pos": z_pos,
        "h": h,
        "z_vel": z_vel,
        "z_fus": z_fus,
        "trunk": trunk,
        "logits": logits,
        "probs": _softmax(logits),
        "values": values,
    }


def forward(params: NetworkParams, obs: np.ndarray) -> NetworkOutput:
    """Evaluate one observation; deterministic given (params, obs)."""
    cache = _forward_cache(params, obs[None] if obs.ndim == 2 else obs)
    return NetworkOutput(
        logits=cache["logits"][0],
        action_probs=cache["probs"][0],
        value=float(cache["values"][0]),
    )


def policy_value_batch(
    params: NetworkParams, obs_batch: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Action distributions and values for a batch of observations."""
    cache = _forward_cache(params, obs_batch)
    return cache["probs"], cache["values"]


def sample_action(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Draw an action index from a probability vector."""
    return int(rng.choice(len(probs), p=probs))


def greedy_action(probs: np.ndarray) -> int:
    """Most likely action; ties resolve to the lowest index."""
    return int(np.argmax(probs))


@dataclass(frozen=True)
class LossWeights:
    """Scales of the three loss terms.

    The total per-sample loss is
    ``-policy * log pi(a|s) * A + value * (R - V)^2 - entropy * H(pi)``.
    Setting ``policy`` or ``value`` to zero routes updates to a single head,
    which is how a non-shared actor/critic pair is trained.
    """

    policy: float = 1.0
    value: float = 0.5
    entropy: float = 0.01


def _entropy(probs: np.ndarray, logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # log-probs via the stabilized identity log p = z - max - log(sum exp)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    plogp = np.where(probs > 0.0, probs * log_probs, 0.0)
    return -plogp.sum(axis=-1), log_probs


def backward(
    params: NetworkParams,
    obs: np.ndarray,
    actions: np.ndarray,
    advantages: np.ndarray,
    returns: np.ndarray,
    weights: LossWeights = LossWeights(),
) -> tuple[NetworkParams, float]:
    """Exact gradients of the mean loss over a batch.

    Advantages are treated as constants: no gradient flows through them.
    Returns (gradients shaped like the parameters, scalar loss value).
    """
    obs = np.asarray(obs, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.int64)
    advantages = np.asarray(advantages, dtype=np.float64)
    returns = np.asarray(returns, dtype=np.float64)
    cache = _forward_cache(params, obs)
    batch = cache["probs"].shape[0]
    idx = np.arange(batch)

    probs = cache["probs"]
    values = cache["values"]
    entropy, log_probs = _entropy(probs, cache["logits"])
    value_err = values - returns

    loss = float(
        np.mean(
            -weights.policy * log_probs[idx, actions] * advantages
            + weights.value * value_err**2
            - weights.entropy * entropy
        )
    )
    if not np.isfinite(loss):
        raise TrainingFault(f"non-finite loss {loss!r}")

    # d loss / d logits: policy-gradient term plus entropy regularizer
    one_hot = np.zeros_like(probs)
    one_hot[idx, actions] = 1.0
    d_logits = (
        weights.policy * advantages[:, None] * (probs - one_hot)
        + weights.entropy * probs * (log_probs + entropy[:, None])
    ) / batch
    d_values = (2.0 * weights.value * value_err / batch)[:, None]

    trunk = cache["trunk"]
    grads = zeros_like_params(params)
    grads.w_act[...] = trunk.T @ d_logits
    grads.b_act[...] = d_logits.sum(axis=0)
    grads.w_val[...] = trunk.T @ d_values
    grads.b_val[...] = d_values.sum(axis=0)

    d_trunk = d_logits @ params.w_act.T + d_values @ params.w_val.T
    d_zfus = d_trunk * (cache["z_fus"] > 0.0)
    grads.w_fus[...] = cache["h"].T @ d_zfus
    grads.b_fus[...] = d_zfus.sum(axis=0)

    d_h = d_zfus @ params.w_fus.T
    d_zpos = d_h[:, :ENCODER_WIDTH] * (cache["z_pos"] > 0.0)
    d_zvel = d_h[:, ENCODER_WIDTH:] * (cache["z_vel"] > 0.0)
    grads.w_pos[...] = cache["pos"].T @ d_zpos
    grads.b_pos[...] = d_zpos.sum(axis=0)
    grads.w_vel[...] = cache["vel"].T @ d_zvel
    grads.b_vel[...] = d_zvel.sum(axis=0)
    return grads, loss


def loss_value(
    params: NetworkParams,
    obs: np.ndarray,
    actions: np.ndarray,
    advantages: np.ndarray,
    returns: np.ndarray,
    weights: LossWeights = LossWeights(),
) -> float:
    """Loss alone, for optimization diagnostics and finite-difference probes."""
    cache = _forward_cache(params, np.asarray(obs, dtype=np.float64))
    idx = np.arange(cache["probs"].shape[0])
    entropy, log_probs = _entropy(cache["probs"], cache["logits"])
    value_err = cache["values"] - np.asarray(returns, dtype=np.float64)
    return float(
        np.mean(
            -weights.policy * log_probs[idx, np.asarray(actions)] * np.asarray(advantages)
            + weights.value * value_err**2
            - weights.entropy * entropy
        )
    )


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def for_params(cls, params: NetworkParams) -> "AdamState":
        size = flatten(params).size
        return cls(m=np.zeros(size), v=np.zeros(size))


def apply_update(
    params: NetworkParams,
    grads: NetworkParams,
    state: AdamState,
    learning_rate: float,
    *,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    clip_norm: float = 0.5,
) -> tuple[NetworkParams, AdamState]:
    """One Adam step against the loss gradient, after global-norm clipping."""
    g = flatten(grads)
    if not np.all(np.isfinite(g)):
        raise TrainingFault("non-finite gradient")
    norm = float(np.linalg.norm(g))
    if clip_norm is not None and norm > clip_norm:
        g = g * (clip_norm / norm)
    step = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1**step)
    v_hat = v / (1.0 - beta2**step)
    theta = flatten(params) - learning_rate * m_hat / (np.sqrt(v_hat) + eps)
    return unflatten(theta, params), AdamState(m=m, v=v, step=step)


def serialize(params: NetworkParams) -> bytes:
    """Versioned little-endian byte layout; stable across platforms."""
    vector = flatten(params)
    header = struct.pack(
        "<4sIIIIIQ",
        _MAGIC,
        _VERSION,
        params.n_obs,
        FEATURES,
        ENCODER_WIDTH,
        FUSION_WIDTH,
        vector.size,
    )
    return header + vector.astype("<f8").tobytes()


def deserialize(blob: bytes) -> NetworkParams:
    header_size = struct.calcsize("<4sIIIIIQ")
    if len(blob) < header_size:
        raise CheckpointError("truncated header")
    magic, version, n_obs, feats, enc, fus, count = struct.unpack(
        "<4sIIIIIQ", blob[:header_size]
    )
    if magic != _MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != _VERSION:
        raise CheckpointError(f"unsupported version {version}")
    if (feats, enc, fus) != (FEATURES, ENCODER_WIDTH, FUSION_WIDTH):
        raise CheckpointError("architecture dimensions do not match this build")
    payload = blob[header_size:]
    if len(payload) != count * 8:
        raise CheckpointError(
            f"expected {count * 8} payload bytes, got {len(payload)}"
        )
    vector = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    template = init_params(n_obs, np.random.default_rng(0))
    if vector.size != flatten(template).size:
        raise CheckpointError("parameter count does not match architecture")
    return unflatten(vector, template)
