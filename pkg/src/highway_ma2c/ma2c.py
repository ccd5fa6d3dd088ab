"""Multi-agent advantage actor-critic training loop.

All agents evaluate and update one shared parameter store (or one actor
store plus one critic store in the non-shared configuration); behavioral
differences come only from differing observations. Rollouts are on-policy
with n-step bootstrapped returns; updates pool every agent's transitions
into a single batch.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import nn
from .env import AvAction, EnvConfig, HighwayEnv
from .nn import AdamState, CheckpointError, LossWeights, NetworkParams

log = logging.getLogger(__name__)

_BUNDLE_MAGIC = b"MA2C"
_BUNDLE_VERSION = 1

TRUNK_SHARED = "shared"
TRUNK_SEPARATE = "separate"


@dataclass(frozen=True)
class Hyperparams:
    gamma: float = 0.99
    eta: float = 5e-4  # learning rate
    rollout_len: int = 20
    total_steps: int = 50_000
    eval_every: int = 200  # training episodes between evaluations
    eval_episodes: int = 3
    entropy_coef: float = 0.05
    value_coef: float = 0.05
    advantage_norm: bool = True
    grad_clip: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.rollout_len < 1:
            raise ValueError("rollout_len must be at least 1")


def compute_returns(
    rewards: Sequence[float],
    dones: Sequence[bool],
    bootstrap: float,
    gamma: float,
) -> np.ndarray:
    """n-step discounted returns, restarting the recursion at done flags.

    The value after the final transition is ``bootstrap`` (ignored when the
    final transition is terminal).
    """
    if len(rewards) != len(dones):
        raise ValueError("rewards and dones must have equal length")
    out = np.empty(len(rewards), dtype=np.float64)
    next_return = float(bootstrap)
    for t in range(len(rewards) - 1, -1, -1):
        if dones[t]:
            out[t] = rewards[t]
        else:
            out[t] = rewards[t] + gamma * next_return
        next_return = out[t]
    return out


def compute_advantages(
    returns: np.ndarray,
    values: np.ndarray,
    normalize: bool = True,
    std_floor: float = 1e-8,
) -> np.ndarray:
    """Advantages R - V, optionally standardized over the update batch."""
    returns = np.asarray(returns, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if returns.shape != values.shape:
        raise ValueError("returns and values must have equal length")
    adv = returns - values
    if normalize and adv.size:
        adv = (adv - adv.mean()) / (adv.std() + std_floor)
    return adv


@dataclass
class Segment:
    """One agent's consecutive trajectory inside a rollout."""

    obs: list[np.ndarray] = field(default_factory=list)
    actions: list[int] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    values: list[float] = field(default_factory=list)
    dones: list[bool] = field(default_factory=list)
    bootstrap: float = 0.0


class RolloutBuffer:
    """Per-agent on-policy transitions between two parameter updates."""

    def __init__(self) -> None:
        self._active: dict[int, Segment] = {}
        self._closed: list[Segment] = []

    def add(
        self,
        agent: int,
        obs: np.ndarray,
        action: int,
        reward: float,
        value: float,
        done: bool,
    ) -> None:
        seg = self._active.setdefault(agent, Segment())
        seg.obs.append(obs)
        seg.actions.append(action)
        seg.rewards.append(reward)
        seg.values.append(value)
        seg.dones.append(done)

    def close_agent(self, agent: int, terminal: bool = True) -> None:
        """End an agent's segment; terminal segments bootstrap with zero."""
        seg = self._active.pop(agent, None)
        if seg is None or not seg.obs:
            return
        if terminal:
            seg.dones[-1] = True
        self._closed.append(seg)

    def close_episode(self) -> None:
        for agent in list(self._active):
            self.close_agent(agent, terminal=True)

    def cut(self, value_fn) -> None:
        """Close the still-running segments, bootstrapping from ``value_fn``."""
        for agent, seg in list(self._active.items()):
            seg.bootstrap = float(value_fn(agent))
            self._closed.append(seg)
        self._active.clear()

    def drain(self) -> list[Segment]:
        segments = self._closed + [
            seg for _, seg in sorted(self._active.items()) if seg.obs
        ]
        self._closed = []
        self._active.clear()
        return segments

    def __len__(self) -> int:
        return sum(len(seg.obs) for seg in self._closed) + sum(
            len(seg.obs) for seg in self._active.values()
        )


class PolicyBundle:
    """Parameter store(s) for the actor-critic policy.

    The shared configuration keeps a single network whose trunk serves both
    heads; the separate configuration trains one network as actor and an
    independent one as critic.
    """

    def __init__(self, trunk: str, nets: tuple[NetworkParams, ...]):
        if trunk not in (TRUNK_SHARED, TRUNK_SEPARATE):
            raise ValueError(f"unknown trunk mode {trunk!r}")
        expected = 1 if trunk == TRUNK_SHARED else 2
        if len(nets) != expected:
            raise ValueError(f"{trunk} bundle needs {expected} parameter stores")
        self.trunk = trunk
        self.nets = nets

    @classmethod
    def init(cls, trunk: str, n_obs: int, rng: np.random.Generator) -> "PolicyBundle":
        if trunk == TRUNK_SHARED:
            return cls(trunk, (nn.init_params(n_obs, rng),))
        return cls(trunk, (nn.init_params(n_obs, rng), nn.init_params(n_obs, rng)))

    @property
    def actor(self) -> NetworkParams:
        return self.nets[0]

    @property
    def critic(self) -> NetworkParams:
        return self.nets[-1]

    @property
    def n_obs(self) -> int:
        return self.nets[0].n_obs

    def distributions(self, obs_batch: np.ndarray) -> np.ndarray:
        probs, _ = nn.policy_value_batch(self.actor, obs_batch)
        return probs

    def values(self, obs_batch: np.ndarray) -> np.ndarray:
        _, values = nn.policy_value_batch(self.critic, obs_batch)
        return values

    def policy_and_values(self, obs_batch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.trunk == TRUNK_SHARED:
            return nn.policy_value_batch(self.nets[0], obs_batch)
        return self.distributions(obs_batch), self.values(obs_batch)

    def act(
        self,
        obs: np.ndarray,
        rng: Optional[np.random.Generator] = None,
        greedy: bool = False,
    ) -> int:
        probs = nn.forward(self.actor, obs).action_probs
        if greedy or rng is None:
            return nn.greedy_action(probs)
        return nn.sample_action(probs, rng)

    def serialize(self, step: int = 0, episode: int = 0) -> bytes:
        trunk_flag = 0 if self.trunk == TRUNK_SHARED else 1
        blobs = [nn.serialize(net) for net in self.nets]
        header = struct.pack(
            "<4sIBBHQQ",
            _BUNDLE_MAGIC,
            _BUNDLE_VERSION,
            trunk_flag,
            len(blobs),
            0,
            step,
            episode,
        )
        body = b"".join(struct.pack("<Q", len(b)) + b for b in blobs)
        return header + body

    @classmethod
    def deserialize(cls, blob: bytes) -> tuple["PolicyBundle", int, int]:
        header_size = struct.calcsize("<4sIBBHQQ")
        if len(blob) < header_size:
            raise CheckpointError("truncated checkpoint header")
        magic, version, trunk_flag, count, _, step, episode = struct.unpack(
            "<4sIBBHQQ", blob[:header_size]
        )
        if magic != _BUNDLE_MAGIC:
            raise CheckpointError(f"bad checkpoint magic {magic!r}")
        if version != _BUNDLE_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        trunk = TRUNK_SHARED if trunk_flag == 0 else TRUNK_SEPARATE
        nets = []
        offset = header_size
        for _ in range(count):
            if len(blob) < offset + 8:
                raise CheckpointError("truncated checkpoint body")
            (size,) = struct.unpack("<Q", blob[offset : offset + 8])
            offset += 8
            nets.append(nn.deserialize(blob[offset : offset + size]))
            offset += size
        return cls(trunk, tuple(nets)), int(step), int(episode)

    def save(self, path: Path | str, step: int = 0, episode: int = 0) -> None:
        Path(path).write_bytes(self.serialize(step, episode))

    @classmethod
    def load(cls, path: Path | str) -> tuple["PolicyBundle", int, int]:
        try:
            blob = Path(path).read_bytes()
        except OSError as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
        return cls.deserialize(blob)


class RandomPolicy:
    """Uniform over the five actions; the untrained reference point."""

    def act(self, obs, rng=None, greedy: bool = False) -> int:
        if rng is None:
            raise ValueError("random policy needs a generator")
        return int(rng.integers(0, len(AvAction)))


class IdlePolicy:
    """Always cruises."""

    def act(self, obs, rng=None, greedy: bool = False) -> int:
        return int(AvAction.IDLE)


@dataclass
class OptimizerState:
    states: tuple[AdamState, ...]

    @classmethod
    def for_bundle(cls, bundle: PolicyBundle) -> "OptimizerState":
        return cls(tuple(AdamState.for_params(net) for net in bundle.nets))


@dataclass
class RolloutStats:
    steps: int = 0
    episodes: int = 0
    episode_returns: list[float] = field(default_factory=list)
    episode_lengths: list[int] = field(default_factory=list)
    collisions: int = 0
    speed_samples: list[float] = field(default_factory=list)
    accel_samples: list[float] = field(default_factory=list)
    lane_changes: int = 0


class _EpisodeTracker:
    """Accumulates per-episode statistics across rollout boundaries."""

    def __init__(self) -> None:
        self.agent_returns: dict[int, float] = {}
        self.length = 0
        self.collided = False
        self.lane_changes = 0

    def record(self, result) -> None:
        self.length += 1
        for aid, rew in result.rewards.items():
            self.agent_returns[aid] = self.agent_returns.get(aid, 0.0) + rew
        self.lane_changes += sum(result.info.lane_changes.values())
        if result.info.collisions:
            self.collided = True

    def episode_return(self) -> float:
        if not self.agent_returns:
            return 0.0
        return float(np.mean(list(self.agent_returns.values())))


def collect_rollout(
    sim: HighwayEnv,
    bundle: PolicyBundle,
    buffer: RolloutBuffer,
    rollout_len: int,
    rng: np.random.Generator,
    tracker: Optional[_EpisodeTracker] = None,
) -> tuple[RolloutStats, _EpisodeTracker]:
    """Run ``rollout_len`` synchronized steps, appending transitions per agent.

    Episodes reset automatically on done; agents that leave the road have
    their last kept transition marked terminal.
    """
    stats = RolloutStats()
    tracker = tracker or _EpisodeTracker()
    for _ in range(rollout_len):
        agents = sorted(sim.observations)
        if not agents:  # empty world; only the horizon can end this episode
            result = sim.step({})
        else:
            obs_batch = np.stack([sim.observations[a] for a in agents])
            probs, values = bundle.policy_and_values(obs_batch)
            actions = {
                agent: nn.sample_action(probs[i], rng)
                for i, agent in enumerate(agents)
            }
            obs_before = {a: sim.observations[a] for a in agents}
            result = sim.step(actions)
            for i, agent in enumerate(agents):
                if agent in result.rewards:
                    buffer.add(
                        agent,
                        obs_before[agent],
                        actions[agent],
                        result.rewards[agent],
                        float(values[i]),
                        result.done,
                    )
                else:
                    # exited the road: no reward entry, trajectory ends
                    buffer.close_agent(agent, terminal=True)
        stats.steps += 1
        tracker.record(result)
        stats.speed_samples.extend(result.info.speeds.values())
        stats.accel_samples.extend(result.info.accels.values())
        stats.lane_changes += sum(result.info.lane_changes.values())
        if result.done:
            buffer.close_episode()
            stats.episodes += 1
            stats.episode_returns.append(tracker.episode_return())
            stats.episode_lengths.append(tracker.length)
            if tracker.collided:
                stats.collisions += 1
            tracker = _EpisodeTracker()
            sim.reset()

    def bootstrap(agent: int) -> float:
        return float(bundle.values(sim.observations[agent][None])[0])

    buffer.cut(bootstrap)
    return stats, tracker


def update(
    bundle: PolicyBundle,
    optimizer: OptimizerState,
    buffer: RolloutBuffer,
    hp: Hyperparams,
) -> tuple[PolicyBundle, OptimizerState, float]:
    """One gradient step on the pooled transitions of every agent.

    The buffer is cleared afterwards; an empty buffer is rejected.
    """
    segments = [seg for seg in buffer.drain() if seg.obs]
    if not segments:
        raise ValueError("cannot update from an empty buffer")

    obs = np.concatenate([np.stack(seg.obs) for seg in segments])
    actions = np.concatenate([np.asarray(seg.actions) for seg in segments])
    values = np.concatenate([np.asarray(seg.values) for seg in segments])
    returns = np.concatenate(
        [
            compute_returns(seg.rewards, seg.dones, seg.bootstrap, hp.gamma)
            for seg in segments
        ]
    )
    advantages = compute_advantages(returns, values, hp.advantage_norm)

    if bundle.trunk == TRUNK_SHARED:
        weights = LossWeights(1.0, hp.value_coef, hp.entropy_coef)
        grads, loss = nn.backward(
            bundle.nets[0], obs, actions, advantages, returns, weights
        )
        net, state = nn.apply_update(
            bundle.nets[0], grads, optimizer.states[0], hp.eta, clip_norm=hp.grad_clip
        )
        return PolicyBundle(bundle.trunk, (net,)), OptimizerState((state,)), loss

    actor_w = LossWeights(1.0, 0.0, hp.entropy_coef)
    critic_w = LossWeights(0.0, hp.value_coef, 0.0)
    a_grads, a_loss = nn.backward(
        bundle.actor, obs, actions, advantages, returns, actor_w
    )
    c_grads, c_loss = nn.backward(
        bundle.critic, obs, actions, advantages, returns, critic_w
    )
    actor, a_state = nn.apply_update(
        bundle.actor, a_grads, optimizer.states[0], hp.eta, clip_norm=hp.grad_clip
    )
    critic, c_state = nn.apply_update(
        bundle.critic, c_grads, optimizer.states[1], hp.eta, clip_norm=hp.grad_clip
    )
    return (
        PolicyBundle(bundle.trunk, (actor, critic)),
        OptimizerState((a_state, c_state)),
        a_loss + c_loss,
    )


@dataclass
class EvalMetrics:
    return_mean: float
    return_std: float
    collision_rate: float
    mean_speed: float
    accel_std: float
    lane_changes_per_episode: float
    episodes: int


@dataclass
class EvalRecord:
    step: int
    episode: int
    metrics: EvalMetrics


@dataclass
class TrainResult:
    bundle: PolicyBundle
    best_bundle: PolicyBundle
    evals: list[EvalRecord]
    steps: int
    episodes: int


def evaluate(
    policy,
    density_mode: str,
    episodes: int,
    seed: int,
    config: EnvConfig = EnvConfig(),
) -> EvalMetrics:
    """Greedy rollout statistics over fresh episodes; no updates, no sampling.

    Stochastic policies (the random baseline) still draw from a generator
    derived from ``seed``, so results stay reproducible.
    """
    if episodes < 1:
        raise ValueError("need at least one evaluation episode")
    sim = HighwayEnv(config, density_mode, seed)
    rng = np.random.default_rng(seed + 1)

    returns: list[float] = []
    collisions = 0
    speed_samples: list[float] = []
    accel_samples: list[float] = []
    lane_changes = 0
    for _ in range(episodes):
        tracker = _EpisodeTracker()
        done = False
        while not done:
            actions = {
                agent: policy.act(obs, rng=rng, greedy=True)
                for agent, obs in sorted(sim.observations.items())
            }
            result = sim.step(actions)
            tracker.record(result)
            speed_samples.extend(result.info.speeds.values())
            accel_samples.extend(result.info.accels.values())
            lane_changes += sum(result.info.lane_changes.values())
            done = result.done
        returns.append(tracker.episode_return())
        if tracker.collided:
            collisions += 1
        sim.reset()

    return EvalMetrics(
        return_mean=float(np.mean(returns)),
        return_std=float(np.std(returns)),
        collision_rate=collisions / episodes,
        mean_speed=float(np.mean(speed_samples)) if speed_samples else 0.0,
        accel_std=float(np.std(accel_samples)) if accel_samples else 0.0,
        lane_changes_per_episode=lane_changes / episodes,
        episodes=episodes,
    )


def train(
    config: EnvConfig,
    hp: Hyperparams,
    density_mode: str,
    trunk: str = TRUNK_SHARED,
    *,
    initial_bundle: Optional[PolicyBundle] = None,
    start_step: int = 0,
    start_episode: int = 0,
) -> TrainResult:
    """Alternate rollout collection and updates until the step budget.

    Greedy evaluation runs every ``hp.eval_every`` completed training
    episodes and once more at the end; the best-by-eval-return and final
    parameters are both returned.
    """
    seeds = np.random.SeedSequence(hp.seed).spawn(4)
    init_rng = np.random.default_rng(seeds[0])
    action_rng = np.random.default_rng(seeds[1])
    env_seed = int(np.random.default_rng(seeds[2]).integers(0, 2**62))
    eval_seed = int(np.random.default_rng(seeds[3]).integers(0, 2**62))

    bundle = initial_bundle or PolicyBundle.init(trunk, config.n_obs, init_rng)
    optimizer = OptimizerState.for_bundle(bundle)
    sim = HighwayEnv(config, density_mode, env_seed)
    buffer = RolloutBuffer()
    tracker = _EpisodeTracker()

    evals: list[EvalRecord] = []
    best: tuple[float, PolicyBundle] | None = None
    steps = start_step
    episodes = start_episode
    next_eval = episodes + hp.eval_every

    def run_eval() -> None:
        nonlocal best
        metrics = evaluate(bundle, density_mode, hp.eval_episodes, eval_seed, config)
        evals.append(EvalRecord(step=steps, episode=episodes, metrics=metrics))
        if best is None or metrics.return_mean > best[0]:
            best = (metrics.return_mean, bundle)
        log.info(
            "step %d episode %d eval return %.2f +- %.2f collisions %.2f",
            steps,
            episodes,
            metrics.return_mean,
            metrics.return_std,
            metrics.collision_rate,
        )

    end_step = start_step + hp.total_steps
    while steps < end_step:
        chunk = min(hp.rollout_len, end_step - steps)
        stats, tracker = collect_rollout(
            sim, bundle, buffer, chunk, action_rng, tracker
        )
        steps += stats.steps
        episodes += stats.episodes
        if len(buffer):
            bundle, optimizer, _ = update(bundle, optimizer, buffer, hp)
        while episodes >= next_eval:
            run_eval()
            next_eval += hp.eval_every

    if hp.total_steps > 0:
        run_eval()
    best_bundle = best[1] if best is not None else bundle
    return TrainResult(
        bundle=bundle,
        best_bundle=best_bundle,
        evals=evals,
        steps=steps,
        episodes=episodes,
    )
