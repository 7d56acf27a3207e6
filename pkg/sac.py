"""
sac.py - Soft Actor-Critic precoder learning

Single-step formulation: every action's reward is the immediate sum rate, so the
critics regress the reward directly (no discount, no bootstrapping, no target
networks).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from channel import amplitude_factor, apply_error, build_true_channel
from config import ErrorConfig, SacConfig, ScenarioConfig
from geometry import place_constellation
from neural import (
    Activation,
    DenseNetworkParams,
    DivergenceError,
    GaussianPolicyOutput,
    OptimizerState,
    TrainableNetwork,
    backward,
    flatten_params,
    forward,
    forward_with_cache,
    log_prob,
    relative_error,
    sample_action,
    unflatten_params,
)
from precoding import enforce_per_satellite_power, sum_rate
from seeding import RandomStreams

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
NETWORK_NAMES = ("actor", "critic1", "critic2")
DIAGNOSTICS_HEADER = ["step", "reward", "critic1_loss", "critic2_loss", "actor_loss", "entropy", "temperature"]


@dataclass(frozen=True)
class ExperienceSample:
    """One (state, action, reward) triple"""

    state: np.ndarray
    action: np.ndarray
    reward: float

    def __post_init__(self) -> None:
        if not (np.all(np.isfinite(self.state)) and np.all(np.isfinite(self.action)) and math.isfinite(self.reward)):
            raise ValueError("experience samples must be finite")


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def __len__(self) -> int:
        return self.rewards.shape[0]


class ReplayBuffer:
    """Fixed-capacity ring of experience samples; the oldest is evicted first"""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        if capacity < 1:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self._states = np.zeros((capacity, state_dim))
        self._actions = np.zeros((capacity, action_dim))
        self._rewards = np.zeros(capacity)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, sample: ExperienceSample) -> None:
        """Append a sample, overwriting the oldest once full."""
        i = self._next
        self._states[i] = sample.state
        self._actions[i] = sample.action
        self._rewards[i] = sample.reward
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """
        Draw batch_size samples uniformly with replacement.

        Raises:
            ValueError: If the buffer is empty
        """
        if self._size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        idx = rng.integers(0, self._size, size=batch_size)
        return Batch(states=self._states[idx], actions=self._actions[idx], rewards=self._rewards[idx])

    def samples(self) -> list[ExperienceSample]:
        """Stored samples, oldest first."""
        start = self._next if self._size == self.capacity else 0
        order = [(start + i) % self.capacity for i in range(self._size)]
        return [
            ExperienceSample(state=self._states[i].copy(), action=self._actions[i].copy(), reward=float(self._rewards[i]))
            for i in order
        ]


def state_amplitude_scale(config: ScenarioConfig) -> float:
    """Reciprocal of the channel amplitude at d = satellite altitude."""
    return 1.0 / float(amplitude_factor(config.sat_altitude, config))


def preprocess_csit(H_tilde: np.ndarray, amplitude_scale: float) -> np.ndarray:
    """
    Flat state vector: scaled magnitudes, then phases in (-π, π].

    Both halves use the user-major, satellite, antenna order of the K×MN matrix.
    """
    phases = np.angle(H_tilde).ravel()
    # np.angle gives -π for a negative real part with a -0.0 imaginary part
    phases = np.where(phases == -np.pi, np.pi, phases)
    return np.concatenate([np.abs(H_tilde).ravel() * amplitude_scale, phases])


def _uniform_precoder(num_antennas: int, num_users: int) -> np.ndarray:
    return np.ones((num_antennas, num_users), dtype=complex)


def action_to_precoder(
    action: np.ndarray,
    total_power: float,
    num_sats: int,
    ants_per_sat: int,
    num_users: int,
) -> np.ndarray:
    """
    Reshape a real action into an MN×K precoder and cap per-satellite power at P/M.

    Entry (k, m, n) takes its real part from index k·MN + m·N + n of the first
    half and its imaginary part from the same index of the second half. An
    all-zero action falls back to the uniform equal-power precoder.
    """
    num_antennas = num_sats * ants_per_sat
    half = num_antennas * num_users
    if np.shape(action) != (2 * half,):
        raise ValueError(f"action must have length {2 * half}, got {np.shape(action)}")

    flat = action[:half] + 1j * action[half:]
    W = flat.reshape(num_users, num_antennas).T
    if not np.any(W):
        logger.warning("⚠️  All-zero action, falling back to the uniform equal-power precoder")
        W = _uniform_precoder(num_antennas, num_users)
    return enforce_per_satellite_power(W, total_power, num_sats)


def precoder_to_action(W: np.ndarray) -> np.ndarray:
    """Inverse reshape of action_to_precoder, without the power normalization."""
    flat = W.T.ravel()
    return np.concatenate([flat.real, flat.imag])


def _critic_inputs(states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    return np.concatenate([states, actions], axis=1)


def critic_update(critic: TrainableNetwork, batch: Batch, lr: float) -> float:
    """
    One descent step on mean (Q(s,a) - R)² over the batch.

    Returns:
        float: Loss before the step

    Raises:
        DivergenceError: If the loss is non-finite
    """
    if len(batch) == 0:
        raise ValueError("critic update needs a non-empty batch")
    inputs = _critic_inputs(batch.states, batch.actions)
    q, cache = forward_with_cache(critic.params, inputs)
    residual = q[:, 0] - batch.rewards
    loss = float(np.mean(residual**2))
    if not math.isfinite(loss):
        raise DivergenceError(f"critic loss is {loss}")

    upstream = (2.0 / len(batch)) * residual[:, None]
    grads, _ = backward(critic.params, inputs, upstream, cache)
    critic.apply_gradients(grads, lr)
    return loss


@dataclass
class ActorLossResult:
    """Composite actor loss, its parts, and the actor parameter gradients"""

    loss: float
    policy_loss: float
    entropy_loss: float
    log_probs: np.ndarray
    grads: DenseNetworkParams


def actor_loss(
    actor: DenseNetworkParams,
    critics: list[DenseNetworkParams],
    log_temperature: float,
    states: np.ndarray,
    noise: np.ndarray,
) -> ActorLossResult:
    """
    L = mean_b[-min(Q1, Q2)(s, a)] + mean_b[(1/D)·Σ_i exp(α)·log π(a_i)].

    Actions are the reparametrized a = μ + σ·z for the given noise z, so both
    terms pass gradients to the actor through the means and scales.

    Raises:
        DivergenceError: If the loss is non-finite
    """
    batch_size = states.shape[0]
    if batch_size == 0:
        raise ValueError("actor loss needs a non-empty batch of states")

    raw, actor_cache = forward_with_cache(actor, states)
    policy = GaussianPolicyOutput.from_network_output(raw)
    actions = policy.mean + policy.std * noise
    log_probs = log_prob(policy, actions)
    action_dim = actions.shape[1]

    inputs = _critic_inputs(states, actions)
    evaluations = [forward_with_cache(c, inputs) for c in critics]
    q = np.stack([out[:, 0] for out, _ in evaluations], axis=1)
    chosen = np.argmin(q, axis=1)

    temperature = math.exp(log_temperature)
    policy_loss = float(-np.mean(q[np.arange(batch_size), chosen]))
    entropy_loss = float(temperature * np.mean(log_probs))
    loss = policy_loss + entropy_loss
    if not math.isfinite(loss):
        raise DivergenceError(f"actor loss is {loss}")

    action_grad = np.zeros_like(actions)
    for j, (critic, (_, cache)) in enumerate(zip(critics, evaluations)):
        upstream = np.where(chosen == j, -1.0 / batch_size, 0.0)[:, None]
        _, input_grad = backward(critic, inputs, upstream, cache)
        action_grad += input_grad[:, states.shape[1]:]

    # d log π(μ + σz)/d log σ = -1 for fixed z; the mean does not enter
    mean_grad = action_grad
    log_std_grad = (action_grad * policy.std * noise - temperature / (batch_size * action_dim)) * policy.log_std_mask
    grads, _ = backward(actor, states, np.concatenate([mean_grad, log_std_grad], axis=1), actor_cache)

    return ActorLossResult(
        loss=loss,
        policy_loss=policy_loss,
        entropy_loss=entropy_loss,
        log_probs=log_probs,
        grads=grads,
    )


@dataclass
class TemperatureState:
    """Log-domain entropy temperature α and the latest entropy estimate"""

    log_alpha: float = 0.0
    entropy_estimate: float = math.nan

    @property
    def temperature(self) -> float:
        return math.exp(self.log_alpha)


def temperature_update(
    temp: TemperatureState,
    batch_log_probs: np.ndarray,
    target_entropy: float,
    temperature_lr: float,
) -> TemperatureState:
    """Raise α when the per-dimension entropy estimate is below target, lower it when above."""
    entropy = float(-np.mean(batch_log_probs))
    log_alpha = temp.log_alpha + temperature_lr * (target_entropy - entropy)
    return TemperatureState(log_alpha=log_alpha, entropy_estimate=entropy)


@dataclass
class TrainingDiagnostics:
    """Per-step record of one training iteration"""

    step: int
    reward: float = math.nan
    critic1_loss: float = math.nan
    critic2_loss: float = math.nan
    actor_loss: float = math.nan
    entropy: float = math.nan
    temperature: float = math.nan
    updated: bool = False
    diverged: bool = False
    fallback: bool = False
    channel: Optional[np.ndarray] = field(default=None, repr=False)
    precoder: Optional[np.ndarray] = field(default=None, repr=False)

    def to_row(self) -> list[str]:
        values = [self.reward, self.critic1_loss, self.critic2_loss, self.actor_loss, self.entropy, self.temperature]
        return [str(self.step)] + [format(v, ".17g") for v in values]


def policy_action(
    actor: DenseNetworkParams,
    state: np.ndarray,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Mean action, or a reparametrized sample when a random stream is given."""
    policy = GaussianPolicyOutput.from_network_output(forward(actor, state))
    if rng is None:
        return policy.mean
    return sample_action(policy, rng)[0]


class SacLearner:
    """Actor, twin critics, temperature and experience buffer of one training run"""

    def __init__(
        self,
        scenario: ScenarioConfig,
        sac: SacConfig,
        training_error: ErrorConfig,
        seed: int,
        retain_pairs: bool = False,
    ):
        self.scenario = scenario
        self.sac = sac
        self.training_error = training_error
        self.retain_pairs = retain_pairs
        self.streams = RandomStreams.from_seed(seed)

        dim = scenario.action_dim
        hidden = [sac.hidden_nodes] * sac.hidden_layers
        self.actor = TrainableNetwork.create([dim] + hidden + [2 * dim], self.streams.init)
        # Independent draws from the init stream; critics never share parameters
        self.critics = [TrainableNetwork.create([2 * dim] + hidden + [1], self.streams.init) for _ in range(2)]
        self.temperature = TemperatureState(log_alpha=sac.initial_log_temperature)
        self.buffer = ReplayBuffer(sac.buffer_size, dim, dim)
        self.amplitude_scale = state_amplitude_scale(scenario)
        self.step = 0

    def _observe(self) -> tuple[np.ndarray, np.ndarray]:
        sc = self.scenario
        placement = place_constellation(sc, sc.user_jitter_bound, self.streams.placement)
        H = build_true_channel(placement, sc)
        H_tilde = apply_error(H, self.training_error, sc, self.streams.errors)
        return H, H_tilde

    def training_step(self) -> TrainingDiagnostics:
        """
        One inference and learning iteration.

        Resamples the user jitter and CSIT errors, acts, stores the reward, and
        once the buffer holds a full batch updates both critics, the actor and
        the temperature once each.
        """
        self.step += 1
        sc = self.scenario
        diag = TrainingDiagnostics(step=self.step)

        H, H_tilde = self._observe()
        state = preprocess_csit(H_tilde, self.amplitude_scale)
        action = policy_action(self.actor.params, state, self.streams.action)
        if not np.all(np.isfinite(action)):
            logger.warning("❌ Step %d: actor produced a non-finite action", self.step)
            diag.diverged = True
            return diag

        diag.fallback = not np.any(action)
        W = action_to_precoder(action, sc.total_power, sc.num_sats, sc.ants_per_sat, sc.num_users)
        diag.reward = sum_rate(H, W, sc.noise_power)
        if self.retain_pairs:
            diag.channel, diag.precoder = H, W
        self.buffer.push(ExperienceSample(state=state, action=action, reward=diag.reward))

        if len(self.buffer) >= self.sac.batch_size:
            self._learn(diag)
        return diag

    def _learn(self, diag: TrainingDiagnostics) -> None:
        sac = self.sac
        try:
            batch = self.buffer.sample(sac.batch_size, self.streams.buffer)
            diag.critic1_loss = critic_update(self.critics[0], batch, sac.critic_lr)
            diag.critic2_loss = critic_update(self.critics[1], batch, sac.critic_lr)

            states = self.buffer.sample(sac.batch_size, self.streams.buffer).states
            noise = self.streams.action.standard_normal((sac.batch_size, self.scenario.action_dim))
            result = actor_loss(
                self.actor.params,
                [c.params for c in self.critics],
                self.temperature.log_alpha,
                states,
                noise,
            )
            self.actor.apply_gradients(result.grads, sac.actor_lr)
            self.temperature = temperature_update(
                self.temperature, result.log_probs, sac.entropy_target, sac.temperature_lr
            )
        except DivergenceError as e:
            logger.warning("❌ Step %d: %s, remaining updates skipped", self.step, e)
            diag.diverged = True
            return

        diag.actor_loss = result.loss
        diag.entropy = self.temperature.entropy_estimate
        diag.temperature = self.temperature.temperature
        diag.updated = True


def _flatten_moments(moments: list[np.ndarray]) -> np.ndarray:
    return np.concatenate([m.ravel() for m in moments])


def save_checkpoint(learner: SacLearner, path: str | Path) -> Path:
    """
    Write actor, critics, optimizer states, temperature and step to an .npz archive.

    Every network is stored in the flat layout of neural.flatten_params.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays: dict[str, np.ndarray] = {
        "format_version": np.array(CHECKPOINT_FORMAT_VERSION),
        "step": np.array(learner.step),
        "log_temperature": np.array(learner.temperature.log_alpha),
        "entropy_estimate": np.array(learner.temperature.entropy_estimate),
    }
    for name, net in zip(NETWORK_NAMES, [learner.actor, *learner.critics]):
        arrays[f"{name}.layer_sizes"] = np.array(net.params.layer_sizes)
        arrays[f"{name}.params"] = flatten_params(net.params)
        arrays[f"{name}.adam_m"] = _flatten_moments(net.optimizer.first_moment)
        arrays[f"{name}.adam_v"] = _flatten_moments(net.optimizer.second_moment)
        arrays[f"{name}.adam_step"] = np.array(net.optimizer.step)
    with path.open("wb") as f:
        np.savez(f, **arrays)
    return path


@dataclass
class Checkpoint:
    """Contents of a training checkpoint"""

    networks: dict[str, TrainableNetwork]
    temperature: TemperatureState
    step: int

    @property
    def actor(self) -> DenseNetworkParams:
        return self.networks["actor"].params


def load_checkpoint(path: str | Path) -> Checkpoint:
    """
    Read a checkpoint written by save_checkpoint.

    Raises:
        FileNotFoundError: If the file does not exist
        ValueError: If the archive has an unknown format version
    """
    with np.load(Path(path)) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format version {version}")
        networks = {}
        for name in NETWORK_NAMES:
            sizes = [int(s) for s in data[f"{name}.layer_sizes"]]
            params = unflatten_params(data[f"{name}.params"], sizes, Activation.RELU)
            state = OptimizerState(
                first_moment=unflatten_params(data[f"{name}.adam_m"], sizes).tensors(),
                second_moment=unflatten_params(data[f"{name}.adam_v"], sizes).tensors(),
                step=int(data[f"{name}.adam_step"]),
            )
            networks[name] = TrainableNetwork(params=params, optimizer=state)
        temperature = TemperatureState(
            log_alpha=float(data["log_temperature"]),
            entropy_estimate=float(data["entropy_estimate"]),
        )
        return Checkpoint(networks=networks, temperature=temperature, step=int(data["step"]))


def actor_loss_gradient_check(rng: np.random.Generator, step: float = 1e-5, hidden: int = 8) -> float:
    """
    Finite-difference check of the actor loss gradient on a 2-dimensional action.

    Returns:
        float: Largest relative error over the actor parameters
    """
    state_dim, action_dim, batch = 2, 2, 4
    actor = DenseNetworkParams.initialize([state_dim, hidden, 2 * action_dim], rng)
    critics = [DenseNetworkParams.initialize([state_dim + action_dim, hidden, 1], rng) for _ in range(2)]
    # Keep the raw log-scales inside the clamp range
    actor.biases[-1][action_dim:] = -0.5
    states = rng.standard_normal((batch, state_dim))
    noise = rng.standard_normal((batch, action_dim))
    log_temperature = -1.0

    analytic = flatten_params(actor_loss(actor, critics, log_temperature, states, noise).grads)
    flat = flatten_params(actor)
    sizes = actor.layer_sizes
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        plus = flat.copy()
        minus = flat.copy()
        plus[i] += step
        minus[i] -= step
        loss_plus = actor_loss(unflatten_params(plus, sizes), critics, log_temperature, states, noise).loss
        loss_minus = actor_loss(unflatten_params(minus, sizes), critics, log_temperature, states, noise).loss
        numeric[i] = (loss_plus - loss_minus) / (2.0 * step)
    return relative_error(analytic, numeric)
