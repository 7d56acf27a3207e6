import math

import numpy as np
import pytest

from channel import build_true_channel
from config import ErrorConfig, ErrorModel
from geometry import place_constellation
from neural import DenseNetworkParams, GaussianPolicyOutput, TrainableNetwork, flatten_params, forward, sample_action
from precoding import per_satellite_power, sum_rate
from sac import (
    Batch,
    ExperienceSample,
    ReplayBuffer,
    SacLearner,
    TemperatureState,
    action_to_precoder,
    actor_loss,
    actor_loss_gradient_check,
    critic_update,
    load_checkpoint,
    policy_action,
    precoder_to_action,
    preprocess_csit,
    save_checkpoint,
    state_amplitude_scale,
    temperature_update,
)


def _sample(reward, dim=2):
    return ExperienceSample(state=np.full(dim, reward), action=np.full(dim, -reward), reward=float(reward))


def test_buffer_evicts_oldest_first():
    buffer = ReplayBuffer(3, 2, 2)
    for r in range(4):
        buffer.push(_sample(r))
    assert len(buffer) == 3
    assert [s.reward for s in buffer.samples()] == [1.0, 2.0, 3.0]
    np.testing.assert_array_equal(buffer.samples()[0].state, [1.0, 1.0])


def test_buffer_sampling_is_uniform(rng):
    buffer = ReplayBuffer(10, 2, 2)
    for r in range(10):
        buffer.push(_sample(r))
    rewards = buffer.sample(1_000_000, rng).rewards
    frequencies = np.bincount(rewards.astype(int), minlength=10) / rewards.size
    assert frequencies.size == 10
    np.testing.assert_allclose(frequencies, 0.1, atol=0.01)


def test_buffer_rejects_bad_use(rng):
    with pytest.raises(ValueError):
        ReplayBuffer(3, 2, 2).sample(4, rng)
    with pytest.raises(ValueError):
        ReplayBuffer(0, 2, 2)
    with pytest.raises(ValueError):
        ExperienceSample(state=np.zeros(2), action=np.zeros(2), reward=math.nan)


def test_state_preprocessing(scenario):
    placement = place_constellation(scenario, 30.0, np.random.default_rng(0))
    H = build_true_channel(placement, scenario)
    state = preprocess_csit(H, state_amplitude_scale(scenario))
    assert state.shape == (24,)
    magnitudes, phases = state[:12], state[12:]
    # Every slant range is within a few km of the altitude
    assert np.all((magnitudes > 0.99) & (magnitudes <= 1.0))
    np.testing.assert_allclose(phases, np.angle(H).ravel())
    assert np.all((phases > -np.pi) & (phases <= np.pi))


def test_action_layout(scenario):
    action = np.zeros(24)
    # k=1, m=1, n=0 -> index 1·4 + 1·2 + 0
    action[6] = 1.0
    W = action_to_precoder(action, 100.0, 2, 2, 3)
    expected = np.zeros((4, 3), dtype=complex)
    expected[2, 1] = np.sqrt(50.0)
    np.testing.assert_allclose(W, expected)

    action = np.zeros(24)
    action[12 + 6] = 1.0
    np.testing.assert_allclose(action_to_precoder(action, 100.0, 2, 2, 3), 1j * expected)


def test_action_and_precoder_agree_up_to_power_scaling(rng):
    action = rng.standard_normal(24)
    back = precoder_to_action(action_to_precoder(action, 100.0, 2, 2, 3))
    np.testing.assert_allclose(back / np.linalg.norm(back), action / np.linalg.norm(action))
    assert np.dot(back, action) > 0


def test_all_zero_action_falls_back_to_uniform_precoder():
    W = action_to_precoder(np.zeros(24), 100.0, 2, 2, 3)
    np.testing.assert_allclose(per_satellite_power(W, 2), [50.0, 50.0])
    np.testing.assert_allclose(np.abs(W), np.abs(W[0, 0]))


def test_action_length_is_checked():
    with pytest.raises(ValueError):
        action_to_precoder(np.ones(23), 100.0, 2, 2, 3)


def test_critic_update_reduces_loss(rng):
    critic = TrainableNetwork.create([4, 16, 1], rng)
    states = rng.standard_normal((32, 2))
    actions = rng.standard_normal((32, 2))
    batch = Batch(states=states, actions=actions, rewards=states[:, 0] - actions[:, 1])
    first = critic_update(critic, batch, 1e-2)
    for _ in range(300):
        last = critic_update(critic, batch, 1e-2)
    assert last < 0.5 * first


def test_critic_update_needs_samples(rng):
    critic = TrainableNetwork.create([4, 1], rng)
    with pytest.raises(ValueError):
        critic_update(critic, Batch(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0)), 1e-3)


def test_actor_loss_parts(rng):
    actor = DenseNetworkParams.initialize([3, 8, 4], rng)
    critics = [DenseNetworkParams.initialize([5, 8, 1], rng) for _ in range(2)]
    states = rng.standard_normal((6, 3))
    noise = rng.standard_normal((6, 2))

    result = actor_loss(actor, critics, 0.5, states, noise)
    policy = GaussianPolicyOutput.from_network_output(forward(actor, states))
    actions = policy.mean + policy.std * noise
    inputs = np.concatenate([states, actions], axis=1)
    q = np.minimum(forward(critics[0], inputs)[:, 0], forward(critics[1], inputs)[:, 0])

    assert result.policy_loss == pytest.approx(-q.mean())
    assert result.entropy_loss == pytest.approx(math.exp(0.5) * result.log_probs.mean())
    assert result.loss == pytest.approx(result.policy_loss + result.entropy_loss)
    assert result.log_probs.shape == (6, 2)
    assert result.grads.layer_sizes == [3, 8, 4]


def test_actor_loss_gradient(rng):
    assert actor_loss_gradient_check(rng) < 1e-4


def test_temperature_update_direction():
    temp = TemperatureState(log_alpha=0.0)
    # Entropy 0.9189 is above a target of -1: temperature must drop
    lowered = temperature_update(temp, np.full((4, 2), -0.9189), -1.0, 1e-3)
    assert lowered.entropy_estimate == pytest.approx(0.9189)
    assert lowered.log_alpha == pytest.approx(1e-3 * (-1.0 - 0.9189))
    raised = temperature_update(temp, np.full((4, 2), 5.0), -1.0, 1e-3)
    assert raised.log_alpha > 0.0
    assert TemperatureState(log_alpha=0.0).temperature == 1.0


def test_policy_action_uses_mean_without_a_stream(rng):
    actor = DenseNetworkParams.initialize([3, 6], rng)
    state = rng.standard_normal(3)
    np.testing.assert_array_equal(policy_action(actor, state), forward(actor, state)[:3])
    assert not np.allclose(policy_action(actor, state, rng), forward(actor, state)[:3])


def test_learner_starts_updating_once_a_batch_is_stored(scenario, small_sac):
    learner = SacLearner(scenario, small_sac, ErrorConfig(), seed=1, retain_pairs=True)
    diagnostics = [learner.training_step() for _ in range(12)]

    assert [d.updated for d in diagnostics] == [False] * 7 + [True] * 5
    assert all(d.reward >= 0.0 and not d.diverged for d in diagnostics)
    assert all(math.isnan(d.critic1_loss) for d in diagnostics[:7])
    assert all(math.isfinite(d.actor_loss) for d in diagnostics[7:])
    assert diagnostics[0].channel.shape == (3, 4)
    assert diagnostics[0].precoder.shape == (4, 3)
    assert len(learner.buffer) == 12
    assert learner.temperature.log_alpha < 0.0


def test_learner_is_deterministic(scenario, small_sac):
    error = ErrorConfig(model=ErrorModel.MODEL2, delta_epsilon=0.1, sigma_zeta=0.01)
    runs = []
    for _ in range(2):
        learner = SacLearner(scenario, small_sac, error, seed=11)
        runs.append([learner.training_step().to_row() for _ in range(15)])
    assert runs[0] == runs[1]

    other = SacLearner(scenario, small_sac, error, seed=12)
    assert [other.training_step().to_row() for _ in range(15)] != runs[0]


def test_critics_are_initialized_independently(scenario, small_sac):
    learner = SacLearner(scenario, small_sac, ErrorConfig(), seed=0)
    a, b = (flatten_params(c.params) for c in learner.critics)
    assert not np.allclose(a, b)


def test_checkpoint_round_trip(tmp_path, scenario, small_sac):
    learner = SacLearner(scenario, small_sac, ErrorConfig(), seed=3)
    for _ in range(10):
        learner.training_step()
    path = save_checkpoint(learner, tmp_path / "sac.npz")

    checkpoint = load_checkpoint(path)
    assert checkpoint.step == 10
    assert checkpoint.temperature.log_alpha == learner.temperature.log_alpha
    np.testing.assert_array_equal(flatten_params(checkpoint.actor), flatten_params(learner.actor.params))
    for name, net in zip(("critic1", "critic2"), learner.critics):
        restored = checkpoint.networks[name]
        np.testing.assert_array_equal(flatten_params(restored.params), flatten_params(net.params))
        assert restored.optimizer.step == net.optimizer.step
        for a, b in zip(restored.optimizer.second_moment, net.optimizer.second_moment):
            np.testing.assert_array_equal(a, b)


def test_checkpoint_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.npz")
    path = tmp_path / "future.npz"
    np.savez(path, format_version=np.array(99))
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_critic_loss_falls_during_training(scenario, small_sac):
    sac = small_sac.model_copy(update={"critic_lr": 3e-3, "buffer_size": 1000})
    learner = SacLearner(scenario, sac, ErrorConfig(), seed=5)
    losses = [learner.training_step().critic1_loss for _ in range(600)]
    losses = [l for l in losses if math.isfinite(l)]
    assert np.mean(losses[-50:]) < np.mean(losses[:10])


def test_negative_real_entries_map_to_plus_pi():
    H = np.array([[complex(-1.0, -0.0), complex(-2.0, 0.0), complex(0.0, 1.0)]])
    phases = preprocess_csit(H, 1.0)[3:]
    np.testing.assert_array_equal(phases, [np.pi, np.pi, np.pi / 2])


def test_sampled_actions_meet_the_power_invariant(scenario, rng):
    P, M = scenario.total_power, scenario.num_sats
    dim = scenario.action_dim
    for _ in range(10_000):
        policy = GaussianPolicyOutput(
            mean=rng.standard_normal(dim) * 10.0 ** rng.uniform(-3, 3),
            log_std=rng.uniform(-5.0, 2.0, size=dim),
        )
        action, _ = sample_action(policy, rng)
        W = action_to_precoder(action, P, M, scenario.ants_per_sat, scenario.num_users)
        assert per_satellite_power(W, M).max() == pytest.approx(P / M, rel=1e-9)
        assert np.sum(np.abs(W) ** 2) <= P + 1e-9


def test_stored_rewards_match_the_retained_pairs(scenario, small_sac):
    error = ErrorConfig(model=ErrorModel.MODEL2, delta_epsilon=0.1, sigma_zeta=0.01)
    learner = SacLearner(scenario, small_sac, error, seed=4, retain_pairs=True)
    diagnostics = [learner.training_step() for _ in range(small_sac.buffer_size)]
    stored = [s.reward for s in learner.buffer.samples()]
    for diag, reward in zip(diagnostics, stored):
        assert diag.reward == reward
        assert abs(sum_rate(diag.channel, diag.precoder, scenario.noise_power) - reward) <= 1e-12
