"""
Pruebas del núcleo GFlowNet: muestreo, pérdidas y distribución exacta
"""

import numpy as np
import pytest

from utils.autodiff import backward
from utils.environments import BitSeqEnv, GridState, HyperGridEnv
from utils.errors import GraphError
from utils.gflownet import (Trajectory, TrajectoryRngs, db_loss, exact_terminal_distribution, make_log_z,
                            sample_trajectories, tb_loss, uniform_backward_logprob)
from utils.policies import SamplingContext, build_policy
from utils.seeding import RngStreams

from conftest import tiny_config


def make_policy(env, /, **changes):
    config = tiny_config(**changes)
    return build_policy(env, config, np.random.default_rng(5), np.random.default_rng(6))


def make_rngs(seed, count, batch=0):
    streams = RngStreams(seed)
    return [TrajectoryRngs(streams.generator('sampling', batch, row),
                           streams.generator('member', batch, row),
                           streams.generator('epistemic_index', batch, row)) for row in range(count)]


def numeric_grad(build, param, eps=1e-6):
    base = param.value.copy()
    grad = np.zeros_like(base)
    for idx in np.ndindex(base.shape):
        shifted = base.copy()
        shifted[idx] += eps
        param.assign(shifted)
        upper = build().item()
        shifted[idx] -= 2 * eps
        param.assign(shifted)
        lower = build().item()
        grad[idx] = (upper - lower) / (2 * eps)
    param.assign(base)
    return grad


def enumerate_terminal_distribution(env, policy):
    """Suma P_F sobre todas las trayectorias completas por recorrido en profundidad"""
    dist = np.zeros(env.n_terminal)

    def visit(state, prob):
        logprobs = policy.eval_logits(env.encode_batch([state]), env.action_mask(state)[None])[0]
        for child, action in env.children(state):
            p = prob * np.exp(logprobs[action])
            if env.is_terminal(child):
                dist[env.terminal_index(child)] += p
            else:
                visit(child, p)

    visit(env.initial_state(), 1.0)
    return dist


def test_uniform_backward_logprob_example():
    env = HyperGridEnv(ndim=2, height=4)
    states = [GridState((0, 0)), GridState((1, 0)), GridState((1, 1)), GridState((1, 1), done=True)]
    trajectory = Trajectory(states, [0, 1, 2], env.log_reward(states[-1]), [SamplingContext()] * 3)
    assert uniform_backward_logprob(env, trajectory) == pytest.approx(-np.log(2))


@pytest.mark.parametrize('algo', ['default', 'ts', 'enn', 'enn-enhanced'])
def test_exact_distribution_matches_enumeration_on_grid(algo):
    env = HyperGridEnv(ndim=2, height=3)
    policy = make_policy(env, algo=algo, env={'height': 3})
    exact = exact_terminal_distribution(env, policy)
    np.testing.assert_allclose(exact, enumerate_terminal_distribution(env, policy), atol=1e-12)
    assert exact.sum() == pytest.approx(1.0)


def test_exact_distribution_matches_enumeration_on_bitseq():
    env = BitSeqEnv(half_length=2)
    policy = make_policy(env, algo='enn', env={'kind': 'bitseq', 'seq_halflen': 2})
    exact = exact_terminal_distribution(env, policy, chunk=3)
    np.testing.assert_allclose(exact, enumerate_terminal_distribution(env, policy), atol=1e-12)


@pytest.mark.parametrize('algo', ['default', 'ts', 'enn', 'enn-enhanced'])
def test_sampled_trajectories_are_complete_and_legal(algo):
    env = HyperGridEnv(ndim=2, height=4)
    policy = make_policy(env, algo=algo)
    for trajectory in sample_trajectories(env, policy, make_rngs(0, 12)):
        assert env.is_terminal(trajectory.terminal)
        assert len(trajectory) == sum(trajectory.terminal.coords) + 1
        assert len(trajectory.contexts) == len(trajectory.actions)
        assert trajectory.log_reward == pytest.approx(env.log_reward(trajectory.terminal))
        for state, action, following in zip(trajectory.states, trajectory.actions, trajectory.states[1:]):
            assert env.action_mask(state)[action]
            assert env.step(state, action) == following
        assert len(set(trajectory.contexts)) == 1


def test_sampling_is_deterministic_for_fixed_streams():
    env = HyperGridEnv(ndim=2, height=4)
    policy = make_policy(env, algo='enn-enhanced')
    first = sample_trajectories(env, policy, make_rngs(3, 8))
    second = sample_trajectories(env, policy, make_rngs(3, 8))
    assert [t.to_dict() for t in first] == [t.to_dict() for t in second]
    other = sample_trajectories(env, policy, make_rngs(4, 8))
    assert [t.to_dict() for t in first] != [t.to_dict() for t in other]


def test_ts_trajectories_use_several_members():
    env = HyperGridEnv(ndim=2, height=4)
    policy = make_policy(env, algo='ts')
    members = {t.context.member for t in sample_trajectories(env, policy, make_rngs(1, 30))}
    assert members <= {0, 1, 2} and len(members) > 1


def test_step_resampling_changes_prior_member_within_a_trajectory():
    env = HyperGridEnv(ndim=2, height=4)
    policy = make_policy(env, algo='enn-enhanced', policy={'enhanced_prior_resample': 'step'})
    trajectories = sample_trajectories(env, policy, make_rngs(2, 20))
    assert all(len({c.z for c in t.contexts}) == 1 for t in trajectories)
    assert any(len({c.prior_member for c in t.contexts}) > 1 for t in trajectories)


def test_full_epsilon_ignores_the_policy():
    env = BitSeqEnv(half_length=2)
    policy = make_policy(env, env={'kind': 'bitseq', 'seq_halflen': 2})
    trajectories = sample_trajectories(env, policy, make_rngs(0, 400), epsilon=1.0)
    ones = np.mean([t.actions[0] for t in trajectories])
    assert 0.4 < ones < 0.6


def test_tb_loss_matches_manual_residuals():
    env = HyperGridEnv(ndim=2, height=4)
    policy = make_policy(env)
    log_z = make_log_z(1)
    log_z.assign([0.7])
    trajectories = sample_trajectories(env, policy, make_rngs(0, 6))
    expected = []
    for t in trajectories:
        encodings = env.encode_batch(t.states[:-1])
        masks = np.stack([env.action_mask(s) for s in t.states[:-1]])
        forward = policy.eval_logits(encodings, masks)[np.arange(len(t)), t.actions].sum()
        expected.append((0.7 + forward - t.log_reward - uniform_backward_logprob(env, t)) ** 2)
    assert tb_loss(env, trajectories, policy, log_z).item() == pytest.approx(np.mean(expected))


@pytest.mark.parametrize('algo', ['default', 'ts', 'enn-enhanced'])
def test_tb_gradients_match_finite_differences(algo):
    env = HyperGridEnv(ndim=2, height=4)
    policy = make_policy(env, algo=algo)
    log_z = make_log_z(policy.n_members)
    trajectories = sample_trajectories(env, policy, make_rngs(7, 6))

    def build():
        return tb_loss(env, trajectories, policy, log_z)

    grads = backward(build())
    checked = [log_z, policy.head.bias]
    if algo in ('default', 'ts'):
        checked.append(policy.trunk.layers[0].bias)
    for param in checked:
        np.testing.assert_allclose(grads[param.name], numeric_grad(build, param), atol=1e-5, rtol=1e-4)


@pytest.mark.parametrize('algo', ['default', 'enn'])
def test_db_gradients_match_finite_differences(algo):
    env = HyperGridEnv(ndim=2, height=4)
    policy = make_policy(env, algo=algo, loss='db')
    trajectories = sample_trajectories(env, policy, make_rngs(8, 5))

    def build():
        return db_loss(env, trajectories, policy)

    grads = backward(build())
    for param in (policy.flow_head.weight, policy.flow_head.bias, policy.head.bias):
        np.testing.assert_allclose(grads[param.name], numeric_grad(build, param), atol=1e-5, rtol=1e-4)


def test_db_loss_on_bit_sequences():
    env = BitSeqEnv(half_length=2)
    policy = make_policy(env, loss='db', env={'kind': 'bitseq', 'seq_halflen': 2})
    trajectories = sample_trajectories(env, policy, make_rngs(0, 4))
    loss = db_loss(env, trajectories, policy)
    assert loss.item() >= 0.0
    assert np.all(np.isfinite(backward(loss)['flow.bias']))


def test_losses_reject_empty_batches():
    env = HyperGridEnv(ndim=2, height=4)
    policy = make_policy(env, loss='db')
    with pytest.raises(GraphError):
        tb_loss(env, [], policy, make_log_z())
    with pytest.raises(GraphError):
        db_loss(env, [], policy)


def forward_logprob(env, policy, trajectory):
    encodings = env.encode_batch(trajectory.states[:-1])
    masks = np.stack([env.action_mask(s) for s in trajectory.states[:-1]])
    return policy.eval_logits(encodings, masks)[np.arange(len(trajectory)), trajectory.actions].sum()


@pytest.mark.parametrize('delta', [0.5, -1.3, 1e-3])
def test_tb_loss_vanishes_on_consistent_flows(delta):
    """Con log Z + Σ log P_F = log R + Σ log P_B la pérdida es 0; desplazar log Z en δ da δ^2"""
    env = HyperGridEnv(ndim=2, height=4)
    policy = make_policy(env)
    trajectory = sample_trajectories(env, policy, make_rngs(3, 1))[0]
    balanced = trajectory.log_reward + uniform_backward_logprob(env, trajectory) - forward_logprob(env, policy, trajectory)
    log_z = make_log_z(1)
    log_z.assign([balanced])
    assert tb_loss(env, [trajectory], policy, log_z).item() == pytest.approx(0.0, abs=1e-20)
    log_z.assign([balanced + delta])
    assert tb_loss(env, [trajectory], policy, log_z).item() == pytest.approx(delta ** 2, rel=1e-9)

    trajectories = sample_trajectories(env, policy, make_rngs(4, 6))
    backward_logprobs = [0.7 + forward_logprob(env, policy, t) - t.log_reward for t in trajectories]
    log_z.assign([0.7])
    assert tb_loss(env, trajectories, policy, log_z, backward_logprobs).item() == pytest.approx(0.0, abs=1e-20)
    log_z.assign([0.7 + delta])
    assert tb_loss(env, trajectories, policy, log_z, backward_logprobs).item() == pytest.approx(delta ** 2, rel=1e-9)


def test_db_loss_vanishes_on_a_consistent_transition():
    """s0 -> STOP: log F(s0) + log P_F(STOP|s0) = log R(s0) anula el residuo"""
    env = HyperGridEnv(ndim=2, height=4)
    policy = make_policy(env, loss='db')
    origin = GridState((0, 0))
    terminal = env.step(origin, env.stop_action)
    trajectory = Trajectory([origin, terminal], [env.stop_action], env.log_reward(terminal), [SamplingContext()])
    stop_logprob = policy.eval_logits(env.encode_batch([origin]), env.action_mask(origin)[None])[0, env.stop_action]

    balanced = env.log_reward(terminal) - stop_logprob
    policy.flow_head.weight.assign(np.zeros(policy.flow_head.weight.shape))
    policy.flow_head.bias.assign([balanced])
    assert db_loss(env, [trajectory], policy).item() == pytest.approx(0.0, abs=1e-20)
    policy.flow_head.bias.assign([balanced + 0.4])
    assert db_loss(env, [trajectory], policy).item() == pytest.approx(0.16, rel=1e-9)
