"""
Pruebas de las políticas hacia adelante
"""

import numpy as np
import pytest

from utils.autodiff import backward, gather, log_softmax, sum_
from utils.environments import GridState, HyperGridEnv
from utils.errors import ConfigError, ShapeError
from utils.policies import (ContextBatch, EpinetEnhancedPolicy, EpinetPolicy, SamplingContext,
                            TSEnsemblePolicy, build_policy, joint_prediction, masked_log_softmax)

from conftest import tiny_config

ENV = HyperGridEnv(ndim=2, height=4)


def make_policy(**changes):
    return build_policy(ENV, tiny_config(**changes), np.random.default_rng(11), np.random.default_rng(12))


def grid_batch(*coords):
    states = [GridState(c) for c in coords]
    return ENV.encode_batch(states), np.stack([ENV.action_mask(s) for s in states])


def test_build_policy_dispatch():
    assert type(make_policy(algo='ts')) is TSEnsemblePolicy
    assert type(make_policy(algo='enn')) is EpinetPolicy
    assert type(make_policy(algo='enn-enhanced')) is EpinetEnhancedPolicy
    assert make_policy(loss='tb').flow_head is None
    assert make_policy(loss='db').flow_head is not None


def test_ts_member_uses_its_own_columns():
    policy = make_policy(algo='ts')
    encodings, _ = grid_batch((0, 0), (1, 2))
    full = policy.head.numpy(policy.trunk.numpy(encodings))
    logits, _ = policy.logits(encodings, ContextBatch(np.array([2, 0])))
    np.testing.assert_allclose(logits.value[0], full[0, 6:9])
    np.testing.assert_allclose(logits.value[1], full[1, 0:3])
    np.testing.assert_allclose(policy.numpy_logits(encodings, ContextBatch(np.array([2, 0]))), logits.value)
    with pytest.raises(ShapeError):
        policy.logits(encodings, ContextBatch(np.array([3, 0])))


def test_epinet_does_not_send_gradient_into_the_trunk():
    """Con la cabeza base en cero, el tronco solo influye a través de la epinet"""
    policy = make_policy(algo='enn')
    policy.head.weight.assign(np.zeros(policy.head.weight.shape))
    encodings, masks = grid_batch((0, 1), (2, 2))
    contexts = ContextBatch.stack([policy.sample_context(None, np.random.default_rng(s)) for s in (1, 2)])
    logits, _ = policy.logits(encodings, contexts)
    grads = backward(sum_(gather(log_softmax(logits, masks), [0, 1])))
    for param in policy.trunk.parameters():
        np.testing.assert_array_equal(grads[param.name], np.zeros(param.shape))
    assert np.any(grads['epinet.0.weight'] != 0)


def test_prior_networks_are_frozen():
    policy = make_policy(algo='enn')
    assert len(policy.priors) == 3
    trainable = policy.trainable_parameters()
    assert not any(name.startswith('prior.') for name in trainable)
    assert any(name.startswith('prior.') for name in policy.parameters())
    encodings, masks = grid_batch((1, 1))
    contexts = ContextBatch.stack([policy.sample_context(None, np.random.default_rng(0))])
    logits, _ = policy.logits(encodings, contexts)
    assert not any(name.startswith('prior.') for name in backward(sum_(logits)))


def test_epinet_graph_and_numpy_paths_agree():
    for algo in ('enn', 'enn-enhanced'):
        policy = make_policy(algo=algo)
        encodings, _ = grid_batch((0, 0), (3, 1), (2, 2))
        rng = np.random.default_rng(4)
        contexts = ContextBatch.stack([policy.sample_context(None, rng) for _ in range(3)])
        logits, _ = policy.logits(encodings, contexts)
        np.testing.assert_allclose(policy.numpy_logits(encodings, contexts), logits.value, atol=1e-12)


def test_enhanced_prior_uses_a_single_member():
    policy = make_policy(algo='enn-enhanced', policy={'prior_scale': 2.0})
    encodings, _ = grid_batch((1, 2))
    components = policy.head_components(encodings)
    z = np.zeros((1, 3))
    contexts = ContextBatch(np.zeros(1, dtype=np.int64), z=z, prior_member=np.array([1]))
    expected = components['base'] + 2.0 * components['priors'][:, 1]
    np.testing.assert_allclose(policy.combine(components, contexts), expected)


def test_zero_prior_scale_removes_the_prior_term():
    policy = make_policy(algo='enn', policy={'prior_scale': 0.0})
    encodings, _ = grid_batch((1, 2))
    components = policy.head_components(encodings)
    contexts = ContextBatch(np.zeros(1, dtype=np.int64), z=np.ones((1, 3)))
    expected = components['base'] + components['train'].sum(axis=-1)
    np.testing.assert_allclose(policy.combine(components, contexts), expected)


def test_missing_index_is_a_shape_error():
    policy = make_policy(algo='enn')
    encodings, _ = grid_batch((0, 0))
    with pytest.raises(ShapeError):
        policy.logits(encodings, ContextBatch(np.zeros(1, dtype=np.int64)))
    enhanced = make_policy(algo='enn-enhanced')
    with pytest.raises(ShapeError):
        enhanced.numpy_logits(encodings, ContextBatch(np.zeros(1, dtype=np.int64), z=np.zeros((1, 3))))


@pytest.mark.parametrize('algo', ['default', 'ts', 'enn', 'enn-enhanced'])
def test_eval_logits_are_normalized_and_masked(algo):
    policy = make_policy(algo=algo)
    encodings, masks = grid_batch((3, 0), (1, 1), (3, 3))
    logprobs = policy.eval_logits(encodings, masks)
    np.testing.assert_allclose(np.exp(logprobs).sum(axis=1), 1.0)
    assert np.all(logprobs[~masks] == -np.inf)
    np.testing.assert_array_equal(policy.eval_logits(encodings, masks), logprobs)


def test_ts_eval_policy_averages_members():
    policy = make_policy(algo='ts')
    encodings, masks = grid_batch((1, 1))
    members = policy.head_components(encodings)['members'][0]
    expected = np.mean([np.exp(masked_log_softmax(members[k], masks[0])) for k in range(3)], axis=0)
    np.testing.assert_allclose(np.exp(policy.eval_logits(encodings, masks)[0]), expected)


def test_epinet_eval_contexts_depend_only_on_eval_stream():
    config = tiny_config(algo='enn')
    a = build_policy(ENV, config, np.random.default_rng(1), np.random.default_rng(99))
    b = build_policy(ENV, config, np.random.default_rng(2), np.random.default_rng(99))
    np.testing.assert_array_equal(a.eval_context.z, b.eval_context.z)
    assert a.eval_context.z.shape == (8, 3)


def test_contexts_per_algorithm():
    rng = np.random.default_rng(0)
    assert make_policy().sample_context(rng, rng) == SamplingContext()
    ts_context = make_policy(algo='ts').sample_context(rng, rng)
    assert 0 <= ts_context.member < 3 and ts_context.z is None
    enn_context = make_policy(algo='enn').sample_context(rng, rng)
    assert len(enn_context.z) == 3 and enn_context.prior_member is None
    enhanced_context = make_policy(algo='enn-enhanced').sample_context(rng, rng)
    assert 0 <= enhanced_context.prior_member < 3


def test_joint_prediction_for_deterministic_policy_is_product():
    policy = make_policy()
    encodings, masks = grid_batch((0, 0), (1, 0))
    logprobs = policy.eval_logits(encodings, masks)
    expected = np.exp(logprobs[0, 0] + logprobs[1, 1])
    estimate, std = joint_prediction(policy, encodings, masks, [0, 1], 5, np.random.default_rng(0),
                                     return_std=True)
    assert estimate == pytest.approx(expected)
    assert std == pytest.approx(0.0)


def test_joint_prediction_averages_over_indices():
    policy = make_policy(algo='enn')
    encodings, masks = grid_batch((0, 0), (1, 0))
    estimate = joint_prediction(policy, encodings, masks, [0, 1], 64, np.random.default_rng(3))
    contexts = policy.sample_contexts(np.random.default_rng(3), 64)
    logprobs = masked_log_softmax(policy.combine(policy.head_components(encodings), contexts, paired=False), masks)
    assert estimate == pytest.approx(np.exp(logprobs[:, 0, 0] + logprobs[:, 1, 1]).mean())
    assert 0.0 < estimate < 1.0


def test_joint_prediction_validation():
    policy = make_policy()
    encodings, masks = grid_batch((3, 0))
    with pytest.raises(ValueError):
        joint_prediction(policy, encodings, masks, [1], 0, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        joint_prediction(policy, encodings, masks, [0], 4, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        joint_prediction(policy, encodings, masks, [1, 2], 4, np.random.default_rng(0))


def test_load_arrays_requires_every_parameter():
    policy = make_policy(algo='ts')
    arrays = {name: np.zeros(p.shape) for name, p in policy.parameters().items()}
    policy.load_arrays(arrays)
    assert all(np.all(p.value == 0) for p in policy.parameters().values())
    arrays.pop('head.bias')
    with pytest.raises(ShapeError):
        policy.load_arrays(arrays)


def test_flow_head_is_required_for_flow():
    policy = make_policy()
    encodings, _ = grid_batch((0, 0))
    _, features = policy.logits(encodings, ContextBatch(np.zeros(1, dtype=np.int64)))
    with pytest.raises(ConfigError):
        policy.flow(features)


# ---------------------------------------------------------------------------
# Propiedades de las parametrizaciones
# ---------------------------------------------------------------------------

def zero_epinet(policy):
    for name, param in policy.parameters().items():
        if name.startswith('epinet.'):
            param.assign(np.zeros(param.shape))


def test_epinet_variance_over_the_index():
    """Var_z de los logits = Σ_j (T_j + α p_j)^2, y α^2 Σ_j p_j^2 con la epinet en cero"""
    policy = make_policy(algo='enn', policy={'prior_scale': 2.0})
    encodings, _ = grid_batch((0, 1), (2, 3))
    n_samples = 40000
    contexts = ContextBatch(np.zeros(n_samples, dtype=np.int64),
                            z=np.random.default_rng(8).standard_normal((n_samples, 3)))

    components = policy.head_components(encodings)
    loadings = components['train'] + 2.0 * np.transpose(components['priors'], (0, 2, 1))
    logits = policy.combine(components, contexts, paired=False)
    np.testing.assert_allclose(logits.var(axis=0), (loadings ** 2).sum(axis=-1), rtol=0.05)
    np.testing.assert_allclose(logits.mean(axis=0), components['base'], atol=0.1)

    zero_epinet(policy)
    components = policy.head_components(encodings)
    assert np.all(components['train'] == 0)
    logits = policy.combine(components, contexts, paired=False)
    expected = 4.0 * (components['priors'] ** 2).sum(axis=1)
    np.testing.assert_allclose(logits.var(axis=0), expected, rtol=0.05)


def test_enhanced_eval_policy_averages_over_index_and_prior_member():
    policy = make_policy(algo='enn-enhanced', eval={'m_eval': 64})
    eval_context = policy.eval_context
    assert len(set(eval_context.prior_member.tolist())) > 1

    encodings, masks = grid_batch((0, 0), (2, 1), (3, 2))
    components = policy.head_components(encodings)
    per_context = []
    for z, member in zip(eval_context.z, eval_context.prior_member):
        train_term = np.einsum('baj,j->ba', components['train'], z)
        logits = components['base'] + train_term + policy.prior_scale * components['priors'][:, member]
        per_context.append(masked_log_softmax(logits, masks))
    mixture = np.log(np.mean(np.exp(per_context), axis=0))
    np.testing.assert_allclose(policy.eval_logits(encodings, masks)[masks], mixture[masks], atol=1e-12)

    fixed = ContextBatch(eval_context.member, z=eval_context.z, prior_member=np.zeros_like(eval_context.prior_member))
    single_member = masked_log_softmax(policy.combine(components, fixed, paired=False), masks)
    assert not np.allclose(np.log(np.mean(np.exp(single_member), axis=0))[masks], mixture[masks])


@pytest.mark.parametrize('member', range(3))
def test_ts_gradient_reaches_only_the_sampled_member(member):
    policy = make_policy(algo='ts')
    encodings, masks = grid_batch((0, 0), (1, 2), (2, 1))
    logits, _ = policy.logits(encodings, ContextBatch(np.full(3, member)))
    grads = backward(sum_(gather(log_softmax(logits, masks), [0, 1, 2])))

    own = np.zeros(9, dtype=bool)
    own[3 * member:3 * member + 3] = True
    for name in ('head.weight', 'head.bias'):
        grad = grads[name].reshape(-1, 9)
        assert np.all(grad[:, ~own] == 0.0), name
        assert np.any(grad[:, own] != 0.0), name


def test_ts_members_are_sampled_uniformly():
    policy = make_policy(algo='ts', policy={'ensemble_size': 4})
    member_rng, index_rng = np.random.default_rng(31), np.random.default_rng(32)
    n = 20000
    members = [policy.sample_context(member_rng, index_rng).member for _ in range(n)]
    frequencies = np.bincount(members, minlength=4) / n
    sigma = np.sqrt(0.25 * 0.75 / n)
    assert frequencies.shape == (4,)
    assert np.all(np.abs(frequencies - 0.25) <= 3 * sigma)


def test_all_policies_collapse_to_the_default_network():
    """Con K=1, α=0 y la epinet en cero las cuatro políticas calculan la misma función"""
    changes = {'policy': {'ensemble_size': 1, 'prior_scale': 0.0}}
    reference = make_policy(algo='default', **changes)
    encodings, masks = grid_batch((0, 0), (1, 3), (3, 3), (2, 0))
    expected = reference.numpy_logits(encodings, ContextBatch(np.zeros(4, dtype=np.int64)))

    rng = np.random.default_rng(5)
    for algo in ('ts', 'enn', 'enn-enhanced'):
        policy = make_policy(algo=algo, **changes)
        shared = policy.parameters()
        for name, param in reference.parameters().items():
            shared[name].assign(param.value)
        zero_epinet(policy)

        contexts = ContextBatch.stack([policy.sample_context(rng, rng) for _ in range(4)])
        graph, _ = policy.logits(encodings, contexts)
        np.testing.assert_allclose(graph.value, expected, atol=1e-12, err_msg=algo)
        np.testing.assert_allclose(policy.numpy_logits(encodings, contexts), expected, atol=1e-12, err_msg=algo)
        np.testing.assert_allclose(policy.eval_logits(encodings, masks)[masks],
                                   reference.eval_logits(encodings, masks)[masks], atol=1e-12, err_msg=algo)
