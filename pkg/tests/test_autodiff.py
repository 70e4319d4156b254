"""
Pruebas del motor de diferenciación automática
"""

import numpy as np
import pytest

from utils.autodiff import (ParamTensor, Tensor, add, backward, concat, exp, gather, log,
                            log_softmax, matmul, mean, mul, neg, relu, reshape, square,
                            stop_gradient, sub, sum_, take)
from utils.errors import GraphError, NonFiniteError, ShapeError


def numeric_grad(build, param, eps=1e-6):
    """Gradiente por diferencias centrales de build() respecto a param"""
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


def assert_matches_numeric(build, *params, atol=1e-5):
    grads = backward(build())
    for param in params:
        np.testing.assert_allclose(grads[param.name], numeric_grad(build, param), atol=atol, rtol=1e-4)


def test_sum_of_squares_gradient():
    """El ejemplo del módulo: d/dw sum(w^2) = 2w"""
    w = ParamTensor('w', [1.0, 2.0])
    grads = backward(sum_(square(w)))
    np.testing.assert_array_equal(grads['w'], [2.0, 4.0])


def test_mlp_like_graph_matches_finite_differences():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 3))
    w1 = ParamTensor('w1', rng.normal(size=(3, 4)))
    b1 = ParamTensor('b1', rng.normal(size=(4,)))
    w2 = ParamTensor('w2', rng.normal(size=(4, 2)))

    def build():
        hidden = relu(add(matmul(x, w1), b1))
        return mean(square(matmul(hidden, w2)))

    assert_matches_numeric(build, w1, b1, w2)


def test_log_exp_and_broadcast_gradients():
    rng = np.random.default_rng(1)
    a = ParamTensor('a', rng.uniform(0.5, 2.0, size=(2, 3)))
    b = ParamTensor('b', rng.normal(size=(3,)))

    def build():
        return sum_(mul(log(a), exp(sub(b, 1.0))))

    assert_matches_numeric(build, a, b)


def test_log_softmax_gather_take_concat_reshape_gradients():
    rng = np.random.default_rng(2)
    logits = ParamTensor('logits', rng.normal(size=(4, 3)))
    table = ParamTensor('table', rng.normal(size=(2,)))
    mask = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1], [1, 0, 1]], dtype=bool)
    actions = np.array([0, 2, 1, 2])

    def build():
        chosen = gather(log_softmax(logits, mask), actions)
        extended = concat([chosen, take(table, [1, 0, 1])], axis=0)
        return sum_(square(reshape(extended, (7, 1))))

    assert_matches_numeric(build, logits, table)


def test_sum_along_axis_gradient():
    rng = np.random.default_rng(3)
    m = ParamTensor('m', rng.normal(size=(3, 4)))

    def build():
        return sum_(square(sum_(m, axis=1)))

    assert_matches_numeric(build, m)


def test_log_softmax_is_stable_for_large_logits():
    out = log_softmax(Tensor([1000.0, 0.0])).value
    np.testing.assert_allclose(out, [0.0, -1000.0])


def test_masked_entries_get_zero_gradient():
    logits = ParamTensor('logits', [[0.3, -1.2, 2.0]])
    mask = np.array([[True, True, False]])
    out = log_softmax(logits, mask)
    assert out.value[0, 2] == -np.inf
    grads = backward(sum_(gather(out, [0])))
    assert grads['logits'][0, 2] == 0.0


def test_log_softmax_without_legal_actions_is_an_error():
    with pytest.raises(GraphError):
        log_softmax(Tensor([[1.0, 2.0]]), np.array([[False, False]]))


def test_stop_gradient_blocks_flow_but_reports_zero():
    w = ParamTensor('w', [1.5, -0.5])
    v = ParamTensor('v', [2.0, 3.0])
    loss = sum_(add(mul(stop_gradient(w), v), 0.0))
    grads = backward(loss)
    np.testing.assert_array_equal(grads['w'], [0.0, 0.0])
    np.testing.assert_array_equal(grads['v'], [1.5, -0.5])


def test_non_scalar_loss_is_rejected():
    w = ParamTensor('w', [1.0, 2.0])
    with pytest.raises(GraphError):
        backward(square(w))


def test_mutated_parameter_is_detected():
    w = ParamTensor('w', [1.0, 2.0])
    loss = sum_(square(w))
    w.assign([3.0, 4.0])
    with pytest.raises(GraphError):
        backward(loss)


def test_duplicate_parameter_names_are_rejected():
    a = ParamTensor('p', [1.0])
    b = ParamTensor('p', [2.0])
    with pytest.raises(GraphError):
        backward(sum_(add(a, b)))


def test_log_of_zero_raises_non_finite():
    with pytest.raises(NonFiniteError):
        log(Tensor([0.0, 1.0]))


def test_shape_errors():
    with pytest.raises(ShapeError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))
    with pytest.raises(ShapeError):
        gather(Tensor(np.ones((2, 3))), [0, 3])
    with pytest.raises(ShapeError):
        ParamTensor('empty', np.ones((0, 2)))


def test_frozen_parameters_are_not_in_gradients():
    w = ParamTensor('w', [1.0])
    frozen = ParamTensor('frozen', [2.0], requires_grad=False)
    grads = backward(sum_(mul(w, frozen)))
    assert set(grads) == {'w'}
    np.testing.assert_array_equal(grads['w'], [2.0])


def test_values_are_read_only():
    w = ParamTensor('w', [[1.0, 2.0]])
    with pytest.raises(ValueError):
        w.value[0, 0] = 5.0
    np.testing.assert_array_equal(w.values, [1.0, 2.0])


# ---------------------------------------------------------------------------
# Cada primitiva contra diferencias finitas con muchas semillas
# ---------------------------------------------------------------------------

def _away_from_kink(values):
    return np.where(np.abs(values) < 1e-3, values + 0.01, values)


def _random_mask(rng, rows, cols):
    mask = rng.random((rows, cols)) < 0.6
    mask[~mask.any(axis=1), 0] = True
    return mask


def _legal_actions(rng, mask):
    return np.array([rng.choice(np.flatnonzero(row)) for row in mask])


def _primitive_case(name, rng):
    """Devuelve (salida en función de los parámetros, parámetros) para una primitiva"""
    a = ParamTensor('a', rng.normal(size=(3, 4)))
    if name == 'add':
        b = ParamTensor('b', rng.normal(size=(4,)))
        return lambda: add(a, b), (a, b)
    if name == 'sub':
        b = ParamTensor('b', rng.normal(size=(3, 1)))
        return lambda: sub(a, b), (a, b)
    if name == 'mul':
        b = ParamTensor('b', rng.normal(size=(3, 4)))
        return lambda: mul(a, b), (a, b)
    if name == 'neg':
        return lambda: neg(a), (a,)
    if name == 'matmul':
        b = ParamTensor('b', rng.normal(size=(4, 2)))
        return lambda: matmul(a, b), (a, b)
    if name == 'relu':
        a.assign(_away_from_kink(a.value))
        return lambda: relu(a), (a,)
    if name == 'square':
        return lambda: square(a), (a,)
    if name == 'log':
        a.assign(rng.uniform(0.5, 2.0, size=(3, 4)))
        return lambda: log(a), (a,)
    if name == 'exp':
        a.assign(0.5 * a.value)
        return lambda: exp(a), (a,)
    if name == 'sum':
        return lambda: sum_(a, axis=0), (a,)
    if name == 'mean':
        return lambda: mean(a, axis=1), (a,)
    if name == 'reshape':
        return lambda: reshape(a, (6, 2)), (a,)
    if name == 'gather':
        index = rng.integers(4, size=3)
        return lambda: gather(a, index), (a,)
    if name == 'take':
        index = rng.integers(3, size=5)
        return lambda: take(a, index), (a,)
    if name == 'concat':
        b = ParamTensor('b', rng.normal(size=(2, 4)))
        return lambda: concat([a, b], axis=0), (a, b)
    if name == 'log_softmax':
        mask = _random_mask(rng, 3, 4)
        actions = _legal_actions(rng, mask)
        return lambda: gather(log_softmax(a, mask), actions), (a,)
    raise KeyError(name)


PRIMITIVES = ['add', 'sub', 'mul', 'neg', 'matmul', 'relu', 'square', 'log', 'exp', 'sum', 'mean',
              'reshape', 'gather', 'take', 'concat', 'log_softmax']


@pytest.mark.parametrize('seed', range(20))
@pytest.mark.parametrize('primitive', PRIMITIVES)
def test_primitive_gradients_across_seeds(primitive, seed):
    """Gradiente analítico de cada primitiva = diferencias centrales, con pesos de salida aleatorios"""
    rng = np.random.default_rng(1000 + seed)
    output, params = _primitive_case(primitive, rng)
    weights = rng.normal(size=output().shape)

    def build():
        return sum_(mul(output(), weights))

    assert_matches_numeric(build, *params)
