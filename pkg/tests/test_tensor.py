"""Op semantics plus finite-difference verification of every backward pass."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phraseground.errors import DimensionError, ValidationError
from phraseground.nn import tensor as T
from phraseground.nn.gradcheck import finite_difference_check
from phraseground.nn.rng import Rng
from phraseground.nn.tensor import Tensor

SEEDS = list(range(10))


def param(rng: Rng, *shape) -> Tensor:
    data = rng.normal(int(np.prod(shape))).reshape(shape)
    return Tensor(data, requires_grad=True, dtype=np.float64)


# -- forward semantics --------------------------------------------------------


def test_matmul_identity():
    x = np.arange(6, dtype=np.float32).reshape(2, 3)
    out = T.matmul(Tensor(np.eye(2, dtype=np.float32)), Tensor(x))
    assert np.array_equal(out.data, x)


def test_matmul_hand_case():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[1.0], [1.0]])
    assert np.array_equal(T.matmul(a, b).data, [[3.0], [7.0]])


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_softmax_rows_equal_logits():
    out = T.softmax_rows(Tensor([[0.0, 0.0, 0.0]]))
    assert np.allclose(out.data, 1.0 / 3.0)


def test_softmax_rows_stabilized():
    out = T.softmax_rows(Tensor([[1000.0, 0.0]]))
    assert np.all(np.isfinite(out.data))
    assert out.data[0, 0] == pytest.approx(1.0)
    assert out.data[0, 1] == pytest.approx(0.0, abs=1e-30)


def test_softmax_mask_zeroes_invalid():
    mask = np.array([True, True, False])
    out = T.softmax_last(Tensor([[5.0, 1.0, 100.0]]), mask=mask)
    assert out.data[0, 2] == 0.0
    assert out.data[0].sum() == pytest.approx(1.0, abs=1e-6)


def test_layer_norm_constant_vector_is_zero_before_affine():
    x = Tensor(np.full((1, 8), 3.7))
    gamma, beta = Tensor(np.ones(8)), Tensor(np.zeros(8))
    out = T.layer_norm(x, gamma, beta)
    assert np.allclose(out.data, 0.0)


def test_max_pool_single_element():
    x = Tensor([[1.5, -2.0, 0.25]])
    assert np.array_equal(T.max_pool_over_set(x).data, x.data)


def test_cross_entropy_soft_perfect_prediction():
    one_hot = np.array([[0.0, 1.0, 0.0]])
    loss = T.cross_entropy_soft(Tensor(one_hot), one_hot)
    assert loss.item() == pytest.approx(0.0, abs=1e-7)


def test_cross_entropy_soft_uniform_vs_onehot():
    pred = Tensor(np.full((1, 5), 0.2))
    target = np.array([[1.0, 0.0, 0.0, 0.0, 0.0]])
    assert T.cross_entropy_soft(pred, target).item() == pytest.approx(math.log(5), rel=1e-5)


def test_cross_entropy_soft_rejects_unnormalized_target():
    with pytest.raises(ValidationError):
        T.cross_entropy_soft(Tensor(np.full((1, 4), 0.25)), np.full((1, 4), 0.3))


def test_cross_entropy_soft_matches_scalar_loop():
    rng = Rng(3)
    pred = rng.uniform(12).reshape(3, 4) + 0.05
    pred /= pred.sum(axis=1, keepdims=True)
    target = rng.uniform(12).reshape(3, 4)
    target /= target.sum(axis=1, keepdims=True)
    loss = T.cross_entropy_soft(Tensor(pred, dtype=np.float64), target).item()
    # Independent scalar-loop recomputation.
    expected = 0.0
    for i in range(3):
        for j in range(4):
            expected -= target[i, j] * math.log(max(pred[i, j], 1e-9))
    expected /= 3
    assert loss == pytest.approx(expected, abs=1e-6)


def test_embedding_rejects_out_of_range():
    table = Tensor(np.zeros((4, 2)))
    with pytest.raises(ValidationError):
        T.embedding_lookup(table, np.array([4]))


# -- finite-difference suite ---------------------------------------------------


@pytest.mark.parametrize("seed", SEEDS)
def test_matmul_gradients(seed):
    rng = Rng(seed)
    a, b = param(rng, 5, 4), param(rng, 4, 3)
    err = finite_difference_check(lambda: T.mean_all(T.matmul(a, b)), [a, b])
    assert err < 1e-3


@pytest.mark.parametrize("seed", SEEDS)
def test_softmax_gradients(seed):
    rng = Rng(seed)
    x = param(rng, 3, 4)
    w = Tensor(rng.uniform(12).reshape(3, 4))
    err = finite_difference_check(
        lambda: T.mean_all(T.softmax_rows(x) * w), [x]
    )
    assert err < 1e-3


@pytest.mark.parametrize("seed", SEEDS)
def test_masked_softmax_gradients(seed):
    rng = Rng(seed)
    x = param(rng, 3, 5)
    mask = np.array([True, True, True, False, True])
    w = Tensor(rng.uniform(15).reshape(3, 5))
    err = finite_difference_check(
        lambda: T.mean_all(T.softmax_last(x, mask=mask) * w), [x]
    )
    assert err < 1e-3


@pytest.mark.parametrize("seed", SEEDS)
def test_relu_linear_gradients(seed):
    rng = Rng(seed)
    x, w, b = param(rng, 4, 6), param(rng, 6, 2), param(rng, 1, 2)
    err = finite_difference_check(
        lambda: T.mean_all(T.relu(T.matmul(x, w) + b)), [x, w, b]
    )
    assert err < 1e-3


@pytest.mark.parametrize("seed", SEEDS)
def test_layer_norm_gradients(seed):
    rng = Rng(seed)
    x, gamma, beta = param(rng, 3, 8), param(rng, 8), param(rng, 8)
    err = finite_difference_check(
        lambda: T.mean_all(T.layer_norm(x, gamma, beta)), [x, gamma, beta]
    )
    assert err < 1e-3


@pytest.mark.parametrize("seed", SEEDS)
def test_embedding_gradients(seed):
    rng = Rng(seed)
    table = param(rng, 7, 4)
    ids = np.array([1, 3, 3, 0])
    err = finite_difference_check(
        lambda: T.mean_all(T.embedding_lookup(table, ids)), [table]
    )
    assert err < 1e-3


@pytest.mark.parametrize("seed", SEEDS)
def test_max_pool_gradients(seed):
    rng = Rng(seed)
    x = param(rng, 6, 3)
    err = finite_difference_check(lambda: T.mean_all(T.max_pool_over_set(x)), [x])
    assert err < 1e-3


@pytest.mark.parametrize("seed", SEEDS)
def test_concat_slice_stack_gradients(seed):
    rng = Rng(seed)
    a, b = param(rng, 3, 4), param(rng, 3, 2)

    def loss():
        joined = T.concat_axis([a, b], axis=-1)
        left = T.slice_axis(joined, -1, 0, 3)
        right = T.slice_axis(joined, -1, 3, 6)
        return T.mean_all(T.stack0([left, right]))

    assert finite_difference_check(loss, [a, b]) < 1e-3


@pytest.mark.parametrize("seed", SEEDS)
def test_cross_entropy_soft_gradients(seed):
    rng = Rng(seed)
    logits = param(rng, 4, 5)
    target = rng.uniform(20).reshape(4, 5)
    target /= target.sum(axis=1, keepdims=True)
    err = finite_difference_check(
        lambda: T.cross_entropy_soft(T.softmax_rows(logits), target), [logits]
    )
    assert err < 1e-3


@pytest.mark.parametrize("seed", SEEDS)
def test_log_softmax_gather_gradients(seed):
    rng = Rng(seed)
    logits = param(rng, 4, 6)
    idx = np.array([0, 2, 5, 1])
    err = finite_difference_check(
        lambda: -1.0 * T.mean_all(T.gather_last(T.log_softmax_last(logits), idx)),
        [logits],
    )
    assert err < 1e-3


@pytest.mark.parametrize("seed", SEEDS)
def test_bce_with_logits_gradients(seed):
    rng = Rng(seed)
    logits = param(rng, 2, 7)
    targets = (rng.uniform(14).reshape(2, 7) > 0.5).astype(np.float64)
    mask = np.ones((2, 7), dtype=bool)
    mask[1, 5:] = False
    err = finite_difference_check(
        lambda: T.bce_with_logits(logits, targets, mask=mask), [logits]
    )
    assert err < 1e-3


# -- invariants ----------------------------------------------------------------


@given(st.integers(0, 2**32 - 1), st.floats(1.0, 1e4))
@settings(max_examples=40, deadline=None)
def test_softmax_rows_sum_to_one_even_for_extreme_logits(seed, scale):
    rng = Rng(seed)
    x = (rng.uniform(12).reshape(3, 4) - 0.5) * 2 * scale
    out = T.softmax_rows(Tensor(x, dtype=np.float32))
    assert np.all(np.isfinite(out.data))
    assert np.all(out.data >= 0.0) and np.all(out.data <= 1.0)
    assert np.allclose(out.data.sum(axis=1), 1.0, atol=1e-5)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_no_nan_in_forward_backward_with_extreme_inputs(seed):
    rng = Rng(seed)
    x = Tensor((rng.uniform(8).reshape(2, 4) - 0.5) * 2e4, requires_grad=True)
    target = np.eye(4)[[0, 3]]
    loss = T.cross_entropy_soft(T.softmax_rows(x), target)
    loss.backward()
    assert np.all(np.isfinite(loss.data))
    assert np.all(np.isfinite(x.grad))


def test_no_grad_skips_graph():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with T.no_grad():
        out = T.relu(x)
    assert out._backward_fn is None and not out.requires_grad


def test_backward_requires_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(DimensionError):
        T.relu(x).backward()
