import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from src.errors import ContractError, DimensionError, DomainError
from src.tensor import (
    MacCounter,
    Tensor,
    check_gradients,
    concat,
    conv3d,
    default_dtype,
    elementwise,
    leaky_relu,
    matmul,
    no_grad,
    pad,
    set_strict_math,
    softmax_lastdim,
    take,
)


def leaf(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


# ---------------------------------------------------------------- forward values
def test_elementwise_add_matches_numpy():
    out = elementwise("add", Tensor([1.0, 2.0]), Tensor([3.0, 4.0]))
    np.testing.assert_array_equal(out.data, [4.0, 6.0])


def test_elementwise_broadcasts_scalar():
    out = elementwise("mul", Tensor(np.ones((2, 3))), 2.0)
    np.testing.assert_array_equal(out.data, np.full((2, 3), 2.0))


def test_elementwise_shape_mismatch():
    with pytest.raises(DimensionError):
        elementwise("add", Tensor(np.ones(3)), Tensor(np.ones(4)))


def test_elementwise_unknown_tag():
    with pytest.raises(ContractError):
        elementwise("tanh", Tensor(np.ones(3)))


def test_div_by_zero_only_raises_in_strict_mode():
    out = Tensor([1.0]) / Tensor([0.0])
    assert np.isinf(out.data[0])
    set_strict_math(True)
    with pytest.raises(DomainError):
        Tensor([1.0]) / Tensor([0.0])


def test_matmul_values_and_shape_error():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[5.0], [6.0]])
    np.testing.assert_array_equal(matmul(a, b).data, [[17.0], [39.0]])
    with pytest.raises(DimensionError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_softmax_of_log_weights():
    out = softmax_lastdim(Tensor([np.log(1.0), np.log(3.0)]))
    np.testing.assert_allclose(out.data, [0.25, 0.75], atol=1e-15)


def test_softmax_is_shift_invariant():
    x = np.array([[0.5, -1.0, 2.0]])
    np.testing.assert_allclose(softmax_lastdim(Tensor(x)).data, softmax_lastdim(Tensor(x + 1000.0)).data)


def test_softmax_rejects_nan():
    with pytest.raises(DomainError):
        softmax_lastdim(Tensor([0.0, np.nan]))


def test_conv3d_all_ones_kernel_sums_neighbourhood():
    x = Tensor(np.ones((1, 3, 3, 3)))
    w = Tensor(np.ones((1, 1, 3, 3, 3)))
    out = conv3d(x, w)
    assert out.shape == (1, 3, 3, 3)
    assert out.data[0, 1, 1, 1] == 27.0
    # corner sees a 2×2×2 neighbourhood after zero padding
    assert out.data[0, 0, 0, 0] == 8.0


def test_conv3d_channel_mismatch():
    with pytest.raises(DimensionError):
        conv3d(Tensor(np.ones((2, 3, 3, 3))), Tensor(np.ones((1, 1, 3, 3, 3))))


def test_reshape_permute_roundtrip():
    data = np.arange(24.0).reshape(2, 3, 4)
    t = Tensor(data).permute(2, 0, 1).reshape(4, 6).reshape(4, 2, 3).permute(1, 2, 0)
    np.testing.assert_array_equal(t.data, data)


def test_bad_permutation():
    with pytest.raises(DimensionError):
        Tensor(np.ones((2, 2))).permute(0, 0)


# --------------------------------------------------------------------- backward
def test_unbroadcast_gradients():
    a = Tensor(np.ones((3, 1)), requires_grad=True)
    b = Tensor(np.ones((1, 4)), requires_grad=True)
    (a + b).sum().backward()
    np.testing.assert_array_equal(a.grad, np.full((3, 1), 4.0))
    np.testing.assert_array_equal(b.grad, np.full((1, 4), 3.0))


def test_shared_node_gradient_accumulates():
    a = Tensor([2.0], requires_grad=True)
    (a * a + a).sum().backward()
    np.testing.assert_array_equal(a.grad, [5.0])


def test_backward_of_summed_losses_is_additive(rng):
    w = leaf(rng, 4, 3)
    x = Tensor(rng.normal(size=(5, 4)))
    weights = Tensor(rng.normal(size=(5, 3)))

    def first():
        return (leaky_relu(matmul(x, w), 0.01) * weights).sum()

    def second():
        return (w.exp() * 0.5).mean()

    separate = []
    for loss in (first, second):
        w.grad = None
        loss().backward()
        separate.append(w.grad.copy())
    w.grad = None
    (first() + second()).backward()
    np.testing.assert_array_equal(w.grad, separate[0] + separate[1])


def test_backward_needs_scalar():
    with pytest.raises(ContractError):
        Tensor(np.ones(2), requires_grad=True).backward()


def test_no_grad_records_nothing():
    a = Tensor([1.0], requires_grad=True)
    with no_grad():
        out = a * 3.0
    assert not out.requires_grad
    assert out.creator is None


def test_mixed_ndarray_operand_dispatches_to_tensor():
    out = np.ones(2) * Tensor([1.0, 2.0], requires_grad=True)
    assert isinstance(out, Tensor)
    assert out.requires_grad


@pytest.mark.parametrize("tag", ["add", "sub", "mul", "div"])
def test_binary_gradients(tag, rng):
    a = leaf(rng, 3, 4)
    b = Tensor(rng.uniform(1.0, 2.0, size=4), requires_grad=True)
    weights = Tensor(rng.normal(size=(3, 4)))
    result = check_gradients(lambda: (elementwise(tag, a, b) * weights).sum(), {"a": a, "b": b})
    assert result.passed()


@pytest.mark.parametrize("tag", ["exp", "neg", "leaky_relu"])
def test_unary_gradients(tag, rng):
    a = leaf(rng, 5)
    weights = Tensor(rng.normal(size=5))
    assert check_gradients(lambda: (elementwise(tag, a) * weights).sum(), {"a": a}).passed()


def test_pow_sqrt_clip_gradients(rng):
    a = Tensor(rng.uniform(0.5, 2.0, size=6), requires_grad=True)
    result = check_gradients(lambda: ((a ** 3.0) + a.sqrt() + a.clip(0.8, 1.5)).sum(), {"a": a})
    assert result.passed()


def test_matmul_gradients(rng):
    a, b = leaf(rng, 2, 3, 4), leaf(rng, 4, 5)
    weights = Tensor(rng.normal(size=(2, 3, 5)))
    assert check_gradients(lambda: (matmul(a, b) * weights).sum(), {"a": a, "b": b}).passed()


def test_gradient_check_without_slack_scores_every_entry(rng):
    a, b = leaf(rng, 3, 4), leaf(rng, 4, 2)
    weights = Tensor(rng.normal(size=(3, 2)))

    def loss():
        return (matmul(a, b) * weights).sum()

    strict = check_gradients(loss, {"a": a, "b": b}, atol=0.0)
    assert strict.checked == 20
    assert strict.passed()

    # slack larger than any error leaves nothing in the maximum
    loose = check_gradients(loss, {"a": a, "b": b}, atol=1.0)
    assert loose.checked == 20
    assert loose.max_rel_err == 0.0


def test_softmax_gradients(rng):
    a = leaf(rng, 3, 5)
    weights = Tensor(rng.normal(size=(3, 5)))
    assert check_gradients(lambda: (softmax_lastdim(a) * weights).sum(), {"a": a}).passed()


def test_conv3d_gradients(rng):
    x, w, b = leaf(rng, 2, 3, 4, 4), leaf(rng, 3, 2, 3, 3, 3), leaf(rng, 3)
    weights = Tensor(rng.normal(size=(3, 3, 4, 4)))
    result = check_gradients(lambda: (conv3d(x, w, b) * weights).sum(), {"x": x, "w": w, "b": b}, entries=20)
    assert result.passed()


def test_reindexing_gradients(rng):
    a = leaf(rng, 2, 3, 4)
    table = leaf(rng, 5, 2)
    index = np.array([[0, 4], [4, 2]])
    weights = Tensor(rng.normal(size=(4, 8)))

    def loss():
        moved = pad(a.permute(2, 0, 1), ((0, 0), (1, 0), (0, 0)))[:, 1:, :]
        gathered = take(table, index).sum()
        return (concat([moved, moved[:, :, :1] * 2.0], axis=2).reshape(4, 8) * weights).sum() + gathered

    assert check_gradients(loss, {"a": a, "table": table}).passed()


def test_leaky_relu_slope():
    out = leaky_relu(Tensor([-2.0, 3.0]), slope=0.1)
    np.testing.assert_allclose(out.data, [-0.2, 3.0])


# ------------------------------------------------------------------ instruments
def test_mac_counter_counts_batched_matmul():
    with MacCounter() as counter:
        matmul(Tensor(np.ones((5, 2, 3))), Tensor(np.ones((3, 4))))
    assert counter.total == 5 * 2 * 3 * 4


def test_mac_counter_inactive_outside_block():
    with MacCounter() as counter:
        pass
    matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 4))))
    assert counter.total == 0


def test_default_dtype_switch():
    with default_dtype("float32"):
        assert Tensor([1.0]).dtype == np.float32
    assert Tensor([1.0]).dtype == np.float64


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)),
              elements=st.floats(-10, 10, allow_nan=False)))
def test_sum_gradient_is_ones(data):
    t = Tensor(data, requires_grad=True)
    t.sum().backward()
    np.testing.assert_array_equal(t.grad, np.ones_like(data))
