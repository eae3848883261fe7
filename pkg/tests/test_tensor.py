import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from d3sep.tensor import (ShapeMismatchError, Tensor, concat_tensors,
                          elementwise, finite_diff_check, pad_axis, slice_axis)


def test_add_componentwise():
    out = elementwise("add", Tensor([1.0, 2.0]), Tensor([3.0, 4.0]))
    np.testing.assert_array_equal(out.data, [4.0, 6.0])


def test_mul_by_zero_scalar_grad():
    x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    loss = (x * 0.0).sum()
    loss.backward()
    np.testing.assert_array_equal(loss.data, 0.0)
    np.testing.assert_array_equal(x.grad, np.zeros(3))


def test_relu_value_and_mask():
    x = Tensor([-1.0, 2.0], requires_grad=True)
    out = elementwise("max-with-0", x)
    np.testing.assert_array_equal(out.data, [0.0, 2.0])
    out.sum().backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0])


def test_shape_mismatch_message_names_both_shapes():
    with pytest.raises(ShapeMismatchError, match=r"\(2,\).*\(3,\)"):
        Tensor([1.0, 2.0]) + Tensor([1.0, 2.0, 3.0])


def test_unknown_op_kind():
    with pytest.raises(ValueError, match="op_kind"):
        elementwise("div", Tensor([1.0]), Tensor([1.0]))


def test_backward_square():
    x = Tensor([1.0, -2.0], requires_grad=True)
    (x * x).sum().backward()
    np.testing.assert_allclose(x.grad, [2.0, -4.0])


def test_backward_sum_all_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        (x * x).backward()


def test_backward_unreachable_leaf_has_no_grad():
    x = Tensor([1.0], requires_grad=True)
    y = Tensor([2.0], requires_grad=True)
    (x * 3.0).sum().backward()
    assert y.grad is None


def test_backward_accumulates_over_reuse():
    x = Tensor([3.0], requires_grad=True)
    (x + x).sum().backward()
    np.testing.assert_array_equal(x.grad, [2.0])


def test_backward_linearity():
    rng = np.random.default_rng(0)
    base = rng.standard_normal(5)

    def grad_of(weights):
        x = Tensor(base, requires_grad=True)
        loss1 = (x * x).sum()
        loss2 = x.sum()
        (loss1 * weights[0] + loss2 * weights[1]).backward()
        return x.grad.copy()

    g1 = grad_of((1.0, 0.0))
    g2 = grad_of((0.0, 1.0))
    g = grad_of((2.5, -1.5))
    np.testing.assert_allclose(g, 2.5 * g1 - 1.5 * g2, atol=1e-10)


def test_determinism_same_process():
    rng = np.random.default_rng(3)
    data = rng.standard_normal((4, 4))

    def run():
        x = Tensor(data, requires_grad=True)
        ((x * x + x).relu()).sum().backward()
        return x.grad.copy()

    a, b = run(), run()
    assert np.array_equal(a, b)


def test_finite_diff_quadratic():
    x = Tensor(np.random.default_rng(0).standard_normal(6))
    err = finite_diff_check(lambda t: (t * t).sum(), x)
    assert err < 1e-8


def test_finite_diff_constant():
    x = Tensor(np.random.default_rng(0).standard_normal(4))
    err = finite_diff_check(lambda t: (t * 0.0).sum(), x)
    assert err == 0.0


def test_finite_diff_rejects_bad_step():
    with pytest.raises(ValueError):
        finite_diff_check(lambda t: t.sum(), Tensor([1.0]), step=0.0)


def test_concat_and_slice_roundtrip_grads():
    a = Tensor(np.ones((1, 2, 3, 4)), requires_grad=True)
    b = Tensor(np.ones((1, 3, 3, 4)), requires_grad=True)
    cat = concat_tensors([a, b], axis=1)
    assert cat.shape == (1, 5, 3, 4)
    slice_axis(cat, 1, 0, 2).sum().backward()
    np.testing.assert_array_equal(a.grad, np.ones((1, 2, 3, 4)))
    np.testing.assert_array_equal(b.grad, np.zeros((1, 3, 3, 4)))


def test_pad_axis_grad():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    out = pad_axis(x, 1, 1, 2)
    assert out.shape == (2, 5)
    out.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 2)))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=8),
       st.floats(-1e3, 1e3))
def test_scalar_ops_match_numpy(values, scalar):
    x = np.asarray(values)
    np.testing.assert_allclose((Tensor(x) + scalar).data, x + scalar)
    np.testing.assert_allclose((Tensor(x) * scalar).data, x * scalar)
    np.testing.assert_allclose((Tensor(x) - scalar).data, x - scalar)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_gradcheck_random_polynomials(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal(4))
    c = rng.standard_normal(4)

    def fn(t):
        return ((t * t) * Tensor(c) + t * 0.5).sum()

    assert finite_diff_check(fn, x) < 1e-6
