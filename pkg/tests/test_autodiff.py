import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stode import autodiff as ad
from stode.autodiff import ContractError, DimensionError, Tensor

from conftest import check_grad, numeric_grad, rel_err


def test_grad_buffer_present_iff_requires_grad():
    a = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.ones((2, 3)))
    assert a.grad.shape == a.shape and not a.grad.any()
    assert b.grad is None


def test_data_is_float64_row_major():
    t = Tensor([[1, 2], [3, 4]])
    assert t.data.dtype == np.float64
    assert t.data.flags["C_CONTIGUOUS"]
    assert t.size == np.prod(t.shape)


@pytest.mark.parametrize("op,x,expected", [("tanh", 0.0, 0.0), ("sigmoid", 0.0, 0.5), ("relu", -1.5, 0.0)])
def test_unary_values(op, x, expected):
    assert ad.elementwise(op, Tensor(x)).item() == expected


def test_square_gradient():
    x = Tensor(3.0, requires_grad=True)
    ad.mul(x, x).backward()
    assert x.grad == 6.0


def test_tanh_gradient_at_zero():
    x = Tensor(0.0, requires_grad=True)
    ad.tanh(x).backward()
    assert x.grad == 1.0


def test_backward_accumulates_until_reset():
    x = Tensor(2.0, requires_grad=True)
    for _ in range(2):
        ad.scale(x, 3.0).backward()
    assert x.grad == 6.0
    x.zero_grad()
    assert x.grad == 0.0


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        ad.tanh(x).backward()


def test_non_participating_parameter_grad_is_zero():
    x = Tensor(np.ones(3), requires_grad=True)
    unused = Tensor(np.ones(3), requires_grad=True)
    ad.total(ad.tanh(x)).backward()
    assert np.all(unused.grad == 0.0)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with ad.no_grad():
        y = ad.tanh(x)
    assert not y.requires_grad and y.is_leaf


@pytest.mark.parametrize("op", ["add", "sub", "mul"])
def test_binary_shape_mismatch(op):
    with pytest.raises(DimensionError):
        ad.elementwise(op, Tensor(np.ones(2)), Tensor(np.ones(3)))


def test_unknown_elementwise_op():
    with pytest.raises(ContractError):
        ad.elementwise("softplus", Tensor(1.0))


def test_sigmoid_is_stable_for_large_inputs():
    y = ad.sigmoid(Tensor([-800.0, 800.0])).data
    assert np.all(np.isfinite(y)) and y[0] == 0.0 and y[1] == 1.0


# finite-difference checks, inputs in [-1, 1]
UNARY = ["tanh", "sigmoid", "relu", "abs"]


@pytest.mark.parametrize("op", UNARY)
def test_unary_fd(op, rng):
    x = rng.uniform(-1, 1, (3, 4))
    x[np.abs(x) < 1e-3] = 0.5  # keep away from kinks
    check_grad(lambda t: ad.elementwise(op, t), x)


@pytest.mark.parametrize("op", ["add", "sub", "mul"])
def test_binary_fd(op, rng):
    check_grad(lambda a, b: ad.elementwise(op, a, b), rng.uniform(-1, 1, (2, 3)), rng.uniform(-1, 1, (2, 3)))


def test_structural_ops_fd(rng):
    a = rng.uniform(-1, 1, (3, 4))
    b = rng.uniform(-1, 1, (4, 2))
    check_grad(lambda x, y: ad.matmul(x, y), a, b)
    check_grad(ad.transpose, a)
    check_grad(lambda x: ad.reshape(x, (2, 6)), a)
    check_grad(lambda x: ad.index(x, (slice(None), [0, 2, 2])), a)
    check_grad(lambda x, y: ad.concat([x, ad.transpose(y)], 0), a, rng.uniform(-1, 1, (4, 2)))
    check_grad(ad.mean, a)
    check_grad(ad.total, a)
    check_grad(lambda x: ad.scale(x, -2.5), a)
    check_grad(lambda x: ad.mask(x, a > 0), a)


def test_three_layer_composite_fd(rng):
    w1, w2, w3 = (rng.uniform(-1, 1, s) for s in [(4, 5), (5, 3), (3, 1)])
    x = rng.uniform(-1, 1, (6, 4))

    def net(a, b, c):
        h = ad.tanh(ad.matmul(Tensor(x), a))
        h = ad.sigmoid(ad.matmul(h, b))
        return ad.mean(ad.matmul(h, c))

    errs = check_grad(net, w1, w2, w3)
    assert max(errs) < 1e-4


def test_dropout_inverted_scaling():
    rng = np.random.default_rng(0)
    x = Tensor(np.ones(200_000))
    y = ad.dropout(x, 0.3, rng, training=True).data
    assert set(np.unique(y)) <= {0.0, 1.0 / 0.7}
    assert abs(y.mean() - 1.0) < 0.01
    assert ad.dropout(x, 0.3, rng, training=False) is x


def test_dropout_gradient_uses_same_mask():
    x = Tensor(np.ones(50), requires_grad=True)
    y = ad.dropout(x, 0.5, np.random.default_rng(1), training=True)
    ad.total(y).backward()
    np.testing.assert_array_equal(x.grad, y.data)


def test_operator_sugar():
    a = Tensor([1.0, 2.0], requires_grad=True)
    y = (2.0 * a - 1.0) / 2.0 + a * a
    np.testing.assert_allclose(y.data, [1.5, 5.5])
    ad.total(-y).backward()
    np.testing.assert_allclose(a.grad, [-3.0, -5.0])


@given(arrays(np.float64, (3, 2), elements=st.floats(-1, 1)),
       arrays(np.float64, (3, 2), elements=st.floats(-1, 1)),
       st.floats(-2, 2), st.floats(-2, 2))
def test_gradient_is_linear_in_the_loss(x, proj, alpha, beta):
    # d(alpha f + beta g) = alpha df + beta dg
    def grad_of(fn):
        t = Tensor(x, requires_grad=True)
        fn(t).backward()
        return t.grad

    f = lambda t: ad.total(ad.mul(ad.tanh(t), Tensor(proj)))  # noqa: E731
    g = lambda t: ad.mean(ad.sigmoid(t))  # noqa: E731
    combo = grad_of(lambda t: ad.add(ad.scale(f(t), alpha), ad.scale(g(t), beta)))
    np.testing.assert_allclose(combo, alpha * grad_of(f) + beta * grad_of(g), atol=1e-12)


def test_numeric_grad_helper_matches_closed_form():
    x = np.array([0.3, -0.7])
    (g,) = numeric_grad(lambda a: float(np.sum(a ** 3)), [x])
    assert rel_err(g, 3 * x ** 2) < 1e-8
