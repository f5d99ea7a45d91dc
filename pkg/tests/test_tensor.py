import numpy as np
import pytest

from odofuse.neural import tensor as T
from odofuse.neural.tensor import Parameter, Tensor


def check_grad(build, params, rtol=1e-6, atol=1e-9):
    """Compare tape gradients of build() against central finite differences."""
    loss = build()
    loss.backward()
    analytic = [p.grad.copy() for p in params]
    for p in params:
        p.grad = None

    from oracles import finite_diff_grad

    numeric = finite_diff_grad(lambda: build().item(), params, h=1e-6)
    for a, n in zip(analytic, numeric):
        np.testing.assert_allclose(a, n, rtol=rtol, atol=atol)


def rnd(rng, *shape):
    return Parameter(rng.standard_normal(shape))


class TestPrimitiveGrads:
    def test_add_mul_broadcast(self):
        rng = np.random.default_rng(0)
        a, b = rnd(rng, 4, 3), rnd(rng, 3)
        check_grad(lambda: T.tsum(T.mul(T.add(a, b), b)), [a, b])

    def test_sub_div(self):
        rng = np.random.default_rng(1)
        a, b = rnd(rng, 3, 2), Parameter(rng.uniform(0.5, 2.0, (3, 2)))
        check_grad(lambda: T.tsum(T.div(T.sub(a, b), b)), [a, b])

    def test_matmul(self):
        rng = np.random.default_rng(2)
        a, b = rnd(rng, 4, 5), rnd(rng, 5, 3)
        check_grad(lambda: T.tsum(T.matmul(a, b)), [a, b])

    def test_unary_chain(self):
        rng = np.random.default_rng(3)
        a = Parameter(rng.uniform(0.2, 1.5, (4, 4)))
        check_grad(lambda: T.tsum(T.log(T.add(T.exp(T.tanh(a)), T.sqrt(a)))), [a])

    def test_sigmoid_pow(self):
        rng = np.random.default_rng(4)
        a = rnd(rng, 6)
        check_grad(lambda: T.tsum(T.pow_const(T.sigmoid(a), 3.0)), [a])

    def test_atan2(self):
        rng = np.random.default_rng(5)
        y = Parameter(rng.uniform(0.1, 2.0, (5,)))
        x = Parameter(rng.uniform(0.1, 2.0, (5,)))
        check_grad(lambda: T.tsum(T.atan2(y, x)), [y, x])

    def test_sum_axis_mean(self):
        rng = np.random.default_rng(6)
        a = rnd(rng, 3, 4)
        check_grad(lambda: T.tmean(T.tsum(T.mul(a, a), axis=1)), [a])
        check_grad(lambda: T.tsum(T.tsum(a, axis=0, keepdims=True)), [a])

    def test_getitem_slice_and_fancy(self):
        rng = np.random.default_rng(7)
        a = rnd(rng, 5, 4)
        check_grad(lambda: T.tsum(T.mul(a[1:4, :2], a[1:4, 2:])), [a])
        idx = np.array([0, 2, 2, 4])
        check_grad(lambda: T.tsum(a[idx]), [a])

    def test_concat(self):
        rng = np.random.default_rng(8)
        a, b = rnd(rng, 2, 3), rnd(rng, 2, 2)
        check_grad(lambda: T.tsum(T.mul(T.concat([a, b], axis=1), 1.5)), [a, b])

    def test_where_maximum(self):
        rng = np.random.default_rng(9)
        a, b = rnd(rng, 8), rnd(rng, 8)
        cond = rng.standard_normal(8) > 0
        check_grad(lambda: T.tsum(T.where(cond, T.mul(a, 2.0), b)), [a, b])
        c = Parameter(rng.uniform(-1, 1, (8,)) + 0.3)
        check_grad(lambda: T.tsum(T.maximum(c, 0.1)), [c])

    def test_reshape(self):
        rng = np.random.default_rng(10)
        a = rnd(rng, 2, 6)
        check_grad(lambda: T.tsum(T.mul(T.reshape(a, (3, 4)), 2.0)), [a])

    def test_blocked_cumsum(self):
        rng = np.random.default_rng(11)
        a = rnd(rng, 12, 2)  # 4 steps x 3 lanes
        check_grad(lambda: T.tsum(T.mul(T.blocked_cumsum(a, 3), a)), [a])
        # forward value: per-lane cumsum across step blocks
        data = a.data.reshape(4, 3, 2)
        expect = data.cumsum(axis=0).reshape(12, 2)
        np.testing.assert_allclose(T.blocked_cumsum(a, 3).data, expect)


class TestTapeBehaviour:
    def test_sum_grad_is_ones(self):
        x = Parameter(np.arange(6.0).reshape(2, 3))
        T.tsum(x).backward()
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_tanh_grad_at_zero(self):
        x = Parameter(np.zeros(3))
        T.tsum(T.tanh(x)).backward()
        np.testing.assert_allclose(x.grad, np.ones(3))

    def test_double_backward_rejected(self):
        x = Parameter(np.ones(2))
        loss = T.tsum(T.mul(x, x))
        loss.backward()
        with pytest.raises(RuntimeError):
            loss.backward()

    def test_backward_needs_scalar(self):
        x = Parameter(np.ones(3))
        with pytest.raises(ValueError):
            T.mul(x, 2.0).backward()

    def test_diamond_accumulation(self):
        x = Parameter(np.array([2.0]))
        y = T.mul(x, 3.0)
        loss = T.tsum(T.add(T.mul(y, y), y))  # 9x^2 + 3x -> grad 18x + 3
        loss.backward()
        np.testing.assert_allclose(x.grad, [39.0])

    def test_constants_fold_away(self):
        x = np.ones((2, 2))
        out = T.add(T.mul(x, 2.0), 1.0)
        assert isinstance(out, np.ndarray)

    def test_ndarray_passthrough_ops(self):
        x = np.linspace(-1, 1, 5)
        np.testing.assert_allclose(T.sigmoid(x), 1 / (1 + np.exp(-x)))
        np.testing.assert_allclose(T.tanh(x), np.tanh(x))

    def test_mixed_tensor_ndarray(self):
        x = Parameter(np.ones((2, 3)))
        const = np.full((2, 3), 2.0)
        loss = T.tsum(const * x + x)
        loss.backward()
        np.testing.assert_allclose(x.grad, np.full((2, 3), 3.0))
