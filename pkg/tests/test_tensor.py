import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import timemixer.tensor as tt
from timemixer.exceptions import ShapeError
from timemixer.tensor import Tensor, backward, no_grad

from oracles import avg_pool_loop, central_difference, max_relative_error


def grad_check(build, *arrays_in, tol=1e-4):
    """Compare autodiff and central differences for ``sum(build(*tensors) * probe)``."""
    tensors = [Tensor(a, requires_grad=True) for a in arrays_in]
    out = build(*tensors)
    probe = np.random.default_rng(7).normal(size=out.shape)

    def scalar():
        with no_grad():
            return float(np.sum(build(*[Tensor(t.data) for t in tensors]).data * probe))

    backward(tt.sum(tt.mul(out, probe)))
    for t in tensors:
        numeric = central_difference(scalar, t.data)
        assert max_relative_error(t.grad, numeric) < tol


class TestMatmul:
    def test_identity(self):
        b = np.array([[1.5, -2.0], [3.0, 4.25]])
        assert np.array_equal(tt.matmul(np.eye(2), b).data, b)

    def test_hand_dot_product(self):
        assert tt.matmul([[1.0, 2.0]], [[3.0], [4.0]]).data.tolist() == [[11.0]]

    def test_sum_gradient_is_ones_times_b_transpose(self, rng):
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = rng.normal(size=(4, 5))
        backward(tt.sum(tt.matmul(a, b)))
        assert np.allclose(a.grad, np.ones((3, 5)) @ b.T, atol=1e-14)

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
            tt.matmul(np.ones((2, 3)), np.ones((4, 5)))

    @pytest.mark.parametrize("shape_a,shape_b", [((3, 4), (4, 2)), ((2, 3, 4), (4, 5)),
                                                 ((3, 4), (2, 4, 5)), ((2, 3, 4), (2, 4, 2))])
    def test_gradients(self, rng, shape_a, shape_b):
        grad_check(tt.matmul, rng.normal(size=shape_a), rng.normal(size=shape_b))


class TestGelu:
    def test_zero(self):
        assert tt.gelu(np.array([0.0])).data[0] == 0.0

    def test_asymptotes(self):
        out = tt.gelu(np.array([10.0, -10.0])).data
        assert abs(out[0] - 10.0) < 1e-6
        assert abs(out[1]) < 1e-6

    def test_exact_erf_form(self, rng):
        from math import erfc, sqrt

        x = rng.normal(size=20) * 3
        # erfc keeps full relative precision in the negative tail
        expected = [v * 0.5 * erfc(-v / sqrt(2)) for v in x]
        assert np.allclose(tt.gelu(x).data, expected, rtol=1e-14, atol=1e-300)

    def test_gradient(self, rng):
        grad_check(tt.gelu, rng.normal(size=(4, 5)) * 2)


class TestElementwise:
    @pytest.mark.parametrize("op", [tt.add, tt.sub, tt.mul])
    def test_binary_gradients(self, rng, op):
        grad_check(op, rng.normal(size=(3, 4)), rng.normal(size=(3, 4)))

    def test_division_gradient(self, rng):
        grad_check(tt.div, rng.normal(size=(3, 4)), rng.uniform(1.0, 2.0, size=(3, 4)))

    def test_broadcast_bias_gradient(self, rng):
        grad_check(tt.add, rng.normal(size=(2, 3, 4)), rng.normal(size=(4,)))
        grad_check(tt.add, rng.normal(size=(2, 3, 4)), rng.normal(size=(3, 1)))

    @pytest.mark.parametrize("op", [tt.neg, tt.square])
    def test_unary_gradients(self, rng, op):
        grad_check(op, rng.normal(size=(3, 4)))

    def test_abs_gradient_away_from_zero(self, rng):
        x = rng.normal(size=(3, 4))
        x[np.abs(x) < 0.1] = 0.5
        grad_check(tt.abs, x)

    def test_operators_match_functions(self, rng):
        a, b = Tensor(rng.normal(size=3)), Tensor(rng.normal(size=3))
        assert np.array_equal((a + b).data, tt.add(a, b).data)
        assert np.array_equal((2.0 - a).data, 2.0 - a.data)
        assert np.array_equal((a / 2.0).data, a.data / 2.0)
        assert np.array_equal((-a).data, -a.data)


class TestLinearLayers:
    def test_linear_matches_numpy(self, rng):
        x, w, b = rng.normal(size=(2, 5, 3)), rng.normal(size=(3, 4)), rng.normal(size=4)
        assert np.allclose(tt.linear(x, w, b).data, x @ w + b, atol=1e-14)

    def test_linear_gradient(self, rng):
        grad_check(tt.linear, rng.normal(size=(2, 5, 3)), rng.normal(size=(3, 4)), rng.normal(size=4))

    def test_temporal_linear_matches_einsum(self, rng):
        w, x, b = rng.normal(size=(4, 6)), rng.normal(size=(2, 6, 3)), rng.normal(size=(4, 1))
        expected = np.einsum("ts,bsd->btd", w, x) + b
        assert np.allclose(tt.temporal_linear(w, x, b).data, expected, atol=1e-14)

    def test_temporal_linear_gradient(self, rng):
        grad_check(tt.temporal_linear, rng.normal(size=(4, 6)), rng.normal(size=(2, 6, 3)),
                   rng.normal(size=(4, 1)))

    def test_temporal_linear_shape_error(self):
        with pytest.raises(ShapeError):
            tt.temporal_linear(np.ones((4, 5)), np.ones((2, 6, 3)), np.ones((4, 1)))


class TestShapeOps:
    def test_reshape_transpose_gradients(self, rng):
        grad_check(lambda a: tt.reshape(a, (6, 2)), rng.normal(size=(3, 4)))
        grad_check(lambda a: tt.transpose(a, (2, 0, 1)), rng.normal(size=(2, 3, 4)))
        grad_check(lambda a: tt.swapaxes(a, 0, 2), rng.normal(size=(2, 3, 4)))

    def test_slice_and_concat(self, rng):
        x = rng.normal(size=(2, 6, 3))
        assert np.array_equal(tt.slice_axis(x, 1, 4, axis=1).data, x[:, 1:4])
        grad_check(lambda a: tt.slice_axis(a, 1, 4, axis=1), x)
        grad_check(lambda a, b: tt.concat([a, b], axis=1), x, rng.normal(size=(2, 2, 3)))

    def test_reductions(self, rng):
        x = rng.normal(size=(2, 3, 4))
        assert np.isclose(tt.mean(x).data, x.mean(), atol=1e-15)
        grad_check(lambda a: tt.sum(a, axis=1), x)
        grad_check(lambda a: tt.mean(a, axis=(0, 2), keepdims=True), x)


class TestAvgPool:
    def test_pairwise_means(self):
        out = tt.avg_pool_1d(np.array([[1.0], [3.0], [5.0], [7.0]]), 2)
        assert out.data.ravel().tolist() == [2.0, 6.0]

    def test_trailing_element_dropped(self):
        out = tt.avg_pool_1d(np.array([[1.0], [2.0], [3.0]]), 2)
        assert out.data.ravel().tolist() == [1.5]

    def test_repeated_pooling_lengths(self):
        x = Tensor(np.zeros((1, 96, 2)))
        lengths = []
        for _ in range(3):
            x = tt.avg_pool_1d(x, 2)
            lengths.append(x.shape[1])
        assert lengths == [48, 24, 12]

    def test_window_longer_than_series(self):
        with pytest.raises(ShapeError):
            tt.avg_pool_1d(np.ones((1, 1, 2)), 2)

    @given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(2, 40), st.integers(1, 3)),
                  elements=st.floats(-1e3, 1e3)))
    @settings(max_examples=60, deadline=None)
    def test_length_law_and_oracle(self, x):
        out = tt.avg_pool_1d(x, 2).data
        assert out.shape[1] == x.shape[1] // 2
        assert np.allclose(out, avg_pool_loop(x), rtol=0, atol=1e-12)

    def test_gradient(self, rng):
        grad_check(lambda a: tt.avg_pool_1d(a, 2), rng.normal(size=(2, 7, 3)))
        grad_check(lambda a: tt.avg_pool_1d(a, 3, stride=1, axis=1), rng.normal(size=(2, 7, 3)))


class TestDropout:
    def test_identity_at_rate_zero_and_in_eval(self, rng):
        x = Tensor(rng.normal(size=(3, 4)))
        assert tt.dropout(x, 0.0, rng) is x
        assert tt.dropout(x, 0.5, rng, training=False) is x

    def test_inverted_scaling(self):
        x = Tensor(np.ones((200, 200)))
        out = tt.dropout(x, 0.25, np.random.default_rng(0)).data
        kept = out[out != 0]
        assert np.allclose(kept, 1 / 0.75)
        assert abs((out == 0).mean() - 0.25) < 0.01

    def test_gradient_uses_same_mask(self, rng):
        x = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
        out = tt.dropout(x, 0.5, np.random.default_rng(3))
        backward(tt.sum(out))
        assert np.array_equal(x.grad == 0, out.data == 0)


class TestBackward:
    def test_linear_derivative(self, rng):
        w = Tensor(rng.normal(size=5), requires_grad=True)
        x = rng.normal(size=5)
        backward(tt.sum(tt.mul(w, x)))
        assert np.array_equal(w.grad, x)

    def test_square_derivative(self, rng):
        w = Tensor(rng.normal(size=5), requires_grad=True)
        backward(tt.sum(tt.square(w)))
        assert np.allclose(w.grad, 2 * w.data, atol=0)

    def test_accumulates_and_resets(self, rng):
        w = Tensor(rng.normal(size=3), requires_grad=True)
        for _ in range(2):
            backward(tt.sum(tt.mul(w, 3.0)))
        assert np.array_equal(w.grad, np.full(3, 6.0))
        w.zero_grad()
        assert w.grad is None

    def test_non_scalar_loss_rejected(self):
        w = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ShapeError):
            backward(tt.mul(w, 2.0))

    def test_shared_subexpression_visited_once(self):
        w = Tensor(np.array([2.0]), requires_grad=True)
        h = tt.mul(w, w)  # w^2 used twice: d(w^4)/dw = 4w^3
        backward(tt.sum(tt.mul(h, h)))
        assert w.grad.tolist() == [32.0]

    @pytest.mark.filterwarnings("ignore:divide by zero")
    def test_non_finite_loss_rejected(self):
        w = Tensor(np.array([0.0]), requires_grad=True)
        with pytest.raises(FloatingPointError):
            backward(tt.sum(tt.div(1.0, w)))

    def test_no_grad_records_nothing(self):
        w = Tensor(np.ones(2), requires_grad=True)
        with no_grad():
            out = tt.mul(w, 2.0)
        assert not out.requires_grad

    def test_tape_replay_is_bit_identical(self, rng):
        x = rng.normal(size=(2, 6, 3))
        w = rng.normal(size=(3, 4))

        def run():
            wt = Tensor(w.copy(), requires_grad=True)
            backward(tt.sum(tt.gelu(tt.linear(x, wt, np.zeros(4)))))
            return wt.grad

        assert np.array_equal(run(), run())

    def test_composed_expression_matches_finite_differences(self, rng):
        def build(a, w, b):
            h = tt.gelu(tt.temporal_linear(w, a, b))
            pooled = tt.avg_pool_1d(h, 2)
            return tt.mean(tt.square(pooled), axis=2)

        grad_check(build, rng.normal(size=(2, 5, 3)), rng.normal(size=(4, 5)), rng.normal(size=(4, 1)))
