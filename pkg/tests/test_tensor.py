import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from saga.errors import ContractError, GraphStateError, NumericError, ParameterError, ShapeError
from saga.tensor import (Graph, Prng, Tensor, cross_entropy, dropout, gelu, get_precision, grad_check,
                         layer_norm, matmul, mean_pool, precision, set_precision, softmax, take)
from saga.tensor import ops as F


def t64(x, grad=False):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad, dtype=np.float64)


class TestPrecision:
    def test_default_is_f32(self):
        assert get_precision() == "f32"
        assert Tensor([1.0, 2.0]).dtype == np.float32

    def test_switch_and_context(self):
        with precision("f64"):
            assert Tensor([1.0]).dtype == np.float64
        assert Tensor([1.0]).dtype == np.float32
        set_precision("f64")
        assert Tensor([1.0]).dtype == np.float64

    def test_unknown_precision(self):
        with pytest.raises(ContractError):
            set_precision("f16")

    def test_empty_extent_rejected(self):
        with pytest.raises(ContractError):
            Tensor(np.zeros((0, 3)))


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(matmul(t64(np.eye(2)), t64(a)).data, a)

    def test_hand_product(self):
        out = matmul(t64([[1, 2], [3, 4]]), t64([[5], [6]]))
        assert np.array_equal(out.data, [[17.0], [39.0]])

    def test_dimension_error(self):
        with pytest.raises(ShapeError):
            matmul(t64(np.ones((2, 3))), t64(np.ones((2, 3))))

    def test_batched_gradient(self):
        set_precision("f64")
        rng = np.random.default_rng(0)
        a, b = Tensor(rng.normal(size=(2, 3, 4))), Tensor(rng.normal(size=(4, 5)))
        assert grad_check(lambda x, y: F.sum(matmul(x, y) * matmul(x, y)), [a, b]) < 1e-6


class TestSoftmax:
    def test_symmetric(self):
        assert np.allclose(softmax(t64([0.0, 0.0])).data, [0.5, 0.5], atol=0)

    def test_stable_for_large_logits(self):
        out = softmax(t64([1000.0, 0.0])).data
        assert np.all(np.isfinite(out))
        assert abs(out[0] - 1.0) <= 1e-12 and abs(out[1]) <= 1e-12

    def test_closed_form(self):
        out = softmax(t64([math.log(2.0), 0.0])).data
        assert np.allclose(out, [2 / 3, 1 / 3], atol=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)))
    def test_rows_are_distributions(self, x):
        p = softmax(t64(x)).data
        assert np.all(p >= 0)
        assert np.allclose(p.sum(axis=-1), 1.0, atol=1e-12)

    def test_gradient(self):
        set_precision("f64")
        x = Tensor(np.random.default_rng(1).normal(size=(4, 6)))
        w = np.random.default_rng(2).normal(size=(4, 6))
        assert grad_check(lambda v: F.sum(softmax(v) * Tensor(w)), x) < 1e-6


class TestLayerNorm:
    def ln(self, x, gamma=None, beta=None, eps=1e-5):
        d = np.shape(x)[-1]
        g = t64(np.ones(d) if gamma is None else gamma)
        b = t64(np.zeros(d) if beta is None else beta)
        return layer_norm(t64(x), g, b, eps).data

    def test_constant_row_maps_to_beta(self):
        assert np.array_equal(self.ln([[4.0, 4.0, 4.0]]), [[0.0, 0.0, 0.0]])

    def test_two_point_row(self):
        assert np.allclose(self.ln([1.0, 3.0], eps=1e-12), [-1.0, 1.0], atol=1e-10)

    def test_zero_gain_collapses(self):
        out = self.ln(np.random.default_rng(0).normal(size=(3, 4)), gamma=np.zeros(4), beta=np.full(4, 5.0))
        assert np.array_equal(out, np.full((3, 4), 5.0))

    def test_shape_and_eps_errors(self):
        with pytest.raises(ShapeError):
            layer_norm(t64(np.ones((2, 4))), t64(np.ones(3)), t64(np.zeros(4)))
        with pytest.raises(ParameterError):
            layer_norm(t64(np.ones((2, 4))), t64(np.ones(4)), t64(np.zeros(4)), eps=0.0)

    def test_gradient(self):
        set_precision("f64")
        rng = np.random.default_rng(3)
        x, g, b = (Tensor(rng.normal(size=s)) for s in [(3, 5), (5,), (5,)])
        w = Tensor(rng.normal(size=(3, 5)))
        assert grad_check(lambda x, g, b: F.sum(layer_norm(x, g, b) * w), [x, g, b]) < 1e-6


class TestGelu:
    def test_values(self):
        out = gelu(t64([0.0, 5.0, 1.0])).data
        assert out[0] == 0.0
        assert abs(out[1] - 5.0) < 1e-3
        assert abs(out[2] - 0.8412) < 1e-4

    def test_matches_formula(self):
        x = np.linspace(-6, 6, 101)
        ref = 0.5 * x * (1 + np.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x ** 3)))
        assert np.allclose(gelu(t64(x)).data, ref, atol=1e-14)

    def test_gradient(self):
        set_precision("f64")
        assert grad_check(lambda v: F.sum(gelu(v)), Tensor(np.linspace(-3, 3, 13))) < 1e-6


class TestMeanPool:
    def test_rows(self):
        assert np.array_equal(mean_pool(t64([[1, 3], [5, 7]]), axis=0).data, [3.0, 5.0])

    def test_single_element_axis(self):
        x = np.arange(6.0).reshape(1, 6)
        assert np.array_equal(mean_pool(t64(x), axis=0).data, x[0])

    def test_axis_out_of_range(self):
        with pytest.raises(ContractError):
            mean_pool(t64(np.ones((2, 2))), axis=2)


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.ones((2, 3)), requires_grad=True)
        with Graph() as g:
            loss = F.sum(x * 3.0 - x * 2.0)
        g.backward(loss)
        assert np.array_equal(x.grad, np.ones((2, 3)))

    def test_inner_product(self):
        x = t64([1.0, 2.0], grad=True)
        with Graph() as g:
            loss = F.sum(x * x)
        g.backward(loss)
        assert np.array_equal(x.grad, [2.0, 4.0])

    def test_unused_leaf_gets_zeros(self):
        x, y = t64([1.0, 2.0], grad=True), t64([[1.0, 1.0]], grad=True)
        with Graph() as g:
            loss = F.sum(x)
        g.backward(loss, leaves=[y])
        assert np.array_equal(y.grad, np.zeros((1, 2)))

    def test_second_backward_rejected(self):
        x = t64([1.0], grad=True)
        with Graph() as g:
            loss = F.sum(x * x)
        g.backward(loss)
        with pytest.raises(GraphStateError):
            g.backward(loss)

    def test_non_scalar_loss_rejected(self):
        x = t64([1.0, 2.0], grad=True)
        with Graph() as g:
            y = x * 2.0
        with pytest.raises(ContractError):
            g.backward(y)

    def test_broadcast_gradient_reduces(self):
        x, b = t64(np.ones((4, 3)), grad=True), t64([1.0, 2.0, 3.0], grad=True)
        with Graph() as g:
            loss = F.sum(x + b)
        g.backward(loss)
        assert np.array_equal(b.grad, [4.0, 4.0, 4.0])

    def test_take_scatters_repeated_indices(self):
        x = t64([1.0, 2.0, 3.0], grad=True)
        with Graph() as g:
            loss = F.sum(take(x, np.array([0, 0, 2])))
        g.backward(loss)
        assert np.array_equal(x.grad, [2.0, 0.0, 1.0])

    def test_no_graph_means_no_recording(self):
        x = t64([1.0], grad=True)
        y = x * 2.0
        assert y.is_leaf

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_forward_raises(self):
        with pytest.raises(NumericError):
            t64([1e308]) * 1e10


class TestGradCheck:
    def test_sum_of_squares(self):
        set_precision("f64")
        x = Tensor(np.random.default_rng(0).normal(size=7))
        assert grad_check(lambda v: F.sum(v * v), x) <= 1e-6

    def test_constant_function(self):
        x = Tensor(np.ones(3))
        assert grad_check(lambda v: Tensor(2.0), x) == 0.0

    def test_eps_bounds(self):
        with pytest.raises(ParameterError):
            grad_check(lambda v: F.sum(v), Tensor(np.ones(2)), eps=0.1)

    @pytest.mark.parametrize("op", ["relu", "transpose", "reshape", "slice", "sub"])
    def test_shape_ops(self, op):
        set_precision("f64")
        x = Tensor(np.random.default_rng(5).normal(size=(3, 4)) + 0.05)
        w = Tensor(np.random.default_rng(6).normal(size=(3, 4)))
        fns = {
            "relu": lambda v: F.sum(F.relu(v) * w),
            "transpose": lambda v: F.sum(F.transpose(v, (1, 0)) * F.transpose(w, (1, 0))),
            "reshape": lambda v: F.sum(F.reshape(v, (12,)) * F.reshape(w, (12,))),
            "slice": lambda v: F.sum(F.slice_(v, (slice(0, 2), slice(1, 3)))),
            "sub": lambda v: F.sum((w - v) * (w - v)),
        }
        assert grad_check(fns[op], x) < 1e-6


class TestDropout:
    def test_eval_is_identity(self):
        x = t64(np.ones((4, 4)))
        assert dropout(x, 0.5, None, training=False) is x

    def test_rate_bounds(self):
        with pytest.raises(ParameterError):
            dropout(t64([1.0]), 1.0, Prng(0), training=True)

    def test_inverted_scaling_and_determinism(self):
        x = Tensor(np.ones(20_000), dtype=np.float64)
        a = dropout(x, 0.25, Prng(9), training=True).data
        b = dropout(x, 0.25, Prng(9), training=True).data
        assert np.array_equal(a, b)
        assert set(np.unique(a)) <= {0.0, 1.0 / 0.75}
        assert abs(a.mean() - 1.0) < 0.03

    def test_training_needs_prng(self):
        with pytest.raises(ContractError):
            dropout(t64([1.0]), 0.1, None, training=True)


class TestCrossEntropy:
    def test_uniform_logits(self):
        assert abs(cross_entropy(t64([0.3, 0.3]), 0).item() - math.log(2)) < 1e-12

    def test_confident_logits(self):
        # log(1 + e^-20)
        assert abs(cross_entropy(t64([10.0, -10.0]), 0).item() - 2.0611536e-9) < 1e-15

    def test_matches_direct_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            n = int(rng.integers(2, 8))
            z = rng.normal(scale=3, size=n)
            y = int(rng.integers(n))
            ref = -np.log(np.exp(z)[y] / np.exp(z).sum())
            assert abs(cross_entropy(t64(z), y).item() - ref) < 1e-6

    def test_label_out_of_range(self):
        with pytest.raises(IndexError):
            cross_entropy(t64([0.0, 1.0]), 2)

    def test_gradient(self):
        set_precision("f64")
        z = Tensor(np.random.default_rng(8).normal(size=(5, 4)))
        assert grad_check(lambda v: cross_entropy(v, [0, 1, 2, 3, 0]), z) < 1e-6
