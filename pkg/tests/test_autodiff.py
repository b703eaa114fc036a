import numpy as np
import pytest

from conftest import check_op_gradients
from t2g_toolkit.core import autodiff as ad
from t2g_toolkit.core.autodiff import MASK_VALUE, Parameter, Value
from t2g_toolkit.core.errors import ShapeError

rng = np.random.default_rng(7)


def away_from_zero(shape):
    x = rng.standard_normal(shape)
    return np.sign(x) * (np.abs(x) + 0.1)


class TestOpGradients:
    def test_add_broadcast_row(self):
        check_op_gradients(ad.add, rng.standard_normal((4, 3)), rng.standard_normal((3,)))

    def test_sub_broadcast_column(self):
        check_op_gradients(ad.sub, rng.standard_normal((4, 3)), rng.standard_normal((4, 1)))

    def test_mul(self):
        check_op_gradients(ad.mul, rng.standard_normal((2, 4, 3)), rng.standard_normal((1, 4, 3)))

    def test_square_and_scale(self):
        check_op_gradients(lambda a: ad.scale(ad.square(a), 0.3), rng.standard_normal((3, 5)))

    def test_batched_matmul(self):
        check_op_gradients(ad.matmul, rng.standard_normal((2, 3, 4, 5)), rng.standard_normal((5, 2)))

    def test_layout_ops(self):
        def build(a):
            moved = ad.permute(ad.reshape(a, (2, 3, 4)), (1, 0, 2))
            return ad.transpose(moved)

        check_op_gradients(build, rng.standard_normal((6, 4)))

    def test_concat(self):
        check_op_gradients(lambda a, b: ad.concat([a, b], axis=1), rng.standard_normal((2, 3)), rng.standard_normal((2, 5)))

    def test_embedding_gather_repeated_indices(self):
        indices = np.array([[0, 2], [2, 2], [1, 0]])
        check_op_gradients(lambda t: ad.embedding_gather(t, indices), rng.standard_normal((3, 4)))

    def test_sum_and_mean(self):
        check_op_gradients(lambda a: ad.add(ad.sum(a, axis=1), ad.mean(a, axis=1)), rng.standard_normal((3, 4, 2)))
        check_op_gradients(lambda a: ad.mean(a, axis=-1, keepdims=True), rng.standard_normal((3, 4)))

    def test_sigmoid(self):
        check_op_gradients(ad.sigmoid, rng.standard_normal((3, 4)) * 3)

    def test_relu(self):
        check_op_gradients(ad.relu, away_from_zero((4, 5)))

    def test_gelu(self):
        check_op_gradients(ad.gelu, rng.standard_normal((4, 5)) * 2)

    def test_masked_row_softmax(self):
        mask = np.zeros((2, 3, 4))
        mask[0, 1, :2] = MASK_VALUE
        mask[1, 2, :] = MASK_VALUE
        check_op_gradients(lambda a: ad.row_softmax(a, mask), rng.standard_normal((2, 3, 4)))

    def test_log_softmax(self):
        check_op_gradients(ad.log_softmax, rng.standard_normal((5, 3)))

    def test_layer_norm_affine(self):
        check_op_gradients(
            ad.layer_norm,
            rng.standard_normal((3, 2, 6)),
            rng.standard_normal(6),
            rng.standard_normal(6),
        )

    def test_l2_normalize(self):
        check_op_gradients(lambda a: ad.l2_normalize(a, axis=-1), rng.standard_normal((3, 5)))


class TestSoftmax:
    def test_rows_sum_to_one(self, float64):
        out = ad.row_softmax(Value(rng.standard_normal((3, 6))))
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_excluded_entries_are_exactly_zero(self):
        mask = np.zeros((1, 4))
        mask[0, [1, 3]] = MASK_VALUE
        out = ad.row_softmax(Value(np.array([[5.0, 50.0, -2.0, 0.0]])), mask)
        assert out.data[0, 1] == 0.0
        assert out.data[0, 3] == 0.0
        np.testing.assert_allclose(out.data.sum(), 1.0, rtol=1e-6)

    def test_fully_masked_row_is_zero_with_zero_gradient(self, float64):
        x = Parameter(rng.standard_normal((2, 3)))
        mask = np.zeros((2, 3))
        mask[1] = MASK_VALUE
        out = ad.row_softmax(x, mask)
        assert np.all(out.data[1] == 0.0)
        assert np.all(np.isfinite(out.data))
        ad.backward(ad.sum(ad.mul(out, Value(rng.standard_normal((2, 3))))))
        assert np.all(x.grad[1] == 0.0)

    def test_mask_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ad.row_softmax(Value(np.zeros((2, 3))), np.zeros((2, 4)))


class TestGraph:
    def test_backward_twice_doubles_leaf_gradients(self, float64):
        w = Parameter(rng.standard_normal((3, 2)), name="w")
        x = Value(rng.standard_normal((4, 3)))
        loss = ad.sum(ad.sigmoid(ad.matmul(x, w)))
        ad.backward(loss)
        once = w.grad.copy()
        ad.backward(loss)
        np.testing.assert_allclose(w.grad, 2 * once, rtol=1e-12)

    def test_backward_returns_named_gradients(self):
        w = Parameter(np.ones((2, 2)), name="w")
        grads = ad.backward(ad.sum(ad.matmul(Value(np.arange(4.0).reshape(2, 2)), w)))
        assert set(grads) == {"w"}
        np.testing.assert_allclose(grads["w"], [[2.0, 2.0], [4.0, 4.0]])

    def test_shared_parameter_accumulates(self, float64):
        w = Parameter(np.array([2.0]))
        ad.backward(ad.sum(ad.mul(w, w)))
        np.testing.assert_allclose(w.grad, [4.0])

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(ShapeError):
            ad.backward(Value(np.zeros(3)))

    def test_constants_get_no_gradient(self):
        x = Value(np.ones(3))
        w = Parameter(np.ones(3))
        ad.backward(ad.sum(ad.mul(x, w)))
        assert np.all(x.grad == 0.0)


class TestShapes:
    def test_elementwise_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError) as info:
            ad.add(Value(np.zeros((2, 3))), Value(np.zeros((4, 5))))
        assert "(2, 3)" in str(info.value)
        assert "(4, 5)" in str(info.value)

    def test_matmul_inner_mismatch(self):
        with pytest.raises(ShapeError):
            ad.matmul(Value(np.zeros((2, 3))), Value(np.zeros((4, 2))))

    def test_matmul_batch_mismatch(self):
        with pytest.raises(ShapeError):
            ad.matmul(Value(np.zeros((2, 3, 4))), Value(np.zeros((3, 4, 2))))

    def test_reshape_mismatch(self):
        with pytest.raises(ShapeError):
            ad.reshape(Value(np.zeros(6)), (4, 2))

    def test_gather_out_of_range(self):
        with pytest.raises(ShapeError):
            ad.embedding_gather(Value(np.zeros((3, 2))), np.array([3]))


class TestGates:
    def test_threshold_is_strict(self):
        soft = Value(np.array([0.4, 0.5, 0.6]))
        assert ad.straight_through_gate(soft, 0.5).data.tolist() == [0.0, 0.0, 1.0]

    def test_gradient_passes_straight_through(self, float64):
        logits = Parameter(np.array([-2.0, 0.0, 3.0]))
        soft = ad.sigmoid(logits)
        ad.backward(ad.sum(ad.straight_through_gate(soft, 0.5)))
        s = soft.data
        np.testing.assert_allclose(logits.grad, s * (1 - s), rtol=1e-12)

    def test_replay_keeps_recorded_decision(self, float64):
        tape = ad.GateTape()
        with ad.gate_tape(tape):
            first = ad.straight_through_gate(Value(np.array([0.49, 0.51])), 0.5)
            tape.replay()
            again = ad.straight_through_gate(Value(np.array([0.52, 0.50])), 0.5)
        assert first.data.tolist() == [0.0, 1.0]
        np.testing.assert_allclose(again.data, [0.03, 0.99], atol=1e-12)

    def test_relu_mask_replayed(self, float64):
        tape = ad.GateTape()
        with ad.gate_tape(tape):
            ad.relu(Value(np.array([-1e-9, 1e-9])))
            tape.replay()
            out = ad.relu(Value(np.array([1e-9, -1e-9])))
        np.testing.assert_allclose(out.data, [0.0, -1e-9])


class TestDropoutAndPrecision:
    def test_dropout_identity_in_eval(self):
        x = Value(np.ones((4, 4)))
        assert ad.dropout(x, 0.5, training=False, rng=None) is x

    def test_dropout_scales_kept_entries(self):
        out = ad.dropout(Value(np.ones((50, 50))), 0.2, training=True, rng=np.random.default_rng(0))
        kept = out.data[out.data != 0]
        np.testing.assert_allclose(kept, 1.0 / 0.8, rtol=1e-6)

    def test_dropout_needs_rng_when_training(self):
        with pytest.raises(ValueError):
            ad.dropout(Value(np.ones(3)), 0.1, training=True, rng=None)

    def test_precision_context(self):
        with ad.precision("float64"):
            assert Parameter(np.ones(2)).data.dtype == np.float64
        assert Parameter(np.ones(2)).data.dtype == np.float32


class TestKnownValues:
    def test_uniform_softmax(self):
        np.testing.assert_array_equal(ad.row_softmax(Value(np.zeros((1, 2)))).data, [[0.5, 0.5]])

    def test_sigmoid_at_zero(self):
        assert ad.sigmoid(Value(np.zeros(1))).item() == 0.5

    def test_layer_norm_of_constant_row(self):
        out = ad.layer_norm(Value(np.full((2, 5), 3.7)))
        assert np.abs(out.data).max() < 1e-3
