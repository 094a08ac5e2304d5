"""Engine primitive tests: trivial identities, analytic cases, and the
naive-loop convolution oracle."""

import numpy as np
import pytest

from resablate import ops
from resablate.errors import (
    DataError,
    DegenerateBatchError,
    NumericError,
    ShapeError,
)
from resablate.reference import conv2d_naive, max_relative_error
from resablate.tensor import BatchNormState, ConvKernel, Tensor


def rng(seed=0):
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# Tensor / ConvKernel / BatchNormState invariants
# ---------------------------------------------------------------------------

class TestTypes:
    def test_tensor_requires_rank_4(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 3, 4)))

    def test_tensor_data_length_matches_extents(self):
        t = Tensor(np.zeros((2, 3, 4, 5)))
        assert t.data.size == 2 * 3 * 4 * 5
        assert t.shape == (2, 3, 4, 5)

    def test_tensor_grad_shape_must_match(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((1, 1, 2, 2)), grad=np.zeros((1, 1, 2, 3)))

    def test_kernel_extents_restricted(self):
        with pytest.raises(ShapeError):
            ConvKernel(np.zeros((1, 1, 5, 5)))
        ConvKernel(np.zeros((1, 1, 1, 1)))
        ConvKernel(np.zeros((2, 3, 3, 3)))

    def test_zeroed_flag_implies_zero_weights(self):
        with pytest.raises(ShapeError):
            ConvKernel(np.ones((1, 1, 1, 1)), zeroed=True)
        ConvKernel(np.zeros((1, 1, 3, 3)), zeroed=True)

    def test_bn_state_validation(self):
        with pytest.raises(ShapeError):
            BatchNormState(np.ones(3), np.zeros(3), np.zeros(3), -np.ones(3))
        with pytest.raises(ShapeError):
            BatchNormState(np.ones(3), np.zeros(2), np.zeros(3), np.ones(3))


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------

class TestConv2d:
    def test_identity_1x1_kernel(self):
        x = Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
        k = ConvKernel(np.ones((1, 1, 1, 1), dtype=np.float32))
        out = ops.conv2d(x, k)
        assert np.array_equal(out.data, x.data)

    def test_zero_kernel_annihilates(self):
        x = Tensor(rng().normal(size=(2, 3, 6, 6)))
        k = ConvKernel(np.zeros((4, 3, 3, 3), dtype=np.float32), padding=1)
        out = ops.conv2d(x, k)
        assert not out.data.any()

    def test_matches_naive_oracle_reference_case(self):
        r = rng(1)
        x = Tensor(r.normal(size=(2, 3, 8, 8)).astype(np.float32))
        k = ConvKernel(r.normal(size=(4, 3, 3, 3)).astype(np.float32), stride=2, padding=1)
        fast = ops.conv2d(x, k)
        slow = conv2d_naive(x, k)
        assert fast.shape == slow.shape == (2, 4, 4, 4)
        assert max_relative_error(fast.data, slow.data) <= 1e-5

    @pytest.mark.parametrize("stride,padding,k,hw", [
        (1, 0, 3, (5, 7)), (1, 1, 3, (4, 4)), (2, 1, 3, (7, 5)),
        (1, 0, 1, (3, 3)), (2, 0, 1, (6, 6)), (2, 1, 1, (4, 6)),
    ])
    def test_matches_naive_oracle_configs(self, stride, padding, k, hw):
        r = rng(stride * 10 + padding + k)
        x = Tensor(r.normal(size=(2, 2, *hw)).astype(np.float32))
        kern = ConvKernel(r.normal(size=(3, 2, k, k)).astype(np.float32),
                          stride=stride, padding=padding)
        assert max_relative_error(ops.conv2d(x, kern).data,
                                  conv2d_naive(x, kern).data) <= 1e-5

    def test_output_shape_formula(self):
        x = Tensor(np.zeros((1, 2, 9, 11), dtype=np.float32))
        k = ConvKernel(np.zeros((5, 2, 3, 3), dtype=np.float32), stride=2, padding=1)
        out = ops.conv2d(x, k)
        assert out.shape == (1, 5, (9 + 2 - 3) // 2 + 1, (11 + 2 - 3) // 2 + 1)

    def test_linearity(self):
        r = rng(2)
        x = Tensor(r.normal(size=(2, 3, 6, 6)).astype(np.float32))
        k = ConvKernel(r.normal(size=(4, 3, 3, 3)).astype(np.float32), padding=1)
        a = np.float32(2.5)
        left = ops.conv2d(Tensor(a * x.data), k).data
        right = a * ops.conv2d(x, k).data
        assert max_relative_error(left, right) <= 1e-5
        k2 = ConvKernel(a * k.weights, padding=1)
        assert max_relative_error(ops.conv2d(x, k2).data, right) <= 1e-5

    def test_channel_mismatch_raises(self):
        x = Tensor(np.zeros((1, 2, 4, 4), dtype=np.float32))
        k = ConvKernel(np.zeros((1, 3, 3, 3), dtype=np.float32))
        with pytest.raises(ShapeError):
            ops.conv2d(x, k)

    def test_too_small_input_raises(self):
        x = Tensor(np.zeros((1, 1, 2, 2), dtype=np.float32))
        k = ConvKernel(np.zeros((1, 1, 3, 3), dtype=np.float32))
        with pytest.raises(ShapeError):
            ops.conv2d(x, k)

    def test_non_finite_output_raises(self):
        x = Tensor(np.full((1, 1, 3, 3), np.finfo(np.float32).max))
        k = ConvKernel(np.full((1, 1, 3, 3), np.float32(2.0)), padding=1)
        with np.errstate(over="ignore"), pytest.raises(NumericError):
            ops.conv2d(x, k)

    def test_does_not_mutate_input(self):
        x = Tensor(rng(3).normal(size=(1, 2, 5, 5)).astype(np.float32))
        before = x.data.tobytes()
        k = ConvKernel(rng(4).normal(size=(2, 2, 3, 3)).astype(np.float32), padding=1)
        ops.conv2d(x, k)
        assert x.data.tobytes() == before


class TestConv2dGrad:
    def test_zero_grad_out(self):
        r = rng(5)
        x = Tensor(r.normal(size=(1, 2, 5, 5)).astype(np.float32))
        k = ConvKernel(r.normal(size=(3, 2, 3, 3)).astype(np.float32), padding=1)
        gi, gk = ops.conv2d_grad(x, k, Tensor(np.zeros((1, 3, 5, 5), np.float32)))
        assert not gi.data.any() and not gk.any()

    def test_identity_kernel_passes_grad_through(self):
        r = rng(6)
        x = Tensor(r.normal(size=(2, 1, 4, 4)).astype(np.float32))
        k = ConvKernel(np.ones((1, 1, 1, 1), dtype=np.float32))
        g = Tensor(r.normal(size=(2, 1, 4, 4)).astype(np.float32))
        gi, _ = ops.conv2d_grad(x, k, g)
        assert np.array_equal(gi.data, g.data)

    def test_grad_out_shape_mismatch(self):
        x = Tensor(np.zeros((1, 1, 4, 4), dtype=np.float32))
        k = ConvKernel(np.zeros((1, 1, 3, 3), dtype=np.float32), padding=1)
        with pytest.raises(ShapeError):
            ops.conv2d_grad(x, k, Tensor(np.zeros((1, 1, 3, 3), np.float32)))


# ---------------------------------------------------------------------------
# batchnorm
# ---------------------------------------------------------------------------

class TestBatchNorm:
    def test_eval_zero_input_gives_branch_constant(self):
        r = rng(7)
        state = BatchNormState(
            gamma=r.uniform(0.5, 1.5, 4),
            beta=r.normal(0, 1, 4),
            running_mean=r.normal(0, 1, 4),
            running_var=r.uniform(0.2, 2.0, 4),
        )
        x = Tensor(np.zeros((2, 4, 3, 3), dtype=np.float32))
        out = ops.batchnorm(x, state, "eval")
        expected = state.beta - state.gamma * state.running_mean / np.sqrt(
            state.running_var + state.epsilon
        )
        for c in range(4):
            assert np.allclose(out.data[:, c], expected[c], rtol=1e-6)
        # and the helper computes the same constant
        assert np.allclose(ops.bn_zero_response(state), expected, rtol=1e-6)

    def test_eval_identity_configuration(self):
        state = BatchNormState(np.ones(3), np.zeros(3), np.zeros(3), np.ones(3),
                               epsilon=0.0)
        x = Tensor(rng(8).normal(size=(2, 3, 4, 4)).astype(np.float32))
        out = ops.batchnorm(x, state, "eval")
        assert np.array_equal(out.data, x.data)

    def test_train_normalizes_per_channel(self):
        state = BatchNormState.create(4)
        x = Tensor(rng(9).normal(2.0, 3.0, size=(8, 4, 6, 6)).astype(np.float32))
        out = ops.batchnorm(x, state, "train")
        mean = out.data.mean(axis=(0, 2, 3))
        var = out.data.var(axis=(0, 2, 3))
        assert np.allclose(mean, 0.0, atol=1e-5)
        assert np.allclose(var, 1.0, atol=1e-4)

    def test_train_updates_running_stats_with_momentum(self):
        state = BatchNormState.create(2)
        x = Tensor(rng(10).normal(1.0, 2.0, size=(4, 2, 3, 3)).astype(np.float32))
        batch_mean = x.data.mean(axis=(0, 2, 3))
        batch_var = x.data.var(axis=(0, 2, 3))
        ops.batchnorm(x, state, "train")
        assert np.allclose(state.running_mean, 0.9 * 0.0 + 0.1 * batch_mean, rtol=1e-5)
        assert np.allclose(state.running_var, 0.9 * 1.0 + 0.1 * batch_var, rtol=1e-5)

    def test_eval_leaves_stats_untouched(self):
        state = BatchNormState.create(2)
        before = (state.running_mean.copy(), state.running_var.copy())
        ops.batchnorm(Tensor(rng(11).normal(size=(4, 2, 3, 3)).astype(np.float32)),
                      state, "eval")
        assert np.array_equal(state.running_mean, before[0])
        assert np.array_equal(state.running_var, before[1])

    def test_degenerate_batch_raises(self):
        state = BatchNormState.create(3)
        with pytest.raises(DegenerateBatchError):
            ops.batchnorm(Tensor(np.zeros((1, 3, 1, 1), np.float32)), state, "train")

    def test_eval_is_affine_per_channel(self):
        r = rng(12)
        state = BatchNormState(
            gamma=r.uniform(0.5, 1.5, 3), beta=r.normal(0, 1, 3),
            running_mean=r.normal(0, 1, 3), running_var=r.uniform(0.2, 2.0, 3),
        )
        # probe two inputs per channel to recover the affine map, then verify
        y0 = ops.batchnorm(Tensor(np.zeros((1, 3, 1, 1), np.float32)), state, "eval").data
        y1 = ops.batchnorm(Tensor(np.ones((1, 3, 1, 1), np.float32)), state, "eval").data
        a = (y1 - y0)[0, :, 0, 0]
        b = y0[0, :, 0, 0]
        expected_a = state.gamma / np.sqrt(state.running_var + state.epsilon)
        assert np.allclose(a, expected_a, rtol=1e-5)
        x = Tensor(r.normal(size=(2, 3, 4, 4)).astype(np.float32))
        out = ops.batchnorm(x, state, "eval")
        assert np.allclose(out.data, a.reshape(1, 3, 1, 1) * x.data + b.reshape(1, 3, 1, 1),
                           rtol=1e-5, atol=1e-6)


# ---------------------------------------------------------------------------
# relu / sigmoid / heads
# ---------------------------------------------------------------------------

class TestPointwise:
    def test_relu_values(self):
        x = Tensor(np.array([-1.0, 2.0, 0.0, -0.5]).reshape(1, 1, 2, 2))
        out = ops.relu(x)
        assert np.array_equal(out.data.ravel(), [0.0, 2.0, 0.0, 0.0])

    def test_relu_idempotent(self):
        x = Tensor(rng(13).normal(size=(2, 3, 4, 4)).astype(np.float32))
        once = ops.relu(x)
        twice = ops.relu(once)
        assert np.array_equal(once.data, twice.data)

    def test_relu_grad_is_indicator(self):
        x = Tensor(np.array([-1.0, 2.0, 0.0, 3.0]).reshape(1, 1, 2, 2))
        g = Tensor(np.full((1, 1, 2, 2), 5.0))
        out = ops.relu_grad(x, g)
        assert np.array_equal(out.data.ravel(), [0.0, 5.0, 0.0, 5.0])

    def test_sigmoid_range_and_symmetry(self):
        x = Tensor(rng(14).normal(0, 10, size=(1, 1, 4, 4)))
        s = ops.sigmoid(x).data
        assert ((s > 0) & (s < 1)).all()
        assert np.allclose(ops.sigmoid(Tensor(-x.data)).data, 1 - s, atol=1e-7)

    def test_global_avg_pool_constant(self):
        x = Tensor(np.full((2, 3, 4, 4), 2.5, dtype=np.float32))
        out = ops.global_avg_pool(x)
        assert out.shape == (2, 3, 1, 1)
        assert np.allclose(out.data, 2.5)

    def test_upsample_duplicates_pixel(self):
        x = Tensor(np.array([[[[7.0]]]]))
        out = ops.upsample_nearest2x(x)
        assert out.shape == (1, 1, 2, 2)
        assert np.array_equal(out.data, np.full((1, 1, 2, 2), 7.0))

    def test_upsample_grad_sums_blocks(self):
        x = Tensor(np.zeros((1, 1, 2, 2), np.float32))
        g = Tensor(np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4))
        out = ops.upsample_nearest2x_grad(x, g)
        expected = np.array([[[[0 + 1 + 4 + 5, 2 + 3 + 6 + 7],
                               [8 + 9 + 12 + 13, 10 + 11 + 14 + 15]]]], dtype=np.float32)
        assert np.array_equal(out.data, expected)


# ---------------------------------------------------------------------------
# losses and metrics
# ---------------------------------------------------------------------------

class TestSoftmaxCrossEntropy:
    def test_uniform_logits_loss_is_log_k(self):
        for k in (2, 10):
            logits = np.zeros((4, k))
            loss, _ = ops.softmax_cross_entropy(logits, np.zeros(4, dtype=np.int64))
            assert np.isclose(loss, np.log(k), rtol=1e-12)

    def test_huge_margin_loss_vanishes(self):
        logits = np.zeros((2, 5))
        logits[:, 3] = 50.0
        loss, _ = ops.softmax_cross_entropy(logits, np.array([3, 3]))
        assert loss < 1e-8

    def test_out_of_range_label(self):
        with pytest.raises(DataError):
            ops.softmax_cross_entropy(np.zeros((2, 3)), np.array([0, 3]))
        with pytest.raises(DataError):
            ops.softmax_cross_entropy(np.zeros((2, 3)), np.array([-1, 0]))

    def test_grad_sums_to_zero_per_row(self):
        r = rng(15)
        logits = r.normal(size=(4, 6))
        _, grad = ops.softmax_cross_entropy(logits, r.integers(0, 6, 4))
        assert np.allclose(grad.sum(axis=1), 0.0, atol=1e-12)


class TestDice:
    def test_identical_masks(self):
        m = (rng(16).random((1, 1, 8, 8)) > 0.5).astype(np.float32)
        m[0, 0, 0, 0] = 1  # non-empty
        assert ops.dice_coefficient(m, m) == 1.0

    def test_disjoint_masks(self):
        a = np.zeros((1, 1, 4, 4), np.float32)
        b = np.zeros((1, 1, 4, 4), np.float32)
        a[0, 0, 0, :] = 1
        b[0, 0, 3, :] = 1
        assert ops.dice_coefficient(a, b) == 0.0

    def test_half_overlap_analytic(self):
        # true mask of 8 pixels, prediction covers exactly half of it
        true = np.zeros((1, 1, 4, 4), np.float32)
        true[0, 0, :2, :] = 1
        pred = np.zeros_like(true)
        pred[0, 0, 0, :] = 1
        assert ops.dice_coefficient(pred, true) == pytest.approx(2.0 / 3.0, abs=1e-12)

    def test_both_empty_is_one(self):
        z = np.zeros((1, 1, 2, 2), np.float32)
        assert ops.dice_coefficient(z, z) == 1.0

    def test_symmetric_and_bounded(self):
        r = rng(17)
        for _ in range(10):
            a = (r.random((1, 1, 6, 6)) > 0.5).astype(np.float32)
            b = (r.random((1, 1, 6, 6)) > 0.5).astype(np.float32)
            d1 = ops.dice_coefficient(a, b)
            d2 = ops.dice_coefficient(b, a)
            assert d1 == d2
            assert 0.0 <= d1 <= 1.0

    def test_non_binary_mask_rejected(self):
        with pytest.raises(DataError):
            ops.dice_coefficient(np.full((1, 1, 2, 2), 0.5), np.ones((1, 1, 2, 2)))


class TestSoftDice:
    def test_exact_match_is_zero_loss(self):
        q = (rng(18).random((2, 1, 6, 6)) > 0.5).astype(np.float64)
        loss, _ = ops.soft_dice_loss(q, q)
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_inverted_prediction_near_one(self):
        q = (rng(19).random((2, 1, 8, 8)) > 0.5).astype(np.float64)
        loss, _ = ops.soft_dice_loss(1.0 - q, q)
        assert loss > 0.95

    def test_out_of_range_pred_rejected(self):
        with pytest.raises(DataError):
            ops.soft_dice_loss(np.full((1, 1, 2, 2), 1.5), np.ones((1, 1, 2, 2)))


class TestInputPurity:
    def test_ops_leave_inputs_untouched(self):
        r = rng(30)
        x = Tensor(r.normal(size=(2, 3, 6, 6)).astype(np.float32))
        k = ConvKernel(r.normal(size=(4, 3, 3, 3)).astype(np.float32), padding=1)
        g = Tensor(r.normal(size=(2, 4, 6, 6)).astype(np.float32))
        state = BatchNormState.create(3)
        bx = x.data.tobytes()
        bk = k.weights.tobytes()
        ops.conv2d(x, k)
        ops.conv2d_grad(x, k, g)
        ops.batchnorm(x, state, "eval")
        ops.batchnorm_grad(x, state, Tensor(r.normal(size=x.shape).astype(np.float32)))
        ops.relu(x)
        ops.sigmoid(x)
        ops.global_avg_pool(x)
        ops.upsample_nearest2x(x)
        assert x.data.tobytes() == bx
        assert k.weights.tobytes() == bk

    def test_batchnorm_train_mutates_only_running_stats(self):
        r = rng(31)
        x = Tensor(r.normal(size=(4, 3, 5, 5)).astype(np.float32))
        state = BatchNormState.create(3)
        gamma, beta = state.gamma.tobytes(), state.beta.tobytes()
        bx = x.data.tobytes()
        ops.batchnorm(x, state, "train")
        assert x.data.tobytes() == bx
        assert state.gamma.tobytes() == gamma and state.beta.tobytes() == beta


class TestSgdStep:
    def test_zero_grad_leaves_params(self):
        p = np.array([1.0, -2.0])
        v = np.zeros(2)
        ops.sgd_step([p], [np.zeros(2)], [v], lr=0.1, momentum=0.9, weight_decay=0.0)
        assert np.array_equal(p, [1.0, -2.0]) and not v.any()

    def test_plain_gradient_descent(self):
        p = np.array([1.0, 2.0])
        g = np.array([0.5, -1.0])
        ops.sgd_step([p], [g], [np.zeros(2)], lr=0.1)
        assert np.allclose(p, [1.0 - 0.05, 2.0 + 0.1], rtol=1e-12)

    def test_momentum_matches_hand_unrolled_recurrence(self):
        # f(w) = w^2, grad = 2w, lr = 0.1, momentum = 0.9
        w = np.array([1.0])
        v = np.array([0.0])
        lr, mu = 0.1, 0.9
        # hand-unrolled: v1 = 2*1 = 2, w1 = 1 - 0.2 = 0.8
        #                v2 = 0.9*2 + 2*0.8 = 3.4, w2 = 0.8 - 0.34 = 0.46
        ops.sgd_step([w], [2 * w.copy()], [v], lr, mu)
        assert np.isclose(w[0], 0.8, rtol=1e-12)
        ops.sgd_step([w], [2 * w.copy()], [v], lr, mu)
        assert np.isclose(w[0], 0.46, rtol=1e-12)

    def test_lr_zero_keeps_params_bitwise(self):
        p = np.array([1.3, 2.7])
        before = p.tobytes()
        ops.sgd_step([p], [np.array([5.0, -5.0])], [np.zeros(2)], lr=0.0,
                     momentum=0.9, weight_decay=5e-4)
        assert p.tobytes() == before
