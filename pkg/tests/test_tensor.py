import math

import numpy as np
import pytest

from hanmt import tensor as T
from util import analytic_grad, finite_diff_grad, rel_err


def t64(data):
    return T.Tensor(np.asarray(data, dtype=np.float64), dtype=np.float64)


class TestMatmulAffine:
    def test_identity(self):
        x = T.Tensor(np.eye(2))
        w = T.Tensor([[1, 2], [3, 4]])
        y = T.matmul_affine(x, w)
        np.testing.assert_allclose(y.data, [[1, 2], [3, 4]])

    def test_bias(self):
        y = T.matmul_affine(T.Tensor([[1, 1]]), T.Tensor([[1], [1]]), T.Tensor([1]))
        np.testing.assert_allclose(y.data, [[3]])

    def test_shape_mismatch(self):
        with pytest.raises(T.ShapeError):
            T.matmul_affine(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((2, 3))))

    def test_grad_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        x = t64(rng.normal(size=(3, 4)))
        w = t64(rng.normal(size=(4, 2)))
        b = t64(rng.normal(size=2))

        def build():
            return T.sum_all(T.matmul_affine(x, w, b))

        gx, gw, gb = analytic_grad(build, [x, w, b])
        for p, g in [(x, gx), (w, gw), (b, gb)]:
            fd = finite_diff_grad(lambda: float(build().data), p)
            assert rel_err(g, fd) < 1e-4

    def test_nonfinite_output_rejected(self):
        x = T.Tensor(np.full((1, 1), 3e38))
        w = T.Tensor(np.full((1, 1), 3e38))
        with pytest.raises(T.NumericError):
            T.matmul_affine(x, w)


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        loss = T.softmax_cross_entropy(T.Tensor([[0.0, 0.0, 0.0, 0.0]]), [2])
        assert abs(float(loss.data) - math.log(4)) < 1e-6

    def test_monotone_to_zero_as_target_logit_grows(self):
        prev = float("inf")
        for big in [1.0, 3.0, 10.0, 30.0]:
            logits = T.Tensor([[0.0, big, 0.0]])
            loss = float(T.softmax_cross_entropy(logits, [1]).data)
            assert loss < prev
            prev = loss
        assert prev < 1e-9

    def test_against_log_sum_exp_oracle(self):
        rng = np.random.default_rng(1)
        z = rng.normal(size=(2, 5))
        targets = [3, 0]
        # independent oracle: plain log-sum-exp per row
        expect = np.mean(
            [np.log(np.exp(z[i]).sum()) - z[i, t] for i, t in enumerate(targets)]
        )
        loss = T.softmax_cross_entropy(t64(z), targets)
        assert abs(float(loss.data) - expect) < 1e-6

    def test_ignored_positions_contribute_nothing(self):
        z = np.array([[1.0, 2.0], [5.0, -1.0]])
        full = T.softmax_cross_entropy(t64(z), [0, -1], ignore_id=-1)
        only = T.softmax_cross_entropy(t64(z[:1]), [0], ignore_id=-1)
        assert abs(float(full.data) - float(only.data)) < 1e-12

    def test_all_ignored_is_an_error(self):
        with pytest.raises(T.EmptyLossError):
            T.softmax_cross_entropy(T.Tensor([[0.0, 1.0]]), [-1], ignore_id=-1)

    def test_grad_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        logits = t64(rng.normal(size=(4, 6)))
        targets = [5, -1, 0, 2]

        def build():
            return T.softmax_cross_entropy(logits, targets, ignore_id=-1)

        (g,) = analytic_grad(build, [logits])
        fd = finite_diff_grad(lambda: float(build().data), logits)
        assert rel_err(g, fd) < 1e-4


class TestSequenceNll:
    def test_per_sentence_normalization(self):
        rng = np.random.default_rng(3)
        # lengths 2 and 4: loss must be the mean of the two per-sentence means
        z = rng.normal(size=(2, 4, 5))
        tgt = np.array([[1, 2, 0, 0], [3, 4, 1, 2]])
        loss = T.sequence_nll(t64(z), tgt, pad_id=0)

        def row_nll(i, t):
            return np.log(np.exp(z[i, t]).sum()) - z[i, t, tgt[i, t]]

        mean2 = np.mean([row_nll(0, t) for t in range(2)])
        mean4 = np.mean([row_nll(1, t) for t in range(4)])
        assert abs(float(loss.data) - 0.5 * (mean2 + mean4)) < 1e-6

    def test_empty_target_is_an_error(self):
        with pytest.raises(T.EmptyLossError):
            T.sequence_nll(T.Tensor(np.zeros((1, 2, 3))), [[0, 0]], pad_id=0)

    def test_grad_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        z = t64(rng.normal(size=(2, 3, 4)))
        tgt = np.array([[1, 2, 0], [3, 0, 0]])

        def build():
            return T.sequence_nll(z, tgt, pad_id=0)

        (g,) = analytic_grad(build, [z])
        fd = finite_diff_grad(lambda: float(build().data), z)
        assert rel_err(g, fd) < 1e-4


class TestBackward:
    def test_sum_gives_ones(self):
        w = T.Tensor(np.zeros((2, 3)))
        with T.Graph() as g:
            loss = T.sum_all(w)
            g.backward(loss)
        np.testing.assert_array_equal(w.grad, np.ones((2, 3), dtype=np.float32))

    def test_sum_of_softmax_rows_is_flat(self):
        rng = np.random.default_rng(5)
        x = T.Tensor(rng.normal(size=(3, 4)))
        with T.Graph() as g:
            loss = T.sum_all(T.softmax(x))
            g.backward(loss)
        assert np.abs(x.grad).max() < 1e-6

    def test_double_backward_rejected(self):
        x = T.Tensor([1.0])
        with T.Graph() as g:
            loss = T.sum_all(x)
            g.backward(loss)
            with pytest.raises(T.GraphStateError):
                g.backward(loss)

    def test_unused_parameter_has_no_grad(self):
        used, unused = T.Tensor([1.0]), T.Tensor([2.0])
        with T.Graph() as g:
            g.backward(T.sum_all(used))
        assert used.grad is not None and unused.grad is None

    def test_linearity_of_two_losses(self):
        rng = np.random.default_rng(6)
        w = T.Tensor(rng.normal(size=(3, 3)))

        def loss_a():
            return T.sum_all(T.mul(w, w))

        def loss_b():
            return T.mean_all(T.relu(w))

        (ga,) = analytic_grad(loss_a, [w])
        (gb,) = analytic_grad(loss_b, [w])

        w.zero_grad()
        with T.Graph() as g:
            g.backward(T.add(loss_a(), loss_b()))
        np.testing.assert_allclose(w.grad, ga + gb, atol=1e-6)

    def test_reused_parameter_accumulates(self):
        w = T.Tensor([[2.0]])
        with T.Graph() as g:
            y = T.matmul_affine(T.matmul_affine(T.Tensor([[1.0]]), w), w)
            g.backward(T.sum_all(y))
        # d(w^2)/dw = 2w
        np.testing.assert_allclose(w.grad, [[4.0]])


class TestElementwiseOpGradients:
    @pytest.mark.parametrize(
        "op",
        [T.gelu, T.relu, T.softmax, T.log_softmax, lambda x: T.scale(x, 2.5)],
        ids=["gelu", "relu", "softmax", "log_softmax", "scale"],
    )
    def test_against_finite_differences(self, op):
        rng = np.random.default_rng(7)
        x = t64(rng.normal(size=(3, 5)) + 0.05)  # nudge off relu's kink

        def build():
            return T.sum_all(T.mul(op(x), x))

        (g,) = analytic_grad(build, [x])
        fd = finite_diff_grad(lambda: float(build().data), x)
        assert rel_err(g, fd) < 1e-4

    def test_add_mul_broadcast_grads(self):
        rng = np.random.default_rng(8)
        x = t64(rng.normal(size=(2, 3)))
        b = t64(rng.normal(size=(3,)))

        def build():
            return T.sum_all(T.mul(T.add(x, b), T.add(x, b)))

        gx, gb = analytic_grad(build, [x, b])
        for p, g in [(x, gx), (b, gb)]:
            fd = finite_diff_grad(lambda: float(build().data), p)
            assert rel_err(g, fd) < 1e-4


class TestLayerNorm:
    def test_normalization_invariant(self):
        rng = np.random.default_rng(9)
        x = T.Tensor(rng.normal(2.0, 3.0, size=(6, 32)))
        one = T.Tensor(np.ones(32))
        zero = T.Tensor(np.zeros(32))
        y = T.layer_norm(x, one, zero).data
        assert np.abs(y.mean(axis=-1)).max() < 1e-5
        assert np.abs(y.var(axis=-1) - 1.0).max() < 1e-4

    def test_grad_matches_finite_differences(self):
        rng = np.random.default_rng(10)
        x = t64(rng.normal(size=(2, 6)))
        gain = t64(rng.normal(size=6))
        bias = t64(rng.normal(size=6))
        probe = rng.normal(size=(2, 6))

        def build():
            return T.sum_all(T.mul_const(T.layer_norm(x, gain, bias), probe))

        grads = analytic_grad(build, [x, gain, bias])
        for p, g in zip([x, gain, bias], grads):
            fd = finite_diff_grad(lambda: float(build().data), p)
            assert rel_err(g, fd) < 1e-4


class TestSoftmax:
    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(11)
        p = T.softmax(T.Tensor(rng.normal(0, 20, size=(8, 50)))).data
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-6)

    def test_large_logits_do_not_overflow(self):
        p = T.softmax(T.Tensor([[1000.0, 1000.0]])).data
        np.testing.assert_allclose(p, [[0.5, 0.5]], atol=1e-6)

    def test_additive_mask_zeroes_positions(self):
        p = T.softmax(T.Tensor([[1.0, 2.0, 3.0]]), additive_mask=np.array([0.0, -1e9, 0.0]))
        assert p.data[0, 1] < 1e-12
        np.testing.assert_allclose(p.data.sum(), 1.0, atol=1e-6)


class TestEmbeddingAndMovement:
    def test_embedding_lookup_and_grad(self):
        table = t64(np.arange(12, dtype=np.float64).reshape(4, 3))
        ids = np.array([[0, 2], [2, 2]])
        out = T.embedding(table, ids)
        assert out.data.shape == (2, 2, 3)
        with T.Graph() as g:
            g.backward(T.sum_all(T.embedding(table, ids)))
        # row 2 used three times, row 0 once, rows 1/3 never
        np.testing.assert_allclose(table.grad[:, 0], [1, 0, 3, 0])

    def test_embedding_range_check(self):
        with pytest.raises(T.ShapeError):
            T.embedding(T.Tensor(np.ones((4, 3))), [4])

    def test_reshape_transpose_roundtrip_grads(self):
        rng = np.random.default_rng(12)
        x = t64(rng.normal(size=(2, 3, 4)))
        probe = rng.normal(size=(4, 3, 2))

        def build():
            return T.sum_all(T.mul_const(T.transpose(T.reshape(x, (2, 3, 4)), (2, 1, 0)), probe))

        (g,) = analytic_grad(build, [x])
        fd = finite_diff_grad(lambda: float(build().data), x)
        assert rel_err(g, fd) < 1e-4


class TestDropout:
    def test_inverted_scaling_preserves_mean(self):
        rng = np.random.default_rng(13)
        x = T.Tensor(np.ones((200, 200)))
        y = T.dropout(x, 0.3, rng).data
        uniq = np.unique(y)
        assert all(min(abs(v), abs(v - 1 / 0.7)) < 1e-6 for v in uniq)
        assert abs(y.mean() - 1.0) < 0.02

    def test_bad_rate_rejected(self):
        with pytest.raises(ValueError):
            T.dropout(T.Tensor([1.0]), 1.0, np.random.default_rng(0))

    def test_deterministic_given_seed(self):
        x = T.Tensor(np.ones((8, 8)))
        a = T.dropout(x, 0.5, np.random.default_rng(42)).data
        b = T.dropout(x, 0.5, np.random.default_rng(42)).data
        np.testing.assert_array_equal(a, b)
