import numpy as np
import pytest

from cafe import tensor as T
from cafe.tensor import Parameter, Tensor, backward, check_gradients


def randn(*shape, seed=0):
    return np.random.default_rng(seed).standard_normal(shape)


class TestPrimitives:
    def test_matmul_against_triple_loop(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((2, 3))
        b = rng.standard_normal((3, 4))
        out = T.matmul(Tensor(a), Tensor(b)).data
        expected = np.zeros((2, 4))
        for i in range(2):
            for j in range(4):
                for k in range(3):
                    expected[i, j] += a[i, k] * b[k, j]
        assert np.max(np.abs(out - expected)) < 1e-12

    def test_subtract_self_is_zero(self):
        x = Tensor(randn(3, 4))
        assert np.all(T.sub(x, x).data == 0.0)

    def test_masked_softmax_symmetric_row(self):
        out = T.masked_softmax(Tensor(np.array([[1.0, 1.0]])),
                               np.array([[1.0, 1.0]]))
        assert np.allclose(out.data, [[0.5, 0.5]])

    def test_masked_softmax_properties(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.standard_normal((4, 6)))
        mask = (rng.random((4, 6)) < 0.6).astype(float)
        mask[:, 0] = 1.0  # no fully masked rows
        out = T.masked_softmax(x, mask).data
        assert np.all(out >= 0.0)
        assert np.all(out[mask == 0.0] == 0.0)
        assert np.allclose(out.sum(axis=-1), 1.0, atol=1e-6)

    def test_masked_softmax_rejects_fully_masked_row(self):
        with pytest.raises(ValueError, match="fully masked"):
            T.masked_softmax(Tensor(np.ones((2, 3))),
                             np.array([[1, 1, 1], [0, 0, 0]], dtype=float))

    def test_shape_mismatch_reports_both_shapes(self):
        with pytest.raises(ValueError) as err:
            T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))
        assert "(2, 3)" in str(err.value) and "(4,)" in str(err.value)

    def test_rich_broadcast_rejected(self):
        with pytest.raises(ValueError):
            T.mul(Tensor(np.ones((2, 1, 3))), Tensor(np.ones((2, 4, 3))))

    def test_trailing_and_scalar_broadcast_allowed(self):
        out = T.add(Tensor(np.ones((2, 4, 3))), Tensor(np.ones(3)))
        assert out.shape == (2, 4, 3)
        out = T.mul(Tensor(np.ones((2, 3))), 2.5)
        assert np.all(out.data == 2.5)

    def test_apply_primitive_dispatch(self):
        x = Tensor(np.array([[1.0, -1.0]]))
        out = T.apply_primitive("relu", [x])
        assert np.allclose(out.data, [[1.0, 0.0]])
        with pytest.raises(ValueError, match="unknown primitive"):
            T.apply_primitive("fft", [x])

    def test_forward_replay_is_bitwise_deterministic(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((3, 5)).astype(np.float32)
        w = rng.standard_normal((5, 4)).astype(np.float32)

        def run():
            h = T.relu(T.matmul(Tensor(x), Tensor(w)))
            return T.reduce_sum(T.tanh(h)).data.copy()

        assert np.array_equal(run(), run())


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = Tensor(randn(2, 5), requires_grad=True)
        backward(T.reduce_sum(x))
        assert np.array_equal(x.grad, np.ones((2, 5)))

    def test_elementwise_square_gradient(self):
        x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        backward(T.reduce_sum(T.mul(x, x)))
        assert np.allclose(x.grad, [2.0, 4.0, 6.0])

    def test_non_scalar_loss_rejected(self):
        x = Tensor(randn(3), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            backward(T.mul(x, 2.0))

    def test_three_layer_composite_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        w1 = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
        w2 = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
        x = Tensor(rng.standard_normal((2, 4)), requires_grad=True)

        def f(*_):
            h = T.tanh(T.matmul(x, w1))
            h = T.sigmoid(T.matmul(h, w2))
            return T.reduce_sum(T.mul(h, h))

        assert check_gradients(f, [x, w1, w2]) < 1e-7

    def test_gradient_map_zero_for_unreached_parameters(self):
        used = Parameter("used", Tensor(randn(3), requires_grad=True))
        unused = Parameter("unused", Tensor(randn(2), requires_grad=True))
        grads = backward(T.reduce_sum(T.mul(used.tensor, used.tensor)),
                         parameters=[used, unused])
        assert np.allclose(grads["used"], 2 * used.data)
        assert np.array_equal(grads["unused"], np.zeros(2))

    def test_gradients_accumulate_across_uses(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        backward(T.add(T.reduce_sum(T.mul(x, x)), T.reduce_sum(x)))
        assert np.allclose(x.grad, [5.0])  # 2x + 1


class TestCheckGradients:
    def test_quadratic_is_exact_to_roundoff(self):
        x = Tensor(randn(6, seed=5), requires_grad=True)
        err = check_gradients(lambda t: T.reduce_sum(T.mul(t, t)), x)
        assert err < 1e-7

    def test_rejects_non_scalar_function(self):
        x = Tensor(randn(3), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            check_gradients(lambda t: T.mul(t, 2.0), x)

    @pytest.mark.parametrize("name,fn", [
        ("sigmoid", T.sigmoid), ("tanh", T.tanh), ("relu", T.relu),
        ("exp", T.exp),
        ("log_softmax", lambda t: T.log_softmax(t, axis=-1)),
    ])
    def test_primitive_gradients_at_ten_random_points(self, name, fn):
        for trial in range(10):
            x = Tensor(randn(2, 4, seed=100 + trial) + 0.05, requires_grad=True)
            weights = randn(2, 4, seed=200 + trial)
            err = check_gradients(
                lambda t: T.reduce_sum(T.mul(fn(t), Tensor(weights))), x)
            assert err < 1e-5, f"{name} trial {trial}: {err}"

    def test_binary_primitive_gradients_at_ten_random_points(self):
        other = Tensor(randn(2, 4, seed=999))
        cases = {
            "add": lambda t: T.add(t, other),
            "sub": lambda t: T.sub(other, t),
            "mul": lambda t: T.mul(t, other),
            "matmul": lambda t: T.matmul(t, Tensor(randn(4, 3, seed=998))),
        }
        for name, fn in cases.items():
            for trial in range(10):
                x = Tensor(randn(2, 4, seed=500 + trial), requires_grad=True)
                weights = randn(*fn(Tensor(x.data)).shape, seed=600 + trial)
                err = check_gradients(
                    lambda t: T.reduce_sum(T.mul(fn(t), Tensor(weights))), x)
                assert err < 1e-5, f"{name} trial {trial}: {err}"

    def test_embedding_gradient_scatters_into_table(self):
        ids = np.array([[0, 2, 1], [2, 2, 0]])
        for trial in range(10):
            table = Tensor(randn(4, 3, seed=700 + trial), requires_grad=True)
            weights = randn(2, 3, 3, seed=800 + trial)
            err = check_gradients(
                lambda t: T.reduce_sum(T.mul(T.embedding(t, ids),
                                             Tensor(weights))), table)
            assert err < 1e-5, f"trial {trial}: {err}"
        table = Tensor(randn(4, 3), requires_grad=True)
        T.backward(T.reduce_sum(T.embedding(table, ids)))
        assert np.array_equal(table.grad[3], np.zeros(3))  # unused row

    @pytest.mark.parametrize("name,fn", [
        ("log", lambda t: T.log(t)),
        ("masked_softmax", lambda t: T.masked_softmax(
            t, np.array([[1, 1, 1, 0], [1, 1, 0, 0]], dtype=float))),
        ("max", lambda t: T.reduce_max(t, axis=1)),
        ("mean", lambda t: T.reduce_mean(t, axis=0)),
        ("concat_getitem", lambda t: T.concat([t[:, :2], t[:, 2:]], axis=1)),
        ("reshape_transpose", lambda t: T.transpose(T.reshape(t, (4, 2)))),
    ])
    def test_structural_gradients_at_ten_random_points(self, name, fn):
        for trial in range(10):
            base = np.abs(randn(2, 4, seed=300 + trial)) + 0.5
            x = Tensor(base, requires_grad=True)
            weights = randn(*fn(Tensor(base)).shape, seed=400 + trial)
            err = check_gradients(
                lambda t: T.reduce_sum(T.mul(fn(t), Tensor(weights))), x)
            assert err < 1e-5, f"{name} trial {trial}: {err}"


class TestMaskingInvariance:
    def test_padding_leaves_real_positions_unchanged(self):
        rng = np.random.default_rng(21)
        x = rng.standard_normal((2, 3))
        mask = np.ones((2, 3))
        out = T.masked_softmax(Tensor(x), mask).data
        x_pad = np.concatenate([x, rng.standard_normal((2, 4))], axis=1)
        mask_pad = np.concatenate([mask, np.zeros((2, 4))], axis=1)
        out_pad = T.masked_softmax(Tensor(x_pad), mask_pad).data
        assert np.allclose(out, out_pad[:, :3], atol=1e-6)
        assert np.all(out_pad[:, 3:] == 0.0)


class TestDropout:
    def test_eval_mode_is_identity(self):
        x = Tensor(randn(4, 4))
        assert T.dropout(x, 0.8, np.random.default_rng(0), train=False) is x

    def test_inverted_scaling_preserves_mean(self):
        rng = np.random.default_rng(2)
        x = Tensor(np.ones((400, 50)))
        out = T.dropout(x, 0.8, rng, train=True)
        kept = out.data[out.data != 0]
        assert np.allclose(kept, 1.0 / 0.8)
        assert abs(out.data.mean() - 1.0) < 0.02


class TestParamRegistry:
    def test_duplicate_names_rejected(self):
        reg = T.ParamRegistry(np.random.default_rng(0))
        reg.xavier("w", (3, 3))
        with pytest.raises(ValueError, match="duplicate"):
            reg.zeros("w", (3,))

    def test_dtype_applies(self):
        reg = T.ParamRegistry(np.random.default_rng(0), dtype=np.float64)
        p = reg.xavier("w", (3, 3))
        assert p.data.dtype == np.float64
