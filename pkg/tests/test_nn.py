import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from hcvae.errors import DimensionError, NumericError
from hcvae.nn import (
    Activation,
    AdamState,
    DenseLayer,
    adam_step,
    dense_backward,
    dense_forward,
    finite_diff_gradcheck,
    init_dense,
)


def naive_dense(layer, x):
    out = np.zeros((x.shape[0], layer.out_dim))
    for b in range(x.shape[0]):
        for o in range(layer.out_dim):
            acc = layer.bias[o]
            for i in range(layer.in_dim):
                acc += x[b, i] * layer.weights[o, i]
            out[b, o] = max(acc, 0.0) if layer.activation is Activation.RELU else acc
    return out


def random_layer(rng, n_in, n_out, act):
    return DenseLayer(rng.normal(size=(n_out, n_in)), rng.normal(size=n_out), act)


class TestDenseForward:
    def test_identity(self):
        layer = DenseLayer(np.eye(2), np.zeros(2), "linear")
        np.testing.assert_array_equal(dense_forward(layer, np.array([[3.0, 4.0]])), [[3.0, 4.0]])

    def test_relu_clips(self):
        layer = DenseLayer(np.array([[1.0, 1.0]]), np.array([-5.0]), "relu")
        np.testing.assert_array_equal(dense_forward(layer, np.array([[2.0, 2.0]])), [[0.0]])

    @pytest.mark.parametrize("act", ["linear", "relu"])
    def test_matches_triple_loop(self, act):
        rng = np.random.default_rng(3)
        layer = random_layer(rng, 4, 3, act)
        x = rng.normal(size=(2, 4))
        np.testing.assert_allclose(dense_forward(layer, x), naive_dense(layer, x), rtol=1e-12, atol=1e-12)

    def test_shape_mismatch(self):
        layer = DenseLayer(np.eye(2), np.zeros(2))
        with pytest.raises(DimensionError):
            dense_forward(layer, np.ones((1, 3)))

    def test_bias_shape_checked(self):
        with pytest.raises(DimensionError):
            DenseLayer(np.eye(2), np.zeros(3))

    @settings(max_examples=50, deadline=None)
    @given(hnp.arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
                      elements=st.floats(-1e6, 1e6)))
    def test_linear_identity_property(self, x):
        d = x.shape[1]
        layer = DenseLayer(np.eye(d), np.zeros(d), "linear")
        np.testing.assert_array_equal(dense_forward(layer, x), x)


def numeric_layer_grads(layer, x, upstream, h=1e-5):
    """Central differences of sum(upstream * forward) w.r.t. W, b and x."""
    def f():
        return float(np.sum(upstream * dense_forward(layer, x)))

    out = []
    for arr in (layer.weights, layer.bias, x):
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f()
            flat[i] = orig - h
            down = f()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8))


class TestDenseBackward:
    def test_linear_all_ones(self):
        layer = DenseLayer(np.ones((3, 2)), np.zeros(3), "linear")
        batch = 4
        gw, gb, _ = dense_backward(layer, np.ones((batch, 2)), np.ones((batch, 3)))
        np.testing.assert_array_equal(gw, np.full((3, 2), batch))
        np.testing.assert_array_equal(gb, np.full(3, batch))

    def test_dead_relu(self):
        layer = DenseLayer(np.ones((3, 2)), np.full(3, -100.0), "relu")
        x = np.ones((2, 2))
        gw, gb, gx = dense_backward(layer, x, np.ones((2, 3)))
        assert not gx.any() and not gw.any() and not gb.any()

    @pytest.mark.parametrize("act", ["linear", "relu"])
    @pytest.mark.parametrize("batch", [1, 3, 8])
    def test_matches_finite_differences(self, act, batch):
        rng = np.random.default_rng(batch)
        layer = random_layer(rng, 5, 4, act)
        x = rng.normal(size=(batch, 5))
        upstream = rng.normal(size=(batch, 4))
        analytic = dense_backward(layer, x, upstream)
        numeric = numeric_layer_grads(layer, x, upstream)
        for a, n in zip(analytic, numeric):
            assert rel_err(a, n) < 1e-4

    def test_cached_output_gives_same_result(self):
        rng = np.random.default_rng(0)
        layer = random_layer(rng, 5, 4, "relu")
        x = rng.normal(size=(3, 5))
        g = rng.normal(size=(3, 4))
        a = dense_backward(layer, x, g)
        b = dense_backward(layer, x, g, dense_forward(layer, x))
        for u, v in zip(a, b):
            np.testing.assert_array_equal(u, v)

    def test_shape_mismatch(self):
        layer = DenseLayer(np.eye(2), np.zeros(2))
        with pytest.raises(DimensionError):
            dense_backward(layer, np.ones((1, 2)), np.ones((2, 2)))


class TestInit:
    def test_limits_and_zero_bias(self):
        layer = init_dense(640, 128, "relu", np.random.default_rng(0))
        limit = np.sqrt(6.0 / (640 + 128))
        assert np.abs(layer.weights).max() <= limit
        assert not layer.bias.any()
        assert layer.weights.dtype == np.float32

    def test_seeded(self):
        a = init_dense(8, 4, "linear", np.random.default_rng(5))
        b = init_dense(8, 4, "linear", np.random.default_rng(5))
        np.testing.assert_array_equal(a.weights, b.weights)


class TestAdam:
    def test_zero_gradient_is_noop(self):
        p = [np.array([1.0, -2.0]), np.array([[0.5]])]
        before = [a.copy() for a in p]
        state = AdamState.zeros_like(p)
        adam_step(p, [np.zeros(2), np.zeros((1, 1))], state)
        for a, b in zip(p, before):
            np.testing.assert_array_equal(a, b)
        assert state.t == 1

    def test_first_step_moves_by_lr(self):
        p = [np.array([0.0])]
        state = AdamState.zeros_like(p, lr=0.001)
        adam_step(p, [np.array([1.0])], state)
        # m_hat = 1, v_hat = 1 -> update = lr / (1 + eps)
        assert p[0][0] == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-12)

    def test_deterministic(self):
        def run():
            rng = np.random.default_rng(11)
            p = [rng.normal(size=(3, 3))]
            state = AdamState.zeros_like(p)
            for _ in range(25):
                adam_step(p, [2 * p[0] + rng.normal(size=(3, 3))], state)
            return p[0]

        np.testing.assert_array_equal(run(), run())

    def test_shape_mismatch(self):
        p = [np.zeros(2)]
        with pytest.raises(DimensionError):
            adam_step(p, [np.zeros(3)], AdamState.zeros_like(p))

    @settings(max_examples=40, deadline=None)
    @given(
        st.integers(0, 1000),
        st.floats(1e-5, 1.0),
        st.floats(0.0, 0.999),
        st.floats(0.0, 0.9999),
        hnp.arrays(np.float64, st.integers(1, 5), elements=st.floats(-10, 10)),
    )
    def test_zero_gradient_noop_any_fresh_state(self, t, lr, b1, b2, values):
        p = [values.copy()]
        state = AdamState.zeros_like(p, lr=lr, beta1=b1, beta2=b2)
        state.t = t
        adam_step(p, [np.zeros_like(values)], state)
        np.testing.assert_array_equal(p[0], values)


class TestGradcheck:
    def test_quadratic(self):
        p = [np.array([1.0, -2.0, 0.5])]
        err = finite_diff_gradcheck(lambda ps: (float(np.sum(ps[0] ** 2)), [2 * ps[0]]), p, 1e-5)
        assert err < 1e-6

    def test_planted_fault(self):
        p = [np.array([1.0, -2.0, 0.5])]
        err = finite_diff_gradcheck(lambda ps: (float(np.sum(ps[0] ** 2)), [4 * ps[0]]), p, 1e-5)
        assert err == pytest.approx(0.5, abs=1e-6)

    def test_params_restored(self):
        p = [np.array([1.0, -2.0, 0.5])]
        finite_diff_gradcheck(lambda ps: (float(np.sum(ps[0] ** 2)), [2 * ps[0]]), p, 1e-3)
        np.testing.assert_array_equal(p[0], [1.0, -2.0, 0.5])

    def test_non_finite_loss(self):
        p = [np.array([1.0])]
        with pytest.raises(NumericError):
            finite_diff_gradcheck(lambda ps: float("nan"), p, analytic=[np.array([0.0])])
