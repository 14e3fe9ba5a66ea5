import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ugae.errors import ModelMismatchError
from ugae.learner import (AdamW, Mlp, TrainConfig, WmseConfig, bce_loss,
                          quantile_threshold, train, wmse_loss, wmse_weights)


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


class TestMlp:
    def test_matches_numpy_forward(self):
        m = Mlp.init([5, 7, 3], "identity", seed=1)
        x = np.random.default_rng(0).normal(size=(11, 5))
        h = np.maximum(x @ m.weights[0] + m.biases[0], 0)
        np.testing.assert_allclose(m(x), h @ m.weights[1] + m.biases[1], rtol=1e-12)

    def test_logistic_range(self):
        m = Mlp.init([4, 8, 1], "logistic", seed=2)
        out = m(np.random.default_rng(0).normal(size=(100, 4)) * 50)
        assert np.all((out >= 0) & (out <= 1))

    def test_glorot_bounds(self):
        m = Mlp.init([57, 64, 1], seed=0)
        assert np.abs(m.weights[0]).max() <= math.sqrt(6 / (57 + 64))
        assert not any(b.any() for b in m.biases)

    def test_seeded(self):
        a, b = Mlp.init([6, 4, 2], seed=5), Mlp.init([6, 4, 2], seed=5)
        assert all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))

    def test_input_size_mismatch(self):
        with pytest.raises(ModelMismatchError):
            Mlp.init([5, 3, 1])(np.zeros((2, 4)))

    @pytest.mark.parametrize("output", ["identity", "logistic"])
    def test_gradients_finite_difference(self, output):
        rng = np.random.default_rng(3)
        m = Mlp.init([4, 6, 5, 2], output, seed=3)
        for b in m.biases:
            b[:] = rng.normal(size=b.shape) * 0.1
        x = rng.normal(size=(9, 4))
        target = rng.random((9, 2))
        w = rng.random(9) + 0.5

        def loss_fn(out):
            return wmse_loss(out, target, w)

        _, grads = m.forward_backward(x, loss_fn)
        for p, g in zip(m.params(), grads):
            num = numeric_grad(lambda: loss_fn(m(x))[0], p)
            np.testing.assert_allclose(g, num, rtol=1e-5, atol=1e-8)

    def test_bce_chain_finite_difference(self):
        rng = np.random.default_rng(4)
        m = Mlp.init([3, 5, 1], "logistic", seed=4)
        x = rng.normal(size=(12, 3))
        y = (rng.random((12, 1)) < 0.5).astype(float)
        _, grads = m.forward_backward(x, lambda out: bce_loss(out, y))
        for p, g in zip(m.params(), grads):
            num = numeric_grad(lambda: bce_loss(m(x), y)[0], p)
            np.testing.assert_allclose(g, num, rtol=1e-5, atol=1e-8)

    def test_batch_order_of_rows_is_irrelevant_to_forward(self):
        m = Mlp.init([5, 8, 2], seed=0)
        x = np.random.default_rng(0).normal(size=(20, 5))
        perm = np.random.default_rng(1).permutation(20)
        assert np.array_equal(m(x)[perm], m(x[perm]))


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        m = Mlp.init([57, 64, 64, 1], "logistic", seed=9)
        m.save(tmp_path / "m.ugam")
        back = Mlp.load(tmp_path / "m.ugam")
        assert back.sizes == m.sizes and back.output == "logistic"
        assert all(np.array_equal(p, q) for p, q in zip(back.params(), m.params()))
        raw = (tmp_path / "m.ugam").read_bytes()
        assert raw[:4] == b"UGAM"
        assert len(raw) == 4 + 5 + 4 * 4 + 2 + 8 * m.n_params

    def test_truncated(self):
        raw = Mlp.init([3, 2, 1]).to_bytes()
        with pytest.raises(ModelMismatchError):
            Mlp.from_bytes(raw[:-8])
        with pytest.raises(ModelMismatchError):
            Mlp.from_bytes(b"XXXX" + raw[4:])


class TestBce:
    def test_perfect_prediction_tiny(self):
        loss, _ = bce_loss(np.array([1.0, 0.0]), np.array([1.0, 0.0]))
        assert loss < 1e-6

    def test_worst_prediction_bounded(self):
        loss, _ = bce_loss(np.array([0.0]), np.array([1.0]))
        assert loss == pytest.approx(-math.log(1e-7))

    def test_half(self):
        loss, _ = bce_loss(np.full(4, 0.5), np.array([0, 1, 0, 1.0]))
        assert loss == pytest.approx(math.log(2))

    def test_gradient(self):
        rng = np.random.default_rng(0)
        p = rng.uniform(0.05, 0.95, 10)
        y = (rng.random(10) < 0.5).astype(float)
        _, g = bce_loss(p, y)
        np.testing.assert_allclose(g, numeric_grad(lambda: bce_loss(p, y)[0], p), rtol=1e-6)

    def test_empty(self):
        with pytest.raises(ValueError):
            bce_loss(np.zeros(0), np.zeros(0))


class TestWmse:
    def test_equal_weights_is_mse(self):
        rng = np.random.default_rng(0)
        p, t = rng.random((50, 3)), rng.random((50, 3))
        loss, _ = wmse_loss(p, t, np.ones(50))
        assert loss == pytest.approx(np.mean(np.sum((p - t) ** 2, axis=1)))

    def test_all_equal_errors_low_weight(self):
        w = wmse_weights(np.full(10, 3.0), WmseConfig(2, 0.5, 0.4))
        assert np.all(w == 0.5)

    def test_split_count(self):
        e = np.arange(10.0)
        w = wmse_weights(e, WmseConfig(2, 0.5, 0.4))
        # nearest rank: the 4th smallest is the threshold
        assert quantile_threshold(e, 0.4) == 3.0
        assert (w == 2).sum() == 6 and (w == 0.5).sum() == 4

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 100), min_size=1, max_size=200), st.floats(0.01, 0.99))
    def test_quantile_property(self, errs, q):
        e = np.array(errs)
        t = quantile_threshold(e, q)
        assert np.mean(e <= t) >= q - 1e-12
        w = wmse_weights(e, WmseConfig(2, 0.5, q))
        assert set(np.unique(w)) <= {0.5, 2.0}
        assert np.all(w[e > t] == 2.0) and np.all(w[e <= t] == 0.5)

    def test_rejects_bad_config(self):
        with pytest.raises(ValueError):
            WmseConfig(2, 0.5, 1.0)


def adamw_reference(p, g_seq, lr, b1=0.9, b2=0.999, eps=1e-8, wd=0.01):
    """Scalar AdamW with decoupled weight decay, written out per element."""
    p = list(p)
    m = [0.0] * len(p)
    v = [0.0] * len(p)
    for t, g in enumerate(g_seq, 1):
        for i in range(len(p)):
            m[i] = b1 * m[i] + (1 - b1) * g[i]
            v[i] = b2 * v[i] + (1 - b2) * g[i] ** 2
            mh = m[i] / (1 - b1 ** t)
            vh = v[i] / (1 - b2 ** t)
            p[i] = p[i] - lr * wd * p[i]
            p[i] = p[i] - lr * mh / (math.sqrt(vh) + eps)
    return p


class TestAdamW:
    def test_matches_reference(self):
        rng = np.random.default_rng(0)
        p = rng.normal(size=6)
        gs = [rng.normal(size=6) for _ in range(5)]
        expected = adamw_reference(p, gs, 0.01)
        opt = AdamW(lr=0.01)
        got = p.copy()
        for g in gs:
            opt.step([got], [g])
        np.testing.assert_allclose(got, expected, rtol=1e-12)

    def test_first_step_magnitude(self):
        opt = AdamW(lr=0.1, weight_decay=0.0)
        p = np.array([1.0, -2.0])
        opt.step([p], [np.array([3.0, -0.5])])
        np.testing.assert_allclose(p, [0.9, -1.9], rtol=1e-6)


class TestTrain:
    def _problem(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2000, 4))
        y = ((x[:, 0] + 0.5 * x[:, 1]) > 0).astype(float)[:, None]
        return x, y

    def test_loss_decreases(self):
        x, y = self._problem()
        m = Mlp.init([4, 16, 1], "logistic", seed=0)
        hist = train(m, len(x), lambda i: (x[i], y[i]), bce_loss,
                     TrainConfig(epochs=20, lr=0.01, batch_size=256))
        assert hist[-1] < hist[0] and hist[-1] < 0.2

    def test_deterministic(self):
        x, y = self._problem()
        runs = []
        for _ in range(2):
            m = Mlp.init([4, 16, 1], "logistic", seed=0)
            train(m, len(x), lambda i: (x[i], y[i]), bce_loss,
                  TrainConfig(epochs=3, lr=0.01, batch_size=256, samples_per_epoch=500))
            runs.append(m.to_bytes())
        assert runs[0] == runs[1]
