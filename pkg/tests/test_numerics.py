import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grn_lab.errors import NumericError
from grn_lab.numerics import Rng, cross_entropy, grad_check, softmax


class TestSoftmax:
    def test_symmetric_two(self):
        np.testing.assert_allclose(softmax(np.array([0.0, 0.0])), [0.5, 0.5])

    def test_symmetric_four_with_temperature(self):
        out = softmax(np.array([1.0, 1.0, 1.0, 1.0]), temperature=0.7)
        np.testing.assert_allclose(out, [0.25] * 4)

    def test_two_zero_closed_form(self):
        # e^2 / (e^2 + 1) and its complement
        out = softmax(np.array([2.0, 0.0]))
        e2 = np.exp(2.0)
        np.testing.assert_allclose(out, [e2 / (e2 + 1), 1 / (e2 + 1)], atol=1e-12)
        np.testing.assert_allclose(out, [0.8808, 0.1192], atol=5e-5)

    def test_temperature_must_be_positive(self):
        with pytest.raises(ValueError):
            softmax(np.zeros(3), temperature=0.0)
        with pytest.raises(ValueError):
            softmax(np.zeros(3), temperature=-1.0)

    @given(
        st.lists(st.floats(min_value=-50, max_value=50), min_size=2, max_size=16),
        st.floats(min_value=0.1, max_value=10.0),
    )
    @settings(max_examples=200)
    def test_slices_sum_to_one(self, logits, temperature):
        out = softmax(np.array(logits), temperature)
        assert abs(out.sum() - 1.0) < 1e-9
        assert out.min() >= 0

    def test_last_axis_only(self):
        out = softmax(np.zeros((3, 4, 5)))
        np.testing.assert_allclose(out.sum(axis=-1), np.ones((3, 4)), atol=1e-12)


class TestCrossEntropy:
    def test_uniform_logits_is_log_k(self):
        logits = np.zeros((7, 16))
        targets = np.arange(7) % 16
        assert abs(cross_entropy(logits, targets) - np.log(16)) < 1e-6
        assert abs(cross_entropy(logits, targets) - 2.7726) < 1e-4

    def test_margin_drives_loss_to_zero(self):
        losses = []
        for margin in (1.0, 5.0, 20.0):
            logits = np.zeros((4, 8))
            logits[np.arange(4), 2] = margin
            losses.append(cross_entropy(logits, np.full(4, 2)))
        assert losses[0] > losses[1] > losses[2]
        assert losses[2] < 1e-8

    def test_single_sample_closed_form(self):
        logits = np.log(np.array([[0.25, 0.75]]))
        assert abs(cross_entropy(logits, np.array([1])) - 0.28768) < 1e-5

    def test_out_of_range_target(self):
        with pytest.raises(IndexError):
            cross_entropy(np.zeros((2, 4)), np.array([0, 4]))
        with pytest.raises(IndexError):
            cross_entropy(np.zeros((2, 4)), np.array([-1, 0]))

    @given(st.integers(min_value=2, max_value=12), st.integers(min_value=1, max_value=8))
    @settings(max_examples=100)
    def test_nonnegative_and_constant_case(self, k, n):
        rng = np.random.default_rng(n * 100 + k)
        logits = rng.normal(size=(n, k)) * 3
        targets = rng.integers(0, k, n)
        assert cross_entropy(logits, targets) >= 0
        assert abs(cross_entropy(np.full((n, k), 1.7), targets) - np.log(k)) < 1e-12


class TestRng:
    def test_same_seed_same_stream(self):
        a, b = Rng(1234), Rng(1234)
        np.testing.assert_array_equal(a.uniform((100,)), b.uniform((100,)))
        np.testing.assert_array_equal(a.integers(17, (50,)), b.integers(17, (50,)))

    def test_different_seeds_differ(self):
        assert not np.array_equal(Rng(0).uniform((64,)), Rng(1).uniform((64,)))

    def test_uniform_mean(self):
        x = Rng(7).uniform((1_000_000,))
        assert abs(x.mean() - 0.5) < 0.002

    def test_uniform_range(self):
        x = Rng(3).uniform((100_000,))
        assert x.min() >= 0.0 and x.max() < 1.0

    def test_split_streams_are_independent_and_reproducible(self):
        children = Rng(42).split(3)
        again = Rng(42).split(3)
        for c, a in zip(children, again):
            np.testing.assert_array_equal(c.uniform((20,)), a.uniform((20,)))
        assert not np.array_equal(children[0].uniform((20,)), children[1].uniform((20,)))

    def test_draws_do_not_shift_splits(self):
        plain = Rng(9)
        drawn = Rng(9)
        drawn.uniform((10,))
        np.testing.assert_array_equal(plain.split(1)[0].uniform(5), drawn.split(1)[0].uniform(5))


class TestGradCheck:
    def test_quadratic(self):
        def f(x):
            return float(np.sum(x * x)), 2 * x

        assert grad_check(f, np.linspace(-2, 2, 11), eps=1e-5) < 1e-7

    def test_constant_function(self):
        def f(x):
            return 3.5, np.zeros_like(x)

        assert grad_check(f, np.ones(6), eps=1e-4) < 1e-8

    def test_two_layer_net_with_cross_entropy(self):
        # 50-parameter MLP (4x5 weights + 5 biases + 5x5 weights), softmax output.
        rng = np.random.default_rng(0)
        inputs = rng.normal(size=(5, 4))
        targets = rng.integers(0, 5, 5)

        def f(x):
            w1 = x[:20].reshape(4, 5)
            b1 = x[20:25]
            w2 = x[25:].reshape(5, 5)
            h = np.tanh(inputs @ w1 + b1)
            logits = h @ w2
            z = logits - logits.max(axis=1, keepdims=True)
            p = np.exp(z)
            p /= p.sum(axis=1, keepdims=True)
            n = len(targets)
            loss = -np.mean(np.log(p[np.arange(n), targets]))
            dlogits = p.copy()
            dlogits[np.arange(n), targets] -= 1
            dlogits /= n
            dw2 = h.T @ dlogits
            dh = dlogits @ w2.T
            dpre = dh * (1 - h * h)
            dw1 = inputs.T @ dpre
            db1 = dpre.sum(axis=0)
            return float(loss), np.concatenate([dw1.ravel(), db1, dw2.ravel()])

        x0 = np.random.default_rng(1).normal(size=50) * 0.5
        assert grad_check(f, x0, eps=1e-5) < 1e-4

    def test_eps_validated(self):
        def f(x):
            return float(x.sum()), np.ones_like(x)

        with pytest.raises(ValueError):
            grad_check(f, np.ones(3), eps=1e-2)

    def test_nonfinite_rejected(self):
        def f(x):
            return float("nan"), np.zeros_like(x)

        with pytest.raises(NumericError):
            grad_check(f, np.ones(3), eps=1e-5)
