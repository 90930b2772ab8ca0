import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grn_lab import hbq
from grn_lab.kernels import available_backends, get_backend
from grn_lab.numerics import Rng


def _uniform_open(rng: Rng, n: int) -> np.ndarray:
    bound = 1.0 - 2.0**-20
    return np.clip(rng.uniform((n,)) * 2.0 - 1.0, -bound, bound)


class TestBoundFeatures:
    def test_zero_maps_to_zero(self):
        assert hbq.bound_features(np.array([0.0]))[0] == 0.0

    def test_saturation_nudged_inside(self):
        out = hbq.bound_features(np.array([50.0, -50.0, 1e6]))
        assert np.all(np.abs(out) < 1.0)
        assert out[0] == 1.0 - 2.0**-20

    def test_odd_symmetry(self):
        x = np.linspace(-3, 3, 13)
        np.testing.assert_allclose(hbq.bound_features(x), -hbq.bound_features(-x))

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            hbq.bound_features(np.array([np.nan]))


class TestQuantize:
    def test_hand_trace_point_three(self):
        # 0.3 > 0 so round 1 emits 1; the center moves to 0.5 and 0.3 <= 0.5
        # emits 0.
        q = hbq.quantize(np.array([0.3]), 2)
        np.testing.assert_array_equal(q.planes[0], [True, False])

    def test_tie_at_every_center_goes_low(self):
        q = hbq.quantize(np.array([0.0]), 3)
        # 0 <= 0 -> 0; center -0.5; 0 > -0.5 -> 1; center -0.25; 0 > -0.25 -> 1
        np.testing.assert_array_equal(q.planes[0], [False, True, True])

    def test_all_ones_codeword(self):
        q = hbq.quantize(np.array([0.9375]), 4)
        assert q.planes[0].all()

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            hbq.quantize(np.array([1.0]), 2)
        with pytest.raises(ValueError):
            hbq.quantize(np.array([-1.5]), 2)
        with pytest.raises(ValueError):
            hbq.quantize(np.array([0.5]), 17)

    def test_prefix_stability(self):
        # The first m planes never depend on how many total rounds run.
        x = _uniform_open(Rng(5), 4096)
        q8 = hbq.quantize(x, 8)
        for m in (1, 3, 5):
            qm = hbq.quantize(x, m)
            np.testing.assert_array_equal(q8.planes[..., :m], qm.planes)


class TestDequantize:
    def test_examples(self):
        assert hbq.dequantize(hbq.BitPlanes(np.array([[True, False]])))[0] == 0.25
        assert hbq.dequantize(hbq.BitPlanes(np.array([[False]])))[0] == -0.5
        assert hbq.dequantize(hbq.BitPlanes(np.array([[True] * 4])))[0] == 0.9375

    def test_truncated_full_equals_dequantize(self):
        x = _uniform_open(Rng(1), 257)
        q = hbq.quantize(x, 6)
        np.testing.assert_array_equal(hbq.dequantize_truncated(q, 6), hbq.dequantize(q))

    def test_truncated_first_round_of_point_three(self):
        q = hbq.quantize(np.array([0.3]), 4)
        assert hbq.dequantize_truncated(q, 1)[0] == 0.5

    def test_truncation_error_bound(self):
        x = _uniform_open(Rng(2), 100_000)
        q = hbq.quantize(x, 8)
        for m in range(1, 9):
            err = np.abs(x - hbq.dequantize_truncated(q, m))
            assert err.max() < 2.0**-m

    def test_rounds_validated(self):
        q = hbq.quantize(np.array([0.1]), 3)
        with pytest.raises(ValueError):
            hbq.dequantize_truncated(q, 0)
        with pytest.raises(ValueError):
            hbq.dequantize_truncated(q, 4)


class TestErrorBoundAndFixedPoints:
    @pytest.mark.parametrize("rounds", [1, 2, 4, 8, 12])
    def test_error_bound(self, rounds):
        x = _uniform_open(Rng(rounds), 50_000)
        err = np.abs(x - hbq.dequantize(hbq.quantize(x, rounds)))
        assert err.max() < 2.0**-rounds

    def test_codewords_are_fixed_points(self):
        for rounds in (1, 2, 3, 6):
            codes = np.arange(1 << rounds)
            planes = hbq.unpack_indices(codes, rounds)
            values = hbq.dequantize(planes)
            again = hbq.quantize(values, rounds)
            assert again == planes

    def test_order_preservation(self):
        x = np.sort(_uniform_open(Rng(77), 5000))
        codes = hbq.pack_indices(hbq.quantize(x, 6)).values
        assert np.all(np.diff(codes) >= 0)

    def test_monotone_envelope_of_max_and_mean(self):
        # Aggregate truncation errors shrink with more rounds even though
        # individual samples may not (see the acceptance notes).
        x = _uniform_open(Rng(3), 50_000)
        q = hbq.quantize(x, 10)
        maxes, means = [], []
        for m in range(1, 11):
            err = np.abs(x - hbq.dequantize_truncated(q, m))
            maxes.append(err.max())
            means.append(err.mean())
        assert all(a > b for a, b in zip(maxes, maxes[1:]))
        assert all(a > b for a, b in zip(means, means[1:]))


class TestPackUnpack:
    def test_msb_first(self):
        q = hbq.BitPlanes(np.array([[True, False]]))
        assert hbq.pack_indices(q).values[0] == 2

    def test_zeros_and_ones(self):
        assert hbq.pack_indices(hbq.BitPlanes(np.zeros((3, 5), dtype=bool))).values.max() == 0
        assert hbq.pack_indices(hbq.BitPlanes(np.ones((1, 4), dtype=bool))).values[0] == 15

    def test_unpack_example(self):
        planes = hbq.unpack_indices(np.array([2]), 2)
        np.testing.assert_array_equal(planes.planes[0], [True, False])

    def test_unpack_range_check(self):
        with pytest.raises(ValueError):
            hbq.unpack_indices(np.array([4]), 2)

    @given(st.integers(min_value=1, max_value=12), st.integers(min_value=0, max_value=2**32))
    @settings(max_examples=150)
    def test_round_trip(self, rounds, seed):
        planes = Rng(seed).uniform((40, rounds)) < 0.5
        q = hbq.BitPlanes(planes)
        assert hbq.unpack_indices(hbq.pack_indices(q)) == q


class TestFlattenBits:
    def test_single_channel(self):
        q = hbq.BitPlanes(np.array([[[True, False]]]))  # grid (1, 1 channel), rounds 2
        np.testing.assert_array_equal(hbq.flatten_bits(q).values, [[1, 0]])

    def test_flat_length(self):
        q = hbq.BitPlanes(Rng(0).uniform((2, 3, 5, 4)) < 0.5)
        assert hbq.flatten_bits(q).values.shape == (2, 3, 5 * 4)

    @given(st.integers(min_value=1, max_value=8), st.integers(min_value=1, max_value=6))
    @settings(max_examples=100)
    def test_round_trip(self, rounds, channels):
        planes = Rng(rounds * 31 + channels).uniform((7, channels, rounds)) < 0.5
        q = hbq.BitPlanes(planes)
        assert hbq.unflatten_bits(hbq.flatten_bits(q), channels, rounds) == q

    def test_extent_mismatch(self):
        with pytest.raises(ValueError):
            hbq.unflatten_bits(np.zeros((3, 7), dtype=np.int64), channels=2, rounds=4)


class TestSte:
    def test_forward_equals_quantized(self):
        x = _uniform_open(Rng(0), 100)
        xq = hbq.dequantize(hbq.quantize(x, 3))
        np.testing.assert_allclose(hbq.ste_combine(x, xq), xq, atol=1e-7)

    def test_identity_gradient_against_finite_differences(self):
        # Loss through the pass-through with the residual held constant; the
        # analytic gradient under the identity convention is g'(output).
        x = _uniform_open(Rng(4), 20)
        xq = hbq.dequantize(hbq.quantize(x, 3))
        residual = xq - x
        weights = np.linspace(0.5, 1.5, x.size)

        def loss(v):
            out = residual + v  # residual frozen at the base point
            return float(np.sum(weights * out * out))

        analytic = 2 * weights * xq
        eps = 1e-6
        numeric = np.empty_like(x)
        for i in range(x.size):
            up = x.copy()
            down = x.copy()
            up[i] += eps
            down[i] -= eps
            numeric[i] = (loss(up) - loss(down)) / (2 * eps)
        rel = np.abs(analytic - numeric) / np.maximum(np.abs(analytic), 1e-8)
        assert rel.max() < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            hbq.ste_combine(np.zeros(3), np.zeros(4))


@pytest.mark.skipif(len(available_backends()) < 2, reason="numba unavailable")
class TestBackendsAgree:
    def test_all_kernels(self):
        a, b = get_backend("numpy"), get_backend("numba")
        x = _uniform_open(Rng(123), 10_000)
        for rounds in (1, 4, 9, 16):
            qa, qb = a.quantize(x, rounds), b.quantize(x, rounds)
            np.testing.assert_array_equal(qa, qb)
            np.testing.assert_array_equal(a.dequantize(qa, rounds), b.dequantize(qb, rounds))
            m = max(1, rounds // 2)
            np.testing.assert_array_equal(a.dequantize(qa, m), b.dequantize(qb, m))
            pa, pb = a.pack(qa), b.pack(qb)
            np.testing.assert_array_equal(pa, pb)
            np.testing.assert_array_equal(a.unpack(pa, rounds), b.unpack(pb, rounds))
