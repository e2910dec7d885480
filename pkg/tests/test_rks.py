import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from doublebasis.errors import DataError
from doublebasis.rks import (
    FeatureMap,
    apply_features,
    choose_feature_count,
    cosine_features,
    draw_feature_map,
    exact_rbf_kernel,
)


class TestDrawFeatureMap:
    def test_deterministic(self):
        a = draw_feature_map(4, 100, 1.5, seed=7)
        b = draw_feature_map(4, 100, 1.5, seed=7)
        np.testing.assert_array_equal(a.frequencies, b.frequencies)
        np.testing.assert_array_equal(a.phases, b.phases)
        assert a.checksum() == b.checksum()

    def test_seeds_differ(self):
        assert draw_feature_map(2, 10, 1.0, 0).checksum() != draw_feature_map(2, 10, 1.0, 1).checksum()

    def test_frequency_variance(self):
        fmap = draw_feature_map(3, 10**5, 2.0, seed=0)
        np.testing.assert_allclose(fmap.frequencies.var(axis=0), 0.25, atol=0.01)

    def test_phase_mean(self):
        fmap = draw_feature_map(1, 10**5, 1.0, seed=0)
        assert abs(fmap.phases.mean() - math.pi) < 0.02
        assert fmap.phases.min() >= 0 and fmap.phases.max() < 2 * math.pi

    def test_read_only(self):
        fmap = draw_feature_map(2, 8, 1.0, 0)
        with pytest.raises(ValueError):
            fmap.frequencies[0, 0] = 1.0

    @pytest.mark.parametrize("args", [(0, 5, 1.0), (2, 0, 1.0), (2, 5, 0.0), (2, 5, -1.0)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            draw_feature_map(*args, seed=0)

    def test_serialisation_round_trip(self):
        fmap = draw_feature_map(5, 64, 0.7, seed=123)
        back = FeatureMap.from_dict(fmap.to_dict())
        np.testing.assert_array_equal(back.frequencies, fmap.frequencies)

    def test_checksum_mismatch(self):
        d = draw_feature_map(5, 64, 0.7, seed=123).to_dict()
        d["checksum"] = "0" * 64
        with pytest.raises(DataError):
            FeatureMap.from_dict(d)


class TestApplyFeatures:
    def test_zero_frequency_zero_phase(self):
        np.testing.assert_allclose(cosine_features([0.3, -2.0], [[0.0, 0.0]], [0.0]), [math.sqrt(2)])

    def test_zero_frequency_quarter_phase(self):
        np.testing.assert_allclose(cosine_features([5.0], [[0.0]], [math.pi / 2]), [0.0], atol=1e-15)

    def test_kernel_at_unit_distance(self, rng):
        fmap = draw_feature_map(6, 4096, 1.0, seed=0)
        u = rng.normal(size=6)
        d = rng.normal(size=6)
        v = u + d / np.linalg.norm(d)
        approx = apply_features(fmap, u) @ apply_features(fmap, v)
        assert abs(approx - math.exp(-0.5)) < 0.05

    def test_batch_matches_rows(self, rng):
        fmap = draw_feature_map(3, 50, 1.0, seed=4)
        X = rng.normal(size=(6, 3))
        Z = fmap.transform(X)
        for x, z in zip(X, Z):
            np.testing.assert_allclose(fmap.transform(x), z, rtol=1e-13, atol=1e-15)

    def test_explicit_form_matches_map(self, rng):
        fmap = draw_feature_map(3, 50, 1.0, seed=4)
        x = rng.normal(size=3)
        np.testing.assert_allclose(cosine_features(x, fmap.frequencies, fmap.phases),
                                   fmap.transform(x), rtol=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            apply_features(draw_feature_map(3, 10, 1.0, 0), np.ones(4))
        with pytest.raises(ValueError):
            cosine_features(np.ones(2), np.zeros((3, 2)), np.zeros(2))

    @given(st.integers(1, 8), st.integers(1, 200), st.floats(0.1, 10),
           st.integers(0, 2**31), st.floats(-100, 100))
    def test_norm_bound(self, S, D, sigma, seed, shift):
        fmap = draw_feature_map(S, D, sigma, seed)
        x = np.random.default_rng(seed).normal(size=S) + shift
        z = fmap.transform(x)
        bound = math.sqrt(2.0 / D)
        assert np.all(np.abs(z) <= bound + 1e-15)
        assert np.linalg.norm(z) <= math.sqrt(2) + 1e-12

    def test_unbiased_single_feature(self, seed):
        fmap = draw_feature_map(4, 10**6, 1.3, seed=seed)
        rng = np.random.default_rng(seed)
        u, v = rng.normal(size=4), rng.normal(size=4) * 0.5
        # each product 2 cos(w.u + b) cos(w.v + b) is one unbiased draw
        draws = 2 * np.cos(fmap.frequencies @ u + fmap.phases) * np.cos(fmap.frequencies @ v + fmap.phases)
        se = draws.std(ddof=1) / math.sqrt(draws.size)
        assert abs(draws.mean() - exact_rbf_kernel(u, v, 1.3)) < 3 * se


class TestExactKernel:
    def test_identical(self):
        assert exact_rbf_kernel([1.0, 2.0], [1.0, 2.0], 0.3) == 1.0

    def test_bandwidth_distance(self):
        np.testing.assert_allclose(exact_rbf_kernel([0.0, 0.0], [0.0, 2.5], 2.5), 0.6065306597126334)

    def test_distance_two(self):
        np.testing.assert_allclose(exact_rbf_kernel([0.0], [2.0], 1.0), 0.1353352832366127)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            exact_rbf_kernel([0.0, 1.0], [0.0], 1.0)

    def test_broadcasting(self, rng):
        U = rng.normal(size=(5, 3))
        v = rng.normal(size=3)
        np.testing.assert_allclose(exact_rbf_kernel(U, v), [exact_rbf_kernel(u, v) for u in U])

    @given(st.floats(0, 20), st.floats(0, 20), st.floats(0.05, 10))
    def test_lipschitz(self, a, b, sigma):
        ka = exact_rbf_kernel([a], [0.0], sigma)
        kb = exact_rbf_kernel([b], [0.0], sigma)
        assert abs(ka - kb) <= math.exp(-0.5) * abs(a - b) / sigma + 1e-12


class TestChooseFeatureCount:
    def test_hundred(self):
        assert choose_feature_count(100) == 461

    def test_floor(self):
        assert choose_feature_count(2, c=0.1) == 16

    def test_thousand(self):
        assert choose_feature_count(1000) == 6908

    def test_rejects_tiny_n(self):
        with pytest.raises(ValueError):
            choose_feature_count(1)
