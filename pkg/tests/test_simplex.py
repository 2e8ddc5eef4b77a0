import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simplexcast.errors import AllZeroMass, DimensionMismatch, NegativeMass, ZeroComponent
from simplexcast.simplex import (
    SimplexSeries,
    convex_mix,
    helmert_basis,
    ilr_forward,
    ilr_inverse,
    mean_support,
    normalize,
    smooth,
    std_support,
)

from conftest import random_dist


class TestNormalize:
    def test_symmetric(self):
        np.testing.assert_allclose(normalize([2, 2]), [0.5, 0.5])

    def test_exact(self):
        np.testing.assert_allclose(normalize([1, 0, 0, 3]), [0.25, 0, 0, 0.75])

    def test_all_zero(self):
        with pytest.raises(AllZeroMass):
            normalize([0, 0])

    def test_negative(self):
        with pytest.raises(NegativeMass):
            normalize([1, -1])


class TestSmooth:
    def test_closed_form(self):
        out = smooth(np.array([1.0, 0.0]), 1e-8)
        np.testing.assert_allclose(out, [(1 + 1e-8) / (1 + 2e-8), 1e-8 / (1 + 2e-8)])

    def test_uniform_fixed_point(self):
        np.testing.assert_allclose(smooth(np.array([0.5, 0.5]), 0.3), [0.5, 0.5])

    def test_hand_arithmetic(self):
        out = smooth(np.array([0.0, 0.0, 1.0]), 0.01)
        np.testing.assert_allclose(out, [0.01 / 1.03, 0.01 / 1.03, 1.01 / 1.03])

    def test_monotone_in_eps(self, rng):
        p = random_dist(rng, 5)
        mins = [smooth(p, e).min() for e in [1e-8, 1e-6, 1e-4, 1e-2, 1e-1]]
        assert all(a <= b for a, b in zip(mins, mins[1:]))


class TestConvexMix:
    def test_identity_endpoints(self, rng):
        a, b = random_dist(rng, 4), random_dist(rng, 4)
        np.testing.assert_array_equal(convex_mix(a, b, 1.0), a)
        np.testing.assert_array_equal(convex_mix(a, b, 0.0), b)

    def test_exact(self):
        np.testing.assert_allclose(
            convex_mix(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 0.3), [0.3, 0.7]
        )

    def test_symmetry(self, rng):
        a, b = random_dist(rng, 6), random_dist(rng, 6)
        np.testing.assert_array_equal(convex_mix(a, b, 0.25), convex_mix(b, a, 0.75))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            convex_mix(np.array([0.5, 0.5]), np.array([1 / 3] * 3), 0.5)


class TestIlr:
    def test_basis_orthonormal(self):
        for d in [2, 3, 5, 9]:
            b = helmert_basis(d)
            np.testing.assert_allclose(b @ b.T, np.eye(d - 1), atol=1e-12)

    def test_uniform_maps_to_zero(self):
        z = ilr_forward(np.full(5, 0.2))
        np.testing.assert_allclose(z, 0, atol=1e-12)

    def test_d2_closed_form(self):
        a = 0.7
        z = ilr_forward(np.array([a, 1 - a]))
        np.testing.assert_allclose(z, [np.log(a / (1 - a)) / np.sqrt(2)])

    def test_round_trip(self, rng):
        for d in [2, 3, 7, 12]:
            for _ in range(20):
                p = smooth(random_dist(rng, d), 1e-4)
                back = ilr_inverse(ilr_forward(p), d)
                assert np.abs(back - p).sum() < 1e-10

    def test_zero_component(self):
        with pytest.raises(ZeroComponent):
            ilr_forward(np.array([1.0, 0.0]))

    def test_inverse_zero_is_uniform(self):
        np.testing.assert_allclose(ilr_inverse(np.zeros(3), 4), np.full(4, 0.25))

    def test_large_magnitude_concentrates(self):
        p = ilr_inverse(np.array([50.0, 0.0]), 3)
        assert abs(p.sum() - 1) < 1e-12
        assert p.max() > 0.999


class TestSupportMoments:
    def test_point_mass(self):
        p = np.zeros(5)
        p[3] = 1.0
        assert mean_support(p) == 4.0
        assert std_support(p) == 0.0

    def test_uniform_d3(self):
        assert mean_support(np.full(3, 1 / 3)) == pytest.approx(2.0)

    def test_symmetric_mean(self):
        assert mean_support(np.array([0.5, 0.0, 0.5])) == pytest.approx(2.0)
        assert std_support(np.array([0.5, 0.0, 0.5])) == pytest.approx(1.0)

    def test_uniform_d2_std(self):
        assert std_support(np.array([0.5, 0.5])) == pytest.approx(0.5)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 8), st.integers(0, 10**6), st.floats(0, 1))
def test_closure_fuzz(d, seed, lam):
    rng = np.random.default_rng(seed)
    raw = rng.gamma(0.5, 1.0, size=d) + 1e-12
    p = normalize(raw)
    q = normalize(rng.gamma(0.5, 1.0, size=d) + 1e-12)
    for v in [p, smooth(p, 1e-8), convex_mix(p, q, lam)]:
        assert np.all(v >= 0)
        assert abs(v.sum() - 1.0) <= 1e-9


class TestSimplexSeries:
    def test_default_mask(self):
        s = SimplexSeries("a", False, np.full((4, 3), 1 / 3))
        assert s.loss_mask.shape == (3,)
        assert s.loss_mask.all()

    def test_bad_mask_length(self):
        with pytest.raises(DimensionMismatch):
            SimplexSeries("a", False, np.full((4, 3), 1 / 3), np.ones(2, dtype=bool))
