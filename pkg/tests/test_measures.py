from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from basscalib.errors import DomainError
from basscalib.measures import (
    DiscreteMeasure,
    Logistic,
    Mixture,
    Normal,
    PointMass,
    QuantileGrid,
    Restricted,
    TruncatedNormal,
    Uniform,
    convex_order_leq,
    irreducible_components,
    is_irreducible,
    ks_distance,
    measure_from_dict,
    quantize,
    symmetry_center,
    w1_distance,
    w_infinity,
    w_infinity_mod_shift,
)


@st.composite
def discrete_measures(draw, max_atoms=6, scale=3.0):
    n = draw(st.integers(1, max_atoms))
    atoms = draw(st.lists(st.floats(-scale, scale, allow_nan=False), min_size=n, max_size=n))
    raw = draw(st.lists(st.floats(0.05, 1.0), min_size=n, max_size=n))
    w = np.array(raw) / np.sum(raw)
    return DiscreteMeasure(atoms, w)


ANALYTIC = [
    Uniform(-1.0, 2.0),
    TruncatedNormal(0.3, 1.1, -2.0, 3.0),
    Normal(0.5, 2.0),
    Logistic(-0.2, 0.7),
    Mixture([Uniform(-2.0, 0.0), TruncatedNormal(1.0, 0.5, 0.0, 2.0)], [0.4, 0.6]),
    Restricted(Normal(0.0, 1.0), -1.0, 2.0),
]


class TestDiscreteMeasure:
    def test_canonicalization_merges_and_sorts(self):
        m = DiscreteMeasure([1.0, 0.0, 1.0 + 1e-15, 2.0], [0.25, 0.25, 0.25, 0.25])
        assert np.allclose(m.atoms, [0.0, 1.0, 2.0], rtol=0, atol=1e-14)
        assert np.allclose(m.weights, [0.25, 0.5, 0.25])

    def test_zero_weights_dropped(self):
        m = DiscreteMeasure([0.0, 1.0, 2.0], [0.5, 0.0, 0.5])
        assert len(m) == 2

    @pytest.mark.parametrize("weights", [[0.5, 0.6], [-0.1, 1.1], [1.0, float("nan")]])
    def test_bad_weights(self, weights):
        with pytest.raises(DomainError):
            DiscreteMeasure([0.0, 1.0], weights)

    def test_csv_round_trip(self, tmp_path):
        m = DiscreteMeasure([-1.5, 0.25, 3.0], [0.2, 0.3, 0.5])
        path = tmp_path / "m.csv"
        m.to_csv(path)
        assert DiscreteMeasure.from_csv(path) == m
        assert DiscreteMeasure.from_csv(m.to_csv()) == m

    def test_dict_round_trip(self):
        for m in [DiscreteMeasure([0.0, 1.0], [0.3, 0.7]), PointMass(2.0)] + ANALYTIC:
            assert measure_from_dict(m.to_dict()).to_dict() == m.to_dict()

    def test_unknown_type(self):
        with pytest.raises(DomainError):
            measure_from_dict({"type": "cauchy"})

    def test_cdf_and_quantile_exact(self):
        m = DiscreteMeasure([0.0, 1.0, 2.0], [0.2, 0.3, 0.5])
        assert m.cdf(1.0) == pytest.approx(0.5)
        assert m.cdf_left(1.0) == pytest.approx(0.2)
        assert m.quantile(0.2) == 0.0
        assert m.quantile(0.2000001) == 1.0
        assert m.mean == pytest.approx(1.3)

    @given(discrete_measures(), st.floats(1e-9, 1.0))
    def test_galois_connection(self, m, u):
        q = m.quantile(u)
        for x in np.concatenate([m.atoms, m.atoms - 1e-9, m.atoms + 1e-9]):
            assert (m.cdf(x) >= u) == (q <= x)


class TestAnalytic:
    @pytest.mark.parametrize("dist", ANALYTIC, ids=lambda d: type(d).__name__)
    def test_quantile_inverts_cdf(self, dist):
        u = np.linspace(0.01, 0.99, 41)
        assert np.allclose(dist.cdf(dist.quantile(u)), u, atol=1e-10)

    @pytest.mark.parametrize("dist", ANALYTIC, ids=lambda d: type(d).__name__)
    def test_cdf_monotone_with_limits(self, dist):
        lo, hi = dist.finite_range(1e-10)
        x = np.linspace(lo - 1, hi + 1, 2001)
        F = dist.cdf(x)
        assert np.all(np.diff(F) >= -1e-15)
        assert F[0] <= 1e-9 and F[-1] >= 1 - 1e-9

    @pytest.mark.parametrize("dist", ANALYTIC, ids=lambda d: type(d).__name__)
    def test_put_is_integrated_cdf(self, dist):
        lo, hi = dist.finite_range(1e-12)
        x = np.linspace(lo, hi, 20001)
        F = dist.cdf(x)
        trap = np.concatenate([[0.0], np.cumsum(np.diff(x) * (F[1:] + F[:-1]) / 2)])
        assert np.allclose(dist.put(x) - dist.put(lo), trap, atol=5e-6)

    @pytest.mark.parametrize("dist", ANALYTIC, ids=lambda d: type(d).__name__)
    def test_mean_matches_quantile_integral(self, dist):
        u = (np.arange(200000) + 0.5) / 200000
        assert dist.mean == pytest.approx(np.mean(dist.quantile(u)), abs=2e-4)

    def test_truncated_normal_density_floor(self):
        d = TruncatedNormal(0.0, 2.0, -3.0, 3.0)
        fmin, fmax = d.density_bounds()
        assert fmin == pytest.approx(d.pdf(3.0)) and fmax == pytest.approx(d.pdf(0.0))
        assert fmin > 0

    def test_quantile_derivative(self):
        d = TruncatedNormal(0.2, 0.8, -1.0, 2.0)
        u = np.linspace(0.05, 0.95, 7)
        h = 1e-6
        fd = (d.quantile(u + h) - d.quantile(u - h)) / (2 * h)
        assert np.allclose(d.quantile_derivative(u), fd, rtol=1e-6)


class TestQuantize:
    @pytest.mark.parametrize("n", [1, 2, 5, 17])
    def test_uniform_cell_means(self, n):
        m = quantize(Uniform(0.0, 1.0), n)
        assert np.allclose(m.atoms, (2 * np.arange(1, n + 1) - 1) / (2 * n))
        assert np.allclose(m.weights, 1.0 / n)

    @pytest.mark.parametrize("dist", ANALYTIC, ids=lambda d: type(d).__name__)
    def test_single_cell_is_mean(self, dist):
        m = quantize(dist, 1)
        assert m.atoms[0] == pytest.approx(dist.mean, abs=1e-12)

    def test_truncated_normal_against_riemann_oracle(self):
        d = TruncatedNormal(0.0, 1.0, -3.0, 3.0)
        m = quantize(d, 10)
        assert np.allclose(m.atoms, -m.atoms[::-1], atol=1e-12)
        fine = 10 * 20000
        u = (np.arange(fine) + 0.5) / fine
        oracle = d.quantile(u).reshape(10, -1).mean(axis=1)
        assert np.allclose(m.atoms, oracle, atol=1e-8)

    @pytest.mark.parametrize("dist", ANALYTIC, ids=lambda d: type(d).__name__)
    @pytest.mark.parametrize("n", [3, 12])
    def test_quantization_is_dominated(self, dist, n):
        assert convex_order_leq(quantize(dist, n), dist, 1e-9)

    def test_bad_n(self):
        with pytest.raises(DomainError):
            quantize(Uniform(0, 1), 0)


class TestConvexOrder:
    def test_examples(self):
        u = Uniform(-1.0, 1.0)
        assert convex_order_leq(u, u)
        assert convex_order_leq(PointMass(0.0), u)
        assert not convex_order_leq(u, PointMass(0.0))

    def test_mean_mismatch(self):
        assert not convex_order_leq(PointMass(0.1), Uniform(-1.0, 1.0))

    def test_components_of_point_in_uniform(self):
        comps = irreducible_components(PointMass(0.0), Uniform(-1.0, 1.0))
        assert len(comps) == 1
        assert comps[0].left == pytest.approx(-1.0) and comps[0].right == pytest.approx(1.0)
        assert comps[0].mu_mass == pytest.approx(1.0)

    def test_no_components_for_equal_laws(self):
        m = DiscreteMeasure([0.0, 1.0, 3.0], [0.2, 0.5, 0.3])
        assert irreducible_components(m, m) == []

    @pytest.mark.parametrize("n", [1, 2, 5, 10, 25])
    def test_quantized_uniform_has_n_components(self, n):
        comps = irreducible_components(quantize(Uniform(0.0, 1.0), n), Uniform(0.0, 1.0))
        assert len(comps) == n
        for k, c in enumerate(comps):
            assert c.left == pytest.approx(k / n, abs=1e-9)
            assert c.right == pytest.approx((k + 1) / n, abs=1e-9)

    @pytest.mark.parametrize("n", [3, 8])
    def test_quantized_positive_density_has_n_components(self, n):
        d = TruncatedNormal(0.0, 1.0, -2.0, 2.0)
        assert len(irreducible_components(quantize(d, n), d)) == n

    def test_components_need_convex_order(self):
        with pytest.raises(DomainError):
            irreducible_components(Uniform(-1, 1), PointMass(0.0))

    def test_reducible_pair(self):
        mu = DiscreteMeasure([-1.0, 1.0])
        nu = Mixture([Uniform(-2.0, 0.0), Uniform(0.0, 2.0)], [0.5, 0.5])
        comps = irreducible_components(mu, nu)
        assert len(comps) == 2 and not is_irreducible(mu, nu)
        assert comps[0].right == pytest.approx(0.0) and comps[1].left == pytest.approx(0.0)

    @given(discrete_measures())
    def test_potential_properties(self, m):
        x = np.linspace(-5, 5, 401)
        u = m.potential(x)
        assert np.all(u >= np.abs(x - m.mean) - 1e-12)
        slopes = np.diff(u) / np.diff(x)
        assert np.all(np.abs(slopes) <= 1 + 1e-9)
        assert np.all(np.diff(slopes) >= -1e-9)


class TestDistances:
    def test_w_infinity_examples(self):
        assert w_infinity(PointMass(0.0), PointMass(1.0)) == pytest.approx(1.0)
        assert w_infinity(Uniform(0, 1), Uniform(0, 1)) == pytest.approx(0.0, abs=1e-15)
        assert w_infinity(Uniform(0, 1), Uniform(0, 2)) == pytest.approx(1.0)

    def test_w_infinity_unbounded(self):
        with pytest.raises(DomainError):
            w_infinity(Normal(0, 1), Uniform(0, 1))

    def test_mod_shift_examples(self):
        assert w_infinity_mod_shift(PointMass(0.0), PointMass(1.0)) == pytest.approx((0.0, -1.0))
        a = QuantileGrid([0.0, 0.1, 0.2, 0.3])
        b = QuantileGrid([-0.2, 0.0, 0.1, 0.1])
        # differences a - b lie in [0.1, 0.2]
        d, c = w_infinity_mod_shift(a, b)
        assert (d, c) == pytest.approx((0.05, 0.15))
        a = DiscreteMeasure([0.0, 1.0])
        b = DiscreteMeasure([0.2, 0.4])
        assert w_infinity_mod_shift(a, b) == pytest.approx((0.4, 0.2))

    def test_translate_has_zero_distance(self):
        a = DiscreteMeasure([-1.0, 0.5, 2.0], [0.2, 0.3, 0.5])
        d, c = w_infinity_mod_shift(a.shifted(3.0), a)
        assert d == pytest.approx(0.0, abs=1e-12) and c == pytest.approx(3.0)

    def test_w_infinity_equal_weights_brute_force(self, rng):
        for _ in range(20):
            x, y = rng.normal(size=3), rng.normal(size=3)
            brute = min(max(abs(x[i] - y[p]) for i, p in enumerate(perm))
                        for perm in itertools.permutations(range(3)))
            assert w_infinity(DiscreteMeasure(x), DiscreteMeasure(y)) == pytest.approx(brute)

    @given(discrete_measures(), discrete_measures(), discrete_measures())
    def test_triangle_and_shift_bound(self, a, b, c):
        assert w_infinity(a, c) <= w_infinity(a, b) + w_infinity(b, c) + 1e-12
        assert w_infinity_mod_shift(a, b)[0] <= w_infinity(a, b) + 1e-12

    def test_w1_uniform_shift(self):
        assert w1_distance(Uniform(0, 1), Uniform(0.5, 1.5)) == pytest.approx(0.5, abs=1e-8)
        assert w1_distance(PointMass(0.0), DiscreteMeasure([-1.0, 1.0])) == pytest.approx(1.0)

    def test_ks_examples(self):
        d = Uniform(0.0, 1.0)
        m = 1000
        assert ks_distance((np.arange(m) + 0.5) / m, d) <= 1 / (2 * m) + 1e-12
        assert ks_distance([0.0], PointMass(0.0)) == 0.0

    def test_ks_uniform_draws(self):
        n = 100_000
        hits = sum(ks_distance(np.random.default_rng(s).random(n), Uniform(0, 1)) <= 1.95 / math.sqrt(n)
                   for s in range(20))
        assert hits >= 19

    def test_symmetry_center(self):
        assert symmetry_center(DiscreteMeasure([0.0, 1.0, 2.0], [0.25, 0.5, 0.25])) == pytest.approx(1.0)
        assert symmetry_center(DiscreteMeasure([0.0, 1.0, 3.0])) is None
        assert symmetry_center(TruncatedNormal(1.0, 2.0, -1.0, 3.0)) == pytest.approx(1.0)
