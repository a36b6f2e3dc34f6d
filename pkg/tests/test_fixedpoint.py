from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from basscalib.errors import AssumptionViolation, DomainError, EllipticityError, NonConvergence, RangeError
from basscalib.fixedpoint import (
    FixedPointProblem,
    IterationTrace,
    SolverConfig,
    apply_A,
    apply_G,
    contraction_bound,
    derivative_density,
    fixed_point_residual,
    iterate,
    oscillation_bound,
    support_hull_measure,
)
from basscalib.gauss_kernel import norm_pdf, norm_ppf
from basscalib.measures import (
    DiscreteMeasure,
    Mixture,
    PointMass,
    QuantileGrid,
    TruncatedNormal,
    Uniform,
    w_infinity_mod_shift,
)

from conftest import skewed_pair, test_problems

TWO_POINT_ATOM = float(norm_ppf(0.75) / math.sqrt(2))
PROBLEMS = test_problems()
SMALL = {k: v for k, v in PROBLEMS.items() if k != "mixture"}


def osc(v):
    return 0.5 * float(np.max(v) - np.min(v))


def random_state(p, data, scale=1.5):
    vals = data.draw(st.lists(st.floats(-scale, scale), min_size=p.n, max_size=p.n))
    return QuantileGrid(np.sort(vals), p.weights)


@pytest.fixture(scope="module")
def fixed_points():
    return {k: iterate(p, atol=1e-12)[0] for k, p in SMALL.items()}


class TestConfig:
    def test_round_trip(self):
        c = SolverConfig(atol=1e-9, gh_nodes=48)
        assert SolverConfig.from_dict(c.to_dict()) == c

    def test_unknown_key(self):
        with pytest.raises(DomainError):
            SolverConfig.from_dict({"tolerance": 1.0})

    def test_continuous_mu_is_quantized(self):
        p = FixedPointProblem(Uniform(-0.5, 0.5), Uniform(-1.0, 1.0), config=SolverConfig(grid_size=8))
        assert p.n == 8

    def test_bad_variance(self):
        with pytest.raises(DomainError):
            FixedPointProblem(PointMass(0.0), Uniform(-1, 1), t=0.0)


class TestAssumptions:
    def test_support_outside_range(self):
        p = FixedPointProblem(DiscreteMeasure([-1.0, 1.0]), Uniform(-1.0, 1.0))
        with pytest.raises(RangeError):
            p.check_assumptions()

    def test_not_in_convex_order(self):
        p = FixedPointProblem(DiscreteMeasure([-0.9, 0.9]), Uniform(-1.0, 1.0))
        with pytest.raises(AssumptionViolation):
            p.check_assumptions()

    def test_density_gap(self):
        nu = Mixture([Uniform(-2.0, -1.0), Uniform(1.0, 2.0)], [0.5, 0.5])
        with pytest.raises(AssumptionViolation):
            FixedPointProblem(PointMass(0.0), nu).check_assumptions()

    def test_reducible_pair(self):
        p = FixedPointProblem(quantize_uniform(4), Uniform(0.0, 1.0))
        with pytest.raises(AssumptionViolation, match="irreducible"):
            iterate(p)
        with pytest.warns(RuntimeWarning):
            p.check_assumptions(warn_only=True)


def quantize_uniform(n):
    return DiscreteMeasure((np.arange(n) + 0.5) / n)


class TestApplyG:
    @pytest.mark.parametrize("c", [-0.5, 0.0, 0.3])
    def test_bass_constants_are_fixed(self, c):
        p = FixedPointProblem(PointMass(0.0), Uniform(-1.0, 1.0))
        assert apply_G(p, [c]).values[0] == pytest.approx(c, abs=1e-12)

    def test_two_point_closed_form_is_fixed(self, two_point):
        Q = QuantileGrid([-TWO_POINT_ATOM, TWO_POINT_ATOM])
        assert np.allclose(apply_G(two_point, Q).values, Q.values, atol=1e-10)
        assert fixed_point_residual(two_point, Q) < 1e-10

    @pytest.mark.parametrize("b", [0.1, 0.25, 0.4])
    @pytest.mark.parametrize("a", [1.0, 2.0])
    def test_two_point_family(self, a, b):
        b = b * a
        p = FixedPointProblem(DiscreteMeasure([-b, b]), Uniform(-a, a))
        y = float(norm_ppf(0.5 + b / a) / math.sqrt(2))
        assert fixed_point_residual(p, [-y, y]) < 1e-10

    def test_output_carries_mu_weights(self):
        p = SMALL["skewed"]
        out = apply_G(p, p.initial_state())
        assert np.array_equal(out.weights, p.weights)
        assert np.all(np.diff(out.values) >= 0)

    def test_cdf_form_matches(self):
        p = SMALL["skewed"]
        Q = p.initial_state()
        law = apply_A(p, Q)
        y = apply_G(p, Q).values
        assert np.allclose(law.atoms, y)
        x = np.linspace(-3, 3, 31)
        # A F = F_mu o S_Q jumps exactly at the new atoms
        assert np.allclose(apply_A(p, Q, x), law.cdf(x), atol=1e-9)

    @pytest.mark.parametrize("name", sorted(SMALL))
    @given(data=st.data())
    def test_non_expansive(self, name, data):
        p = SMALL[name]
        Q, R = random_state(p, data), random_state(p, data)
        d_out = np.max(np.abs(apply_G(p, Q).values - apply_G(p, R).values))
        assert d_out <= np.max(np.abs(Q.values - R.values)) + 1e-9

    @pytest.mark.parametrize("name", sorted(SMALL))
    @given(data=st.data(), c=st.floats(-1.0, 1.0))
    def test_shift_equivariance(self, name, data, c):
        p = SMALL[name]
        Q = random_state(p, data)
        assert np.allclose(apply_G(p, Q.shifted(c)).values, apply_G(p, Q).values + c, atol=1e-9)
        x = np.linspace(-3, 3, 13)
        assert np.allclose(apply_A(p, Q.shifted(c), x + c), apply_A(p, Q, x), atol=1e-9)

    @pytest.mark.parametrize("name", sorted(SMALL))
    @given(data=st.data(), c=st.floats(0.0, 1.0))
    def test_monotone(self, name, data, c):
        p = SMALL[name]
        Q = random_state(p, data)
        bump = np.array(data.draw(st.lists(st.floats(0.0, c), min_size=p.n, max_size=p.n)))
        R = QuantileGrid(np.maximum.accumulate(Q.values + bump), p.weights)
        assert np.all(apply_G(p, R).values >= apply_G(p, Q).values - 1e-10)

    @pytest.mark.parametrize("name", ["two_point", "four_point", "tn_ten"])
    @given(data=st.data())
    def test_symmetry(self, name, data):
        p = SMALL[name]
        half = np.sort(data.draw(st.lists(st.floats(0.0, 1.5), min_size=p.n // 2, max_size=p.n // 2)))
        centre = 0.5 if name == "four_point" else 0.0
        Q = QuantileGrid(np.concatenate([centre - half[::-1], centre + half]), p.weights)
        out = apply_G(p, Q).values
        assert np.max(np.abs(out + out[::-1] - 2 * centre)) <= 1e-8

    @pytest.mark.parametrize("name", sorted(SMALL))
    @given(data=st.data())
    def test_range_is_bounded(self, name, data):
        # one step moves at most to the S-preimage of mu's extreme atoms
        p = SMALL[name]
        Q = random_state(p, data)
        out = apply_G(p, Q).values
        S = p.smap(Q)
        lo, hi = S.invert(np.array([p.x[0], p.x[-1]]))
        assert lo - 1e-9 <= out[0] and out[-1] <= hi + 1e-9
        assert np.all(np.isfinite(out))


class TestIterate:
    def test_two_point_from_asymmetric_start(self, two_point):
        Q, trace = iterate(two_point, [0.0, 0.1], atol=1e-12)
        d, _ = w_infinity_mod_shift(Q, QuantileGrid([-TWO_POINT_ATOM, TWO_POINT_ATOM]))
        assert d < 1e-10 and trace.converged

    def test_fixed_point_start_takes_one_verification_step(self, two_point):
        Q0 = QuantileGrid([-TWO_POINT_ATOM, TWO_POINT_ATOM])
        Q, trace = iterate(two_point, Q0, atol=1e-10)
        assert trace.iterations == 1 and trace.shift_residuals[0] <= 1e-10

    def test_gauge_is_mean_zero(self, two_point):
        Q, _ = iterate(two_point, [3.0, 3.1], atol=1e-12)
        assert Q.mean == pytest.approx(0.0, abs=1e-14)

    def test_non_convergence_carries_trace(self):
        p = SMALL["tn_ten"]
        with pytest.raises(NonConvergence) as info:
            iterate(p, max_iters=3, atol=1e-14)
        assert info.value.trace.iterations == 3 and not info.value.trace.converged

    @pytest.mark.parametrize("name", sorted(SMALL))
    def test_uniqueness_up_to_shift(self, name):
        p = SMALL[name]
        atol = 1e-10
        Q1, _ = iterate(p, atol=atol)
        Q2, _ = iterate(p, QuantileGrid(np.linspace(-2, 3, p.n), p.weights), atol=atol)
        assert w_infinity_mod_shift(Q1, Q2)[0] <= 10 * atol

    def test_mixture_from_several_starts(self):
        p = PROBLEMS["mixture"]
        u = p.initial_state().nodes
        starts = [None, norm_ppf(u), 6 * (u - 0.5), np.zeros(p.n)]
        finals = []
        for Q0 in starts:
            Q, trace = iterate(p, Q0, atol=1e-8)
            assert trace.iterations <= 25
            finals.append(Q)
        for Q in finals[1:]:
            assert w_infinity_mod_shift(Q, finals[0])[0] < 1e-7

    @pytest.mark.parametrize("name", sorted(SMALL))
    def test_rate_against_bounds(self, name, fixed_points):
        p = SMALL[name]
        _, trace = iterate(p, atol=1e-11)
        D = derivative_density(p, fixed_points[name])
        rate = trace.fitted_rate()
        assert rate <= contraction_bound(D) + 0.05
        assert rate <= 1 - D.eps * p.weights.min() + 1e-6
        assert rate <= oscillation_bound(D) + 0.05

    def test_trace_bookkeeping(self, two_point):
        _, trace = iterate(two_point, [0.0, 0.1], atol=1e-12)
        assert np.all(trace.residuals >= 0)
        assert np.all(trace.residuals >= trace.shift_residuals - 1e-15)
        r = trace.shift_residuals
        assert np.allclose(trace.rates[1:], r[1:] / r[:-1])
        assert trace.records[-1].distance_to_final == 0.0
        assert trace.iterations_to(1e-6) <= trace.iterations

    def test_trace_export(self, two_point, tmp_path):
        _, trace = iterate(two_point, [0.0, 0.1], atol=1e-12)
        text = trace.to_csv(tmp_path / "t.csv")
        header = text.splitlines()[0].split(",")
        assert header[:4] == ["iteration", "residual", "shift_residual", "rate"]
        assert "seconds" not in trace.to_csv(timings=False)
        back = IterationTrace.from_dict(json.loads(trace.to_json()))
        assert np.allclose(back.shift_residuals, trace.shift_residuals)
        assert back.converged

    def test_variance_scaling(self):
        mu, nu = skewed_pair()
        t = 0.37
        Q1, _ = iterate(FixedPointProblem(mu, nu, 1.0), atol=1e-12)
        Qt, _ = iterate(FixedPointProblem(mu, nu, t), atol=1e-12)
        assert np.allclose(Qt.values, math.sqrt(t) * Q1.values, atol=1e-9)


class TestDerivativeDensity:
    @pytest.mark.parametrize("name", sorted(SMALL))
    @given(data=st.data())
    def test_rows_integrate_to_one(self, name, data):
        p = SMALL[name]
        D = derivative_density(p, random_state(p, data))
        assert np.allclose(D.row_integrals, 1.0, atol=1e-8)
        assert np.all(D.matrix > 0) and D.eps > 0

    def test_uniform_target_gaussian_rows(self):
        p = SMALL["two_point"]
        Q = QuantileGrid([-0.3, 0.6])
        D = derivative_density(p, Q)
        y = apply_G(p, Q).values
        K = norm_pdf((y[:, None] - Q.values[None, :]) / math.sqrt(2))
        assert np.allclose(D.matrix, K / (K @ Q.weights)[:, None], atol=1e-12)

    @pytest.mark.parametrize("name", sorted(SMALL))
    @given(data=st.data())
    def test_directional_derivative(self, name, data):
        p = SMALL[name]
        Q = random_state(p, data, scale=1.0)
        Q = QuantileGrid(Q.values + np.linspace(0, 0.1, p.n), p.weights)
        f = np.array(data.draw(st.lists(st.floats(-1.0, 1.0), min_size=p.n, max_size=p.n)))
        h = 1e-5
        base = apply_G(p, Q).values
        bumped = p.smap(QuantileGrid(Q.values + h * f, p.weights)).invert(p.x)
        fd = (bumped - base) / h
        assert np.max(np.abs(fd - derivative_density(p, Q).apply(f))) <= 1e-4


class TestContractionBound:
    def test_equal_bounds(self):
        assert contraction_bound((1.0, 1.0)) == pytest.approx(2 / 3)

    def test_large_delta(self):
        assert contraction_bound((1.0, 1e12)) == pytest.approx(1.0, abs=1e-11)

    @pytest.mark.parametrize("eps", [0.0, -1.0])
    def test_ellipticity(self, eps):
        with pytest.raises(EllipticityError):
            contraction_bound((eps, 1.0))

    @given(st.floats(1e-6, 10.0), st.floats(0.0, 100.0))
    def test_in_unit_interval(self, eps, extra):
        q = contraction_bound((eps, eps + extra))
        assert 0.5 < q < 1.0 or q == pytest.approx(2 / 3)

    def test_two_point_observed_rate(self, two_point):
        Q, trace = iterate(two_point, [0.0, 0.1], atol=1e-13)
        assert trace.fitted_rate() <= contraction_bound(derivative_density(two_point, Q))


def test_support_hull_measure():
    assert support_hull_measure(QuantileGrid([-1.0, 0.0, 2.0])) == 3.0
    assert support_hull_measure(DiscreteMeasure([0.5])) == 0.0
