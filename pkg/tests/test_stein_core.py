import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from steinexp.family import capped_quadratic, stein_test_family
from steinexp.stein_core import (
    FPP_H1,
    BoundReport,
    PairStats,
    ParameterError,
    QuadratureError,
    SmoothingParams,
    TestFunction,
    exp_expectation,
    kolmogorov_bound,
    optimize_delta,
    smooth_bound,
    smoothing_exp_mean,
    smoothing_h,
    smoothing_test_function,
    solve_stein,
    stein_operator,
    verify_solution_bounds,
)

GRID = np.linspace(30.0 / 200, 30.0, 200)


def linear():
    return TestFunction(lambda x: x, np.ones_like, 1.0, 0.0)


def exp_decay():
    return TestFunction(lambda x: np.exp(-x), lambda x: -np.exp(-x), 1.0, 1.0)


# -- exp_expectation --------------------------------------------------------


def test_exp_expectation_simple_moments():
    assert exp_expectation(lambda x: x) == pytest.approx(1.0, abs=1e-12)
    assert exp_expectation(lambda x: np.ones_like(x)) == pytest.approx(1.0, abs=1e-12)
    # Gamma(3) = 2
    assert exp_expectation(lambda x: x**2) == pytest.approx(2.0, abs=1e-10)


@pytest.mark.parametrize("h", stein_test_family(), ids=lambda h: h.name)
def test_exp_expectation_matches_scipy_quad(h):
    pieces = sorted({0.0, *[b for b in h.breakpoints if b > 0]})
    ref = sum(integrate.quad(lambda x: float(h(x)) * math.exp(-x), lo, hi, epsabs=1e-13, limit=200)[0]
              for lo, hi in zip(pieces, pieces[1:]))
    ref += integrate.quad(lambda x: float(h(x)) * math.exp(-x), pieces[-1], np.inf, epsabs=1e-13, limit=400)[0]
    assert exp_expectation(h) == pytest.approx(ref, abs=1e-9)


def test_exp_expectation_names_bad_abscissa():
    with pytest.raises(QuadratureError, match="x = "):
        exp_expectation(lambda x: np.where(x > 3.0, np.nan, x))


def test_exp_expectation_reports_non_convergence():
    # jump discontinuity inside a panel and no breakpoint given
    with pytest.raises(QuadratureError) as info:
        exp_expectation(lambda x: (x > 1.1).astype(float), tol=1e-12)
    assert info.value.achieved > 1e-12


# -- stein_operator ---------------------------------------------------------


def test_stein_operator_examples():
    zero = lambda w: 0.0 * np.asarray(w)
    assert stein_operator(zero, zero, 5.0) == 0.0
    assert stein_operator(lambda w: -1.0, lambda w: 0.0, 3.0) == 2.0
    assert stein_operator(lambda w: w, lambda w: 1.0, 2.0) == 0.0


def test_stein_operator_rejects_bad_input():
    with pytest.raises(ParameterError):
        stein_operator(lambda w: np.nan, lambda w: 0.0, 1.0)
    with pytest.raises(ParameterError):
        stein_operator(lambda w: 0.0, lambda w: 0.0, -1.0)


# -- solve_stein ------------------------------------------------------------


def test_solution_for_identity_is_minus_one():
    sol = solve_stein(linear())
    w = np.r_[0.0, 1e-8, 1e-3, GRID, 55.0, 300.0]
    assert np.max(np.abs(sol.f(w) + 1.0)) <= 1e-8
    assert np.max(np.abs(sol.f_prime(w))) <= 1e-8


def test_solution_for_constant_is_zero():
    sol = solve_stein(TestFunction(lambda x: 3.0 + 0 * x, lambda x: 0 * x, 0.0, 0.0))
    assert np.max(np.abs(sol.f(np.r_[0.0, GRID]))) <= 1e-12


def test_solution_for_exp_decay_closed_form():
    sol = solve_stein(exp_decay())
    w = np.r_[1e-7, 1e-4, 1e-2, GRID, 80.0]
    expected = -np.expm1(-w) / (2 * w)
    assert np.max(np.abs(sol.f(w) - expected)) <= 1e-8
    assert sol.f(0.0) == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("w", [0.3, 1.0, 2.5, 7.0])
def test_solution_against_direct_integral(w):
    # f(w) = -(e^w / w) int_w^inf (h(x) - Eh) e^{-x} dx evaluated by scipy
    h = TestFunction(np.sin, np.cos, 1.0, 1.0)
    eh = 0.5
    tail = integrate.quad(lambda x: (math.sin(x) - eh) * math.exp(-x), w, np.inf, epsabs=1e-14, limit=400)[0]
    assert solve_stein(h).f(w) == pytest.approx(-math.exp(w) / w * tail, abs=1e-9)


@pytest.mark.parametrize("h", stein_test_family(), ids=lambda h: h.name)
def test_ode_residual(h):
    sol = solve_stein(h)
    assert np.max(np.abs(sol.residual(GRID))) <= 10 * sol.tol


@pytest.mark.parametrize("h", stein_test_family(), ids=lambda h: h.name)
def test_derivative_routes_agree(h):
    sol = solve_stein(h)
    w = np.linspace(0.01, 40.0, 500)
    assert np.max(np.abs(sol.f_prime(w) - sol.f_prime_ode(w))) <= 1e-8


def test_solution_value_at_zero_is_limit():
    for h in stein_test_family():
        sol = solve_stein(h)
        assert sol.f(0.0) == pytest.approx(float(sol.f(1e-5)), abs=1e-3 * max(1.0, h.sup_h_prime))


def test_evaluate_matches_separate_calls():
    sol = solve_stein(smoothing_test_function(1.0, 0.3))
    w = np.linspace(0.0, 45.0, 1001)
    f, df = sol.evaluate(w)
    np.testing.assert_allclose(f, sol.f(w), atol=1e-14)
    np.testing.assert_allclose(df, sol.f_prime(w), atol=1e-14)


def test_lemma_bounds_pointwise_for_normalized_h():
    h = capped_quadratic()
    sol = solve_stein(h)
    w = np.linspace(0.0, 50.0, 3001)
    assert np.all(np.abs(sol.f(w)) <= (1 + 2 / math.e) * h.sup_h_prime)
    assert np.all(np.abs(sol.f_prime(w)) <= 2 * h.sup_h_prime)


def test_finite_difference_derivative_fallback():
    h = TestFunction(np.sin, None, 1.0, 1.0)
    sol = solve_stein(h)
    assert np.max(np.abs(sol.residual(GRID))) <= 1e-6


def test_check_norms_warns_on_understated_norm():
    with pytest.warns(UserWarning, match="h'"):
        TestFunction(lambda x: 3 * x, lambda x: 3 + 0 * x, 1.0, 0.0, name="steep").check_norms()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        capped_quadratic().check_norms()


# -- smoothing --------------------------------------------------------------


def test_smoothing_examples():
    p = SmoothingParams(1.0, 0.5)
    assert smoothing_h(p, 0.4) == 1.0
    assert smoothing_h(p, 1.2) == 0.0
    assert smoothing_h(p, 0.75) == pytest.approx(0.5)


def test_smoothing_rejects_bad_width():
    with pytest.raises(ParameterError):
        SmoothingParams(1.0, 0.0)


@settings(max_examples=60, deadline=None)
@given(t=st.floats(0.0, 10.0), delta=st.floats(0.01, 5.0))
def test_smoothing_range_and_monotone(t, delta):
    x = np.linspace(0.0, t + 2.0, 2001)
    y = smoothing_h(SmoothingParams(t, delta), x)
    assert np.all((0.0 <= y) & (y <= 1.0))
    assert np.all(np.diff(y) <= 1e-15)


@pytest.mark.parametrize("t, delta", [(1.0, 0.5), (2.0, 0.1), (5.0, 2.0)])
def test_smoothing_norms_by_finite_differences(t, delta):
    x = np.linspace(0.0, t + 1.0, 400_001)
    y = smoothing_h(SmoothingParams(t, delta), x)
    d1 = np.diff(y) / np.diff(x)
    d2 = np.diff(d1) / np.diff(x)[1:]
    assert np.max(np.abs(d1)) == pytest.approx(2 / delta, rel=0.01)
    assert np.max(np.abs(d2)) == pytest.approx(4 / delta**2, rel=0.01)


def test_smoothing_exp_mean_closed_form():
    # for t >= delta: E h = 1 - e^{-(t-delta)} + exact integral of the two quadratic pieces
    t, d = 2.0, 0.5
    ref = 1 - math.exp(-(t - d))
    ref += integrate.quad(lambda x: (1 - 2 * (x - t + d) ** 2 / d**2) * math.exp(-x), t - d, t - d / 2, epsabs=1e-14)[0]
    ref += integrate.quad(lambda x: 2 * (x - t) ** 2 / d**2 * math.exp(-x), t - d / 2, t, epsabs=1e-14)[0]
    assert smoothing_exp_mean(t, d) == pytest.approx(ref, abs=1e-12)


# -- bounds -----------------------------------------------------------------


def test_smooth_bound_examples():
    assert smooth_bound(PairStats(1.0), (3.0, 7.0)) == 0.0
    assert smooth_bound(PairStats(1.0, t1=1.0), (1.0, 0.0)) == pytest.approx(4.0)
    assert smooth_bound(PairStats(1.0, third_abs=4.0), (0.0, 1.0)) == pytest.approx(3.0)


def test_pair_stats_validation():
    with pytest.raises(ParameterError):
        PairStats(0.0)
    with pytest.raises(ParameterError):
        PairStats(1.0, t1=math.inf)
    with pytest.raises(ParameterError):
        PairStats(1.0, t1=-0.1)


def test_kolmogorov_bound_examples():
    n = 8
    for delta in (0.3, 1.0, 2.0):
        rep = kolmogorov_bound(PairStats(2 * n * 1e-3, t1=math.sqrt(2) / n), delta)
        assert rep.bound == pytest.approx(8 * math.sqrt(2) / (delta * n) + delta / 2, rel=1e-14)
    assert kolmogorov_bound(PairStats(1.0), 1.0).bound == 0.5
    rep = kolmogorov_bound(PairStats(1.0, third_abs=1.0), 1.0)
    assert rep.bound == pytest.approx(5 - 6 / math.e + 3 + 0.5)
    assert rep.terms[2] == pytest.approx(5.7927, abs=1e-4)
    with pytest.raises(ParameterError):
        kolmogorov_bound(PairStats(1.0), 0.0)


def test_bound_report_terms_sum_and_json():
    rep = kolmogorov_bound(PairStats(0.5, 0.1, 0.02, 0.03, 0.004), 0.7)
    assert rep.bound == pytest.approx(sum(rep.terms), rel=1e-15)
    assert BoundReport.from_json(rep.to_json()) == rep
    import json

    d = json.loads(rep.to_json())
    assert set(d) == {"delta", "bound", "terms"}
    assert list(d["terms"]) == ["t1_term", "mean_term", "third_term", "remainder_term", "delta_half"]


def test_optimize_delta_headline_case():
    n = 8
    delta, rep = optimize_delta(PairStats(1.0, t1=math.sqrt(2) / n))
    assert delta == pytest.approx(4 * 2**0.25 / math.sqrt(n), rel=1e-12)
    assert rep.bound == pytest.approx(2**2.25 / math.sqrt(n), rel=1e-12)


def test_optimize_delta_trivial_and_calculus_cases():
    delta, rep = optimize_delta(PairStats(1.0))
    assert delta == 0.0 and rep.bound == 0.0
    delta, rep = optimize_delta(PairStats(1.0, t1=0.25))  # A = 2
    assert delta == pytest.approx(2.0) and rep.bound == pytest.approx(2.0)


_stats = st.builds(
    PairStats,
    a=st.floats(1e-3, 10.0),
    t1=st.floats(0.0, 5.0),
    mean_gap=st.floats(0.0, 5.0),
    third_abs=st.floats(0.0, 5.0),
    remainder_abs=st.floats(0.0, 5.0),
)


@settings(max_examples=100, deadline=None)
@given(_stats)
def test_optimize_delta_beats_log_grid(stats):
    _, best = optimize_delta(stats)
    grid = np.logspace(-6, 3, 1000)
    A, B = stats.coefficients()
    values = A / grid + B / grid**2 + grid / 2
    assert best.bound <= values.min() * (1 + 1e-12) + 1e-15
    assert best.bound <= kolmogorov_bound(stats, 1.0).bound * (1 + 1e-12)


@settings(max_examples=100, deadline=None)
@given(_stats, st.sampled_from(["t1", "mean_gap", "third_abs", "remainder_abs"]), st.floats(0.0, 3.0),
       st.floats(0.01, 10.0))
def test_kolmogorov_bound_monotone(stats, field, bump, delta):
    values = {f: getattr(stats, f) for f in ("a", "t1", "mean_gap", "third_abs", "remainder_abs")}
    values[field] += bump
    assert kolmogorov_bound(PairStats(**values), delta).bound >= kolmogorov_bound(stats, delta).bound


def test_optimize_delta_third_moment_root():
    stats = PairStats(1.0, t1=0.1, third_abs=0.2)
    delta, rep = optimize_delta(stats)
    A, B = stats.coefficients()
    assert B == pytest.approx(0.6)
    assert A == pytest.approx(0.8 + FPP_H1 * 0.2)
    assert delta**3 / 2 == pytest.approx(A * delta + 2 * B, rel=1e-12)


# -- solution bounds --------------------------------------------------------


def test_verify_bounds_capped_quadratic():
    rep = verify_solution_bounds(capped_quadratic(), np.linspace(0.01, 50.0, 2000))
    assert rep.ok
    assert 0 < rep.ratio_f <= 1 and 0 < rep.ratio_f_prime <= 1 and 0 < rep.ratio_f_double_prime <= 1


def test_verify_bounds_zero_function():
    rep = verify_solution_bounds(TestFunction(lambda x: 0 * x, lambda x: 0 * x, 0.0, 0.0), np.linspace(0.01, 5, 50))
    assert (rep.sup_f, rep.sup_f_prime, rep.sup_f_double_prime) == (0.0, 0.0, 0.0)
    assert (rep.ratio_f, rep.ratio_f_prime, rep.ratio_f_double_prime) == (0.0, 0.0, 0.0)


@pytest.mark.parametrize("t", [0.5, 1.0, 2.0, 4.0])
@pytest.mark.parametrize("delta", [0.1, 0.5, 1.0])
def test_verify_bounds_smoothing_family(t, delta):
    rep = verify_solution_bounds(smoothing_test_function(t, delta).shifted(), np.linspace(0.01, 50.0, 2000))
    assert rep.ok, rep


def test_verify_bounds_rejects_negative_grid():
    with pytest.raises(ParameterError):
        verify_solution_bounds(capped_quadratic(), [-0.5, 1.0])


def test_shifted_normalizes_origin():
    h = smoothing_test_function(0.5, 1.0).shifted()
    assert float(h(0.0)) == pytest.approx(0.0, abs=1e-15)
    assert float(h.derivative(0.0)) == pytest.approx(0.0, abs=1e-15)
    # h' ranges over [-2, 0] with h'(0) = -2, so ||h' - h'(0)|| = 2
    assert h.sup_h_prime == pytest.approx(2.0, rel=1e-6)
