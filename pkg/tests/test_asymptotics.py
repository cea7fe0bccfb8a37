import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lambdacoal import asymptotics as asy
from lambdacoal.measure import beta_measure, general_measure, power_pair_density
from lambdacoal.specfun import DomainError

ALPHAS = [1.25, 1.5, 1.75]


def test_density_at_zero():
    law = asy.limit_law(beta_measure(1.5))
    assert asy.density_fT(law, 0.0) == pytest.approx(3.0 / math.gamma(2.5), rel=1e-13)
    assert law.kappa == pytest.approx(3.0)


@pytest.mark.parametrize("alpha", [1.1, 1.5, 1.9])
def test_density_normalised(alpha):
    law = asy.limit_law(beta_measure(alpha))
    total = mpmath.quad(lambda x: asy.density_fT(law, float(x)), [0, 1, 10, mpmath.inf])
    assert float(total) == pytest.approx(1.0, rel=1e-9)


def test_quantile_inverts_cdf():
    law = asy.limit_law(beta_measure(1.5))
    for u in np.linspace(0.1, 0.9, 9):
        assert asy.cdf_fT(law, asy.quantile_fT(law, u)) == pytest.approx(u, rel=1e-13)


@settings(max_examples=50, deadline=None)
@given(st.floats(1.05, 1.95), st.floats(1e-12, 1e6))
def test_cdf_complement_stable(alpha, x):
    law = asy.limit_law(beta_measure(alpha))
    F = asy.cdf_fT(law, x)
    assert 0.0 <= F <= 1.0
    tail = (1.0 + law.c * x) ** -law.kappa
    assert 1.0 - F == pytest.approx(tail, rel=1e-9, abs=1e-15)


def test_limit_moments_beta():
    law = asy.limit_law(beta_measure(1.5))
    assert asy.limit_moment(law, 0.0) == 1.0
    assert asy.limit_moment(law, 1.0) == pytest.approx(1.5 * 0.5 * math.gamma(1.5), rel=1e-13)
    assert asy.limit_moment(law, 1.0) == pytest.approx(0.664670194, rel=1e-8)
    assert asy.limit_moment(law, 2.0) == pytest.approx(math.gamma(2.5) ** 2, rel=1e-13)
    assert asy.limit_variance(law) == pytest.approx(1.32535, rel=1e-5)
    assert asy.limit_moment(law, 3.0) == math.inf


@pytest.mark.parametrize("alpha,beta", [(1.3, 2.5), (1.5, 1.7), (1.8, 0.5), (1.4, 3.0)])
def test_limit_moment_quadrature(alpha, beta):
    law = asy.limit_law(beta_measure(alpha))
    assert asy.limit_moment(law, beta) == pytest.approx(asy.limit_moment_quadrature(law, beta), rel=1e-10)


def mp_A_B(alpha):
    """The defining integrals of A and B for Beta(2-alpha, alpha), by mpmath.

    h(x) = (1-x)**r - 1 + r x is O(x**2) near 0; below eps the leading term
    r(r-1)x**2/2 is integrated by hand.
    """
    with mpmath.workdps(60):
        a = mpmath.mpf(alpha)
        c = 1 / mpmath.beta(2 - a, a)
        cg = c / a * mpmath.gamma(2 - a)
        eps = mpmath.mpf(10) ** -20

        def integral(r, s):
            h = lambda x: mpmath.expm1(r * mpmath.log1p(-x)) + r * x
            body = mpmath.quad(lambda x: h(x) * c * x ** (-1 - a) * (1 - x) ** (a - 1 + s), [eps, 1e-6, 0.5, 1])
            tail = r * (r - 1) / 2 * c * eps ** (2 - a) / (2 - a)
            return (body + tail) / cg

        return float(integral(1 - a, 1)), float(integral(2 - 2 * a, 2))


@pytest.mark.parametrize("alpha", ALPHAS)
def test_A_B_integrals_against_mpmath(alpha):
    m = beta_measure(alpha)
    A_ref, B_ref = mp_A_B(alpha)
    bc = asy.beta_constants(alpha)
    assert asy.A_integral(m) == pytest.approx(A_ref, rel=1e-10)
    assert asy.B_integral(m) == pytest.approx(B_ref, rel=1e-10)
    assert bc.A_exact == pytest.approx(A_ref, rel=1e-12)
    assert bc.B == pytest.approx(B_ref, rel=1e-12)


def test_quoted_closed_form_values():
    bc = asy.beta_constants(1.5)
    assert bc.A == pytest.approx(-0.375 * math.sqrt(math.pi), rel=1e-14)
    # B = 2 (Gamma(2.5) - 0.25 Gamma(3.5)); 0.25 Gamma(3.5) = 0.8308378
    assert bc.B == pytest.approx(2 * (math.gamma(2.5) - 0.25 * math.gamma(3.5)), rel=1e-14)
    assert bc.B == pytest.approx(0.997005, rel=1e-6)
    assert bc.delta_quoted == pytest.approx(0.3915231, rel=1e-6)
    assert bc.A_exact - bc.A == pytest.approx(1 / (0.5 * math.gamma(0.5)), rel=1e-13)


@pytest.mark.parametrize("alpha", ALPHAS)
def test_delta_quadrature_matches_corrected_closed_form(alpha):
    m = beta_measure(alpha)
    assert asy.delta_alpha_quadrature(m) == pytest.approx(asy.delta_alpha_beta(alpha), rel=1e-10)
    assert asy.delta_alpha(m) > 0


@pytest.mark.parametrize("alpha", ALPHAS)
def test_quoted_closed_form_departs_from_integral(alpha):
    # documented discrepancy: the quoted closed form uses the quoted A
    m = beta_measure(alpha)
    assert asy.delta_alpha_quoted(alpha) / asy.delta_alpha_quadrature(m) > 5


@pytest.mark.parametrize("alpha", ALPHAS)
def test_identity_residuals(alpha):
    bc = asy.beta_constants(alpha)
    assert bc.identity_residual() < 1e-8
    assert bc.identity_residual(exact=True) < 1e-8
    assert asy.delta_identity_residual(beta_measure(alpha)) < 1e-8


def test_delta_positive_across_alpha():
    for a in np.linspace(1.05, 1.95, 19):
        assert asy.delta_alpha_beta(float(a)) > 0


def test_second_moment_of_nu_two_routes():
    m = beta_measure(1.6)
    assert asy.second_moment_of_nu(m, via="nu") == pytest.approx(1.0, rel=1e-10)
    assert asy.second_moment_of_nu(m, via="rho") == pytest.approx(1.0, rel=1e-9)


def test_predictions_beta():
    m = beta_measure(1.5)
    p = asy.theorem_prediction(m, "T4-case3")
    assert p.leading_exponent == -0.5
    assert p.leading_coeff == pytest.approx(asy.limit_mean(m), rel=1e-12)
    assert p.second_coeff == pytest.approx(0.75, rel=1e-8)
    c7 = asy.theorem_prediction(m, "C7-case3")
    assert c7.leading_exponent == pytest.approx(-1.5)
    assert c7.leading_coeff == pytest.approx(asy.delta_alpha(m), rel=1e-10)
    with pytest.raises(DomainError):
        asy.theorem_prediction(m, "T4-case1")
    with pytest.raises(DomainError):
        asy.theorem_prediction(m, "T99")


@pytest.mark.parametrize("alpha", ALPHAS)
def test_pair_expansion_consistent_with_delta(alpha):
    # Cov = E[T1 T2] - E[T1]^2: the n**(3(1-alpha)) coefficients must give Delta
    m = beta_measure(alpha)
    t4 = asy.theorem_prediction(m, "T4-case3")
    t6 = asy.theorem_prediction(m, "T6-case3")
    assert t6.leading_coeff == pytest.approx(t4.leading_coeff**2, rel=1e-12)
    gap = t6.second_coeff - 2 * t4.leading_coeff * t4.second_coeff
    assert gap == pytest.approx(asy.delta_alpha(m), rel=1e-8)


def test_case_two_prediction_has_log_factor():
    m = general_measure(power_pair_density(1.5, 0.5, 1.0, 1.0), 1.5)
    p = asy.theorem_prediction(m, "T4-case2")
    assert p.log_factor
    assert p.second_exponent == pytest.approx(-1.0)


def test_case_one_prediction():
    m = general_measure(power_pair_density(1.5, 0.3, 1.0, 1.0), 1.5)
    p = asy.theorem_prediction(m, "T4-case1")
    assert p.second_exponent == pytest.approx(1 - 1.5 - 0.3)
    assert not p.log_factor


def test_slope_fit_exact():
    ns = np.arange(10, 1000, 7)
    f = asy.fit_convergence_slope(ns, ns**-0.5)
    assert f.slope == pytest.approx(-0.5, abs=1e-12)
    assert f.r2 == pytest.approx(1.0)
    assert asy.fit_convergence_slope(ns, np.full(ns.shape, 3.0)).slope == pytest.approx(0.0, abs=1e-12)
    neg = asy.fit_convergence_slope(ns, -2.0 * ns**-1.5)
    assert neg.slope == pytest.approx(-1.5, abs=1e-12)


def test_slope_fit_refusals():
    with pytest.raises(asy.FitRefused, match="insufficient points"):
        asy.fit_convergence_slope([1, 2, 3], [1.0, 0.5, 0.3])
    with pytest.raises(asy.FitRefused, match="changes sign"):
        asy.fit_convergence_slope([1, 2, 3, 4], [1.0, -0.5, 0.3, 0.2])
    with pytest.raises(asy.FitRefused, match="changes sign"):
        asy.fit_convergence_slope([1, 2, 3, 4], [1.0, 0.0, 0.3, 0.2])


def test_extrapolate_limit_recovers_synthetic():
    ns = np.arange(100, 5000, 10, dtype=float)
    vals = 0.7 + 2.0 * ns**-0.5 - 3.0 * ns**-1.0
    fit = asy.extrapolate_limit(ns, vals, [-0.5, -1.0])
    assert fit.limit == pytest.approx(0.7, rel=1e-10)
    assert fit.coefficients == pytest.approx((2.0, -3.0), rel=1e-8)
    with pytest.raises(asy.FitRefused):
        asy.extrapolate_limit(ns, vals, [0.5])
