import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lambdacoal.specfun import (
    ConvergenceError,
    DomainError,
    QuadratureSpec,
    compensated_sum,
    falling_factorial,
    falling_factorial_ratio,
    integrate_singular,
    log_beta,
    log_binomial,
    log_gamma,
    log_gamma_ratio,
)


def test_log_gamma_values():
    assert log_gamma(1.0) == 0.0
    assert log_gamma(0.5) == pytest.approx(math.log(math.sqrt(math.pi)), rel=1e-15)
    assert log_gamma(2.5) == pytest.approx(math.log(1.3293403881791355), rel=1e-14)


def test_log_gamma_rejects_nonpositive():
    with pytest.raises(DomainError):
        log_gamma(0.0)
    with pytest.raises(DomainError):
        log_gamma(np.array([1.0, -2.0]))


def test_log_beta_values():
    assert log_beta(1.0, 1.0) == 0.0
    assert log_beta(0.5, 1.5) == pytest.approx(math.log(math.pi / 2), rel=1e-15)
    assert log_beta(2.0, 3.0) == pytest.approx(math.log(1 / 12), rel=1e-15)


@settings(max_examples=80, deadline=None)
@given(st.floats(0.01, 5e4), st.floats(-1.99, 3.0))
def test_log_gamma_ratio_against_mpmath(x, c):
    if x + c <= 1e-3:
        return
    with mpmath.workdps(50):
        ref = float(mpmath.loggamma(mpmath.mpf(x) + c) - mpmath.loggamma(x))
    assert log_gamma_ratio(x, c) == pytest.approx(ref, rel=1e-13, abs=1e-14)


def test_log_gamma_ratio_large_argument_has_no_cancellation():
    # the naive difference loses most digits here
    x, c = 1e12, 0.5
    with mpmath.workdps(50):
        ref = float(mpmath.loggamma(mpmath.mpf(x) + c) - mpmath.loggamma(x))
    assert log_gamma_ratio(x, c) == pytest.approx(ref, rel=1e-15)
    assert ref == pytest.approx(0.5 * math.log(x), rel=1e-12)


def test_log_binomial():
    assert math.exp(log_binomial(10, 3)) == pytest.approx(120.0, rel=1e-13)
    assert log_binomial(7, 0) == 0.0


def test_falling_factorial_ratio():
    assert falling_factorial_ratio(3, 4, 2) == 0.5
    assert falling_factorial_ratio(1, 5, 2) == 0.0
    assert falling_factorial_ratio(6, 6, 3) == 1.0
    assert falling_factorial(5, 2) == 20.0
    assert falling_factorial(2, 3) == 0.0


def test_falling_factorial_ratio_l_above_n():
    with pytest.raises(DomainError):
        falling_factorial_ratio(2, 2, 3)


def test_compensated_sum_is_exact():
    vals = [1e16, 1.0, -1e16, 1.0]
    assert compensated_sum(vals) == 2.0


def test_integrate_endpoint_singularity():
    spec = QuadratureSpec(singularity_exponents=(-0.5, 0.0))
    assert integrate_singular(lambda x: x**-0.5, spec) == pytest.approx(2.0, rel=1e-10)


def test_integrate_beta_kernel():
    spec = QuadratureSpec(singularity_exponents=(-0.5, 0.5))
    got = integrate_singular(lambda x: x**-0.5 * (1 - x) ** 0.5, spec)
    assert got == pytest.approx(math.pi / 2, rel=1e-10)


def test_integrate_constant():
    assert integrate_singular(lambda x: 1.0) == pytest.approx(1.0, rel=1e-14)


def test_integrate_strong_singularity_both_ends():
    spec = QuadratureSpec(singularity_exponents=(-0.9, -0.3))
    got = integrate_singular(lambda x: x**-0.9 * (1 - x) ** -0.3, spec)
    assert got == pytest.approx(math.exp(log_beta(0.1, 0.7)), rel=1e-9)


def test_integrate_reports_nonconvergence():
    spec = QuadratureSpec(max_subdivisions=3)
    with pytest.raises(ConvergenceError) as info:
        integrate_singular(lambda x: math.sin(1.0 / (x + 1e-4)), spec)
    assert info.value.error_bound > 0


def test_quadrature_spec_validation():
    with pytest.raises(DomainError):
        QuadratureSpec(singularity_exponents=(-1.0, 0.0))
    with pytest.raises(DomainError):
        QuadratureSpec(rel_tol=0.0, abs_tol=0.0)
