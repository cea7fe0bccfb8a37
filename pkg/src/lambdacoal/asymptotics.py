"""Limit objects for rescaled external branch lengths.

n**(alpha-1) T_1^(n) converges to T with density
kappa*c*(1 + c*x)**(-kappa-1), c = C0 Gamma(2-alpha), kappa = alpha/(alpha-1).
This module also evaluates the second-order expansion constants (A, B, the
C2 family, Delta) and fits convergence diagnostics to exact sequences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .measure import CaseId, CoalescentMeasure, expansion_constants, nu_integral, rho
from .specfun import DomainError, QuadratureSpec, integrate_singular

__all__ = [
    "LimitLaw",
    "limit_law",
    "density_fT",
    "cdf_fT",
    "quantile_fT",
    "limit_moment",
    "limit_moment_quadrature",
    "limit_mean",
    "limit_variance",
    "delta_alpha",
    "delta_alpha_quadrature",
    "delta_alpha_quoted",
    "delta_alpha_beta",
    "A_integral",
    "B_integral",
    "second_moment_of_nu",
    "BetaConstants",
    "beta_constants",
    "delta_identity_residual",
    "TheoremPrediction",
    "THEOREM_IDS",
    "theorem_prediction",
    "FitRefused",
    "SlopeFit",
    "fit_convergence_slope",
    "LimitFit",
    "extrapolate_limit",
]

_SPEC = QuadratureSpec(rel_tol=1e-12, abs_tol=0.0, max_subdivisions=2000)


@dataclass(frozen=True)
class LimitLaw:
    alpha: float
    c: float
    kappa: float


def limit_law(measure: CoalescentMeasure) -> LimitLaw:
    a = measure.alpha
    return LimitLaw(a, measure.C0 * math.gamma(2.0 - a), a / (a - 1.0))


def _nonneg(x):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("f_T is supported on [0, inf)")
    return x


def _out(v):
    v = np.asarray(v)
    return float(v) if v.ndim == 0 else v


def density_fT(law: LimitLaw, x):
    x = _nonneg(x)
    return _out(law.kappa * law.c * (1.0 + law.c * x) ** (-law.kappa - 1.0))


def cdf_fT(law: LimitLaw, x):
    x = _nonneg(x)
    return _out(-np.expm1(-law.kappa * np.log1p(law.c * x)))


def quantile_fT(law: LimitLaw, u):
    u = np.asarray(u, dtype=float)
    if np.any((u < 0) | (u >= 1)):
        raise DomainError("quantile needs u in [0, 1)")
    return _out(np.expm1(-np.log1p(-u) / law.kappa) / law.c)


def limit_moment(law: LimitLaw, beta: float) -> float:
    """E[T**beta]; returns math.inf when beta >= kappa."""
    if beta < 0:
        raise DomainError("beta must be nonnegative")
    if beta >= law.kappa:
        return math.inf
    k = law.kappa
    return math.exp(
        -beta * math.log(law.c) + special.gammaln(beta + 1.0) + special.gammaln(k - beta) - special.gammaln(k)
    )


def limit_moment_quadrature(law: LimitLaw, beta: float) -> float:
    """Quadrature of x**beta f_T(x) after mapping [0, inf) to (0, 1] with u = 1/(1+cx)."""
    if beta >= law.kappa:
        return math.inf
    k, c = law.kappa, law.c

    def f(u):
        if u <= 0.0 or u >= 1.0:
            return 0.0
        return k * u ** (k - beta - 1.0) * ((1.0 - u) / c) ** beta

    return integrate_singular(f, _SPEC.with_exponents(k - beta - 1.0, beta))


def limit_mean(measure: CoalescentMeasure) -> float:
    """E[T] = (alpha-1) / (C0 Gamma(2-alpha))."""
    return (measure.alpha - 1.0) / (measure.C0 * math.gamma(2.0 - measure.alpha))


def limit_variance(law: LimitLaw) -> float:
    return limit_moment(law, 2.0) - limit_moment(law, 1.0) ** 2


def _series_h(x: float, r: float, order: int) -> float:
    """(1-x)**(-r) - sum_{k<order} (r)_k x**k / k!: the tail of the binomial series."""
    if x < 0.05:
        term = 1.0
        for k in range(order):
            term *= (r + k) * x / (k + 1)
        acc = 0.0
        k = order
        while True:
            acc += term
            term *= (r + k) * x / (k + 1)
            k += 1
            if abs(term) <= 1e-18 * abs(acc) or k > 200:
                return acc
    value = math.exp(-r * math.log1p(-x))
    head = 1.0
    term = 1.0
    for k in range(1, order):
        term *= (r + k - 1) * x / k
        head += term
    return value - head


def A_integral(measure: CoalescentMeasure) -> float:
    """A = int ((1-x)**(1-alpha) - 1 - (alpha-1)x) nu^(1)(dx) / (C0 Gamma(2-alpha))."""
    a = measure.alpha
    val = nu_integral(measure, lambda x: _series_h(x, a - 1.0, 2), 1, (2.0, 1.0 - a), _SPEC)
    return val / (measure.C0 * math.gamma(2.0 - a))


def B_integral(measure: CoalescentMeasure) -> float:
    """B = int ((1-x)**(2(1-alpha)) - 1 - 2(alpha-1)x) nu^(2)(dx) / (C0 Gamma(2-alpha))."""
    a = measure.alpha
    val = nu_integral(measure, lambda x: _series_h(x, 2.0 * (a - 1.0), 2), 2, (2.0, 2.0 - 2.0 * a), _SPEC)
    return val / (measure.C0 * math.gamma(2.0 - a))


def second_moment_of_nu(measure: CoalescentMeasure, via: str = "nu") -> float:
    """int x**2 nu(dx), directly (``via="nu"``) or as int 2 t rho(t) dt (``via="rho"``)."""
    if via == "nu":
        return nu_integral(measure, lambda x: x * x, 0, (2.0, 0.0), _SPEC)
    if via == "rho":
        return integrate_singular(
            lambda t: 2.0 * t * rho(measure, t) if t > 0 else 0.0,
            _SPEC.with_exponents(1.0 - measure.alpha, measure.omega(0)),
        )
    raise DomainError(f"unknown route {via!r}")


def delta_alpha_quadrature(measure: CoalescentMeasure) -> float:
    """Delta from the general integral: int ((1-x)**(2-alpha) - 1)**2 nu(dx) / (3-alpha) * E[T]**3."""
    a = measure.alpha

    def h(x):
        return math.expm1((2.0 - a) * math.log1p(-x)) ** 2

    val = nu_integral(measure, h, 0, (2.0, 0.0), _SPEC)
    return val / (3.0 - a) * limit_mean(measure) ** 3


def delta_alpha_quoted(alpha: float) -> float:
    """((alpha-1) Gamma(alpha+1))**2 Gamma(4-alpha) / ((3-alpha) Gamma(4-2 alpha)), as usually quoted.

    This expression does not equal the general integral; see :func:`delta_alpha_beta`.
    """
    g = math.gamma
    return ((alpha - 1.0) * g(alpha + 1.0)) ** 2 * g(4.0 - alpha) / ((3.0 - alpha) * g(4.0 - 2.0 * alpha))


def delta_alpha_beta(alpha: float) -> float:
    """Closed form of the general Delta integral for Beta(2-alpha, alpha).

    (alpha-1)**2 Gamma(alpha+1)**2 [Gamma(4-alpha)/Gamma(4-2alpha) - 2/Gamma(2-alpha)] / (3-alpha),
    obtained by analytic continuation of the three beta integrals.
    """
    g = math.gamma
    rg = special.rgamma
    bracket = g(4.0 - alpha) * rg(4.0 - 2.0 * alpha) - 2.0 * rg(2.0 - alpha)
    return (alpha - 1.0) ** 2 * g(alpha + 1.0) ** 2 * bracket / (3.0 - alpha)


def delta_alpha(measure: CoalescentMeasure) -> float:
    """Limit of n**(3(alpha-1)) Cov(T_1, T_2)."""
    if measure.kind == "beta":
        return delta_alpha_beta(measure.alpha)
    return delta_alpha_quadrature(measure)


@dataclass(frozen=True)
class BetaConstants:
    """Constants for Beta(2-alpha, alpha).

    ``A`` and ``delta_quoted`` are the commonly quoted closed forms; ``A_exact``
    and ``delta`` are the values of the defining integrals (they differ by the
    term 1/((alpha-1) Gamma(2-alpha)) in A).
    """

    alpha: float
    A: float
    B: float
    C2: float
    C2_1: float
    C2_2: float
    A_exact: float
    delta_quoted: float
    delta: float

    def identity_residual(self, exact: bool = False) -> float:
        """Relative gap in Delta (3-alpha) c**2/(alpha-1)**3 = B - 2A + (2(alpha-1)(C2_2 - C2_1) + 1)/c."""
        A = self.A_exact if exact else self.A
        d = self.delta if exact else self.delta_quoted
        return _identity_gap(self.alpha, 1.0 / math.gamma(self.alpha + 1.0), A, self.B, self.C2_1, self.C2_2, 1.0, d)


def _identity_gap(alpha, cg, A, B, C2_1, C2_2, x2nu, delta) -> float:
    lhs = delta * (3.0 - alpha) * cg**2 / (alpha - 1.0) ** 3
    rhs = B - 2.0 * A + (2.0 * (alpha - 1.0) * (C2_2 - C2_1) + x2nu) / cg
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs))


def beta_constants(alpha: float) -> BetaConstants:
    if not 1.0 < alpha < 2.0:
        raise DomainError(f"alpha out of (1,2): {alpha}")
    g = math.gamma
    a = alpha
    q = a * a - a - 1.0
    A = a * q * g(a - 1.0)
    B = (g(4.0 - a) / g(4.0 - 2.0 * a) + q * g(a + 2.0)) / (a - 1.0)
    return BetaConstants(
        alpha=a,
        A=A,
        B=B,
        C2=1.0 / (1.0 - a),
        C2_1=a / (1.0 - a),
        C2_2=(a * a + a) / (2.0 * (1.0 - a)),
        A_exact=A + 1.0 / ((a - 1.0) * g(2.0 - a)),
        delta_quoted=delta_alpha_quoted(a),
        delta=delta_alpha_beta(a),
    )


def delta_identity_residual(measure: CoalescentMeasure) -> float:
    """The Delta identity with every piece computed by quadrature or extrapolation."""
    ec = expansion_constants(measure, method="extrapolate")
    if ec.case_id is not CaseId.CASE_III:
        raise DomainError("the identity needs CaseIII")
    cg = measure.C0 * math.gamma(2.0 - measure.alpha)
    return _identity_gap(
        measure.alpha, cg, A_integral(measure), B_integral(measure), ec.C2_l[1], ec.C2_l[2],
        second_moment_of_nu(measure, via="rho"), delta_alpha_quadrature(measure),
    )


THEOREM_IDS = ("T4-case1", "T4-case2", "T4-case3", "T6-case3", "C7-case3", "T1")


@dataclass(frozen=True)
class TheoremPrediction:
    """value(n) ~ leading_coeff n**leading_exponent + second_coeff n**second_exponent [ln n]."""

    theorem_id: str
    leading_exponent: float
    leading_coeff: float
    second_exponent: float | None
    second_coeff: float | None
    log_factor: bool = False


def _require(cond: bool, msg: str):
    if not cond:
        raise DomainError(msg)


def theorem_prediction(measure: CoalescentMeasure, theorem_id: str) -> TheoremPrediction:
    """Expansion coefficients for E[T_1], E[T_1 T_2], Cov and the L_ext mean-square error.

    T4 cases concern E[T_1^(n)], T6 E[T_1 T_2], C7 the covariance and T1 the
    rescaled mean-square error of L_ext. Integrals A and B are evaluated by
    quadrature; the C2 family comes from :func:`expansion_constants`.
    """
    if theorem_id not in THEOREM_IDS:
        raise DomainError(f"unknown theorem id {theorem_id!r}")
    a, z, C0, C1 = measure.alpha, measure.zeta, measure.C0, measure.C1
    cg = C0 * math.gamma(2.0 - a)
    L = (a - 1.0) / cg
    w1 = measure.omega(1)
    case = measure.case_id
    lead1 = 1.0 - a

    if theorem_id == "T4-case1":
        _require(case is CaseId.CASE_I, f"T4-case1 needs zeta < alpha-1, measure is {case.value}")
        _require(a - 1.0 + z < w1, "T4-case1 needs alpha-1+zeta < omega^(1)")
        q = C1 * math.gamma(2.0 - a + z) * (a - 1.0) ** 2 / (cg**2 * (a - 1.0 - z))
        return TheoremPrediction(theorem_id, lead1, L, 1.0 - a - z, -q)
    if theorem_id == "T4-case2":
        _require(case is CaseId.CASE_II, f"T4-case2 needs zeta = alpha-1, measure is {case.value}")
        _require(2.0 * (a - 1.0) < w1, "T4-case2 needs 2(alpha-1) < omega^(1)")
        return TheoremPrediction(theorem_id, lead1, L, 2.0 * lead1, -(a - 1.0) ** 2 * C1 / cg**2, True)

    _require(case is CaseId.CASE_III, f"{theorem_id} needs zeta > alpha-1, measure is {case.value}")
    _require(2.0 * (a - 1.0) < w1, f"{theorem_id} needs 2(alpha-1) < omega^(1)")
    if theorem_id == "C7-case3":
        return TheoremPrediction(theorem_id, 3.0 * lead1, delta_alpha_quadrature(measure), None, None)
    if theorem_id == "T1":
        # stated coefficient; the exact MSE sequence tends to the full Delta instead
        return TheoremPrediction(theorem_id, 5.0 - 3.0 * a, 0.5 * delta_alpha_quadrature(measure), None, None)

    ec = expansion_constants(measure)
    A = A_integral(measure)
    c1_term = ((a - 1.0) * ec.C2_l[1] - ec.C2) / cg
    if theorem_id == "T4-case3":
        k = (a - 1.0) ** 2 / (C0 * math.gamma(3.0 - a)) * (A + c1_term)
        return TheoremPrediction(theorem_id, lead1, L, 2.0 * lead1, k)
    B = B_integral(measure)
    x2 = second_moment_of_nu(measure)
    bracket = B + (2.0 * (a - 1.0) * ec.C2_l[2] + x2 - 2.0 * ec.C2) / cg + 2.0 / (2.0 - a) * (A + c1_term)
    k2 = (a - 1.0) / (3.0 - a) * L**2 * bracket
    return TheoremPrediction(theorem_id, 2.0 * lead1, L**2, 3.0 * lead1, k2)


class FitRefused(ValueError):
    """A diagnostic fit was asked for on data it cannot describe."""


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r2: float


def _pairs(ns, values):
    ns = np.asarray(ns, dtype=float).ravel()
    vs = np.asarray(values, dtype=float).ravel()
    if ns.shape != vs.shape:
        raise FitRefused("n and value series differ in length")
    return ns, vs


def fit_convergence_slope(ns, values) -> SlopeFit:
    """Least squares of ln|value| against ln n."""
    ns, vs = _pairs(ns, values)
    if ns.size < 4:
        raise FitRefused("insufficient points")
    if np.any(vs == 0) or not (np.all(vs > 0) or np.all(vs < 0)):
        raise FitRefused("series changes sign or touches zero")
    if np.any(~np.isfinite(vs)) or np.any(ns <= 0):
        raise FitRefused("non-finite values or nonpositive n")
    x = np.log(ns)
    y = np.log(np.abs(vs))
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss == 0 else 1.0 - float(np.sum(resid**2)) / ss
    return SlopeFit(float(slope), float(intercept), r2)


@dataclass(frozen=True)
class LimitFit:
    limit: float
    coefficients: tuple[float, ...]
    exponents: tuple[float, ...]
    max_residual: float


def extrapolate_limit(ns, values, correction_exponents) -> LimitFit:
    """Fit value(n) = limit + sum_i c_i n**e_i by least squares (e_i < 0)."""
    ns, vs = _pairs(ns, values)
    exps = []
    for e in correction_exponents:
        if e >= 0:
            raise FitRefused("correction exponents must be negative")
        if all(abs(e - f) > 1e-9 for f in exps):
            exps.append(float(e))
    if ns.size < len(exps) + 2:
        raise FitRefused("insufficient points")
    design = np.column_stack([np.ones_like(ns)] + [ns**e for e in exps])
    coef, *_ = np.linalg.lstsq(design, vs, rcond=None)
    resid = vs - design @ coef
    return LimitFit(float(coef[0]), tuple(float(c) for c in coef[1:]), tuple(exps), float(np.max(np.abs(resid))))
