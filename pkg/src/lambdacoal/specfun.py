"""Special functions and quadrature used throughout the package.

Everything that touches rates is carried in log space: ``log_gamma_ratio``
is accurate to a few ulps for the huge arguments needed at n ~ 1e4, where
differences of ``gammaln`` values would lose about ten digits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, special

__all__ = [
    "DomainError",
    "ConvergenceError",
    "QuadratureSpec",
    "log_gamma",
    "log_beta",
    "log_gamma_ratio",
    "log_binomial",
    "falling_factorial",
    "falling_factorial_ratio",
    "integrate_singular",
    "compensated_sum",
]


class DomainError(ValueError):
    """Argument outside the domain of a function."""


class ConvergenceError(ArithmeticError):
    """A numerical procedure ran out of budget before reaching its tolerance."""

    def __init__(self, message: str, estimate: float, error_bound: float):
        super().__init__(f"{message} (estimate={estimate!r}, error bound={error_bound!r})")
        self.estimate = estimate
        self.error_bound = error_bound


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerances and endpoint behaviour for :func:`integrate_singular`.

    ``singularity_exponents`` is ``(p, q)``: the integrand behaves like
    ``x**p`` near 0 and ``(1 - x)**q`` near 1.
    """

    rel_tol: float = 1e-10
    abs_tol: float = 1e-14
    max_subdivisions: int = 2000
    singularity_exponents: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise DomainError("rel_tol must be positive")
        if not self.abs_tol >= 0:
            raise DomainError("abs_tol must be nonnegative")
        if int(self.max_subdivisions) < 1:
            raise DomainError("max_subdivisions must be at least 1")
        p, q = self.singularity_exponents
        if not (p > -1 and q > -1):
            raise DomainError(f"non-integrable endpoint exponents p={p}, q={q}")

    def with_exponents(self, p: float, q: float) -> "QuadratureSpec":
        return QuadratureSpec(self.rel_tol, self.abs_tol, self.max_subdivisions, (p, q))


def _check_positive(name: str, x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError(f"{name} must be positive, got {x!r}")
    return arr


def _out(arr: np.ndarray):
    return float(arr) if arr.ndim == 0 else arr


def log_gamma(x):
    """ln Gamma(x) for x > 0 (scalar or array)."""
    return _out(special.gammaln(_check_positive("x", x)))


def log_beta(a, b):
    """ln B(a, b) for a, b > 0."""
    return _out(special.betaln(_check_positive("a", a), _check_positive("b", b)))


# Bernoulli coefficients B_2k / (2k (2k - 1)) of the Stirling series.
_STIRLING = (
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
    -3617.0 / 122400.0,
)
_SHIFT_TO = 10.0


def _stirling_tail(z: np.ndarray) -> np.ndarray:
    inv = 1.0 / z
    inv2 = inv * inv
    acc = np.zeros_like(z)
    for coef in reversed(_STIRLING):
        acc = acc * inv2 + coef
    return acc * inv


def log_gamma_ratio(x, c):
    """ln(Gamma(x + c) / Gamma(x)) for x > 0 and x + c > 0.

    Small arguments are shifted up with log1p terms, then the Stirling series
    is differenced analytically, so there is no cancellation between two
    large log-gamma values.
    """
    x = np.asarray(x, dtype=float)
    c = np.asarray(c, dtype=float)
    x, c = np.broadcast_arrays(x, c)
    if np.any(~(x > 0)) or np.any(~(x + c > 0)):
        raise DomainError("log_gamma_ratio needs x > 0 and x + c > 0")
    low = np.minimum(x, x + c)
    shifts = np.where(low < _SHIFT_TO, np.ceil(_SHIFT_TO - low), 0.0)
    correction = np.zeros(x.shape)
    for i in range(int(shifts.max(initial=0.0))):
        active = shifts > i
        correction -= np.where(active, np.log1p(c / (x + i)), 0.0)
    y = x + shifts
    z = y + c
    main = c * np.log(y) + (z - 0.5) * np.log1p(c / y) - c
    value = main + (_stirling_tail(z) - _stirling_tail(y)) + correction
    return _out(value)


def log_binomial(n, k):
    """ln C(n, k) for 0 <= k <= n (real arguments allowed)."""
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    if np.any(k < 0) or np.any(k > n):
        raise DomainError("log_binomial needs 0 <= k <= n")
    return _out(special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1))


def falling_factorial(n: int, l: int) -> float:
    """(n)_l = n (n-1) ... (n-l+1), and 0 when l > n >= 0."""
    if l < 0:
        raise DomainError("l must be nonnegative")
    if l > n:
        return 0.0
    return float(math.prod(range(n - l + 1, n + 1)))


def falling_factorial_ratio(k: int, n: int, l: int) -> float:
    """(k)_l / (n)_l, computed as a product of ratios."""
    if n < 1 or k < 0 or l < 1:
        raise DomainError("need n >= 1, k >= 0, l >= 1")
    if l > n:
        raise DomainError(f"(n)_l vanishes for l={l} > n={n}")
    if l > k:
        return 0.0
    out = 1.0
    for i in range(l):
        out *= (k - i) / (n - i)
    return out


def compensated_sum(values) -> float:
    """Exactly rounded sum (Shewchuk's algorithm via math.fsum)."""
    return math.fsum(np.asarray(values, dtype=float).ravel().tolist())


def _quad(fun: Callable[[float], float], lo: float, hi: float, spec: QuadratureSpec, abs_tol: float):
    value, error = integrate.quad(
        fun, lo, hi, epsabs=abs_tol, epsrel=spec.rel_tol,
        limit=int(spec.max_subdivisions), full_output=1,
    )[:2]
    return value, error


def integrate_singular(
    f: Callable[[float], float],
    spec: QuadratureSpec = QuadratureSpec(),
    lower: float = 0.0,
    upper: float = 1.0,
) -> float:
    """Integrate f over (lower, upper) within [0, 1].

    Declared power singularities at 0 and 1 are removed by the substitutions
    x = u**(1/(1+p)) and 1 - x = v**(1/(1+q)). A positive lower limit close to
    0 is handled on a logarithmic scale instead, which keeps x**(-1-alpha)
    type integrands smooth. Since f sees x rather than 1 - x, a singularity at
    1 is resolved only down to the spacing of doubles there (about 1e-16).
    """
    if not (0.0 <= lower <= upper <= 1.0):
        raise DomainError(f"integration limits must satisfy 0 <= lower <= upper <= 1, got {lower}, {upper}")
    if lower == upper:
        return 0.0
    p, q = spec.singularity_exponents
    mid = min(max(0.5, lower), upper)
    pieces = []

    if lower < mid:
        if lower == 0.0:
            e = 1.0 / (1.0 + p)

            def left(u, e=e):
                if u <= 0.0:
                    return 0.0
                x = u**e
                return f(x) * e * x / u

            pieces.append((left, 0.0, mid ** (1.0 + p)))
        elif lower < 0.25 * mid:
            def left_log(v):
                x = math.exp(v)
                return f(x) * x

            pieces.append((left_log, math.log(lower), math.log(mid)))
        else:
            pieces.append((f, lower, mid))

    if mid < upper:
        if upper == 1.0:
            e = 1.0 / (1.0 + q)

            def right(v, e=e):
                if v <= 0.0:
                    return 0.0
                y = v**e
                x = 1.0 - y
                if x == 1.0:
                    # 1 - x is below the spacing of doubles near 1
                    return 0.0
                return f(x) * e * y / v

            pieces.append((right, 0.0, (1.0 - mid) ** (1.0 + q)))
        else:
            pieces.append((f, mid, upper))

    total = []
    bound = 0.0
    share = spec.abs_tol / len(pieces)
    for fun, lo, hi in pieces:
        value, error = _quad(fun, lo, hi, spec, share)
        total.append(value)
        bound += error
    value = math.fsum(total)
    scale = math.fsum(abs(v) for v in total)
    if not math.isfinite(value) or bound > max(spec.rel_tol * scale, spec.abs_tol):
        raise ConvergenceError("quadrature did not reach tolerance", value, bound)
    return value
