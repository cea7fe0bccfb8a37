"""Transition structure of the n-coalescent.

With b blocks, each a-subset merges at rate lambda_{b,a}; the total rate is
g_b = sum_a C(b,a) lambda_{b,a}. The jump chain goes from n to k = n - a + 1
blocks with probability p_{n,k} = C(n, n-k+1) lambda_{n,n-k+1} / g_n.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._kernels import neumaier_sum
from .measure import CoalescentMeasure, MixtureDensity, nu_density
from .specfun import DomainError, QuadratureSpec, integrate_singular, log_beta, log_binomial

__all__ = [
    "RowNormalizationError",
    "RateTable",
    "lambda_rate",
    "log_merger_weights",
    "total_rate",
    "beta_total_rate",
    "jump_row",
    "merger_size_probabilities",
    "first_jump_decrement_mean",
    "first_jump_decrement_mean_integral",
    "tilted_factorial_sum",
    "DecrementMismatchWarning",
    "ROW_RESIDUAL_LIMIT",
    "DECREMENT_CROSS_CHECK_TOL",
]

ROW_RESIDUAL_LIMIT = 1e-12
DECREMENT_CROSS_CHECK_TOL = 1e-8


class DecrementMismatchWarning(UserWarning):
    """The jump-row and tail-integral routes to E[X_1] disagree."""
_QUAD = QuadratureSpec(rel_tol=1e-12, abs_tol=0.0, max_subdivisions=2000)


class RowNormalizationError(ArithmeticError):
    """A jump row missed unit sum by more than the allowed residual."""


def lambda_rate(measure: CoalescentMeasure, b: int, a: int, s: int = 0) -> float:
    """lambda_{b,a} for the measure tilted by (1-x)**s."""
    if not 2 <= a <= b:
        raise DomainError(f"need 2 <= a <= b, got a={a}, b={b}")
    if isinstance(measure.density, MixtureDensity):
        return math.fsum(
            t.coef * math.exp(log_beta(a - t.theta, b - a + t.beta + s)) for t in measure.density.terms
        )
    p, q = measure.exponents(s)
    spec = _QUAD.with_exponents(p + a, max(q + b - a, -0.999))
    return integrate_singular(lambda x: x**a * (1.0 - x) ** (b - a) * nu_density(measure, x, s), spec)


class _RowSource:
    """Produces log C(b,a) lambda^(s)_{b,a} for a = 2..b."""

    def __init__(self, measure: CoalescentMeasure, n_max: int, s: int = 0):
        self.measure = measure
        self.n_max = n_max
        self.s = s
        self._pieces = None
        self._quad_rows: dict[int, np.ndarray] = {}
        if isinstance(measure.density, MixtureDensity):
            self._pieces = measure.density.log_rate_pieces(n_max, s)

    def log_weights(self, b: int) -> np.ndarray:
        if not 2 <= b <= self.n_max:
            raise DomainError(f"b={b} outside 2..{self.n_max}")
        if self._pieces is not None:
            parts = [head[2 : b + 1] + body[b - 1 : 0 : -1] + foot[b] for head, body, foot in self._pieces]
            if len(parts) == 1:
                return parts[0]
            return np.logaddexp.reduce(np.vstack(parts), axis=0)
        row = self._quad_rows.get(b)
        if row is None:
            a = np.arange(2, b + 1)
            lam = np.array([lambda_rate(self.measure, b, int(i), self.s) for i in a])
            row = log_binomial(b, a) + np.log(lam)
            self._quad_rows[b] = row
        return row


def log_merger_weights(measure: CoalescentMeasure, b: int, s: int = 0) -> np.ndarray:
    """log(C(b,a) lambda^(s)_{b,a}) indexed by a = 2..b."""
    return _RowSource(measure, b, s).log_weights(b)


def total_rate(measure: CoalescentMeasure, b: int, s: int = 0) -> float:
    """g_b^(s), summed with error compensation."""
    if b < 2:
        raise DomainError("b must be at least 2")
    if s < 0:
        raise DomainError("s must be nonnegative")
    return math.fsum(np.exp(log_merger_weights(measure, b, s)).tolist())


def beta_total_rate(alpha: float, b):
    """Closed form g_b = (b-1) Gamma(b+alpha-1) / (Gamma(alpha+1) Gamma(b)) for Beta(2-alpha, alpha)."""
    from .specfun import log_gamma, log_gamma_ratio

    b = np.asarray(b, dtype=float)
    out = (b - 1.0) * np.exp(log_gamma_ratio(b, alpha - 1.0) - log_gamma(alpha + 1.0))
    return float(out) if out.ndim == 0 else out


@dataclass
class RateTable:
    """Total rates and row diagnostics for b = 2..n_max.

    Jump rows are not retained; :meth:`row` rebuilds any row from O(n_max)
    precomputed pieces. Set ``keep_log_lambda`` to materialise the triangular
    array of ln lambda_{b,a}.
    """

    measure: CoalescentMeasure
    n_max: int
    keep_log_lambda: bool = False
    g: np.ndarray = field(init=False, repr=False)
    row_residuals: np.ndarray = field(init=False, repr=False)
    mean_decrement: np.ndarray = field(init=False, repr=False)
    entropy: np.ndarray = field(init=False, repr=False)
    log_lambda: list | None = field(init=False, repr=False, default=None)

    def __post_init__(self):
        if self.n_max < 2:
            raise DomainError("n_max must be at least 2")
        self._source = _RowSource(self.measure, self.n_max)
        size = self.n_max + 1
        self.g = np.full(size, np.nan)
        self.row_residuals = np.full(size, np.nan)
        self.mean_decrement = np.full(size, np.nan)
        self.entropy = np.full(size, np.nan)
        kept = [] if self.keep_log_lambda else None
        for b in range(2, size):
            lw = self._source.log_weights(b)
            w = np.exp(lw)
            gb = neumaier_sum(w)
            p = w / gb
            self.g[b] = gb
            self.row_residuals[b] = abs(neumaier_sum(p) - 1.0)
            if self.row_residuals[b] > ROW_RESIDUAL_LIMIT:
                raise RowNormalizationError(f"row {b} residual {self.row_residuals[b]:.3e}")
            a = np.arange(2, b + 1, dtype=float)
            self.mean_decrement[b] = neumaier_sum(p * (a - 1.0))
            self.entropy[b] = max(0.0, -neumaier_sum(np.where(p > 0, p * (lw - math.log(gb)), 0.0)))
            if kept is not None:
                kept.append(lw - log_binomial(b, a))
        self.log_lambda = kept

    def merger_probabilities(self, b: int) -> np.ndarray:
        """P(a blocks merge | b blocks) for a = 2..b, renormalised to unit sum."""
        p = np.exp(self._source.log_weights(b)) / self.g[b]
        residual = 1.0 - neumaier_sum(p)
        p[int(np.argmax(p))] += residual
        return p

    def row(self, n: int) -> np.ndarray:
        """Jump row (p_{n,k}) for k = 1..n-1, stored at index k-1."""
        if not 2 <= n <= self.n_max:
            raise DomainError(f"n={n} outside 2..{self.n_max}")
        return self.merger_probabilities(n)[::-1].copy()

    def rows(self):
        """Yield (n, jump row) for n = 2..n_max in order."""
        for n in range(2, self.n_max + 1):
            yield n, self.row(n)

    @property
    def checksum(self) -> float:
        """Compensated sum of all mean decrements; cheap fingerprint of the table."""
        return float(neumaier_sum(self.mean_decrement[2:]))


def jump_row(table: RateTable, n: int) -> np.ndarray:
    return table.row(n)


def merger_size_probabilities(table: RateTable, b: int) -> np.ndarray:
    return table.merger_probabilities(b)


def first_jump_decrement_mean(table: RateTable, n: int, cross_check: bool = False) -> float:
    """E[X_1^(n)] = sum_k p_{n,k} (n - k).

    With cross_check, the value is compared against the integral route and a
    DecrementMismatchWarning is raised above DECREMENT_CROSS_CHECK_TOL relative.
    """
    if not 2 <= n <= table.n_max:
        raise DomainError(f"n={n} outside 2..{table.n_max}")
    value = float(table.mean_decrement[n])
    if cross_check:
        alt = first_jump_decrement_mean_integral(table.measure, n)
        rel = abs(value - alt) / abs(alt)
        if rel > DECREMENT_CROSS_CHECK_TOL:
            warnings.warn(
                f"E[X_1] at n={n}: rows give {value!r}, integrals give {alt!r} (rel {rel:.2e})",
                DecrementMismatchWarning,
                stacklevel=2,
            )
    return value


def first_jump_decrement_mean_integral(measure: CoalescentMeasure, n: int) -> float:
    """E[X_1^(n)] as a ratio of integrals of the tail functions against (1-t)**(n-2).

    The numerator weight is int_t^1 rho(r) dr and the denominator weight is
    t rho(t). Independent of the jump rows; used as a cross-check.
    """
    from .measure import rho, rho_integral

    if n < 2:
        raise DomainError("n must be at least 2")
    a = measure.alpha
    spec = QuadratureSpec(rel_tol=1e-11, abs_tol=0.0, max_subdivisions=2000)
    # the weight (1-t)**(n-2) lives on t ~ 1/n: split on a geometric grid
    edges = [0.0]
    edge = 1.0 / n
    while edge < 0.5:
        edges.append(edge)
        edge *= 4.0
    edges.append(1.0)

    def integral(fun):
        parts = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            if lo == 0.0:
                parts.append(integrate_singular(fun, spec.with_exponents(1.0 - a, 0.0), 0.0, hi))
            else:
                parts.append(integrate_singular(fun, spec.with_exponents(0.0, 0.0), lo, hi))
        return math.fsum(parts)

    def num(t):
        return (1.0 - t) ** (n - 2) * rho_integral(measure, t) if 0.0 < t < 1.0 else 0.0

    def den(t):
        return (1.0 - t) ** (n - 2) * t * rho(measure, t) if 0.0 < t < 1.0 else 0.0

    return integral(num) / integral(den)


def tilted_factorial_sum(table: RateTable, n: int, l: int, r: float) -> float:
    """S(n,l,r) = sum_k p_{n,k} (k-1)_l / (n)_l (n/k)**r."""
    if not 1 <= l <= n - 2:
        raise DomainError(f"need 1 <= l <= n-2, got l={l}, n={n}")
    if r < 0:
        raise DomainError("r must be nonnegative")
    if r >= table.measure.omega(l):
        raise DomainError(f"r={r} >= omega^({l})={table.measure.omega(l)}: the sum has no finite limit law")
    p = table.row(n)
    k = np.arange(1, n, dtype=float)
    fall = np.ones(n - 1)
    for i in range(l):
        fall *= np.maximum(k - 1.0 - i, 0.0) / (n - i)
    return float(neumaier_sum(p * fall * (n / k) ** r))
