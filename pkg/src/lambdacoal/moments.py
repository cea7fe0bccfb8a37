"""Exact moments of external branch lengths by forward recurrence in n.

Conditioning on the first collision of the n-coalescent: T_1 is the holding
time E/g_n plus, if leaf 1 survives as a singleton into the k-block state
(probability p_{n,k} (k-1)/n), an independent copy of T_1^(k).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import moment_step, pair_step
from .asymptotics import limit_mean
from .measure import CoalescentMeasure
from .rates import RateTable
from .specfun import DomainError

__all__ = [
    "MomentTable",
    "solve_moments",
    "solve_first_moment",
    "solve_higher_moments",
    "solve_pair_moment",
    "lext_mse",
]


@dataclass
class MomentTable:
    """E[(T_1^(n))^m] in ``mT[m, n]`` and E[T_1^(n) T_2^(n)] in ``mTT[n]``.

    Columns 0 and 1 are NaN; row ``mT[0]`` is unused.
    """

    measure: CoalescentMeasure
    n_max: int
    orders: int
    mT: np.ndarray
    mTT: np.ndarray | None

    @property
    def ns(self) -> np.ndarray:
        return np.arange(2, self.n_max + 1)

    def variance(self, n=None):
        n = self.ns if n is None else n
        return self.mT[2, n] - self.mT[1, n] ** 2

    def covariance(self, n=None):
        n = self.ns if n is None else n
        return self.mTT[n] - self.mT[1, n] ** 2

    def mse(self, n=None):
        n = self.ns if n is None else n
        return lext_mse(self.mT, self.mTT, n, limit_mean(self.measure), self.measure.alpha)

    def rescaled_moment(self, m: int, n=None):
        """E[(n**(alpha-1) T_1^(n))**m]."""
        n = self.ns if n is None else np.asarray(n)
        return self.mT[m, n] * np.power(n, m * (self.measure.alpha - 1.0))


def _check(table: RateTable, orders: int):
    if orders < 1:
        raise DomainError("orders must be at least 1")


def solve_moments(table: RateTable, orders: int = 2, pair: bool = True) -> MomentTable:
    """Single forward pass for orders 1..M and, optionally, the pair moment."""
    _check(table, orders)
    size = table.n_max + 1
    mt = np.full((orders + 1, size), np.nan)
    mtt = np.full(size, np.nan) if pair else None
    # binomial coefficients and factorials up to M (small)
    factorials = np.array([math.factorial(j) for j in range(orders + 1)], dtype=float)
    binom = np.zeros((orders + 1, orders + 1))
    for m in range(orders + 1):
        for j in range(m + 1):
            binom[m, j] = math.comb(m, j)
    dummy = np.zeros(size) if mtt is None else mtt
    for n, p in table.rows():
        moment_step(p, n, 1.0 / table.g[n], mt, dummy, factorials, binom, pair)
    return MomentTable(table.measure, table.n_max, orders, mt, mtt)


def solve_first_moment(table: RateTable) -> np.ndarray:
    """E[T_1^(n)] = 1/g_n + sum_k p_{n,k} (k-1)/n E[T_1^(k)], indexed by n."""
    return solve_moments(table, 1, pair=False).mT[1]


def solve_higher_moments(table: RateTable, orders: int) -> np.ndarray:
    """E[(T_1^(n))^m] for m = 1..orders; row m of the returned array."""
    if orders < 2:
        raise DomainError("higher moments need orders >= 2")
    return solve_moments(table, orders, pair=False).mT


def solve_pair_moment(table: RateTable, first: np.ndarray) -> np.ndarray:
    """E[T_1 T_2] = 2 E[T_1]/g_n + sum_k p_{n,k} (k-1)_2/(n)_2 E[T_1^(k) T_2^(k)]."""
    first = np.asarray(first, dtype=float)
    if first.shape[0] < table.n_max + 1:
        raise DomainError("first-moment column shorter than the rate table")
    mtt = np.full(table.n_max + 1, np.nan)
    for n, p in table.rows():
        pair_step(p, n, 1.0 / table.g[n], first[n], mtt)
    return mtt


def lext_mse(mT: np.ndarray, mTT: np.ndarray, n, ET: float, alpha: float):
    """E[(L_ext^(n) - n**(2-alpha) E[T])**2] expanded over pairs of leaves.

    n E[T_1^2] + n(n-1) E[T_1 T_2] - 2 n**(3-alpha) E[T] E[T_1] + n**(4-2alpha) E[T]**2.
    """
    n_arr = np.asarray(n)
    nf = n_arr.astype(float)
    out = (
        nf * mT[2, n_arr]
        + nf * (nf - 1.0) * mTT[n_arr]
        - 2.0 * nf ** (3.0 - alpha) * ET * mT[1, n_arr]
        + nf ** (4.0 - 2.0 * alpha) * ET**2
    )
    return float(out) if out.ndim == 0 else out
