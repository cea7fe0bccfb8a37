"""Compiled inner loops. Every reduction runs in a fixed sequential order."""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def neumaier_sum(x):
    s = 0.0
    comp = 0.0
    for i in range(x.shape[0]):
        v = x[i]
        t = s + v
        if abs(s) >= abs(v):
            comp += (s - t) + v
        else:
            comp += (v - t) + s
        s = t
    return s + comp


@njit(cache=True, nogil=True)
def neumaier_dot(w, x):
    s = 0.0
    comp = 0.0
    for i in range(w.shape[0]):
        v = w[i] * x[i]
        t = s + v
        if abs(s) >= abs(v):
            comp += (s - t) + v
        else:
            comp += (v - t) + s
        s = t
    return s + comp


@njit(cache=True, nogil=True)
def moment_step(p, n, g_inv, mt, mtt, factorials, binom, with_pair):
    """Advance the moment recurrences to block count n.

    ``p[k-1]`` is p_{n,k} and ``mt[m, k]`` holds E[(T_1^(k))^m] for k < n
    (row 0 unused). Writes column n of ``mt``, and of ``mtt`` if asked.
    """
    orders = mt.shape[0] - 1
    m_hit = np.zeros(orders + 1)
    for j in range(1, orders + 1):
        s = 0.0
        comp = 0.0
        for k in range(2, n):
            v = p[k - 1] * ((k - 1.0) / n) * mt[j, k]
            t = s + v
            if abs(s) >= abs(v):
                comp += (s - t) + v
            else:
                comp += (v - t) + s
            s = t
        m_hit[j] = s + comp
    # T = E/g + 1_H T' with E ~ Exp(1) independent of (H, T'):
    # E[T^m] = m!/g^m + sum_{j<m} C(m,j) j!/g^j E[1_H T'^(m-j)]
    for m in range(1, orders + 1):
        acc = 0.0
        comp = 0.0
        gp = 1.0
        for j in range(m + 1):
            if j > 0:
                gp *= g_inv
            if j == m:
                v = factorials[m] * gp
            else:
                v = binom[m, j] * factorials[j] * gp * m_hit[m - j]
            t = acc + v
            if abs(acc) >= abs(v):
                comp += (acc - t) + v
            else:
                comp += (v - t) + acc
            acc = t
        mt[m, n] = acc + comp
    if with_pair:
        pair_step(p, n, g_inv, mt[1, n], mtt)


@njit(cache=True, nogil=True)
def pair_step(p, n, g_inv, first, mtt):
    """E[T_1 T_2] at n from the values below n (the k = 2 term has weight 0)."""
    s = 0.0
    comp = 0.0
    denom = n * (n - 1.0)
    for k in range(3, n):
        v = p[k - 1] * ((k - 1.0) * (k - 2.0) / denom) * mtt[k]
        t = s + v
        if abs(s) >= abs(v):
            comp += (s - t) + v
        else:
            comp += (v - t) + s
        s = t
    mtt[n] = 2.0 * first * g_inv + (s + comp)
