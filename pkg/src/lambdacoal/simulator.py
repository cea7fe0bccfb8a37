"""Monte Carlo simulation of the n-coalescent.

Only the block count and the identities of leaves that are still singleton
blocks are tracked. A merger picks a uniform a-subset of the b blocks one
block at a time; the first ``s`` slots of the leaf array are the live
singletons, so a single uniform both decides "singleton or not" and picks
which one.

Replicate r draws a fixed budget of 4n + 1 uniforms from
Philox(key = master_seed * 2**64 + r), so results do not depend on how
replicates are scheduled across threads.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .measure import CoalescentMeasure
from .rates import RateTable
from .specfun import DomainError

__all__ = [
    "ALIAS_THRESHOLD",
    "MergerTables",
    "build_alias",
    "sample_merger_size",
    "CoalescentState",
    "iterate_states",
    "SimulationSample",
    "simulate_tree",
    "replicate_stream",
    "FunctionalStats",
    "SimulationSummary",
    "run_experiment",
    "default_workers",
    "WORKERS_ENV",
]

ALIAS_THRESHOLD = 16
WORKERS_ENV = "LAMBDACOAL_WORKERS"
_CHUNK = 256
FUNCTIONALS = ("T1", "T2", "T1_sq", "T1T2", "L_ext", "L_total", "tau", "ext_ratio", "T_random")


@njit(cache=True)
def build_alias(p):
    """Vose's alias table for probabilities p (summing to 1)."""
    m = p.shape[0]
    prob = np.zeros(m)
    alias = np.zeros(m, dtype=np.int64)
    scaled = p * m
    small = np.empty(m, dtype=np.int64)
    large = np.empty(m, dtype=np.int64)
    ns = 0
    nl = 0
    for i in range(m):
        if scaled[i] < 1.0:
            small[ns] = i
            ns += 1
        else:
            large[nl] = i
            nl += 1
    while ns > 0 and nl > 0:
        ns -= 1
        s = small[ns]
        l = large[nl - 1]
        prob[s] = scaled[s]
        alias[s] = l
        scaled[l] = (scaled[l] + scaled[s]) - 1.0
        if scaled[l] < 1.0:
            nl -= 1
            small[ns] = l
            ns += 1
    for i in range(nl):
        prob[large[i]] = 1.0
        alias[large[i]] = large[i]
    for i in range(ns):
        prob[small[i]] = 1.0
        alias[small[i]] = small[i]
    return prob, alias


@njit(cache=True, nogil=True)
def _draw_size(b, u, offsets, cdf, aprob, alias, threshold):
    """Merger size a in 2..b from one uniform."""
    base = offsets[b]
    m = b - 1
    if b <= threshold:
        for i in range(m - 1):
            if u < cdf[base + i]:
                return i + 2
        return b
    x = u * m
    i = int(x)
    if i >= m:
        i = m - 1
    if x - i < aprob[base + i]:
        return i + 2
    return alias[base + i] + 2


@njit(cache=True, nogil=True)
def _simulate_one(n, u, g, offsets, cdf, aprob, alias, threshold, leaves, ext):
    """One tree from uniforms u; fills ext with the external lengths.

    Returns (L_total, tau).
    """
    for i in range(n):
        leaves[i] = i
        ext[i] = 0.0
    b = n
    s = n
    t = 0.0
    total = 0.0
    tau = 0
    pos = 0
    while b > 1:
        hold = -math.log1p(-u[pos]) / g[b]
        pos += 1
        t += hold
        total += b * hold
        a = _draw_size(b, u[pos], offsets, cdf, aprob, alias, threshold)
        pos += 1
        live = s
        for i in range(a):
            remaining = b - i
            x = u[pos] * remaining
            pos += 1
            if x < live:
                j = int(x)
                if j >= live:
                    j = live - 1
                leaf = leaves[j]
                leaves[j] = leaves[live - 1]
                leaves[live - 1] = leaf
                ext[leaf] = t
                live -= 1
        s = live
        b = b - a + 1
        tau += 1
    return total, tau


@njit(cache=True, nogil=True)
def _simulate_batch(n, U, g, offsets, cdf, aprob, alias, threshold, out):
    leaves = np.empty(n, dtype=np.int64)
    ext = np.empty(n)
    for r in range(U.shape[0]):
        total, tau = _simulate_one(n, U[r], g, offsets, cdf, aprob, alias, threshold, leaves, ext)
        lext = 0.0
        for i in range(n):
            lext += ext[i]
        pick = int(U[r, 4 * n] * n)
        if pick >= n:
            pick = n - 1
        out[r, 0] = ext[0]
        out[r, 1] = ext[1]
        out[r, 2] = lext
        out[r, 3] = total
        out[r, 4] = tau
        out[r, 5] = ext[pick]


@njit(cache=True, nogil=True)
def _draw_sizes(b, u, offsets, cdf, aprob, alias, threshold, out):
    for i in range(u.shape[0]):
        out[i] = _draw_size(b, u[i], offsets, cdf, aprob, alias, threshold)


class MergerTables:
    """Per-b merger-size tables (inverse CDF for small b, alias above)."""

    def __init__(self, table: RateTable, n: int | None = None, threshold: int = ALIAS_THRESHOLD):
        n = table.n_max if n is None else n
        if not 2 <= n <= table.n_max:
            raise DomainError(f"n={n} outside the rate table")
        self.n = n
        self.threshold = int(threshold)
        self.g = np.ascontiguousarray(table.g[: n + 1])
        self.offsets = np.zeros(n + 2, dtype=np.int64)
        for b in range(2, n + 1):
            self.offsets[b + 1] = self.offsets[b] + (b - 1)
        size = int(self.offsets[n + 1])
        self.cdf = np.zeros(size)
        self.aprob = np.zeros(size)
        self.alias = np.zeros(size, dtype=np.int64)
        self.probs: dict[int, np.ndarray] = {}
        for b in range(2, n + 1):
            p = table.merger_probabilities(b)
            lo, hi = int(self.offsets[b]), int(self.offsets[b + 1])
            self.probs[b] = p
            c = np.cumsum(p)
            c[-1] = 1.0
            self.cdf[lo:hi] = c
            if b > self.threshold:
                pr, al = build_alias(p)
                self.aprob[lo:hi] = pr
                self.alias[lo:hi] = al

    def kernel_args(self):
        return self.g, self.offsets, self.cdf, self.aprob, self.alias, self.threshold

    def draw(self, b: int, uniforms: np.ndarray) -> np.ndarray:
        """Merger sizes at b blocks, one per uniform."""
        if not 2 <= b <= self.n:
            raise DomainError(f"b={b} outside 2..{self.n}")
        u = np.ascontiguousarray(uniforms, dtype=float)
        out = np.empty(u.shape[0], dtype=np.int64)
        _, offsets, cdf, aprob, alias, th = self.kernel_args()
        _draw_sizes(b, u, offsets, cdf, aprob, alias, th, out)
        return out


def sample_merger_size(probs: np.ndarray, u: float, threshold: int = ALIAS_THRESHOLD) -> int:
    """Merger size from P(a) for a = 2..b (``probs[a-2]``) and one uniform."""
    probs = np.asarray(probs, dtype=float)
    b = probs.shape[0] + 1
    if b < 2:
        raise DomainError("need at least one merger size")
    offsets = np.zeros(b + 2, dtype=np.int64)
    offsets[b + 1] = b - 1
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    if b > threshold:
        aprob, alias = build_alias(probs)
    else:
        aprob = np.zeros(b - 1)
        alias = np.zeros(b - 1, dtype=np.int64)
    return int(_draw_size(b, float(u), offsets, cdf, aprob, alias, threshold))


def replicate_stream(master_seed: int, replicate: int) -> np.random.Generator:
    if not 0 <= master_seed < 2**64:
        raise DomainError("master_seed must lie in [0, 2**64)")
    return np.random.Generator(np.random.Philox(key=(int(master_seed) << 64) | int(replicate)))


def _uniforms(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.random(4 * n + 1)


@dataclass
class CoalescentState:
    block_count: int
    singleton_flags: np.ndarray
    elapsed_time: float
    collisions_so_far: int


def iterate_states(tables: MergerTables, n: int, uniforms: np.ndarray):
    """Plain-Python replay of the kernel, yielding the state after each collision."""
    u = np.asarray(uniforms, dtype=float)
    leaves = list(range(n))
    flags = np.ones(n, dtype=bool)
    b, s, t, tau, pos = n, n, 0.0, 0, 0
    yield CoalescentState(b, flags.copy(), t, tau)
    while b > 1:
        t += -math.log1p(-u[pos]) / tables.g[b]
        a = int(tables.draw(b, u[pos + 1 : pos + 2])[0])
        pos += 2
        live = s
        for i in range(a):
            x = u[pos] * (b - i)
            pos += 1
            if x < live:
                j = min(int(x), live - 1)
                leaves[j], leaves[live - 1] = leaves[live - 1], leaves[j]
                flags[leaves[live - 1]] = False
                live -= 1
        s = live
        b -= a - 1
        tau += 1
        yield CoalescentState(b, flags.copy(), t, tau)


@dataclass
class SimulationSample:
    external_lengths: np.ndarray
    L_ext: float
    L_total: float
    tau: int


def simulate_tree(
    measure: CoalescentMeasure, n: int, rng_stream: np.random.Generator, tables: MergerTables | None = None
) -> SimulationSample:
    """One tree with n leaves."""
    if n < 2:
        raise DomainError("n must be at least 2")
    if tables is None:
        tables = MergerTables(RateTable(measure, n), n)
    u = _uniforms(n, rng_stream)
    leaves = np.empty(n, dtype=np.int64)
    ext = np.empty(n)
    total, tau = _simulate_one(n, u, *tables.kernel_args(), leaves, ext)
    lext = 0.0
    for v in ext:
        lext += v
    return SimulationSample(ext, lext, float(total), int(tau))


@dataclass(frozen=True)
class FunctionalStats:
    mean: float
    variance: float
    se: float


def _stats(x: np.ndarray) -> FunctionalStats:
    n = x.shape[0]
    mean = math.fsum(x.tolist()) / n
    var = math.fsum(((x - mean) ** 2).tolist()) / (n - 1) if n > 1 else 0.0
    return FunctionalStats(mean, var, math.sqrt(var / n))


@dataclass
class SimulationSummary:
    """Aggregated estimators; ``scaled_random_external`` is sorted n**(alpha-1) T for one random leaf per tree."""

    n: int
    alpha: float
    replicate_count: int
    master_seed: int
    stats: dict[str, FunctionalStats]
    scaled_random_external: np.ndarray = field(repr=False)
    raw: dict[str, np.ndarray] | None = field(default=None, repr=False)

    def ecdf(self, x):
        return np.searchsorted(self.scaled_random_external, x, side="right") / self.replicate_count

    def identical(self, other: "SimulationSummary") -> bool:
        return (
            (self.n, self.alpha, self.replicate_count, self.master_seed) ==
            (other.n, other.alpha, other.replicate_count, other.master_seed)
            and self.stats == other.stats
            and np.array_equal(self.scaled_random_external, other.scaled_random_external)
        )


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise DomainError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if value < 1:
        raise DomainError(f"{WORKERS_ENV} must be positive")
    return value


def run_experiment(
    measure: CoalescentMeasure,
    n: int,
    N: int,
    master_seed: int,
    workers: int | None = None,
    keep_raw: bool = False,
    tables: MergerTables | None = None,
) -> SimulationSummary:
    """N independent trees; bitwise identical output for any worker count."""
    if N < 1:
        raise DomainError("N must be at least 1")
    if n < 2:
        raise DomainError("n must be at least 2")
    workers = default_workers() if workers is None else int(workers)
    if workers < 1:
        raise DomainError("workers must be positive")
    if tables is None:
        tables = MergerTables(RateTable(measure, n), n)
    out = np.empty((N, 6))
    args = tables.kernel_args()

    def work(start: int):
        stop = min(start + _CHUNK, N)
        U = np.empty((stop - start, 4 * n + 1))
        for r in range(start, stop):
            U[r - start] = _uniforms(n, replicate_stream(master_seed, r))
        _simulate_batch(n, U, *args, out[start:stop])

    starts = range(0, N, _CHUNK)
    if workers == 1:
        for s in starts:
            work(s)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, starts))

    t1, t2, lext, ltot, tau, trand = out.T
    values = {
        "T1": t1,
        "T2": t2,
        "T1_sq": t1 * t1,
        "T1T2": t1 * t2,
        "L_ext": lext,
        "L_total": ltot,
        "tau": tau,
        "ext_ratio": lext / ltot,
        "T_random": trand,
    }
    stats = {k: _stats(np.ascontiguousarray(v)) for k, v in values.items()}
    scaled = np.sort(trand * float(n) ** (measure.alpha - 1.0))
    raw = None
    if keep_raw:
        raw = {"L_ext": lext.copy(), "L_total": ltot.copy(), "tau": tau.astype(np.int64), "T_random_external": trand.copy()}
    return SimulationSummary(n, measure.alpha, N, int(master_seed), stats, scaled, raw)
