import numpy as np
import pytest

from lambdacoal.measure import beta_measure
from lambdacoal.moments import solve_moments
from lambdacoal.rates import RateTable
from lambdacoal.simulator import (
    ALIAS_THRESHOLD,
    WORKERS_ENV,
    MergerTables,
    build_alias,
    default_workers,
    iterate_states,
    replicate_stream,
    run_experiment,
    sample_merger_size,
    simulate_tree,
)
from lambdacoal.specfun import DomainError

M15 = beta_measure(1.5)


@pytest.fixture(scope="module")
def tables100():
    t = RateTable(M15, 100)
    return t, MergerTables(t, 100)


def test_two_leaves_forced_path():
    s = simulate_tree(M15, 2, replicate_stream(7, 0))
    assert s.tau == 1
    assert s.external_lengths[0] == s.external_lengths[1]
    assert s.L_ext == pytest.approx(2 * s.external_lengths[0], rel=1e-15)
    assert s.L_total == pytest.approx(s.L_ext, rel=1e-15)


def test_small_merger_sizes():
    assert sample_merger_size(np.array([1.0]), 0.999) == 2
    p3 = np.array([0.9, 0.1])
    assert sample_merger_size(p3, 0.5) == 2
    assert sample_merger_size(p3, 0.95) == 3


@pytest.mark.parametrize("b", [5, ALIAS_THRESHOLD, ALIAS_THRESHOLD + 1, 50])
def test_sampler_is_exact_on_a_uniform_grid(b, tables100):
    # both the inverse-CDF and the alias path map a fine grid to the exact row
    table, tabs = tables100
    u = (np.arange(2_000_000) + 0.5) / 2_000_000
    counts = np.bincount(tabs.draw(b, u), minlength=b + 1)[2:]
    np.testing.assert_allclose(counts / u.size, table.merger_probabilities(b), atol=2e-6)


def test_alias_table_reconstructs_probabilities():
    rng = np.random.default_rng(1)
    p = rng.dirichlet(np.ones(40))
    prob, alias = build_alias(p)
    m = p.size
    back = prob / m
    for i in range(m):
        back[alias[i]] += (1.0 - prob[i]) / m
    np.testing.assert_allclose(back, p, atol=1e-14)


def test_merger_frequencies_at_50(tables100):
    table, tabs = tables100
    rng = np.random.Generator(np.random.Philox(key=99))
    N = 1_000_000
    a = tabs.draw(50, rng.random(N))
    freq = np.bincount(a, minlength=51)[2:] / N
    p = table.merger_probabilities(50)
    se = np.sqrt(p * (1 - p) / N)
    assert np.max(np.abs(freq - p) / se) < 4


def test_single_replicate_equals_simulate_tree(tables100):
    _, tabs = tables100
    seed = 12345
    summ = run_experiment(M15, 100, 1, seed, keep_raw=True, tables=tabs)
    one = simulate_tree(M15, 100, replicate_stream(seed, 0), tables=tabs)
    assert summ.raw["L_ext"][0] == one.L_ext
    assert summ.raw["L_total"][0] == one.L_total
    assert summ.raw["tau"][0] == one.tau
    assert summ.stats["T1"].mean == one.external_lengths[0]


def test_worker_count_does_not_change_results(tables100):
    _, tabs = tables100
    runs = [run_experiment(M15, 100, 1500, 4, workers=w, tables=tabs) for w in (1, 4, 16)]
    assert runs[0].identical(runs[1]) and runs[0].identical(runs[2])
    other = run_experiment(M15, 100, 1500, 5, workers=4, tables=tabs)
    assert not runs[0].identical(other)


def test_python_replay_matches_kernel(tables100):
    _, tabs = tables100
    n = 30
    small = MergerTables(RateTable(M15, n), n)
    for r in range(5):
        sample = simulate_tree(M15, n, replicate_stream(3, r), tables=small)
        u = replicate_stream(3, r).random(4 * n + 1)
        states = list(iterate_states(small, n, u))
        last = states[-1]
        assert last.block_count == 1
        assert last.collisions_so_far == sample.tau
        assert not last.singleton_flags.any()
        assert max(sample.external_lengths) <= last.elapsed_time * (1 + 1e-14)


def test_per_sample_invariants(tables100):
    _, tabs = tables100
    s = run_experiment(M15, 100, 3000, 8, keep_raw=True, tables=tabs)
    raw = s.raw
    assert np.all(raw["L_ext"] <= raw["L_total"])
    assert np.all(raw["tau"] <= 99)
    assert np.all(raw["T_random_external"] > 0)
    ratio = s.stats["ext_ratio"].mean
    assert 0 < ratio < 1


def test_exchangeability():
    tabs = MergerTables(RateTable(M15, 50), 50)
    s = run_experiment(M15, 50, 100_000, 21, workers=4, tables=tabs)
    t1, t2 = s.stats["T1"], s.stats["T2"]
    assert abs(t1.mean - t2.mean) < 4 * np.hypot(t1.se, t2.se)


@pytest.mark.parametrize("n", [3, 20])
def test_means_match_exact_moments(n):
    table = RateTable(M15, n)
    mt = solve_moments(table, orders=2, pair=True)
    s = run_experiment(M15, n, 60_000, 100 + n, workers=4, tables=MergerTables(table, n))
    exact = {"T1": mt.mT[1, n], "T1_sq": mt.mT[2, n], "T1T2": mt.mTT[n], "L_ext": n * mt.mT[1, n]}
    for k, v in exact.items():
        assert abs(s.stats[k].mean - v) < 4 * s.stats[k].se, k


def test_validation(monkeypatch):
    with pytest.raises(DomainError):
        run_experiment(M15, 10, 0, 1)
    with pytest.raises(DomainError):
        replicate_stream(-1, 0)
    monkeypatch.setenv(WORKERS_ENV, "3")
    assert default_workers() == 3
    monkeypatch.setenv(WORKERS_ENV, "zero")
    with pytest.raises(DomainError):
        default_workers()
