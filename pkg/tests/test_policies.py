import numpy as np
import pytest

from mblab.core import SampleStore
from mblab.errors import ConfigError
from mblab.optimizer import Solver, SolverConfig
from mblab.policies import (Policy, PolicyConfig, me_build_scenarios, me_select, offline_optimal,
                            random_select, se_select)
from mblab.simulator import SimParams, Simulator, estimate_expected_reward, sample_population

EXACT = Solver(SolverConfig(backend="exact"))


def _store(seed=0, n=3, k=4, H=2, episodes=10):
    rng = np.random.default_rng(seed)
    s = SampleStore(n, k, H)
    for _ in range(episodes):
        s.record(rng.integers(0, k, n), rng.normal(300, 100, size=(n, H)))
    return s


def test_config_validation():
    for bad in (dict(kind="UCB"), dict(beta=-1), dict(epsilon=1.5), dict(tau=-1),
                dict(n_scenarios=0)):
        with pytest.raises(ConfigError):
            PolicyConfig(**bad).validate()


def test_tau_phase_is_random():
    store = _store()
    cfg = PolicyConfig(tau=1)
    picks = {se_select(store, cfg, EXACT, np.random.default_rng(s), 1).assignment
             for s in range(30)}
    assert len(picks) > 1
    sel = se_select(store, cfg, EXACT, np.random.default_rng(0), 1)
    assert sel.report is None


def test_epsilon_one_is_random():
    store = _store()
    cfg = PolicyConfig(epsilon=1.0)
    picks = [se_select(store, cfg, EXACT, np.random.default_rng(s), 5).assignment
             for s in range(200)]
    counts = np.bincount(np.array(picks).ravel(), minlength=4)
    assert counts.min() > 100


def test_fresh_store_lexicographic():
    store = SampleStore(4, 5, 3)
    for kind in ("SE", "ME"):
        cfg = PolicyConfig(kind=kind, beta=0.7, n_scenarios=3)
        sel = Policy(cfg, EXACT, seed=1).select(store, 1)
        assert sel.assignment == (0, 0, 0, 0)


def test_me_build_scenarios_examples():
    s = SampleStore(1, 3, 1)
    s.record((0,), [[7.0]])
    for v in (1.0, 2.0, 3.0):
        s.record((1,), [[v]])
    t = me_build_scenarios(s, 3, 2000.0, np.random.default_rng(0))
    assert t[:, 0, 0, 0].tolist() == [7.0, 7.0, 7.0]
    assert sorted(t[:, 0, 1, 0].tolist()) == [1.0, 2.0, 3.0]
    assert t[:, 0, 2, 0].tolist() == [2000.0] * 3
    with pytest.raises(ValueError):
        me_build_scenarios(s, 0, 2000.0, np.random.default_rng(0))


def test_me_usage_counts_balanced():
    rng = np.random.default_rng(3)
    s = SampleStore(1, 1, 2)
    for _ in range(7):
        s.record((0,), rng.normal(size=(1, 2)))
    t = me_build_scenarios(s, 23, 0.0, rng)
    samples = np.array(s.samples[0][0])
    uses = [int(np.sum(np.all(t[:, 0, 0] == c, axis=1))) for c in samples]
    assert sum(uses) == 23 and max(uses) - min(uses) <= 1


def test_me_single_sample_matches_se():
    rng = np.random.default_rng(4)
    n, k, H = 4, 3, 3
    s = SampleStore(n, k, H)
    for j in range(k):
        s.record((j,) * n, rng.normal(500, 200, size=(n, H)))
    for seed in range(5):
        se = se_select(s, PolicyConfig(beta=0.0, epsilon=0.3), EXACT,
                       np.random.default_rng(seed), 3)
        me = me_select(s, PolicyConfig(kind="ME", n_scenarios=1, epsilon=0.3), EXACT,
                       np.random.default_rng(seed), 3)
        assert se.assignment == me.assignment


def test_pure_function_of_store():
    store = _store(5)
    cfg = PolicyConfig(beta=0.1)
    a = se_select(store, cfg, EXACT, np.random.default_rng(1), 9)
    b = se_select(store, cfg, EXACT, np.random.default_rng(2), 9)
    assert a.assignment == b.assignment


def test_random_select():
    assert random_select([1, 1, 1], np.random.default_rng(0)) == (0, 0, 0)
    draws = np.array([random_select([5], np.random.default_rng(1))[0]])
    rng = np.random.default_rng(2)
    draws = np.array([random_select([5], rng)[0] for _ in range(100_000)])
    counts = np.bincount(draws, minlength=5)
    sd = np.sqrt(100_000 * 0.2 * 0.8)
    assert np.all(np.abs(counts - 20_000) <= 3 * sd)
    assert random_select([3, 4], np.random.default_rng(9)) == \
        random_select([3, 4], np.random.default_rng(9))


def test_epsilon_keeps_every_action_in_play():
    n, k, T, eps = 3, 4, 400, 0.2
    store = SampleStore(n, k, 1)
    pol = Policy(PolicyConfig(epsilon=eps), EXACT, seed=0)
    rng = np.random.default_rng(0)
    for t in range(1, T + 1):
        a = pol.select(store, t).assignment
        store.record(a, rng.normal(100, 10, size=(n, 1)))
    # each pair expects at least T * eps / k selections; allow 3 sd of slack
    floor = T * eps / k
    assert np.all(store.counts >= floor - 3 * np.sqrt(floor))


@pytest.fixture(scope="module")
def noisy_sim():
    return Simulator(sample_population(20, 8, SimParams(), np.random.default_rng(0)), 8)


def test_offline_deterministic():
    sim = Simulator(sample_population(8, 6, SimParams(sigma_u=0.0), np.random.default_rng(1)), 6)
    a = offline_optimal(sim, 5, EXACT, np.random.default_rng(1))
    b = offline_optimal(sim, 5, EXACT, np.random.default_rng(2))
    assert a.assignment == b.assignment and a.value == b.value
    assert a.value == pytest.approx(a.in_sample_value, rel=1e-12)
    assert a.stderr == 0


def test_offline_more_scenarios_help(noisy_sim):
    # pilot: 49 of 50 seeded trials favour 20 scenarios; frozen at a majority
    solver = Solver(SolverConfig(backend="local"))
    wins, optimism = 0, []
    for s in range(50):
        ev = np.random.SeedSequence(1000 + s)
        one = offline_optimal(noisy_sim, 1, solver, np.random.default_rng(s), 400,
                              np.random.default_rng(ev))
        many = offline_optimal(noisy_sim, 20, solver, np.random.default_rng(s), 400,
                               np.random.default_rng(ev))
        wins += many.value >= one.value
        optimism.append(many.in_sample_value - many.value)
        assert many.value != many.in_sample_value
    assert wins > 25
    assert np.mean(optimism) > 0


def test_me_twenty_vs_thirty_scenarios(noisy_sim):
    sim = noisy_sim
    solver = Solver(SolverConfig(backend="local"))
    rng = np.random.default_rng(1)
    store = SampleStore(20, sim.k, 8)
    for _ in range(100):
        a = tuple(rng.integers(0, sim.k, 20))
        store.record(a, sim.episode(a, rng))
    diffs = []
    for s in range(10):
        vals = []
        for N in (20, 30):
            tab = me_build_scenarios(store, N, 2000.0, np.random.default_rng(s))
            a = solver.solve(tab, rng=np.random.default_rng(s)).assignment
            vals.append(estimate_expected_reward(sim, a, 2000, np.random.default_rng(77))[0])
        diffs.append(vals[0] - vals[1])
    diffs = np.array(diffs)
    # pilot: mean 5.6 W against a standard error of about 92 W; frozen at 3 standard errors
    assert abs(diffs.mean()) <= 3 * diffs.std(ddof=1) / np.sqrt(len(diffs))
