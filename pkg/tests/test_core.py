import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mblab.core import RegretLedger, SampleStore, as_assignment, regret, reward
from mblab.errors import DimensionError


def test_reward_examples():
    assert reward([[1, 2], [3, 4]]) == 4
    assert reward(np.zeros((3, 5))) == 0
    assert reward([[5, -2, 7]]) == -2


def test_reward_rejects_mismatched_lengths():
    with pytest.raises(DimensionError):
        reward([[1, 2], [3]])
    with pytest.raises(DimensionError):
        reward([])


curves = arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)),
                elements=st.floats(-1e4, 1e4))


@given(curves, st.randoms())
@settings(max_examples=100, deadline=None)
def test_reward_permutation_invariant(c, rnd):
    order = list(range(c.shape[0]))
    rnd.shuffle(order)
    assert reward(c[order]) == pytest.approx(reward(c), rel=1e-12, abs=1e-9)


@given(curves, st.floats(0, 100))
@settings(max_examples=100, deadline=None)
def test_reward_monotone_and_bounded_by_slot_sums(c, bump):
    raised = c.copy()
    raised[0, 0] += bump
    assert reward(raised) >= reward(c) - 1e-9
    sums = c.sum(axis=0)
    assert np.all(reward(c) <= sums + 1e-9)
    assert reward(c) == sums[np.argmin(sums)]


def test_regret_examples():
    assert regret(10, 7) == 3
    assert regret(4.5, 4.5) == 0
    assert regret(10, 12) == -2


def test_record_outcome():
    s = SampleStore(1, 1, 1)
    s.record((0,), [[5.0]])
    assert s.count(0, 0) == 1
    assert [c.tolist() for c in s.samples[0][0]] == [[5.0]]
    s.record((0,), [[5.0]])
    assert len(s.samples[0][0]) == 2


def test_counts_sum_to_episodes():
    rng = np.random.default_rng(0)
    s = SampleStore(3, 4, 2)
    for t in range(1, 31):
        s.record(rng.integers(0, 4, 3), rng.normal(size=(3, 2)))
        assert np.all(s.counts.sum(axis=1) == t)
        for i in range(3):
            for j in range(4):
                assert s.count(i, j) == len(s.samples[i][j])


def test_record_rejects_bad_input():
    s = SampleStore(2, 2, 1)
    with pytest.raises(IndexError):
        s.record((0, 2), [[1.0], [1.0]])
    with pytest.raises(DimensionError):
        s.record((0,), [[1.0]])
    with pytest.raises(DimensionError):
        as_assignment((0, 1, 0), [2, 2])


def test_weighted_mean_examples():
    s = SampleStore(1, 1, 1)
    assert s.weighted_mean_curve(0, 0, 0.3, [2000.0]).tolist() == [2000.0]
    assert s.weighted_mean_curve(0, 0, 0.0, [2000.0]).tolist() == [2000.0]
    s.record((0,), [[100.0]])
    assert s.weighted_mean_curve(0, 0, 0.15, [2000.0])[0] == pytest.approx(400.0 / 1.15)
    s2 = SampleStore(1, 1, 1)
    s2.record((0,), [[100.0]]).record((0,), [[300.0]])
    assert s2.weighted_mean_curve(0, 0, 0.0, [2000.0]).tolist() == [200.0]


def test_weighted_mean_limits_and_table():
    rng = np.random.default_rng(1)
    s = SampleStore(2, 3, 4)
    for _ in range(7):
        s.record(rng.integers(0, 3, 2), rng.normal(500, 50, size=(2, 4)))
    init = np.full(4, 2000.0)
    for i in range(2):
        for j in range(3):
            if s.count(i, j):
                mean = np.mean(s.samples[i][j], axis=0)
                assert np.allclose(s.weighted_mean_curve(i, j, 0.0, init), mean, rtol=1e-12)
                assert np.allclose(s.weighted_mean_curve(i, j, 1e12, init), init, rtol=1e-6)
    table = s.mean_table(0.2, 2000.0)
    for i in range(2):
        for j in range(3):
            assert np.allclose(table[i, j], s.weighted_mean_curve(i, j, 0.2, init))


def test_repeated_identical_samples_keep_exact_mean():
    s = SampleStore(1, 1, 3)
    curve = np.array([[0.1, 1.0 / 3.0, 123.456]])
    for _ in range(50):
        s.record((0,), curve)
    assert np.array_equal(s.mean_table(0.0, 2000.0)[0, 0], curve[0])


def test_ledger_cumulative_and_normalized():
    led = RegretLedger("x", eval_samples=10)
    rng = np.random.default_rng(2)
    for _ in range(200):
        led.add(rng.normal(50, 10), 60.0)
    assert np.allclose(led.recompute_cumulative(), led.cumulative_regret, rtol=1e-9)
    r = led.records[-1]
    assert r.norm_regret == pytest.approx(r.regret / 60.0)


def test_ledger_normalized_missing_for_nonpositive_optimum():
    led = RegretLedger()
    rec = led.add(-5.0, 0.0)
    assert rec.norm_regret is None
    assert rec.cum_norm_regret == 0.0
    assert rec.regret == 5.0
