import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nswhittle.core import RmabConfig
from nswhittle.estimator import (
    ConfidenceSet,
    InvalidDelta,
    NonMonotoneTime,
    SlidingWindowStats,
    build_confidence_arrays,
    build_confidence_set,
    confidence_radius,
    contains,
    empirical_transition,
    record_transition,
    window_count,
)


def cfg(s=2, t=1024, delta=0.05):
    return RmabConfig(num_arms=1, num_states=s, budget=1, discount=0.9, horizon=t, failure_prob=delta)


def test_single_record_counts_at_next_step():
    stats = [SlidingWindowStats(2, window=10)]
    record_transition(stats, 0, 1, 0, 1, 1)
    assert window_count(stats, 0, 2, 0, 1) == 1


def test_window_drops_oldest_record():
    stats = [SlidingWindowStats(2, window=2)]
    for t, nxt in zip((1, 2, 3), (0, 1, 1)):
        record_transition(stats, 0, t, 0, 1, nxt)
    assert window_count(stats, 0, 4, 0, 1) == 2
    assert stats[0].window_counts(4)[0, 1].tolist() == [0, 2]


def test_out_of_order_record_raises():
    stats = [SlidingWindowStats(2, window=5)]
    record_transition(stats, 0, 3, 0, 0, 0)
    with pytest.raises(NonMonotoneTime):
        record_transition(stats, 0, 2, 0, 0, 0)


def test_zero_and_full_counts():
    stats = [SlidingWindowStats(2, window=100)]
    assert window_count(stats, 0, 1, 0, 0) == 1
    for t in range(1, 6):
        record_transition(stats, 0, t, 1, 0, 0)
    assert window_count(stats, 0, 6, 1, 0) == 5


def test_window_spans_four_of_seven():
    stats = [SlidingWindowStats(3, window=4)]
    for t in range(1, 8):
        record_transition(stats, 0, t, 2, 1, 0)
    assert window_count(stats, 0, 8, 2, 1) == 4


def test_future_query_recounts_window():
    st_ = SlidingWindowStats(2, window=4)
    for t in range(1, 8):
        st_.record(t, 0, 0, t % 2)
    # at t=10 the window [6, 9] holds only records 6 and 7
    assert st_.window_counts(10)[0, 0].sum() == 2
    with pytest.raises(NonMonotoneTime):
        st_.window_counts(5)


@settings(max_examples=50)
@given(st.integers(1, 12), st.lists(st.tuples(st.integers(0, 2), st.integers(0, 1), st.integers(0, 2)),
                                     min_size=1, max_size=60))
def test_incremental_counts_match_brute_force(window, records):
    st_ = SlidingWindowStats(3, window)
    for t, (s, a, nxt) in enumerate(records, start=1):
        st_.record(t, s, a, nxt)
    query = len(records) + 1
    brute = np.zeros((3, 2, 3), dtype=np.int64)
    for q, (s, a, nxt) in enumerate(records, start=1):
        if max(query - window, 1) <= q <= query - 1:
            brute[s, a, nxt] += 1
    assert np.array_equal(st_.window_counts(query), brute)
    assert np.array_equal(st_.recount(), brute)


def test_empirical_rows():
    stats = [SlidingWindowStats(2, 10), SlidingWindowStats(3, 10), SlidingWindowStats(3, 10)]
    for t, nxt in enumerate((1, 1, 0), start=1):
        record_transition(stats, 0, t, 0, 0, nxt)
        record_transition(stats, 2, t, 1, 1, 0)
    assert empirical_transition(stats, 0, 4, 0, 0) == pytest.approx([1 / 3, 2 / 3])
    assert empirical_transition(stats, 1, 4, 0, 0) == pytest.approx([1 / 3] * 3)
    assert empirical_transition(stats, 2, 4, 1, 1).tolist() == [1.0, 0.0, 0.0]


def test_radius_matches_high_precision_reference():
    mpmath.mp.dps = 50
    ref = mpmath.sqrt(4 * mpmath.log(mpmath.mpf(2 * 2 * 1024) / mpmath.mpf("0.05")) / 8)
    got = confidence_radius(8, 2, 2, 1024, 0.05)
    assert float(got) == pytest.approx(float(ref), rel=1e-14)
    assert float(got) == pytest.approx(2.3782, abs=5e-4)


def test_radius_scaling():
    r1 = confidence_radius(9, 3, 2, 500, 0.1)
    assert confidence_radius(36, 3, 2, 500, 0.1) / r1 == pytest.approx(0.5, rel=1e-15)
    radii = confidence_radius(np.arange(1, 10_000, 97), 3, 2, 500, 0.1)
    assert np.all(np.diff(radii) < 0)
    assert radii[-1] < 0.1


def test_radius_rejects_bad_delta():
    for delta in (0.0, 1.0, -0.2):
        with pytest.raises(InvalidDelta):
            confidence_radius(4, 2, 2, 10, delta)


def test_unseen_pair_gets_uniform_center_and_unit_count_radius():
    stats = [SlidingWindowStats(2, 10)]
    cs = build_confidence_set(stats, 0, 1, 0, 1, eta=0.0, config=cfg())
    assert cs.center.tolist() == [0.5, 0.5]
    assert cs.radius == pytest.approx(np.sqrt(2 * 2 * np.log(2 * 2 * 1024 / 0.05)))
    assert contains(cs, cs.center)


def test_membership_grows_with_bonus():
    rng = np.random.default_rng(0)
    center = np.array([0.2, 0.3, 0.5])
    points = rng.dirichlet(np.ones(3), size=200)
    inside = [None] * 4
    for k, eta in enumerate((0.0, 0.1, 0.3, 0.9)):
        cs = ConfidenceSet(center, 0.2, eta)
        inside[k] = np.array([contains(cs, p) for p in points])
    for small, big in zip(inside, inside[1:]):
        assert np.all(big[small])


def test_contains_examples():
    assert not contains(ConfidenceSet(np.array([0.5, 0.5]), 0.2, 0.1), [0.9, 0.1])
    cover = ConfidenceSet(np.array([0.5, 0.5]), 1.5, 0.5)
    for p in ([1, 0], [0, 1], [0.3, 0.7]):
        assert contains(cover, p)


def test_stacked_sets_match_single_sets():
    stats = [SlidingWindowStats(3, 6) for _ in range(2)]
    rng = np.random.default_rng(3)
    for t in range(1, 20):
        for i in range(2):
            stats[i].record(t, int(rng.integers(3)), int(rng.integers(2)), int(rng.integers(3)))
    c = cfg(s=3, t=50, delta=0.1)
    arrays = build_confidence_arrays(stats, 20, [0.05, 0.2], c)
    for i, eta in enumerate((0.05, 0.2)):
        for s in range(3):
            for a in range(2):
                single = build_confidence_set(stats, i, 20, s, a, eta, c)
                got = arrays.as_set(i, s, a)
                assert np.allclose(got.center, single.center)
                assert got.radius == pytest.approx(single.radius)
                assert got.total_radius == pytest.approx(single.total_radius)
