import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recalib.core import (
    EvalDistribution,
    InteractionLog,
    LogFormatError,
    item_marginal,
    sample_pair,
    sample_pairs,
    snapshot_at,
    weighted_conditional,
)

import oracles

U1, U2 = 1, 2
I1, I2 = 11, 12


@pytest.fixture
def small_log():
    return InteractionLog([(U1, I1, 0), (U1, I2, 5), (U2, I1, 3)])


@pytest.fixture
def ab_snapshot():
    # A owns {i1, i2}, B owns {i2}
    return oracles.snapshot_of({U1: {I1, I2}, U2: {I2}})


profiles_st = st.dictionaries(
    st.integers(0, 30),
    st.sets(st.integers(0, 12), min_size=1, max_size=6),
    min_size=1,
    max_size=10,
)


def test_snapshot_day0(small_log):
    snap = snapshot_at(small_log, 0)
    assert dict(snap.user_items) == {U1: (I1,)}


def test_snapshot_day5(small_log):
    snap = snapshot_at(small_log, 5)
    assert dict(snap.user_items) == {U1: (I1, I2), U2: (I1,)}
    assert dict(snap.item_users) == {I1: (U1, U2), I2: (U1,)}
    assert snap.n_users == 2 and snap.n_items == 2


def test_snapshot_before_first_event():
    log = InteractionLog([(1, 1, 4)])
    snap = snapshot_at(log, 3)
    assert snap.empty
    assert snap.n_items == 0
    with pytest.raises(ValueError):
        snapshot_at(log, -1)


def test_duplicate_ingest_keeps_earliest_day():
    log = InteractionLog([(1, 2, 7), (1, 2, 3), (1, 2, 9)])
    assert log.events() == [(1, 2, 3)]


@given(profiles_st, st.integers(0, 5))
def test_snapshot_transpose(profiles, day):
    log = InteractionLog((u, i, (u + i) % 6) for u, items in profiles.items() for i in items)
    snap = snapshot_at(log, day)
    for u, items in snap.user_items.items():
        assert items
        for i in items:
            assert u in snap.item_users[i]
    for i, users in snap.item_users.items():
        for u in users:
            assert i in snap.user_items[u]
    expected = {(u, i) for u, items in profiles.items() for i in items if (u + i) % 6 <= day}
    got = {(u, i) for u, items in snap.user_items.items() for i in items}
    assert got == expected


def test_csv_roundtrip(tmp_path, small_log):
    path = tmp_path / "log.csv"
    small_log.write_csv(path)
    assert path.read_text().splitlines()[0] == "user_id,item_id,day"
    assert InteractionLog.read_csv(path).events() == small_log.events()


@pytest.mark.parametrize(
    "text, lineno",
    [
        ("user_id,item_id,day\n1,2,3\n1,x,3\n", 3),
        ("user_id,item_id,day\n1,2\n", 2),
        ("user_id,item_id,day\n1,2,-1\n", 2),
        ("user,item,day\n1,2,3\n", 1),
        ("", 1),
    ],
)
def test_parser_rejects_with_line_numbers(text, lineno):
    with pytest.raises(LogFormatError, match=f"line {lineno}"):
        InteractionLog.parse(io.StringIO(text))


def test_weighted_conditional_examples(ab_snapshot):
    assert weighted_conditional(EvalDistribution(), ab_snapshot, U1, I1) == 0.5
    assert weighted_conditional(EvalDistribution(weights={I1: 2, I2: 1}), ab_snapshot, U1, I1) == pytest.approx(2 / 3)
    a = weighted_conditional(EvalDistribution(weights={I1: 2, I2: 1}), ab_snapshot, U1, I1)
    b = weighted_conditional(EvalDistribution(weights={I1: 20, I2: 10}), ab_snapshot, U1, I1)
    assert a == pytest.approx(b, abs=1e-15)
    assert weighted_conditional(EvalDistribution(), ab_snapshot, U2, I1) == 0.0


def test_weighted_conditional_errors(ab_snapshot):
    with pytest.raises(KeyError):
        weighted_conditional(EvalDistribution(), ab_snapshot, 99, I1)
    with pytest.raises(ValueError):
        EvalDistribution(weights={I1: 0.0})
    with pytest.raises(ValueError):
        EvalDistribution(weights={I1: -1.0})


def test_item_marginal_examples(ab_snapshot):
    # direct enumeration: P(i1) = 1/2 * 1/2, P(i2) = 1/2 * 1/2 + 1/2 * 1
    assert item_marginal(EvalDistribution(), ab_snapshot) == pytest.approx({I1: 0.25, I2: 0.75})
    single = oracles.snapshot_of({5: {7}})
    assert item_marginal(EvalDistribution(), single) == {7: 1.0}


def test_user_prob_validation(ab_snapshot):
    dist = EvalDistribution(user_prob={U1: 0.3, U2: 0.7})
    assert item_marginal(dist, ab_snapshot) == pytest.approx({I1: 0.15, I2: 0.85})
    with pytest.raises(ValueError):
        EvalDistribution(user_prob={U1: 1.0}).user_vector(ab_snapshot)
    with pytest.raises(ValueError):
        EvalDistribution(user_prob={U1: 0.5, U2: 0.6}).user_vector(ab_snapshot)


@settings(max_examples=60)
@given(profiles_st, st.data())
def test_conditional_normalization_and_marginal_oracle(profiles, data):
    snap = oracles.snapshot_of(profiles)
    items = sorted(set().union(*profiles.values()))
    weights = {i: data.draw(st.floats(0.05, 20.0)) for i in items}
    dist = EvalDistribution(weights=weights)
    for u in profiles:
        total = sum(weighted_conditional(dist, snap, u, i) for i in items)
        assert abs(total - 1.0) <= 1e-12
    got = item_marginal(dist, snap)
    want = oracles.marginal(profiles, weights)
    assert sum(got.values()) == pytest.approx(1.0, abs=1e-12)
    for i in items:
        assert got[i] == pytest.approx(want[i], abs=1e-12)


@settings(max_examples=40)
@given(profiles_st, st.floats(1e-3, 1e3), st.data())
def test_scale_invariance(profiles, c, data):
    snap = oracles.snapshot_of(profiles)
    items = sorted(set().union(*profiles.values()))
    weights = {i: data.draw(st.floats(0.1, 10.0)) for i in items}
    d1 = EvalDistribution(weights=weights)
    d2 = EvalDistribution(weights={i: c * w for i, w in weights.items()})
    for u in profiles:
        for i in items:
            assert abs(weighted_conditional(d1, snap, u, i) - weighted_conditional(d2, snap, u, i)) <= 1e-12
    m1, m2 = item_marginal(d1, snap), item_marginal(d2, snap)
    assert all(abs(m1[i] - m2[i]) <= 1e-12 for i in items)


def test_sample_pair_deterministic(ab_snapshot):
    dist = EvalDistribution()
    assert sample_pair(dist, ab_snapshot, 42) == sample_pair(dist, ab_snapshot, 42)


def test_sample_pair_degenerate():
    snap = oracles.snapshot_of({3: {9}})
    for seed in range(5):
        assert sample_pair(EvalDistribution(), snap, seed) == (3, 9)


def test_sample_pair_empty_snapshot():
    snap = snapshot_at(InteractionLog([(1, 1, 5)]), 0)
    with pytest.raises(ValueError):
        sample_pair(EvalDistribution(), snap, 0)


def test_sampling_matches_item_marginal(ab_snapshot):
    n = 100_000
    rows, cols = sample_pairs(EvalDistribution(), ab_snapshot, n, 7)
    p = item_marginal(EvalDistribution(), ab_snapshot)[I1]
    emp = np.mean(ab_snapshot.item_ids[cols] == I1)
    assert abs(emp - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_sampling_chi_square_weighted():
    from scipy.stats import chisquare

    profiles = {0: {1, 2, 3}, 1: {2, 4}, 2: {1, 4, 5, 6}}
    weights = {1: 0.5, 2: 3.0, 4: 1.5, 6: 0.2}
    snap = oracles.snapshot_of(profiles)
    dist = EvalDistribution(weights=weights)
    n = 100_000
    rows, cols = sample_pairs(dist, snap, n, 123)
    assert np.all(snap.matrix[rows, cols] == 1)
    pairs = [(u, i) for u in sorted(profiles) for i in sorted(profiles[u])]
    expected = np.array([oracles.conditional(profiles, weights, u, i) / 3 for u, i in pairs]) * n
    counts = {pr: 0 for pr in pairs}
    for r, c in zip(rows, cols):
        counts[(int(snap.user_ids[r]), int(snap.item_ids[c]))] += 1
    stat = chisquare(np.array([counts[pr] for pr in pairs]), expected)
    assert stat.pvalue > 1e-3
