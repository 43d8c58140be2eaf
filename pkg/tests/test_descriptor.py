import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rankloc.descriptor import full_ranks, profile, rank, rrf, rrf_dense, rrf_score
from rankloc.landmarks import LandmarkSet

from conftest import random_landmarks


def dense_reciprocal(ranking, r, limit):
    """Reciprocal-rank vector built element by element."""
    v = [0.0] * r
    for pos, lid in enumerate(ranking):
        if pos + 1 <= limit:
            v[lid] = 1.0 / (pos + 1)
    return v


def dense_dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def test_profile_examples():
    lms = LandmarkSet(np.array([[1.0, 0.0], [0.0, 2.0]], dtype=np.float32), np.arange(2))
    np.testing.assert_array_equal(profile([0.0, 0.0], lms), [1.0, 2.0])
    lms4 = LandmarkSet(np.eye(4, dtype=np.float32), np.arange(4))
    assert profile(lms4.features[3], lms4)[3] == 0.0
    with pytest.raises(ValueError):
        profile([0.0, 0.0, 0.0], lms)


def test_profile_matches_loop_oracle(rng):
    lms = random_landmarks(rng, 30, 64)
    x = rng.standard_normal(64).astype(np.float32)
    expected = [np.sqrt(sum((float(a) - float(b)) ** 2 for a, b in zip(x, p)))
                for p in lms.features]
    np.testing.assert_allclose(profile(x, lms), expected, rtol=1e-6)
    batch = profile(np.stack([x, x]), lms)
    np.testing.assert_array_equal(batch[0], profile(x, lms))


def test_rank_examples():
    prof = [0.5, 0.1, 0.9, 0.1, 0.3]
    assert rank(prof, 3).tolist() == [1, 3, 4]
    assert sorted(rank(prof, 5).tolist()) == [0, 1, 2, 3, 4]
    with pytest.raises(ValueError):
        rank(prof, 6)


def test_rank_matches_full_sort_oracle(rng):
    for _ in range(20):
        prof = rng.integers(0, 5, 40).astype(float)  # many ties
        expected = sorted(range(40), key=lambda i: (prof[i], i))[:7]
        assert rank(prof, 7).tolist() == expected


def test_default_sizes(rng):
    lms = random_landmarks(rng, 500, 16)
    desc = rank(profile(rng.standard_normal(16), lms), 4)
    assert len(desc) == 4 and len(set(desc.tolist())) == 4


def test_rank_is_total_on_featureless_input():
    assert rank(np.ones(10), 4).tolist() == [0, 1, 2, 3]


@settings(max_examples=80, deadline=None)
# grid values keep both transforms strictly monotone in floating point
@given(st.lists(st.integers(0, 800).map(lambda v: v / 8), min_size=2, max_size=60), st.data())
def test_rank_invariant_to_monotone_transform(values, data):
    prof = np.array(values)
    h = data.draw(st.integers(1, len(values)))
    assert rank(prof, h).tolist() == rank(2 * prof + 1, h).tolist()
    assert rank(prof, h).tolist() == rank(np.exp(prof / 50), h).tolist()


def test_full_ranks():
    assert full_ranks([0.5, 0.1, 0.9, 0.1, 0.3]).tolist() == [4, 1, 5, 2, 3]


def test_rrf_examples():
    assert rrf([7, 2, 9, 1], 4) == {7: 1.0, 2: 0.5, 9: 1 / 3, 1: 0.25}
    assert rrf([7, 2, 9, 1], 1) == {7: 1.0}
    with pytest.raises(ValueError):
        rrf([1, 1])


def test_rrf_full_profile_matches_dense_oracle(rng):
    prof = rng.random(25)
    ranking = rank(prof, 25)
    sparse = rrf(ranking, 25)
    dense = dense_reciprocal(ranking.tolist(), 25, 25)
    assert [sparse.get(i, 0.0) for i in range(25)] == dense
    np.testing.assert_array_equal(rrf_dense(ranking, 25), dense)
    np.testing.assert_array_equal(rrf_dense(ranking, 25, limit=4), dense_reciprocal(ranking.tolist(), 25, 4))


def _query_ranking(positions, r):
    """A length-r ranking putting landmark ``lid`` at 1-based rank ``positions[lid]``."""
    ranking = [None] * r
    for lid, pos in positions.items():
        ranking[pos - 1] = lid
    rest = iter(sorted(set(range(r)) - set(positions)))
    return [lid if lid is not None else next(rest) for lid in ranking]


def test_rrf_score_worked_example():
    q_rank = _query_ranking({7: 3, 2: 1, 9: 50, 1: 2}, 50)
    q = rrf(q_rank, 50)
    m = rrf([7, 2, 9, 1], 4)
    expected = (1 / 3) * 1 + 1 * (1 / 2) + (1 / 50) * (1 / 3) + (1 / 2) * (1 / 4)
    assert rrf_score(q, m) == pytest.approx(expected, abs=1e-15)
    oracle = dense_dot(dense_reciprocal(q_rank, 50, 50), dense_reciprocal([7, 2, 9, 1], 50, 4))
    assert rrf_score(q, m) == pytest.approx(oracle, abs=1e-15)


def test_rrf_score_degenerate_and_disjoint():
    assert rrf_score(rrf([0], 1), rrf([0], 1)) == 1.0
    q_rank = list(range(20))
    m = rrf([15, 16, 17, 18], 4)
    assert rrf_score(rrf(q_rank, 4), m) == 0.0
    assert rrf_score(rrf(q_rank, 20), m) > 0.0


def test_rrf_score_equals_dense_product(rng):
    r, h = 30, 5
    for _ in range(50):
        q_rank = rng.permutation(r).tolist()
        m_rank = rng.permutation(r)[:h].tolist()
        oracle = dense_dot(dense_reciprocal(q_rank, r, r), dense_reciprocal(m_rank, r, h))
        assert rrf_score(rrf(q_rank, r), rrf(m_rank, h)) == pytest.approx(oracle, abs=1e-12)


def test_improving_shared_rank_never_lowers_score(rng):
    r, h = 20, 5
    for _ in range(50):
        q = rrf(rng.permutation(r).tolist(), r)
        m_rank = rng.permutation(r)[:h].tolist()
        j = int(rng.integers(1, h))
        better = m_rank.copy()
        # move the landmark at position j one rank up
        better[j - 1], better[j] = better[j], better[j - 1]
        moved = m_rank[j]
        before = rrf_score(q, rrf(m_rank, h))
        after = rrf_score(q, rrf(better, h))
        if q[moved] >= q[m_rank[j - 1]]:
            assert after >= before - 1e-15
