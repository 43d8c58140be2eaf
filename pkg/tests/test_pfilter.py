import numpy as np
import pytest

from rankloc.localizer import RankingResult
from rankloc.pfilter import ParticleFilter, belief_order, belief_rank, entropy


def make_pf(n_map=20, seed=0, **kw):
    return ParticleFilter(np.arange(float(n_map)), np.random.default_rng(seed), **kw)


def test_uniform_init_and_normalized():
    pf = make_pf(n_particles=500)
    assert pf.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all((pf.positions >= 0) & (pf.positions <= 19))


def test_nearest_matches_argmin_oracle(rng):
    arcs = np.sort(rng.uniform(0, 50, 30))
    pf = ParticleFilter(arcs, rng)
    pos = rng.uniform(arcs[0], arcs[-1], 200)
    expected = [int(np.argmin(np.abs(arcs - p))) for p in pos]
    assert pf.nearest(pos).tolist() == expected


def test_additive_update_oracle():
    pf = make_pf(n_map=5, n_particles=4, ess_fraction=0.0)
    pf.positions = np.array([0.0, 1.0, 1.2, 4.0])
    scores = np.array([0.5, 2.0, 0.0, 0.0, 1.0])
    pf.update(scores)
    raw = np.array([0.25 + 0.5, 0.25 + 2.0, 0.25 + 2.0, 0.25 + 1.0])
    np.testing.assert_allclose(pf.weights, raw / raw.sum(), atol=1e-15)


def test_weights_stay_normalized_over_many_updates(rng):
    pf = make_pf(n_map=40, n_particles=300)
    for _ in range(50):
        pf.predict(float(rng.integers(1, 4)))
        pf.update(rng.random(40) * rng.integers(0, 2))
        assert abs(pf.weights.sum() - 1.0) < 1e-9
        assert abs(pf.belief().sum() - 1.0) < 1e-9


def test_ranking_result_input_densified():
    pf = make_pf(n_map=6, n_particles=60, ess_fraction=0.0)
    res = RankingResult.from_scores([2], [5.0], "rrf")
    pf.update(res)
    assert belief_order(pf.belief())[0] == 2


def test_zero_total_weight_recovers_uniformly():
    pf = make_pf(n_map=10, n_particles=50)
    pf.weights = np.zeros(50)
    pf.update(np.zeros(10))
    assert pf.lost == 1
    np.testing.assert_allclose(pf.weights, 1 / 50)
    pf.update(np.full(10, np.nan))
    assert pf.lost == 2


def test_score_length_checked():
    with pytest.raises(ValueError):
        make_pf(n_map=5).update(np.ones(4))


def test_systematic_resample_follows_weights():
    pf = make_pf(n_map=3, n_particles=1000)
    pf.positions = np.repeat([0.0, 1.0, 2.0], [500, 300, 200]).astype(float)
    pf.weights = np.repeat([0.1, 0.3, 0.6], [500, 300, 200]) / np.repeat([500, 300, 200], [500, 300, 200])
    pf.resample()
    counts = np.bincount(pf.positions.astype(int), minlength=3)
    # systematic resampling is exact to within one particle per bin
    assert np.all(np.abs(counts - [100, 300, 600]) <= 1)
    np.testing.assert_allclose(pf.weights, 1 / 1000)


def test_predict_clamps_to_route():
    pf = make_pf(n_map=10, n_particles=100)
    pf.reset_at(8.0)
    pf.predict(5.0, sigma=0.0)
    assert np.all(pf.positions == 9.0)


def test_predict_noise_spread():
    pf = make_pf(n_map=1000, n_particles=5000, motion_sigma=0.5)
    pf.reset_at(100.0)
    pf.predict(3.0)
    assert pf.positions.mean() == pytest.approx(103.0, abs=0.05)
    assert pf.positions.std() == pytest.approx(0.5, rel=0.05)


def test_belief_concentrates_on_consistent_evidence():
    pf = make_pf(n_map=30, n_particles=1000, seed=4)
    pos = 3
    for _ in range(5):
        s = np.zeros(30)
        s[pos] = 1.0
        pf.update(s)
        pf.predict(2.0)
        pos += 2
    s = np.zeros(30)
    s[pos] = 1.0
    pf.update(s)
    assert belief_rank(pf.belief(), pos) == 1


def test_belief_helpers():
    b = np.array([0.1, 0.4, 0.4, 0.1])
    assert belief_order(b).tolist() == [1, 2, 0, 3]
    assert belief_rank(b, 2) == 2
    assert entropy(np.full(8, 1 / 8)) == pytest.approx(np.log(8))
    assert entropy([1.0, 0.0]) == 0.0


def test_rejects_unsorted_map():
    with pytest.raises(ValueError):
        ParticleFilter([0.0, 2.0, 1.0], np.random.default_rng(0))
