import math

import numpy as np
import pytest

from rankloc.landmarks import LandmarkSet
from rankloc.pfilter import ParticleFilter, belief_rank
from rankloc.pipeline import build_world_map
from rankloc.routesim import DomainTransform, WorldParams, generate


def noiseless_params(**kw) -> WorldParams:
    """Identity domain transforms with zero observation noise."""
    params = WorldParams(**kw)
    params.domains = {d: DomainTransform(1.0, 0.0, 0.0) for d in ("landmark", "train", "test")}
    return params


def random_landmarks(rng, r, d) -> LandmarkSet:
    return LandmarkSet(rng.standard_normal((r, d)).astype(np.float32), np.arange(r))


def tabular_oracle(model, env, cfg, seed):
    """Plain tabular Q-learning keyed by the top-1 map image of each view.

    Re-derives the episode loop from the particle filter and the localizer,
    consuming the three seeded streams in the same order as the runner.
    """
    env_ss, pf_ss, pol_ss = np.random.SeedSequence(seed).spawn(3)
    env_rng, pf_rng, pol_rng = (np.random.default_rng(s) for s in (env_ss, pf_ss, pol_ss))
    pf = ParticleFilter(model.map_arclengths, pf_rng, cfg.n_particles, cfg.motion_sigma)
    n_map, acts = len(model.map_arclengths), list(cfg.actions)
    Q = [[cfg.q_init] * len(acts) for _ in range(n_map)]
    thresh = math.ceil(n_map * cfg.top_percent / 100)

    def view(pos):
        vp = int(np.argmin(np.abs(env.arclengths - pos)))
        res = model.localizer.localize(env.test.features[vp], "rrf")
        return res.dense(n_map), int(res.image_ids[0])

    for ep in range(cfg.episodes):
        eps = cfg.epsilon(ep)
        pos = float(env.arclengths[env_rng.integers(env.n_viewpoints)])
        pf.reset_uniform()
        prev = None
        for t in range(cfg.episode_length + 1):
            scores, s = view(pos)
            pf.update(scores)
            gt = int(np.argmin(np.abs(model.map_arclengths - pos)))
            r = 100.0 if t > 0 and belief_rank(pf.belief(), gt) <= thresh else 0.0
            if prev is not None:
                ps, pa = prev
                target = r if t == cfg.episode_length else r + cfg.gamma * max(Q[s])
                Q[ps][pa] = (1 - cfg.alpha) * Q[ps][pa] + cfg.alpha * target
            if t == cfg.episode_length:
                break
            if pol_rng.random() < eps:
                a = int(pol_rng.integers(len(acts)))
            else:
                a = max(range(len(acts)), key=lambda j: (Q[s][j], -j))
            prev = (s, a)
            pos = min(max(pos + acts[a], env.start), env.end)
            pf.predict(acts[a])
    return np.array(Q)


@pytest.fixture(scope="session")
def small_world():
    return generate(3, WorldParams(n_viewpoints=60, dim=16))


@pytest.fixture(scope="session")
def small_map(small_world):
    return build_world_map(small_world, r=20, h=4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
