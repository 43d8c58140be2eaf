"""Next-best-view planning by nearest-neighbor Q-learning.

The experience database stores one Q-value per (map image, action). The
Q-value of a live view is the mean over its k nearest map images, where
"nearest" is the RRF relevance ranking served by the inverted index.

Experience file (little-endian)::

    b"QEXP1"  u8 version  u32 n_map  u8 n_actions  n_map*n_actions float32
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Sequence

import numpy as np

from .features import FormatError
from .localizer import Localizer, RankingResult
from .pfilter import ParticleFilter, belief_rank
from .routesim import RouteEnv

QEXP_MAGIC = b"QEXP1"
QEXP_VERSION = 1
_HEADER = struct.Struct("<5sBIB")


@dataclass
class MDPConfig:
    actions: tuple = tuple(range(1, 11))    # forward moves in meters
    gamma: float = 0.9
    alpha: float = 0.1
    q_init: float = 0.0001
    reward_value: float = 100.0
    top_percent: int = 10
    episode_length: int = 10
    episodes: int = 10_000
    k_nn: int = 4
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_fraction: float = 0.5
    n_particles: int = 1000
    motion_sigma: float = 0.5

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.k_nn < 1:
            raise ValueError("k_nn must be >= 1")
        if list(self.actions) != sorted(set(self.actions)):
            raise ValueError("actions must be distinct and ascending")

    def epsilon(self, episode: int) -> float:
        """Linear decay over the first ``eps_decay_fraction`` of training."""
        span = self.eps_decay_fraction * self.episodes
        if span <= 0 or episode >= span:
            return self.eps_end
        return self.eps_start + (self.eps_end - self.eps_start) * episode / span

    @property
    def q_bound(self) -> float:
        return self.reward_value / (1 - self.gamma) + self.q_init


class ExperienceDB:
    """Q-table indexed by map image id and action slot."""

    def __init__(self, n_map: int, n_actions: int, q_init: float = 0.0001):
        self.q = np.full((n_map, n_actions), q_init, dtype=np.float64)
        self.q_init = q_init

    @property
    def n_map(self) -> int:
        return self.q.shape[0]

    @property
    def n_actions(self) -> int:
        return self.q.shape[1]

    def to_bytes(self) -> bytes:
        return (_HEADER.pack(QEXP_MAGIC, QEXP_VERSION, self.n_map, self.n_actions)
                + self.q.astype("<f4").tobytes())

    @classmethod
    def from_bytes(cls, buf: bytes, q_init: float = 0.0001) -> "ExperienceDB":
        if len(buf) < _HEADER.size:
            raise FormatError("truncated experience header")
        magic, version, n_map, n_act = _HEADER.unpack_from(buf, 0)
        if magic != QEXP_MAGIC:
            raise FormatError(f"bad experience magic {magic!r} at offset 0")
        if version != QEXP_VERSION:
            raise FormatError(f"unsupported experience version {version}")
        need = _HEADER.size + 4 * n_map * n_act
        if len(buf) != need:
            raise FormatError(f"experience file has {len(buf)} bytes, expected {need}")
        db = cls(n_map, n_act, q_init)
        db.q = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).reshape(n_map, n_act).astype(np.float64)
        if not np.all(np.isfinite(db.q)):
            raise FormatError("non-finite Q-value")
        return db

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ExperienceDB":
        return cls.from_bytes(Path(path).read_bytes())


class NNQPlanner:
    """Nearest-neighbor Q-function over an experience database."""

    def __init__(self, localizer: Localizer, db: ExperienceDB, config: MDPConfig):
        if db.n_map != localizer.n_map or db.n_actions != len(config.actions):
            raise ValueError("experience database shape does not match map/actions")
        self.localizer = localizer
        self.db = db
        self.config = config

    def neighbors(self, state, k: int | None = None) -> np.ndarray:
        """Top-k map images by RRF relevance to ``state``.

        ``state`` is a query-side RRF weight vector of length r or a ranking
        already produced by the localizer.
        """
        k = self.config.k_nn if k is None else k
        if not isinstance(state, RankingResult):
            ids, scores = self.localizer.index.accumulate(np.asarray(state, dtype=np.float64))
            state = RankingResult.from_scores(ids, scores, "rrf")
        return state.image_ids[:k]

    def q_values(self, nbrs) -> np.ndarray:
        """Neighbor-averaged Q for every action (``q_init`` when no neighbors)."""
        if len(nbrs) == 0:
            return np.full(self.db.n_actions, self.db.q_init)
        return self.db.q[nbrs].mean(axis=0)

    def q_value(self, nbrs, action) -> float:
        return float(self.q_values(nbrs)[self.action_slot(action)])

    def action_slot(self, action) -> int:
        return self.config.actions.index(action)

    def greedy_slot(self, nbrs) -> int:
        # argmax returns the first maximum, i.e. the smallest action
        return int(np.argmax(self.q_values(nbrs)))

    def choose_action(self, nbrs, epsilon: float, rng: np.random.Generator):
        if rng.random() < epsilon:
            return self.config.actions[int(rng.integers(len(self.config.actions)))]
        return self.config.actions[self.greedy_slot(nbrs)]

    def td_update(self, nbrs, action, reward: float, next_nbrs, terminal: bool = False) -> None:
        cfg = self.config
        target = reward
        if not terminal:
            target += cfg.gamma * float(np.max(self.q_values(next_nbrs)))
        if len(nbrs) == 0:
            return
        slot = self.action_slot(action)
        cells = self.db.q[nbrs, slot]
        self.db.q[nbrs, slot] = (1 - cfg.alpha) * cells + cfg.alpha * target


def reward_threshold(n_map: int, top_percent: int = 10) -> int:
    """Number of top belief ranks that count as success."""
    return max(1, -(-n_map * top_percent // 100))


def compute_reward(belief, gt_image_id: int, reward_value: float = 100.0,
                   top_percent: int = 10) -> float:
    rnk = belief_rank(belief, gt_image_id)
    return reward_value if rnk <= reward_threshold(len(belief), top_percent) else 0.0


class ViewCache:
    """Memoized RRF ranking per test viewpoint (test views never change)."""

    def __init__(self, localizer: Localizer, env: RouteEnv, k: int):
        self.localizer = localizer
        self.env = env
        self.k = k
        self._scores = {}
        self._nbrs = {}

    def get(self, vp: int):
        if vp not in self._scores:
            res = self.localizer.localize(self.env.test.features[vp], "rrf")
            self._scores[vp] = res.dense(self.localizer.n_map)
            self._nbrs[vp] = res.image_ids[:self.k]
        return self._scores[vp], self._nbrs[vp]


@dataclass
class Frame:
    episode: int
    frame: int
    position: float
    action: float | None
    reward: float
    gt_rank: int


@dataclass
class EpisodeRunner:
    """Drives episodes of observe / filter / reward / learn / act.

    Randomness comes from three independent streams derived from ``seed``:
    start positions, particle filter, and exploration.
    """

    planner: NNQPlanner
    env: RouteEnv
    map_arclengths: np.ndarray
    seed: int
    cache: ViewCache = field(init=False)

    def __post_init__(self):
        loc = self.planner.localizer
        if self.env.test.dim != loc.landmarks.dim:
            raise ValueError(f"environment features have dim {self.env.test.dim}, "
                             f"landmarks have dim {loc.landmarks.dim}")
        if len(self.map_arclengths) != loc.n_map:
            raise ValueError("map viewpoints do not match the index")
        lo, hi = self.map_arclengths[0], self.map_arclengths[-1]
        if self.env.start < lo - 1e-9 or self.env.end > hi + 1e-9:
            raise ValueError("environment route extends beyond the mapped route")
        cfg = self.planner.config
        env_ss, pf_ss, pol_ss = np.random.SeedSequence(self.seed).spawn(3)
        self.env_rng = np.random.default_rng(env_ss)
        self.pf_rng = np.random.default_rng(pf_ss)
        self.policy_rng = np.random.default_rng(pol_ss)
        self.pf = ParticleFilter(self.map_arclengths, self.pf_rng, cfg.n_particles,
                                 cfg.motion_sigma)
        self.cache = ViewCache(self.planner.localizer, self.env, cfg.k_nn)

    def sample_start(self) -> float:
        return float(self.env.arclengths[self.env_rng.integers(self.env.n_viewpoints)])

    def run(self, episode: int, policy: Callable, learn: bool = False) -> List[Frame]:
        """One episode; ``policy(nbrs)`` returns the next action."""
        cfg = self.planner.config
        pos = self.sample_start()
        self.pf.reset_uniform()
        frames = []
        prev = None
        for t in range(cfg.episode_length + 1):
            vp = self.env.viewpoint(pos)
            scores, nbrs = self.cache.get(vp)
            self.pf.update(scores)
            belief = self.pf.belief()
            gt = int(self.pf.nearest([pos])[0])
            reward = compute_reward(belief, gt, cfg.reward_value, cfg.top_percent)
            if t == 0:
                reward = 0.0    # the first view precedes any decision
            if learn and prev is not None:
                terminal = t == cfg.episode_length
                self.planner.td_update(prev[0], prev[1], reward, nbrs, terminal)
            action = policy(nbrs) if t < cfg.episode_length else None
            frames.append(Frame(episode, t, pos, action, reward, belief_rank(belief, gt)))
            if action is None:
                break
            prev = (nbrs, action)
            pos = float(np.clip(pos + action, self.env.start, self.env.end))
            self.pf.predict(action)
        return frames

    def greedy(self, epsilon: float = 0.0) -> Callable:
        return lambda nbrs: self.planner.choose_action(nbrs, epsilon, self.policy_rng)

    def random_policy(self) -> Callable:
        acts = self.planner.config.actions
        return lambda nbrs: acts[int(self.policy_rng.integers(len(acts)))]

    @staticmethod
    def fixed_policy(action) -> Callable:
        return lambda nbrs: action


def train(localizer: Localizer, env: RouteEnv, map_arclengths, config: MDPConfig,
          seed: int, db: ExperienceDB | None = None, progress=None) -> ExperienceDB:
    """Run ``config.episodes`` learning episodes and return the trained table."""
    db = db or ExperienceDB(localizer.n_map, len(config.actions), config.q_init)
    planner = NNQPlanner(localizer, db, config)
    runner = EpisodeRunner(planner, env, np.asarray(map_arclengths), seed)
    for ep in range(config.episodes):
        runner.run(ep, runner.greedy(config.epsilon(ep)), learn=True)
        if progress is not None:
            progress(ep)
    return db


def evaluate(localizer: Localizer, env: RouteEnv, map_arclengths, config: MDPConfig,
             policy: str, episodes: int, seed: int,
             db: ExperienceDB | None = None) -> List[Frame]:
    """Roll out ``policy`` ("learned", "random" or "fixed:A") without learning."""
    db = db or ExperienceDB(localizer.n_map, len(config.actions), config.q_init)
    planner = NNQPlanner(localizer, db, config)
    runner = EpisodeRunner(planner, env, np.asarray(map_arclengths), seed)
    if policy == "learned":
        act = runner.greedy(0.0)
    elif policy == "random":
        act = runner.random_policy()
    elif policy.startswith("fixed:"):
        value = float(policy.split(":", 1)[1])
        matches = [a for a in config.actions if a == value]
        if not matches:
            raise ValueError(f"fixed action {value} not in {config.actions}")
        act = runner.fixed_policy(matches[0])
    else:
        raise ValueError(f"unknown policy {policy!r}")
    frames = []
    for ep in range(episodes):
        frames.extend(runner.run(ep, act))
    return frames


def episode_rewards(frames: Sequence[Frame]) -> np.ndarray:
    totals = {}
    for f in frames:
        totals[f.episode] = totals.get(f.episode, 0.0) + f.reward
    return np.asarray([totals[k] for k in sorted(totals)])
