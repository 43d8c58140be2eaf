"""Particle filter over 1-D position along a mapped route.

Each update adds the relevance score of the map image nearest to a particle
to that particle's weight, then renormalizes.
"""
from __future__ import annotations

import numpy as np


class ParticleFilter:
    def __init__(self, map_arclengths, rng: np.random.Generator, n_particles: int = 1000,
                 motion_sigma: float = 0.5, ess_fraction: float = 1.0, extent=None):
        self.map_arclengths = np.asarray(map_arclengths, dtype=np.float64)
        if self.map_arclengths.ndim != 1 or len(self.map_arclengths) == 0:
            raise ValueError("need at least one map viewpoint")
        if np.any(np.diff(self.map_arclengths) < 0):
            raise ValueError("map arclengths must be sorted")
        if extent is None:
            extent = (float(self.map_arclengths[0]), float(self.map_arclengths[-1]))
        self.lo, self.hi = extent
        self.rng = rng
        self.n = n_particles
        self.motion_sigma = motion_sigma
        self.ess_fraction = ess_fraction
        # midpoints between consecutive viewpoints split the route into cells
        self._edges = 0.5 * (self.map_arclengths[1:] + self.map_arclengths[:-1])
        self.positions = np.empty(0)
        self.weights = np.empty(0)
        self.lost = 0
        self.reset_uniform()

    @property
    def n_map(self) -> int:
        return len(self.map_arclengths)

    def reset_uniform(self) -> None:
        self.positions = self.rng.uniform(self.lo, self.hi, self.n)
        self.weights = np.full(self.n, 1.0 / self.n)

    def reset_at(self, position: float) -> None:
        self.positions = np.full(self.n, float(np.clip(position, self.lo, self.hi)))
        self.weights = np.full(self.n, 1.0 / self.n)

    def nearest(self, positions=None) -> np.ndarray:
        """Index of the nearest map viewpoint for each position."""
        pos = self.positions if positions is None else np.asarray(positions, dtype=np.float64)
        return np.searchsorted(self._edges, pos, side="left")

    def predict(self, action: float, sigma: float | None = None) -> None:
        sigma = self.motion_sigma if sigma is None else sigma
        moved = self.positions + action
        if sigma > 0:
            moved = moved + self.rng.normal(0.0, sigma, self.n)
        self.positions = np.clip(moved, self.lo, self.hi)

    def update(self, scores) -> None:
        """Add per-map-image ``scores`` to particle weights and renormalize.

        ``scores`` is a length-``n_map`` vector or a ranking result (images it
        does not rank score 0). Resamples when the effective sample size drops
        below ``ess_fraction * n``.
        """
        if hasattr(scores, "dense"):
            scores = scores.dense(self.n_map)
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape != (self.n_map,):
            raise ValueError(f"expected {self.n_map} scores, got {scores.shape}")
        w = self.weights + scores[self.nearest()]
        total = w.sum()
        if not np.isfinite(total) or total <= 0:
            self.lost += 1
            self.reset_uniform()
            return
        self.weights = w / total
        if self.ess() < self.ess_fraction * self.n:
            self.resample()

    def ess(self) -> float:
        return 1.0 / float(np.sum(self.weights ** 2))

    def resample(self) -> None:
        """Systematic resampling; leaves uniform weights."""
        cum = np.cumsum(self.weights)
        cum[-1] = 1.0
        u = (self.rng.random() + np.arange(self.n)) / self.n
        idx = np.searchsorted(cum, u, side="left")
        self.positions = self.positions[idx]
        self.weights = np.full(self.n, 1.0 / self.n)

    def belief(self) -> np.ndarray:
        """Particle mass gathered onto the nearest map viewpoints."""
        b = np.bincount(self.nearest(), weights=self.weights, minlength=self.n_map)
        return b / b.sum()

    def mean(self) -> float:
        return float(np.dot(self.weights, self.positions))


def belief_order(belief) -> np.ndarray:
    """Map image ids by descending belief, ties to ascending id."""
    belief = np.asarray(belief)
    return np.lexsort((np.arange(len(belief)), -belief))


def belief_rank(belief, image_id: int) -> int:
    """1-based rank of ``image_id`` under :func:`belief_order`."""
    return int(np.flatnonzero(belief_order(belief) == image_id)[0]) + 1


def entropy(belief) -> float:
    b = np.asarray(belief, dtype=np.float64)
    b = b[b > 0]
    return float(-np.sum(b * np.log(b)))
