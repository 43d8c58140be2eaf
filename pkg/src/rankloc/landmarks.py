"""Prototype landmark selection by nearest-neighbor dissimilarity.

Each candidate is scored by the distance to its closest other candidate;
the r most isolated candidates become the landmark prototypes.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .features import (Dissimilarity, FeatureCollection, FormatError,
                       get_evaluator, read_features, write_features)

_CHUNK = 1024


@dataclass(frozen=True)
class LandmarkSet:
    """Ordered prototypes; landmark id ``i`` is row ``i`` of ``features``."""

    features: np.ndarray        # (r, d) float32
    source_ids: np.ndarray      # (r,) image ids in the landmark-domain collection
    scores: np.ndarray | None = None

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] != len(self.source_ids):
            raise ValueError("features and source_ids disagree on r")
        if len(set(int(s) for s in self.source_ids)) != len(self.source_ids):
            raise ValueError("landmark source ids must be unique")

    @property
    def r(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def head(self, r: int) -> "LandmarkSet":
        """First ``r`` landmarks; equals selecting with a smaller r."""
        if not 1 <= r <= self.r:
            raise ValueError(f"r={r} outside 1..{self.r}")
        scores = None if self.scores is None else self.scores[:r]
        return LandmarkSet(self.features[:r], self.source_ids[:r], scores)


def score_candidates(candidates, evaluator: Dissimilarity | None = None):
    """Distance from every candidate to its nearest other candidate.

    Returns ``(image_ids, scores)``. Exact O(n^2), computed in row chunks.
    """
    feats = _as_features(candidates)
    n = feats.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 candidates, got {n}")
    evaluator = evaluator or get_evaluator()
    scores = np.empty(n, dtype=np.float64)
    for lo in range(0, n, _CHUNK):
        hi = min(n, lo + _CHUNK)
        block = evaluator.pairwise(feats[lo:hi], feats)
        block[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        scores[lo:hi] = block.min(axis=1)
    return np.arange(n), scores


def select_landmarks(candidates, r: int, stride: int = 1,
                     evaluator: Dissimilarity | None = None) -> LandmarkSet:
    """Top-r candidates by descending score, ties to the lower image id.

    ``stride`` subsamples the pool (every stride-th image) before scoring;
    source ids always refer to the full collection.
    """
    feats = _as_features(candidates)
    if stride < 1:
        raise ValueError("stride must be >= 1")
    pool = np.arange(0, feats.shape[0], stride)
    if r < 1 or r > len(pool):
        raise ValueError(f"r={r} but only {len(pool)} candidates")
    _, scores = score_candidates(feats[pool], evaluator)
    order = np.lexsort((pool, -scores))[:r]
    chosen = pool[order]
    return LandmarkSet(np.ascontiguousarray(feats[chosen], dtype=np.float32),
                       chosen.astype(np.int64), scores[order])


def _as_features(candidates) -> np.ndarray:
    if isinstance(candidates, FeatureCollection):
        return candidates.features
    if isinstance(candidates, LandmarkSet):
        return candidates.features
    feats = np.asarray(candidates, dtype=np.float32)
    if feats.ndim == 1:
        feats = feats[:, None]
    return feats


def save_landmarks(lms: LandmarkSet, path) -> None:
    """Write prototypes as a feature file plus ``<path>.csv`` id mapping."""
    write_features(path, lms.features)
    with open(landmark_sidecar_path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["landmark_id", "source_image_id"])
        for i, src in enumerate(lms.source_ids):
            w.writerow([i, int(src)])


def load_landmarks(path) -> LandmarkSet:
    feats = read_features(path)
    side = landmark_sidecar_path(path)
    if not side.exists():
        raise FormatError(f"missing landmark sidecar {side}")
    with open(side, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["landmark_id", "source_image_id"]:
        raise FormatError(f"{side}: bad header")
    src = []
    for lineno, row in enumerate(rows[1:], start=2):
        if int(row[0]) != len(src):
            raise FormatError(f"{side}: row {lineno}: landmark ids must be dense")
        src.append(int(row[1]))
    if len(src) != feats.shape[0]:
        raise FormatError(f"{side}: {len(src)} rows for {feats.shape[0]} landmarks")
    return LandmarkSet(feats, np.asarray(src, dtype=np.int64))


def landmark_sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".csv")
