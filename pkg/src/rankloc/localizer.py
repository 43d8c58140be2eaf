"""Single-view place recognition over an inverted index, plus ANR scoring."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .descriptor import full_ranks, profile, rank
from .features import Dissimilarity, get_evaluator
from .index import InvertedIndex
from .landmarks import LandmarkSet

METHODS = ("brute_force", "simbad_l2", "bag_of_landmarks", "rrf")

# scores agreeing to this many decimals are treated as ties (broken by id)
SCORE_DECIMALS = 12


def order_by_score(image_ids, scores) -> np.ndarray:
    """Permutation sorting by descending score, ties to ascending image id."""
    keys = np.round(np.asarray(scores, dtype=np.float64), SCORE_DECIMALS)
    return np.lexsort((np.asarray(image_ids), -keys))


@dataclass(frozen=True)
class RankingResult:
    image_ids: np.ndarray
    scores: np.ndarray
    method: str

    @classmethod
    def from_scores(cls, image_ids, scores, method) -> "RankingResult":
        image_ids = np.asarray(image_ids, dtype=np.int64)
        scores = np.asarray(scores, dtype=np.float64)
        order = order_by_score(image_ids, scores)
        return cls(image_ids[order], scores[order], method)

    def __len__(self):
        return len(self.image_ids)

    def best_rank(self, targets) -> int | None:
        """Smallest 1-based rank among ``targets``; None if none are ranked."""
        hit = np.flatnonzero(np.isin(self.image_ids, np.asarray(list(targets))))
        return int(hit[0]) + 1 if len(hit) else None

    def dense(self, n_map: int) -> np.ndarray:
        """Scores as a length-``n_map`` vector; unranked images get 0."""
        out = np.zeros(n_map, dtype=np.float64)
        out[self.image_ids] = self.scores
        return out


class Localizer:
    """Ranks map images against a query feature.

    ``query_limit`` is the number of query-side ranks carrying reciprocal
    weight for the ``rrf`` method; the default (all r landmarks) makes the
    index-accelerated scores equal the dense inner products.
    """

    def __init__(self, landmarks: LandmarkSet, index: InvertedIndex,
                 map_features=None, query_limit: int | None = None,
                 evaluator: Dissimilarity | None = None):
        if landmarks.r != index.r:
            raise ValueError(f"landmark set has r={landmarks.r}, index has r={index.r}")
        self.landmarks = landmarks
        self.index = index
        self.map_features = None if map_features is None else np.asarray(map_features)
        self.query_limit = landmarks.r if query_limit is None else query_limit
        self.evaluator = evaluator or get_evaluator()

    @property
    def h(self) -> int:
        return self.index.h

    @property
    def n_map(self) -> int:
        return len(self.index)

    def query_weights(self, query_profile) -> np.ndarray:
        """Dense query-side reciprocal rank vector (limited to ``query_limit``)."""
        ranks = full_ranks(query_profile)
        return np.where(ranks <= self.query_limit, 1.0 / ranks, 0.0)

    def localize(self, query, method: str = "rrf") -> RankingResult:
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
        query = np.asarray(query)
        if method == "brute_force":
            return self._brute_force(query)
        prof = profile(query, self.landmarks, self.evaluator)
        return self.localize_profile(prof, method)

    def localize_profile(self, prof, method: str = "rrf") -> RankingResult:
        """Index-based ranking from a precomputed query profile."""
        prof = np.asarray(prof, dtype=np.float64)
        if method == "rrf":
            ids, scores = self.index.accumulate(self.query_weights(prof), "rrf")
            return RankingResult.from_scores(ids, scores, method)
        top = rank(prof, self.h)
        onehot = np.zeros(self.landmarks.r)
        onehot[top] = 1.0
        ids, overlap = self.index.accumulate(onehot, "binary")
        if method == "bag_of_landmarks":
            return RankingResult.from_scores(ids, np.rint(overlap), method)
        if method == "simbad_l2":
            desc = self.index.descriptor_matrix(ids)
            stored = self.index.dissim_matrix(ids)
            shared = onehot[desc] > 0
            diff = prof[desc] - stored
            scores = -np.sum(np.where(shared, diff * diff, 0.0), axis=1)
            return RankingResult.from_scores(ids, scores, method)
        raise ValueError(f"method {method!r} needs raw features")

    def _brute_force(self, query) -> RankingResult:
        if self.map_features is None:
            raise ValueError("brute_force needs the map features")
        ids = np.asarray(self.index.image_ids, dtype=np.int64)
        dist = self.evaluator.pairwise(query[None, :], self.map_features[ids])[0]
        return RankingResult.from_scores(ids, -dist, "brute_force")


def ground_truth(query_arclengths, map_arclengths, tau: float = 10.0):
    """Map images within ``tau`` meters of each query viewpoint.

    The nearest map image is always included so no query is left without
    ground truth.
    """
    map_arc = np.asarray(map_arclengths, dtype=np.float64)
    out = []
    for s in np.asarray(query_arclengths, dtype=np.float64):
        dist = np.abs(map_arc - s)
        ids = set(np.flatnonzero(dist <= tau).tolist())
        ids.add(int(np.argmin(dist)))
        out.append(np.asarray(sorted(ids), dtype=np.int64))
    return out


def anr(results: Sequence[RankingResult], truth: Sequence, n_map: int) -> float:
    """Averaged normalized rank in percent (lower is better, 50 is chance).

    A query whose ground truth is missing from its ranking counts as rank
    ``n_map``.
    """
    if len(results) != len(truth):
        raise ValueError("one ground-truth set per query required")
    if not results:
        raise ValueError("no queries")
    total = 0.0
    for res, gt in zip(results, truth):
        gt = list(np.asarray(gt).ravel())
        if not gt:
            raise ValueError("query without ground truth")
        best = res.best_rank(gt)
        total += (n_map if best is None else best) / n_map
    return 100.0 * total / len(results)
