"""Dissimilarity profiles, ranked-ID descriptors and reciprocal rank features.

Ranks are 1-based. Wherever two landmarks are equally dissimilar the lower
landmark id ranks first.
"""
from __future__ import annotations

from typing import Dict, Mapping

import numpy as np

from .features import Dissimilarity, get_evaluator
from .landmarks import LandmarkSet


def profile(x, landmarks: LandmarkSet, evaluator: Dissimilarity | None = None) -> np.ndarray:
    """Dissimilarities ``[d(x, p_0), ..., d(x, p_{r-1})]``.

    ``x`` may be one vector or an ``(n, d)`` batch; the result is ``(r,)`` or
    ``(n, r)`` respectively.
    """
    evaluator = evaluator or get_evaluator()
    x = np.asarray(x)
    if x.shape[-1] != landmarks.dim:
        raise ValueError(f"dimension mismatch: {x.shape[-1]} vs {landmarks.dim}")
    out = evaluator.pairwise(np.atleast_2d(x), landmarks.features)
    return out[0] if x.ndim == 1 else out


def rank(prof, h: int) -> np.ndarray:
    """Ids of the ``h`` smallest profile entries in ascending order.

    Works row-wise on an ``(n, r)`` batch.
    """
    prof = np.asarray(prof, dtype=np.float64)
    r = prof.shape[-1]
    if not 1 <= h <= r:
        raise ValueError(f"h={h} must lie in 1..r={r}")
    if not np.all(np.isfinite(prof)):
        raise ValueError("profile contains non-finite values")
    # stable sort keeps ascending landmark id among equal values
    return np.argsort(prof, axis=-1, kind="stable")[..., :h]


def full_ranks(prof) -> np.ndarray:
    """1-based rank of every landmark (row-wise for batches)."""
    order = rank(prof, np.shape(prof)[-1])
    return np.argsort(order, axis=-1) + 1


def rrf(ranking, limit: int | None = None) -> Dict[int, float]:
    """Sparse reciprocal rank feature ``{landmark_id: 1/rank}``.

    ``ranking`` is a ranked id list (a descriptor); pass a full profile through
    :func:`rank` first. Only the first ``limit`` ranks get an entry.
    """
    ids = [int(i) for i in np.asarray(ranking).ravel()]
    if len(set(ids)) != len(ids):
        raise ValueError("ranked ids must be distinct")
    limit = len(ids) if limit is None else limit
    if limit < 1:
        raise ValueError("limit must be >= 1")
    return {lid: 1.0 / j for j, lid in enumerate(ids[:limit], start=1)}


def rrf_dense(ranking, r: int, limit: int | None = None) -> np.ndarray:
    """Dense length-``r`` version of :func:`rrf` (zeros off the support).

    Accepts an ``(n, h)`` batch of rankings and returns ``(n, r)``.
    """
    ranking = np.asarray(ranking, dtype=np.int64)
    batch = np.atleast_2d(ranking)
    limit = batch.shape[1] if limit is None else min(limit, batch.shape[1])
    out = np.zeros((batch.shape[0], r), dtype=np.float64)
    weights = 1.0 / np.arange(1, limit + 1)
    np.put_along_axis(out, batch[:, :limit], np.broadcast_to(weights, (batch.shape[0], limit)),
                      axis=1)
    return out[0] if ranking.ndim == 1 else out


def rrf_score(q: Mapping[int, float], m: Mapping[int, float]) -> float:
    """Inner product of two sparse reciprocal rank features."""
    if len(m) > len(q):
        q, m = m, q
    return float(sum(w * q.get(lid, 0.0) for lid, w in m.items()))


def describe(x, landmarks: LandmarkSet, h: int,
             evaluator: Dissimilarity | None = None) -> np.ndarray:
    """Ranked top-h descriptor(s) of raw feature(s)."""
    return rank(profile(x, landmarks, evaluator), h)
