"""Glue for the offline mapping stage and single-view evaluation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .descriptor import profile, rank
from .features import FeatureCollection
from .index import InvertedIndex, build_index
from .landmarks import LandmarkSet, select_landmarks
from .localizer import METHODS, Localizer, anr, ground_truth


@dataclass
class MapModel:
    landmarks: LandmarkSet
    index: InvertedIndex
    localizer: Localizer
    map_arclengths: np.ndarray


def build_map(map_coll: FeatureCollection, landmarks: LandmarkSet, h: int,
              query_limit: int | None = None) -> MapModel:
    """Describe every map image and insert it into a fresh index."""
    profs = profile(map_coll.features, landmarks)
    index = build_index(rank(profs, h), h=h, r=landmarks.r, profiles=profs)
    loc = Localizer(landmarks, index, map_coll.features, query_limit=query_limit)
    return MapModel(landmarks, index, loc, np.asarray(map_coll.arclengths))


def build_world_map(world, r: int, h: int, stride: int = 1) -> MapModel:
    lms = select_landmarks(world["landmark"], r, stride=stride)
    return build_map(world["train"], lms, h)


def evaluate_methods(model: MapModel, queries: FeatureCollection, tau: float = 10.0,
                     methods=METHODS) -> dict:
    """ANR (percent) of each method over all query images."""
    truth = ground_truth(queries.arclengths, model.map_arclengths, tau)
    profs = profile(queries.features, model.landmarks)
    out = {}
    for method in methods:
        if method == "brute_force":
            results = [model.localizer.localize(q, method) for q in queries.features]
        else:
            results = [model.localizer.localize_profile(p, method) for p in profs]
        out[method] = anr(results, truth, len(model.index))
    return out
