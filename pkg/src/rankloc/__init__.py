"""Landmark-ranking visual place recognition with next-best-view planning."""

__version__ = "0.1.0"

from .descriptor import profile, rank, rrf, rrf_dense, rrf_score
from .features import FeatureCollection, dissimilarity, load_features
from .index import InvertedIndex, decode, encode
from .landmarks import LandmarkSet, score_candidates, select_landmarks
from .localizer import Localizer, RankingResult, anr

__all__ = [
    "FeatureCollection", "InvertedIndex", "LandmarkSet", "Localizer", "RankingResult",
    "anr", "decode", "dissimilarity", "encode", "load_features", "profile", "rank",
    "rrf", "rrf_dense", "rrf_score", "score_candidates", "select_landmarks",
]
