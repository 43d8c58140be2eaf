"""Scene feature collections, dissimilarity evaluators and their on-disk formats.

Feature file (little-endian)::

    b"FVEC1"  u8 version  u32 n  u32 d  n*d float32 row-major

Viewpoint sidecar: CSV with header ``image_id,arclength_m,domain_tag``.
"""
from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Sequence

import numpy as np
from scipy.spatial.distance import cdist

FVEC_MAGIC = b"FVEC1"
FVEC_VERSION = 1
_HEADER = struct.Struct("<5sBII")

DOMAIN_TAGS = ("landmark", "train", "test")
SIDECAR_HEADER = ("image_id", "arclength_m", "domain_tag")


class FormatError(ValueError):
    """Raised when a file on disk does not match its declared format."""


@dataclass(frozen=True)
class ImageRecord:
    image_id: int
    feature: np.ndarray
    arclength: float
    domain_tag: str


class FeatureCollection:
    """Immutable set of images sharing one feature dimension.

    Features are held as one float32 ``(n, d)`` matrix; records are
    materialized on demand.
    """

    def __init__(self, features, arclengths=None, domain_tags=None):
        feats = np.ascontiguousarray(features, dtype=np.float32)
        if feats.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if not np.all(np.isfinite(feats)):
            row = int(np.argwhere(~np.isfinite(feats))[0, 0])
            raise FormatError(f"non-finite feature value in row {row}")
        n = feats.shape[0]
        if arclengths is None:
            arclengths = np.arange(n, dtype=np.float64)
        arclengths = np.asarray(arclengths, dtype=np.float64)
        if arclengths.shape != (n,):
            raise ValueError(f"expected {n} arclengths, got {arclengths.shape}")
        if np.any(arclengths < 0):
            raise ValueError("arclength must be non-negative")
        if np.any(np.diff(arclengths) < 0):
            raise ValueError("arclength must be non-decreasing along the route")
        if domain_tags is None:
            domain_tags = ["train"] * n
        elif isinstance(domain_tags, str):
            domain_tags = [domain_tags] * n
        domain_tags = list(domain_tags)
        if len(domain_tags) != n:
            raise ValueError(f"expected {n} domain tags, got {len(domain_tags)}")
        for tag in domain_tags:
            if tag not in DOMAIN_TAGS:
                raise ValueError(f"unknown domain tag {tag!r}")
        feats.setflags(write=False)
        arclengths.setflags(write=False)
        self.features = feats
        self.arclengths = arclengths
        self.domain_tags = tuple(domain_tags)

    def __len__(self):
        return self.features.shape[0]

    def __getitem__(self, i) -> ImageRecord:
        return ImageRecord(int(i), self.features[i], float(self.arclengths[i]),
                           self.domain_tags[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def image_ids(self) -> np.ndarray:
        return np.arange(len(self))

    def subset(self, ids) -> "FeatureCollection":
        """New collection over ``ids`` (renumbered densely from 0)."""
        ids = np.asarray(ids, dtype=np.int64)
        return FeatureCollection(self.features[ids], self.arclengths[ids],
                                 [self.domain_tags[i] for i in ids])

    def normalized(self) -> "FeatureCollection":
        norms = np.linalg.norm(self.features.astype(np.float64), axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        return FeatureCollection(self.features / norms, self.arclengths, self.domain_tags)


# -- dissimilarity evaluators -------------------------------------------------

class Dissimilarity:
    """Pluggable dissimilarity ``d(x, p)`` between a scene and a prototype.

    The argument order is meaningful: implementations need not be symmetric.
    Subclasses override :meth:`pairwise`; :meth:`__call__` handles one pair.
    """

    name = "abstract"

    def pairwise(self, xs: np.ndarray, ps: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x, p) -> float:
        x = np.asarray(x)
        p = np.asarray(p)
        if x.shape != p.shape or x.ndim != 1:
            raise ValueError(f"dimension mismatch: {x.shape} vs {p.shape}")
        return float(self.pairwise(x[None, :], p[None, :])[0, 0])


class EuclideanDissimilarity(Dissimilarity):
    """L2 distance between embeddings, accumulated in float64."""

    name = "euclidean"

    def pairwise(self, xs, ps):
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        ps = np.atleast_2d(np.asarray(ps, dtype=np.float64))
        if xs.shape[1] != ps.shape[1]:
            raise ValueError(f"dimension mismatch: {xs.shape[1]} vs {ps.shape[1]}")
        return cdist(xs, ps, metric="euclidean")


EVALUATORS: Dict[str, Callable[[], Dissimilarity]] = {
    EuclideanDissimilarity.name: EuclideanDissimilarity,
}


def get_evaluator(name: str = "euclidean") -> Dissimilarity:
    try:
        return EVALUATORS[name]()
    except KeyError:
        raise ValueError(f"unknown dissimilarity evaluator {name!r}") from None


def dissimilarity(x, p) -> float:
    """Euclidean distance between two feature vectors of equal length."""
    return EuclideanDissimilarity()(x, p)


# -- serialization ------------------------------------------------------------

def features_to_bytes(features: np.ndarray) -> bytes:
    feats = np.ascontiguousarray(features, dtype="<f4")
    n, d = feats.shape
    return _HEADER.pack(FVEC_MAGIC, FVEC_VERSION, n, d) + feats.tobytes()


def features_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise FormatError(f"truncated header: {len(buf)} bytes at offset 0")
    magic, version, n, d = _HEADER.unpack_from(buf, 0)
    if magic != FVEC_MAGIC:
        raise FormatError(f"bad magic {magic!r} at offset 0")
    if version != FVEC_VERSION:
        raise FormatError(f"unsupported version {version} at offset 5")
    need = n * d * 4
    have = len(buf) - _HEADER.size
    if have < need:
        raise FormatError(
            f"truncated payload: header declares n={n} d={d} ({need} bytes), "
            f"payload ends at byte offset {len(buf)} after {have // 4} floats")
    if have > need:
        raise FormatError(f"trailing bytes after offset {_HEADER.size + need}")
    feats = np.frombuffer(buf, dtype="<f4", count=n * d, offset=_HEADER.size)
    feats = feats.reshape(n, d).astype(np.float32)
    bad = ~np.isfinite(feats)
    if bad.any():
        row, col = (int(v) for v in np.argwhere(bad)[0])
        offset = _HEADER.size + 4 * (row * d + col)
        raise FormatError(f"non-finite value in row {row} at byte offset {offset}")
    return feats


def write_features(path, features) -> None:
    Path(path).write_bytes(features_to_bytes(np.asarray(features)))


def read_features(path) -> np.ndarray:
    return features_from_bytes(Path(path).read_bytes())


def sidecar_to_text(arclengths: Sequence[float], domain_tags: Sequence[str]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(SIDECAR_HEADER)
    for i, (s, tag) in enumerate(zip(arclengths, domain_tags)):
        w.writerow([i, repr(float(s)), tag])
    return out.getvalue()


def write_sidecar(path, arclengths, domain_tags) -> None:
    Path(path).write_text(sidecar_to_text(arclengths, domain_tags))


def read_sidecar(path):
    """Return ``(arclengths, domain_tags)`` from a viewpoint sidecar."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(c.strip() for c in rows[0]) != SIDECAR_HEADER:
        raise FormatError(f"{path}: expected header {','.join(SIDECAR_HEADER)}")
    arcs, tags = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 3:
            raise FormatError(f"{path}: row {lineno}: expected 3 fields")
        try:
            image_id = int(row[0])
            arc = float(row[1])
        except ValueError:
            raise FormatError(f"{path}: row {lineno}: unparsable number") from None
        if image_id != len(arcs):
            raise FormatError(f"{path}: row {lineno}: image_id {image_id} is not dense")
        if not np.isfinite(arc):
            raise FormatError(f"{path}: row {lineno}: non-finite arclength")
        arcs.append(arc)
        tags.append(row[2].strip())
    return np.asarray(arcs, dtype=np.float64), tags


def load_features(path, sidecar=None, normalize: bool = False) -> FeatureCollection:
    """Load a feature file and its viewpoint sidecar as a collection."""
    feats = read_features(path)
    if sidecar is None:
        coll = FeatureCollection(feats)
    else:
        arcs, tags = read_sidecar(sidecar)
        if len(arcs) != feats.shape[0]:
            raise FormatError(
                f"{sidecar}: {len(arcs)} viewpoints for {feats.shape[0]} features")
        try:
            coll = FeatureCollection(feats, arcs, tags)
        except ValueError as exc:
            raise FormatError(f"{sidecar}: {exc}") from None
    return coll.normalized() if normalize else coll


def save_collection(coll: FeatureCollection, path, sidecar) -> None:
    write_features(path, coll.features)
    write_sidecar(sidecar, coll.arclengths, coll.domain_tags)
