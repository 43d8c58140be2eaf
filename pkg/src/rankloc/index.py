"""Incremental inverted index over ranked landmark descriptors.

Postings are keyed by ``(landmark_id, rank)``. Each map image's descriptor is
also kept in packed form: 15 bits per entry, an 11-bit landmark id followed by
a 4-bit rank, concatenated MSB-first and zero-padded to whole bytes.

Index file (little-endian)::

    b"SLIX1"  u8 version  u32 r  u8 h  u32 n
    n x (u32 image_id, ceil(15h/8) packed bytes)
    [optional] b"SDIS"  f32 scale  n*h u16     (quantized SIMBAD dissimilarities)
"""
from __future__ import annotations

import bisect
import struct
from pathlib import Path
from typing import Dict, Iterable, List, Tuple

import numpy as np
from scipy import sparse

from .features import FormatError

ID_BITS = 11
RANK_BITS = 4
ENTRY_BITS = ID_BITS + RANK_BITS
MAX_R = 1 << ID_BITS            # landmark ids 0..2047
MAX_H = (1 << RANK_BITS) - 1    # ranks 1..15

INDEX_MAGIC = b"SLIX1"
INDEX_VERSION = 1
DIS_MAGIC = b"SDIS"
_HEADER = struct.Struct("<5sBIBI")
_U16_MAX = 0xFFFF


class CapacityError(ValueError):
    """Descriptor does not fit the 11-bit id / 4-bit rank codec."""


def packed_size(h: int) -> int:
    return (ENTRY_BITS * h + 7) // 8


def _check_capacity(ids, h):
    if h > MAX_H:
        raise CapacityError(f"h={h} exceeds codec limit {MAX_H}")
    for lid in ids:
        if not 0 <= lid < MAX_R:
            raise CapacityError(f"landmark id {lid} exceeds codec limit {MAX_R - 1}")


def encode(descriptor) -> bytes:
    """Pack a ranked descriptor into ``ceil(15h/8)`` bytes."""
    ids = [int(i) for i in descriptor]
    h = len(ids)
    if h < 1:
        raise ValueError("empty descriptor")
    _check_capacity(ids, h)
    acc = 0
    for rnk, lid in enumerate(ids, start=1):
        acc = (acc << ENTRY_BITS) | (lid << RANK_BITS) | rnk
    nbytes = packed_size(h)
    acc <<= 8 * nbytes - ENTRY_BITS * h
    return acc.to_bytes(nbytes, "big")


def decode(packed: bytes, h: int) -> Tuple[int, ...]:
    """Inverse of :func:`encode`; validates rank fields and padding."""
    nbytes = packed_size(h)
    if len(packed) != nbytes:
        raise FormatError(f"packed descriptor has {len(packed)} bytes, expected {nbytes}")
    acc = int.from_bytes(packed, "big")
    pad = 8 * nbytes - ENTRY_BITS * h
    if acc & ((1 << pad) - 1):
        raise FormatError("non-zero padding bits in packed descriptor")
    acc >>= pad
    ids = []
    for rnk in range(h, 0, -1):
        entry = acc & ((1 << ENTRY_BITS) - 1)
        acc >>= ENTRY_BITS
        if entry & MAX_H != rnk:
            raise FormatError(f"rank field {entry & MAX_H} where {rnk} expected")
        ids.append(entry >> RANK_BITS)
    return tuple(reversed(ids))


class InvertedIndex:
    """Maps ``(landmark_id, rank)`` to the ascending ids of map images.

    Single writer, many readers: :meth:`insert` must not run concurrently with
    queries.
    """

    def __init__(self, r: int, h: int, dissim_scale: float | None = None):
        if not 1 <= h <= r:
            raise ValueError(f"need 1 <= h <= r, got h={h} r={r}")
        if r > MAX_R:
            raise CapacityError(f"r={r} exceeds codec limit {MAX_R}")
        if h > MAX_H:
            raise CapacityError(f"h={h} exceeds codec limit {MAX_H}")
        self.r = r
        self.h = h
        self.postings: Dict[Tuple[int, int], List[int]] = {}
        self.descriptors: Dict[int, Tuple[int, ...]] = {}
        # quantized h-hot dissimilarities for the SIMBAD scorer
        self.dissim_scale = dissim_scale
        self.dissim: Dict[int, np.ndarray] = {}
        self._cache = None

    def __len__(self):
        return len(self.descriptors)

    def __contains__(self, image_id):
        return image_id in self.descriptors

    @property
    def image_ids(self) -> List[int]:
        return sorted(self.descriptors)

    def insert(self, image_id: int, descriptor, dissim=None) -> None:
        image_id = int(image_id)
        ids = tuple(int(i) for i in descriptor)
        if image_id in self.descriptors:
            raise KeyError(f"image {image_id} already indexed")
        if image_id < 0 or image_id > 0xFFFFFFFF:
            raise ValueError(f"image id {image_id} out of u32 range")
        if len(ids) != self.h:
            raise ValueError(f"descriptor length {len(ids)} != h={self.h}")
        _check_capacity(ids, len(ids))
        if any(i >= self.r for i in ids) or len(set(ids)) != len(ids):
            raise ValueError(f"descriptor {ids} is not a ranking over r={self.r}")
        if dissim is not None:
            if self.dissim_scale is None:
                raise ValueError("index was created without a dissimilarity scale")
            q = np.rint(np.asarray(dissim, dtype=np.float64) / self.dissim_scale)
            self.dissim[image_id] = np.clip(q, 0, _U16_MAX).astype(np.uint16)
        for rnk, lid in enumerate(ids, start=1):
            bisect.insort(self.postings.setdefault((lid, rnk), []), image_id)
        self.descriptors[image_id] = ids
        self._cache = None

    def lookup(self, landmark_id: int, rank: int | None = None) -> List[int]:
        """Image ids carrying ``landmark_id`` (at ``rank``, or at any rank)."""
        if rank is not None:
            return list(self.postings.get((landmark_id, rank), ()))
        hits = set()
        for rnk in range(1, self.h + 1):
            hits.update(self.postings.get((landmark_id, rnk), ()))
        return sorted(hits)

    def shortlist(self, query) -> set:
        """Map images sharing at least one landmark id with ``query``."""
        out = set()
        for lid in query:
            for rnk in range(1, self.h + 1):
                out.update(self.postings.get((int(lid), rnk), ()))
        return out

    # -- vectorized accumulation -------------------------------------------

    def _matrices(self):
        if self._cache is None:
            rows, cols, ranks = [], [], []
            for (lid, rnk), ids in self.postings.items():
                rows.extend([lid] * len(ids))
                cols.extend(ids)
                ranks.extend([rnk] * len(ids))
            ncols = (max(self.descriptors) + 1) if self.descriptors else 0
            rows = np.asarray(rows, dtype=np.int64)
            cols = np.asarray(cols, dtype=np.int64)
            ranks = np.asarray(ranks, dtype=np.float64)
            shape = (self.r, ncols)
            recip = sparse.csr_matrix((1.0 / ranks if len(ranks) else ranks, (rows, cols)),
                                      shape=shape)
            binary = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=shape)
            self._cache = (recip, binary)
        return self._cache

    def accumulate(self, weights, mode: str = "rrf"):
        """Score every image reached from landmarks with non-zero ``weights``.

        Map-side entries weigh ``1/rank`` (``mode="rrf"``) or ``1``
        (``mode="binary"``). Returns ``(image_ids, scores)`` for touched images.
        """
        if mode not in ("rrf", "binary"):
            raise ValueError(f"unknown accumulation mode {mode!r}")
        recip, binary = self._matrices()
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (self.r,):
            raise ValueError(f"weights must have length r={self.r}")
        mat = recip if mode == "rrf" else binary
        touched = np.flatnonzero(binary.T @ (w != 0).astype(np.float64))
        scores = mat.T @ w
        return touched, scores[touched]

    def descriptor_matrix(self, ids: Iterable[int]) -> np.ndarray:
        return np.asarray([self.descriptors[int(i)] for i in ids], dtype=np.int64).reshape(-1, self.h)

    def dissim_matrix(self, ids: Iterable[int]) -> np.ndarray:
        """Dequantized stored dissimilarities for ``ids`` as ``(len, h)``."""
        ids = list(ids)
        missing = [i for i in ids if int(i) not in self.dissim]
        if missing:
            raise KeyError(f"no stored dissimilarities for images {missing[:5]}")
        q = np.asarray([self.dissim[int(i)] for i in ids], dtype=np.float64)
        return q.reshape(-1, self.h) * self.dissim_scale

    def equivalent(self, other: "InvertedIndex") -> bool:
        return (self.r, self.h) == (other.r, other.h) and self.postings == other.postings

    # -- persistence ---------------------------------------------------------

    def to_bytes(self) -> bytes:
        ids = self.image_ids
        parts = [_HEADER.pack(INDEX_MAGIC, INDEX_VERSION, self.r, self.h, len(ids))]
        for i in ids:
            parts.append(struct.pack("<I", i))
            parts.append(encode(self.descriptors[i]))
        if self.dissim:
            if len(self.dissim) != len(ids):
                raise ValueError("dissimilarity table covers only part of the index")
            parts.append(DIS_MAGIC + struct.pack("<f", self.dissim_scale))
            parts.append(np.concatenate([self.dissim[i] for i in ids]).astype("<u2").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "InvertedIndex":
        if len(buf) < _HEADER.size:
            raise FormatError(f"truncated index header ({len(buf)} bytes)")
        magic, version, r, h, n = _HEADER.unpack_from(buf, 0)
        if magic != INDEX_MAGIC:
            raise FormatError(f"bad index magic {magic!r} at offset 0")
        if version != INDEX_VERSION:
            raise FormatError(f"unsupported index version {version} at offset 5")
        rec = 4 + packed_size(h)
        off = _HEADER.size
        end = off + n * rec
        if len(buf) < end:
            raise FormatError(f"truncated index: {n} records need {end} bytes, got {len(buf)}")
        records = []
        for _ in range(n):
            (image_id,) = struct.unpack_from("<I", buf, off)
            records.append((image_id, decode(buf[off + 4:off + rec], h)))
            off += rec
        scale = None
        dis = None
        if off < len(buf):
            if buf[off:off + 4] != DIS_MAGIC:
                raise FormatError(f"unexpected trailing bytes at offset {off}")
            (scale,) = struct.unpack_from("<f", buf, off + 4)
            off += 8
            need = 2 * n * h
            if len(buf) - off != need:
                raise FormatError(f"dissimilarity table at offset {off}: expected {need} bytes")
            dis = np.frombuffer(buf, dtype="<u2", offset=off, count=n * h).reshape(n, h)
        index = cls(r, h, dissim_scale=float(scale) if scale is not None else None)
        for k, (image_id, desc) in enumerate(records):
            index.insert(image_id, desc)
            if dis is not None:
                index.dissim[image_id] = dis[k].astype(np.uint16)
        return index

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "InvertedIndex":
        return cls.from_bytes(Path(path).read_bytes())


def build_index(descriptors, h: int | None = None, r: int | None = None,
                profiles=None, image_ids=None) -> InvertedIndex:
    """Batch-build an index from an ``(n, h)`` descriptor array.

    When ``profiles`` (the full ``(n, r)`` dissimilarities) are given, the
    h-hot values are stored for the SIMBAD scorer with a 16-bit scale fixed
    at twice the largest observed value.
    """
    descriptors = np.asarray(descriptors, dtype=np.int64)
    h = descriptors.shape[1] if h is None else h
    if r is None:
        r = int(profiles.shape[1]) if profiles is not None else int(descriptors.max()) + 1
    image_ids = range(len(descriptors)) if image_ids is None else image_ids
    scale = None
    hot = None
    if profiles is not None:
        profiles = np.asarray(profiles, dtype=np.float64)
        hot = np.take_along_axis(profiles, descriptors, axis=1)
        peak = float(hot.max()) if hot.size else 0.0
        scale = (2.0 * peak / _U16_MAX) if peak > 0 else 1.0
        # float32 on disk; keep the in-memory scale identical to the loaded one
        scale = float(np.float32(scale))
    index = InvertedIndex(r, h, dissim_scale=scale)
    for k, (image_id, desc) in enumerate(zip(image_ids, descriptors)):
        index.insert(image_id, desc, None if hot is None else hot[k])
    return index
