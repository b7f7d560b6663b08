"""Descriptor primitives: normalization, Euclidean distance and cosine similarity.

All arithmetic is float64.  Descriptors are plain 1-D numpy arrays; the
functions here validate and return new arrays, never mutating their inputs.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Hashable

import numpy as np

from .errors import DimensionMismatch, NonFinite, ZeroVector

DEFAULT_DIM = 512
ZERO_NORM = 1e-12


def _as_vector(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise DimensionMismatch(f"expected a non-empty 1-D vector, got shape {arr.shape}")
    return arr


def normalize(v) -> np.ndarray:
    """Return ``v / ||v||`` as a new float64 array."""
    arr = _as_vector(v)
    if not np.all(np.isfinite(arr)):
        raise NonFinite("vector has non-finite entries")
    norm = float(np.linalg.norm(arr))
    if norm < ZERO_NORM:
        raise ZeroVector(f"cannot normalize vector with norm {norm:g}")
    # already unit (to far below the 1e-9 contract): return as is so that
    # normalize is idempotent bitwise
    if abs(norm - 1.0) < 1e-12:
        return arr.copy()
    return arr / norm


def _check_pair(a, b):
    a = _as_vector(a)
    b = _as_vector(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"dimension mismatch: {a.size} vs {b.size}")
    return a, b


def euclidean(a, b) -> float:
    a, b = _check_pair(a, b)
    return float(np.sqrt(np.sum((a - b) ** 2)))


def cosine(a, b) -> float:
    """Dot product of two unit descriptors, clamped to [-1, 1]."""
    a, b = _check_pair(a, b)
    return float(np.clip(np.dot(a, b), -1.0, 1.0))


@dataclass(frozen=True)
class Pose:
    x: float
    y: float

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise NonFinite(f"pose has non-finite coordinates ({self.x}, {self.y})")

    def distance(self, other: "Pose") -> float:
        return float(np.hypot(self.x - other.x, self.y - other.y))


@dataclass(frozen=True, eq=False)
class ImageRecord:
    """One dataset entry.  ``pixels`` is an optional uint8 raster and
    ``features`` an optional precomputed feature vector."""

    id: Hashable
    room: str
    condition: str
    pose: Pose
    pixels: np.ndarray | None = None
    features: np.ndarray | None = None

    def __post_init__(self):
        if not self.room:
            raise ValueError(f"record {self.id!r} has an empty room label")
        if self.pixels is not None:
            px = self.pixels
            if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
                raise ValueError(f"record {self.id!r}: raster must be 2-D and non-empty")
            if px.dtype != np.uint8:
                raise ValueError(f"record {self.id!r}: raster must be uint8")

    def __eq__(self, other):
        if not isinstance(other, ImageRecord):
            return NotImplemented
        return (
            self.id == other.id
            and self.room == other.room
            and self.condition == other.condition
            and self.pose == other.pose
            and _array_eq(self.pixels, other.pixels)
            and _array_eq(self.features, other.features)
        )

    __hash__ = None

    def replace(self, **changes) -> "ImageRecord":
        fields = dict(id=self.id, room=self.room, condition=self.condition, pose=self.pose,
                      pixels=self.pixels, features=self.features)
        fields.update(changes)
        return ImageRecord(**fields)


def _array_eq(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return a.shape == b.shape and bool(np.array_equal(a, b))


def derive_seed(seed: int, role: str) -> int:
    """Independent 63-bit sub-seed for one consumer of randomness.

    ``sha256(f"{seed}:{role}")`` truncated to 8 bytes; stable across runs and
    platforms, unlike ``hash``.
    """
    digest = hashlib.sha256(f"{int(seed)}:{role}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1
