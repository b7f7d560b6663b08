"""Seeded triplet sampling for the room (coarse) and position (fine) stages."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .core import ImageRecord
from .errors import InsufficientRooms, NoNegativeAvailable, NoPositiveAvailable, TooFewImages

STAGES = ("coarse", "fine")


@dataclass(frozen=True)
class MiningConfig:
    stage: str = "coarse"
    r_plus: float = 0.4
    r_minus: float = 0.4
    seed: int = 0
    count: int = 50000
    positive_same_room: bool = True

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.r_plus <= 0:
            raise ValueError(f"r_plus must be positive, got {self.r_plus}")
        if self.r_minus < 0:
            raise ValueError(f"r_minus must be >= 0, got {self.r_minus}")
        if self.count < 1:
            raise ValueError(f"count must be positive, got {self.count}")


@dataclass(frozen=True)
class TripletIndex:
    anchor_id: object
    positive_id: object
    negative_id: object


class CoarseSampler:
    """Anchor and positive from one room, negative from any other room.

    The anchor is uniform over images whose room holds at least two images;
    positive and negative are then uniform over their legal sets.
    """

    def __init__(self, records: Sequence[ImageRecord]):
        self.records = list(records)
        rooms: dict[str, list[int]] = {}
        for i, r in enumerate(self.records):
            rooms.setdefault(r.room, []).append(i)
        if len(rooms) < 2:
            raise InsufficientRooms(f"coarse mining needs >= 2 rooms, dataset has {len(rooms)}")
        self._members = {room: np.array(idx) for room, idx in rooms.items()}
        self._room_of = np.array([r.room for r in self.records], dtype=object)
        self._anchors = np.array([i for i, r in enumerate(self.records) if len(rooms[r.room]) >= 2])
        if self._anchors.size == 0:
            raise NoPositiveAvailable("every room has a single image; no positive exists")
        n = len(self.records)
        self._outside = {room: np.setdiff1d(np.arange(n), idx) for room, idx in self._members.items()}

    def sample_indices(self, rng: np.random.Generator) -> tuple[int, int, int]:
        a = int(self._anchors[rng.integers(self._anchors.size)])
        room = self._room_of[a]
        members = self._members[room]
        # skip the anchor's own slot in its room
        k = rng.integers(members.size - 1)
        pos_slot = int(np.searchsorted(members, a))
        p = int(members[k + (k >= pos_slot)])
        outside = self._outside[room]
        n = int(outside[rng.integers(outside.size)])
        return a, p, n


class FineSampler:
    """Positive within ``r_plus`` metres of the anchor (same room by default),
    negative farther than ``r_minus`` metres (any room)."""

    def __init__(self, records: Sequence[ImageRecord], config: MiningConfig):
        self.records = list(records)
        self.config = config
        xy = np.array([[r.pose.x, r.pose.y] for r in self.records], dtype=np.float64)
        rooms = np.array([r.room for r in self.records], dtype=object)
        self._pos: list[np.ndarray] = []
        self._neg: list[np.ndarray] = []
        idx = np.arange(len(self.records))
        for i in range(len(self.records)):
            d = np.sqrt(np.sum((xy - xy[i]) ** 2, axis=1))
            ok = (d <= config.r_plus) & (idx != i)
            if config.positive_same_room:
                ok &= rooms == rooms[i]
            self._pos.append(idx[ok])
            self._neg.append(idx[d > config.r_minus])
        has_pos = np.array([p.size > 0 for p in self._pos], dtype=bool)
        has_neg = np.array([n.size > 0 for n in self._neg], dtype=bool)
        if not has_pos.any():
            raise NoPositiveAvailable(f"no image has a neighbour within r_plus={config.r_plus}")
        legal = has_pos & has_neg
        if not legal.any():
            raise NoNegativeAvailable(f"no anchor with a positive has an image beyond r_minus={config.r_minus}")
        self._anchors = idx[legal]

    def sample_indices(self, rng: np.random.Generator) -> tuple[int, int, int]:
        a = int(self._anchors[rng.integers(self._anchors.size)])
        pos, neg = self._pos[a], self._neg[a]
        return a, int(pos[rng.integers(pos.size)]), int(neg[rng.integers(neg.size)])


def make_sampler(records, config: MiningConfig):
    if config.stage == "coarse":
        return CoarseSampler(records)
    return FineSampler(records, config)


def _to_index(sampler, triple) -> TripletIndex:
    recs = sampler.records
    return TripletIndex(recs[triple[0]].id, recs[triple[1]].id, recs[triple[2]].id)


def sample_coarse_triplet(dataset, rng: np.random.Generator) -> TripletIndex:
    sampler = CoarseSampler(dataset)
    return _to_index(sampler, sampler.sample_indices(rng))


def sample_fine_triplet(dataset, config: MiningConfig, rng: np.random.Generator) -> TripletIndex:
    sampler = FineSampler(dataset, config)
    return _to_index(sampler, sampler.sample_indices(rng))


def triplet_stream(dataset, config: MiningConfig, rng=None) -> Iterator[TripletIndex]:
    """``config.count`` triplets for ``config.stage``, seeded by ``config.seed``
    unless an explicit generator is passed."""
    sampler = make_sampler(dataset, config)
    rng = np.random.default_rng(config.seed) if rng is None else rng
    for _ in range(config.count):
        yield _to_index(sampler, sampler.sample_indices(rng))


def write_triplets_csv(path, triplets) -> int:
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["anchor_id", "positive_id", "negative_id"])
        for t in triplets:
            writer.writerow([t.anchor_id, t.positive_id, t.negative_id])
            n += 1
    return n


def subsample_dataset(dataset, n: int, seed: int) -> list[ImageRecord]:
    """Seeded uniform subset of ``n`` records, keeping one per room when
    ``n`` allows it; the input order is preserved."""
    records = list(dataset)
    if n < 1 or n > len(records):
        raise TooFewImages(f"cannot draw {n} records from a dataset of {len(records)}")
    if n == len(records):
        return records
    rng = np.random.default_rng(seed)
    by_room: dict[str, list[int]] = {}
    for i, r in enumerate(records):
        by_room.setdefault(r.room, []).append(i)
    if n >= len(by_room):
        keep = [members[rng.integers(len(members))] for members in by_room.values()]
        rest = np.setdiff1d(np.arange(len(records)), keep)
        keep += list(rng.choice(rest, size=n - len(keep), replace=False))
    else:
        keep = list(rng.choice(len(records), size=n, replace=False))
    return [records[i] for i in sorted(int(k) for k in keep)]
