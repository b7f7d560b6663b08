"""Hierarchical localization: room retrieval, then nearest-neighbour pose
lookup inside the retrieved room(s).  A single-step global search is
available for environments without rooms.

Every search is exhaustive.  Ties go to the lowest map entry index.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .core import ImageRecord, Pose
from .data import DEFAULT_GRID, feature_matrix
from .encoder import EncoderParams, encoder_forward, read_layers, write_layers
from .errors import DimensionMismatch, EmptyDataset, EmptyQuerySet, ParseError, UnknownRoom

METRICS = ("euclidean", "cosine")
QUERY_COLUMNS = ["query_id", "true_room", "pred_room_1", "conf_1", "pred_room_2", "conf_2",
                 "retrieved_id", "est_x", "est_y", "err_m", "hit_at_d"]


@dataclass
class VisualMap:
    descriptors: np.ndarray
    poses: np.ndarray
    rooms: list[str]
    ids: list

    def __post_init__(self):
        self.descriptors = np.ascontiguousarray(self.descriptors, dtype=np.float64)
        self.poses = np.asarray(self.poses, dtype=np.float64).reshape(-1, 2)
        n = self.descriptors.shape[0]
        if n < 1:
            raise EmptyDataset("visual map needs at least one entry")
        if not (self.poses.shape[0] == len(self.rooms) == len(self.ids) == n):
            raise DimensionMismatch("descriptors, poses, rooms and ids must have equal length")
        norms = np.linalg.norm(self.descriptors, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("map descriptors must be unit norm")
        self.room_entries: dict[str, np.ndarray] = {}
        for i, room in enumerate(self.rooms):
            self.room_entries.setdefault(room, []).append(i)
        self.room_entries = {k: np.array(v, dtype=np.int64) for k, v in self.room_entries.items()}

    @property
    def n(self) -> int:
        return self.descriptors.shape[0]

    @property
    def M(self) -> int:
        return len(self.room_entries)

    @property
    def room_labels(self) -> list[str]:
        return list(self.room_entries)


@dataclass
class RoomRepresentatives:
    rooms: list[str]
    descriptors: np.ndarray
    indices: list[int]
    ids: list


@dataclass(frozen=True)
class RetrievalConfig:
    h1: float = 0.5
    h2: float = 0.1
    tau: float = 0.1
    metric: str = "euclidean"

    def __post_init__(self):
        if not 0.0 <= self.h2 <= self.h1 <= 1.0:
            raise ValueError(f"need 0 <= h2 <= h1 <= 1, got h1={self.h1}, h2={self.h2}")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")


@dataclass
class LocalizationResult:
    rooms: list[tuple[str, float]]
    retrieved_index: int
    retrieved_id: object
    estimated_pose: Pose
    nn_distance: float
    search_size: int = 0
    room_distances: np.ndarray | None = field(default=None, repr=False)


# --------------------------------------------------------------------------
# construction

def encode_records(records: Sequence[ImageRecord], params: EncoderParams, grid=DEFAULT_GRID) -> np.ndarray:
    return encoder_forward(params, feature_matrix(records, grid))


def build_visual_map(records: Sequence[ImageRecord], params: EncoderParams | None = None,
                     grid=DEFAULT_GRID, descriptors=None) -> VisualMap:
    """One map entry per record, in record order.

    Descriptors come from ``params`` unless passed in directly.
    """
    records = list(records)
    if not records:
        raise EmptyDataset("cannot build a visual map from zero records")
    if descriptors is None:
        if params is None:
            raise ValueError("need encoder params or precomputed descriptors")
        descriptors = encode_records(records, params, grid)
    poses = np.array([[r.pose.x, r.pose.y] for r in records])
    return VisualMap(descriptors, poses, [r.room for r in records], [r.id for r in records])


def room_representatives(vmap: VisualMap) -> RoomRepresentatives:
    """Per room, the entry captured closest to the centroid of the room's poses."""
    rooms, descs, indices = [], [], []
    for room, entries in vmap.room_entries.items():
        xy = vmap.poses[entries]
        centre = xy.mean(axis=0)
        k = int(np.argmin(np.sum((xy - centre) ** 2, axis=1)))
        idx = int(entries[k])
        rooms.append(room)
        descs.append(vmap.descriptors[idx])
        indices.append(idx)
    return RoomRepresentatives(rooms, np.array(descs), indices, [vmap.ids[i] for i in indices])


# --------------------------------------------------------------------------
# the two stages

def _dissimilarity(query: np.ndarray, matrix: np.ndarray, metric: str) -> np.ndarray:
    if metric == "euclidean":
        return np.sqrt(np.sum((matrix - query) ** 2, axis=1))
    return 1.0 - np.clip(matrix @ query, -1.0, 1.0)


def room_confidences(distances: np.ndarray, tau: float) -> np.ndarray:
    """Softmax of ``-distance / tau`` over rooms."""
    z = -np.asarray(distances, dtype=np.float64) / tau
    e = np.exp(z - z.max())
    return e / e.sum()


def coarse_localize(query, reps: RoomRepresentatives, cfg: RetrievalConfig = RetrievalConfig()):
    """Top room, plus the runner-up when the top confidence is below ``h1``
    and the runner-up's is above ``h2``.  Returns ``[(room, confidence), ...]``."""
    dist = _dissimilarity(np.asarray(query, dtype=np.float64), reps.descriptors, cfg.metric)
    conf = room_confidences(dist, cfg.tau)
    order = np.argsort(dist, kind="stable")
    out = [(reps.rooms[order[0]], float(conf[order[0]]))]
    if len(order) > 1:
        c1, c2 = conf[order[0]], conf[order[1]]
        if c1 < cfg.h1 and c2 > cfg.h2:
            out.append((reps.rooms[order[1]], float(c2)))
    return out


def _to_distance(score: float, metric: str) -> float:
    return score if metric == "euclidean" else 1.0 - min(1.0, max(-1.0, score))


def fine_localize(query, vmap: VisualMap, rooms: Sequence[str],
                  cfg: RetrievalConfig = RetrievalConfig()) -> LocalizationResult:
    """Nearest map entry among the entries of ``rooms``."""
    missing = [r for r in rooms if r not in vmap.room_entries]
    if missing:
        raise UnknownRoom(f"room(s) not in the map: {missing}")
    cand = np.unique(np.concatenate([vmap.room_entries[r] for r in rooms]))
    idx, score = kernels.nearest_index(np.asarray(query, dtype=np.float64), vmap.descriptors, cand, cfg.metric)
    return LocalizationResult(
        rooms=[(r, float("nan")) for r in rooms],
        retrieved_index=idx,
        retrieved_id=vmap.ids[idx],
        estimated_pose=Pose(*map(float, vmap.poses[idx])),
        nn_distance=_to_distance(score, cfg.metric),
        search_size=int(cand.size),
    )


def localize_descriptors(coarse_query, fine_query, reps: RoomRepresentatives, vmap: VisualMap,
                         cfg: RetrievalConfig = RetrievalConfig()) -> LocalizationResult:
    rooms = coarse_localize(coarse_query, reps, cfg)
    result = fine_localize(fine_query, vmap, [r for r, _ in rooms], cfg)
    result.rooms = rooms
    return result


def hierarchical_localize(features, coarse: EncoderParams, fine: EncoderParams,
                          reps: RoomRepresentatives, vmap: VisualMap,
                          cfg: RetrievalConfig = RetrievalConfig()) -> LocalizationResult:
    """Coarse stage on the coarse model's descriptor, fine stage on the fine model's."""
    return localize_descriptors(encoder_forward(coarse, features), encoder_forward(fine, features),
                                reps, vmap, cfg)


def single_step_localize(query, vmap: VisualMap, cfg: RetrievalConfig = RetrievalConfig()) -> LocalizationResult:
    idx, score = kernels.nearest_index(np.asarray(query, dtype=np.float64), vmap.descriptors, None, cfg.metric)
    return LocalizationResult(
        rooms=[(vmap.rooms[idx], 1.0)],
        retrieved_index=idx,
        retrieved_id=vmap.ids[idx],
        estimated_pose=Pose(*map(float, vmap.poses[idx])),
        nn_distance=_to_distance(score, cfg.metric),
        search_size=vmap.n,
    )


# --------------------------------------------------------------------------
# evaluation

@dataclass
class EvalResult:
    room_accuracy: float
    recall_at_1: float
    rows: list[dict]
    d: float
    mode: str

    @property
    def n_queries(self) -> int:
        return len(self.rows)

    def summary(self) -> dict[str, float]:
        return {"room_accuracy": self.room_accuracy, "recall_at_1": self.recall_at_1,
                "n_queries": float(self.n_queries), "d": self.d}


def evaluate(queries: Sequence[ImageRecord], vmap: VisualMap, *, d: float = 0.5,
             mode: str = "hierarchical", reps: RoomRepresentatives | None = None,
             coarse: EncoderParams | None = None, fine: EncoderParams | None = None,
             coarse_descriptors=None, fine_descriptors=None,
             cfg: RetrievalConfig = RetrievalConfig(), grid=DEFAULT_GRID) -> EvalResult:
    """Localize every query and score room accuracy and Recall@1 at ``d``.

    Query descriptors are computed from ``coarse``/``fine`` unless given.
    A query's room counts as correct when any forwarded room is its true room.
    """
    queries = list(queries)
    if not queries:
        raise EmptyQuerySet("no queries to evaluate")
    if d <= 0:
        raise ValueError(f"distance threshold must be positive, got {d}")
    if mode not in ("hierarchical", "single_step"):
        raise ValueError(f"unknown mode {mode!r}")
    if fine_descriptors is None:
        fine_descriptors = encode_records(queries, fine, grid)
    if mode == "hierarchical":
        if reps is None:
            raise ValueError("hierarchical mode needs room representatives")
        if coarse_descriptors is None:
            coarse_descriptors = encode_records(queries, coarse, grid)

    rows = []
    room_hits = 0
    pose_hits = 0
    for i, q in enumerate(queries):
        if mode == "hierarchical":
            res = localize_descriptors(coarse_descriptors[i], fine_descriptors[i], reps, vmap, cfg)
        else:
            res = single_step_localize(fine_descriptors[i], vmap, cfg)
        err = q.pose.distance(res.estimated_pose)
        hit = err <= d
        predicted = [r for r, _ in res.rooms]
        room_hits += q.room in predicted
        pose_hits += hit
        second = res.rooms[1] if len(res.rooms) > 1 else ("", float("nan"))
        rows.append({
            "query_id": q.id, "true_room": q.room,
            "pred_room_1": res.rooms[0][0], "conf_1": res.rooms[0][1],
            "pred_room_2": second[0], "conf_2": second[1],
            "retrieved_id": res.retrieved_id,
            "est_x": res.estimated_pose.x, "est_y": res.estimated_pose.y,
            "err_m": err, "hit_at_d": int(hit),
        })
    n = len(queries)
    return EvalResult(room_hits / n, pose_hits / n, rows, d, mode)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else repr(float(v))
    return str(v)


def query_rows_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(QUERY_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in QUERY_COLUMNS])
    return buf.getvalue()


def metrics_csv(summary: dict[str, float]) -> str:
    lines = ["metric,value"] + [f"{k},{_fmt(float(v))}" for k, v in summary.items()]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# map persistence: <prefix>_poses.csv (id,room,x,y) + <prefix>_descriptors.mloc

def save_visual_map(vmap: VisualMap, directory, prefix: str = "map") -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["id", "room", "x", "y"])
    for i in range(vmap.n):
        writer.writerow([vmap.ids[i], vmap.rooms[i], repr(float(vmap.poses[i, 0])), repr(float(vmap.poses[i, 1]))])
    (directory / f"{prefix}_poses.csv").write_text(buf.getvalue(), encoding="utf-8", newline="\n")
    write_layers(directory / f"{prefix}_descriptors.mloc", [(vmap.descriptors, np.zeros(vmap.n))])


def load_visual_map(directory, prefix: str = "map") -> VisualMap:
    directory = Path(directory)
    path = directory / f"{prefix}_poses.csv"
    ids, rooms, poses = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if lineno == 1:
                if row != ["id", "room", "x", "y"]:
                    raise ParseError("bad map header", path, 1)
                continue
            if len(row) != 4:
                raise ParseError(f"expected 4 fields, got {len(row)}", path, lineno)
            try:
                poses.append((float(row[2]), float(row[3])))
            except ValueError as exc:
                raise ParseError(str(exc), path, lineno) from None
            ids.append(row[0])
            rooms.append(row[1])
    layers = read_layers(directory / f"{prefix}_descriptors.mloc")
    if len(layers) != 1:
        raise ParseError("descriptor file must hold exactly one matrix", directory / f"{prefix}_descriptors.mloc")
    return VisualMap(layers[0][0], np.array(poses), rooms, ids)
