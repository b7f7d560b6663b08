"""Dataset files and the synthetic multi-room environment.

On-disk layout of a dataset directory::

    manifest.ini     [dataset] section + one [split NAME] section per split
    poses.csv        id,room,condition,x,y
    images/<id>.pgm  binary PGM (P5) rasters, optional
    features.csv     id,f0,f1,... precomputed features, optional

All text files are UTF-8 with LF line endings; floats are written with
``repr`` so a save/load round trip is exact.
"""
from __future__ import annotations

import configparser
import csv
import io
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ImageRecord, Pose
from .encoder import DEFAULT_GRID, featurize
from .errors import InvalidFractions, MissingImage, ParseError

POSES_HEADER = ["id", "room", "condition", "x", "y"]
MANIFEST_NAME = "manifest.ini"


# --------------------------------------------------------------------------
# PGM

_PGM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    pos = 0
    tokens = []
    for _ in range(4):
        m = _PGM_TOKEN.match(data, pos)
        if m is None:
            raise ParseError("truncated PGM header", path)
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] not in (b"P5", b"P2"):
        raise ParseError(f"expected a PGM (P5 or P2), got {tokens[0]!r}", path)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ParseError("non-integer PGM header field", path) from None
    if maxval != 255:
        raise ParseError(f"only 8-bit PGM supported (maxval {maxval})", path)
    if tokens[0] == b"P2":
        values = data[pos:].split()
        if len(values) < width * height:
            raise ParseError("PGM pixel data shorter than header says", path)
        try:
            raster = np.array([int(v) for v in values[:width * height]], dtype=np.int64)
        except ValueError:
            raise ParseError("non-integer pixel in ASCII PGM", path) from None
        if raster.min(initial=0) < 0 or raster.max(initial=0) > 255:
            raise ParseError("ASCII PGM pixel outside [0, 255]", path)
        return raster.astype(np.uint8).reshape(height, width)
    pos += 1  # single whitespace byte after maxval
    raster = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos) \
        if len(data) - pos >= width * height else None
    if raster is None:
        raise ParseError("PGM pixel data shorter than header says", path)
    return raster.reshape(height, width).copy()


def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 2:
        raise ValueError("write_pgm expects a 2-D uint8 array")
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + np.ascontiguousarray(img).tobytes())


# --------------------------------------------------------------------------
# manifest

@dataclass
class DatasetManifest:
    root: Path
    poses_file: str = "poses.csv"
    image_dir: str | None = "images"
    features_file: str | None = None
    splits: dict[str, list[str]] = field(default_factory=dict)
    conditions: list[str] = field(default_factory=list)
    reference_condition: str | None = None

    def to_text(self) -> str:
        lines = ["[dataset]",
                 f"poses = {self.poses_file}",
                 f"images = {self.image_dir or ''}",
                 f"features = {self.features_file or ''}",
                 f"conditions = {','.join(self.conditions)}",
                 f"reference_condition = {self.reference_condition or ''}"]
        for name, ids in self.splits.items():
            lines += ["", f"[split {name}]"]
            lines += [str(i) for i in ids]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, root: Path, path=None) -> "DatasetManifest":
        parser = configparser.ConfigParser(allow_no_value=True, delimiters=("=",),
                                           interpolation=None, strict=True)
        parser.optionxform = str
        try:
            parser.read_string(text, source=str(path or "<manifest>"))
        except configparser.Error as exc:
            raise ParseError(str(exc).splitlines()[0], path, getattr(exc, "lineno", None)) from None
        if "dataset" not in parser:
            raise ParseError("missing [dataset] section", path)
        ds = parser["dataset"]

        def opt(key, default=None):
            v = ds.get(key, default)
            return v if v else None

        splits = {}
        for section in parser.sections():
            if section.startswith("split "):
                splits[section[len("split "):].strip()] = list(parser[section].keys())
        return cls(root=root, poses_file=opt("poses", "poses.csv"), image_dir=opt("images"),
                   features_file=opt("features"),
                   conditions=[c for c in (ds.get("conditions") or "").split(",") if c],
                   reference_condition=opt("reference_condition"), splits=splits)


# --------------------------------------------------------------------------
# load / save

def _parse_poses(text: str, path) -> list[tuple[str, str, str, Pose]]:
    if not text.strip():
        raise ParseError("empty poses file (no header)", path, 1)
    rows = []
    seen = set()
    reader = csv.reader(io.StringIO(text))
    for lineno, row in enumerate(reader, start=1):
        if lineno == 1:
            if [c.strip() for c in row] != POSES_HEADER:
                raise ParseError(f"bad header {row}; expected {','.join(POSES_HEADER)}", path, 1)
            continue
        if not row:
            continue
        if len(row) != 5:
            raise ParseError(f"expected 5 fields, got {len(row)}", path, lineno)
        rid, room, cond, xs, ys = row
        try:
            pose = Pose(float(xs), float(ys))
        except ValueError as exc:
            raise ParseError(f"bad coordinate: {exc}", path, lineno) from None
        if not room:
            raise ParseError("empty room label", path, lineno)
        if rid in seen:
            raise ParseError(f"duplicate id {rid!r}", path, lineno)
        seen.add(rid)
        rows.append((rid, room, cond, pose))
    return rows


def _parse_features(path) -> dict[str, np.ndarray]:
    out = {}
    width = None
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if lineno == 1:
                if not row or row[0] != "id":
                    raise ParseError("features header must start with 'id'", path, 1)
                width = len(row) - 1
                continue
            if len(row) != width + 1:
                raise ParseError(f"expected {width + 1} fields, got {len(row)}", path, lineno)
            try:
                out[row[0]] = np.array([float(v) for v in row[1:]])
            except ValueError as exc:
                raise ParseError(str(exc), path, lineno) from None
    return out


def load_dataset(path) -> tuple[list[ImageRecord], DatasetManifest]:
    """Read a dataset directory (or its manifest file)."""
    path = Path(path)
    manifest_path = path / MANIFEST_NAME if path.is_dir() else path
    root = manifest_path.parent
    manifest = DatasetManifest.from_text(manifest_path.read_text(encoding="utf-8"), root, manifest_path)

    poses_path = root / manifest.poses_file
    rows = _parse_poses(poses_path.read_text(encoding="utf-8"), poses_path)
    features = _parse_features(root / manifest.features_file) if manifest.features_file else {}

    records = []
    for rid, room, cond, pose in rows:
        pixels = None
        if manifest.image_dir:
            img_path = root / manifest.image_dir / f"{rid}.pgm"
            if img_path.exists():
                pixels = read_pgm(img_path)
        feats = features.get(rid)
        if pixels is None and feats is None:
            raise MissingImage(f"no raster or features for record {rid!r}")
        records.append(ImageRecord(rid, room, cond, pose, pixels, feats))

    known = {r.id for r in records}
    for name, ids in manifest.splits.items():
        missing = [i for i in ids if i not in known]
        if missing:
            raise ParseError(f"split {name!r} references unknown ids, e.g. {missing[0]!r}", manifest_path)
    return records, manifest


def poses_csv_text(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(POSES_HEADER)
    for r in records:
        writer.writerow([r.id, r.room, r.condition, repr(float(r.pose.x)), repr(float(r.pose.y))])
    return buf.getvalue()


def save_dataset(records, out_dir, splits=None, conditions=None, reference_condition=None) -> DatasetManifest:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    has_pixels = any(r.pixels is not None for r in records)
    has_features = any(r.features is not None for r in records)
    manifest = DatasetManifest(
        root=out,
        image_dir="images" if has_pixels else None,
        features_file="features.csv" if has_features else None,
        splits=dict(splits or {}),
        conditions=list(conditions or dict.fromkeys(r.condition for r in records)),
        reference_condition=reference_condition,
    )
    (out / manifest.poses_file).write_text(poses_csv_text(records), encoding="utf-8", newline="\n")
    if has_pixels:
        (out / "images").mkdir(exist_ok=True)
        for r in records:
            if r.pixels is not None:
                write_pgm(out / "images" / f"{r.id}.pgm", r.pixels)
    if has_features:
        width = max(len(r.features) for r in records if r.features is not None)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["id"] + [f"f{i}" for i in range(width)])
        for r in records:
            if r.features is not None:
                writer.writerow([r.id] + [repr(float(v)) for v in r.features])
        (out / "features.csv").write_text(buf.getvalue(), encoding="utf-8", newline="\n")
    (out / MANIFEST_NAME).write_text(manifest.to_text(), encoding="utf-8", newline="\n")
    return manifest


def record_features(record: ImageRecord, grid=DEFAULT_GRID) -> np.ndarray:
    """Encoder input for a record: stored features, else the featurized raster."""
    if record.features is not None:
        return np.asarray(record.features, dtype=np.float64)
    if record.pixels is None:
        raise MissingImage(f"record {record.id!r} has neither features nor pixels")
    return featurize(record.pixels, grid)


def feature_matrix(records, grid=DEFAULT_GRID) -> np.ndarray:
    return np.stack([record_features(r, grid) for r in records])


def select(records, ids) -> list[ImageRecord]:
    """Records whose id is in ``ids``, in ``ids`` order."""
    by_id = {r.id: r for r in records}
    return [by_id[i] for i in ids]


# --------------------------------------------------------------------------
# synthetic environment

@dataclass(frozen=True)
class SynthSpec:
    """Desk-scale multi-room environment.

    Intensities are in 8-bit units: ``room_contrast`` and ``position_contrast``
    are RMS amplitudes of the per-room and position-dependent components,
    ``appearance_noise`` the per-pixel noise SD.  Illumination lives in a
    separate subspace of column-constant row profiles: every image gets a
    random offset of RMS ``illumination_jitter`` there, and every non-reference
    condition adds a fixed offset of RMS ``condition_shift``.
    """

    rooms: int = 8
    images_per_room: int = 50
    room_size: float = 2.0
    image_shape: tuple[int, int] = (32, 128)
    appearance_noise: float = 6.0
    condition_shift: float = 25.0
    illumination_jitter: float = 12.0
    room_contrast: float = 30.0
    position_contrast: float = 30.0
    position_terms: int = 8
    conditions: tuple[str, ...] = ("cloudy", "night")
    seed: int = 0

    def __post_init__(self):
        for name in ("rooms", "images_per_room", "position_terms"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if self.room_size <= 0:
            raise ValueError(f"room_size must be positive, got {self.room_size}")
        if len(self.image_shape) != 2 or min(self.image_shape) < 1:
            raise ValueError(f"image_shape must be two positive ints, got {self.image_shape}")
        for name in ("appearance_noise", "condition_shift", "illumination_jitter",
                     "room_contrast", "position_contrast"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not self.conditions or len(set(self.conditions)) != len(self.conditions):
            raise ValueError("conditions must be a non-empty list of distinct labels")

    @property
    def feature_dim(self) -> int:
        return DEFAULT_GRID[0] * DEFAULT_GRID[1]

    def room_bounds(self, index: int) -> tuple[float, float, float, float]:
        cols = math.ceil(math.sqrt(self.rooms))
        gx, gy = index % cols, index // cols
        x0, y0 = gx * self.room_size, gy * self.room_size
        return x0, y0, x0 + self.room_size, y0 + self.room_size


def _smooth_pattern(rng, shape, terms=6) -> np.ndarray:
    """Random panorama built from low-frequency waves, periodic in azimuth, RMS 1."""
    rows, cols = shape
    r = np.arange(rows)[:, None] / rows
    c = np.arange(cols)[None, :] / cols
    out = np.zeros(shape)
    for _ in range(terms):
        fc = rng.integers(1, 7)
        fr = rng.uniform(0.0, 1.5)
        out += rng.normal() * np.cos(2 * np.pi * fc * c + rng.uniform(0, 2 * np.pi)) \
            * np.cos(np.pi * fr * r + rng.uniform(0, 2 * np.pi))
    out -= out.mean()
    return out / max(np.sqrt(np.mean(out ** 2)), 1e-12)


def _illumination_basis(rows: int) -> np.ndarray:
    """Row-only profiles (constant along azimuth), each of RMS 1."""
    r = (np.arange(rows) + 0.5) / rows
    profiles = [np.ones(rows), 2 * r - 1, np.cos(np.pi * r), np.cos(2 * np.pi * r)]
    out = []
    for p in profiles:
        p = p / np.sqrt(np.mean(p ** 2))
        out.append(p)
    return np.stack(out)


def _illumination(rng, basis: np.ndarray, rms: float, cols: int) -> np.ndarray:
    coeff = rng.standard_normal(basis.shape[0])
    profile = coeff @ basis
    profile *= rms / max(np.sqrt(np.mean(profile ** 2)), 1e-12)
    return np.repeat(profile[:, None], cols, axis=1)


def _trajectory(rng, bounds, count) -> np.ndarray:
    x0, y0, x1, y1 = bounds
    size = x1 - x0
    margin = 0.1 * size
    t = (np.arange(count) + rng.uniform(0.0, 1.0, count)) / count
    x = x0 + margin + (size - 2 * margin) * t
    y = y0 + size / 2 + (size / 2 - margin) * np.sin(2 * np.pi * 1.5 * t)
    return np.stack([x, y], axis=1)


def generate_synthetic(spec: SynthSpec) -> list[ImageRecord]:
    """Seeded synthetic dataset of ``rooms * images_per_room`` records.

    Each room holds ``ceil(images_per_room / len(conditions))`` places, each
    rendered once per condition (place-major order, so only the last place
    may lack some variants).  Every variant of a place shares its pose and
    appearance noise; only the condition offset differs, and the first
    condition has none.
    """
    rng = np.random.default_rng(spec.seed)
    shape = spec.image_shape
    k = spec.position_terms
    light = _illumination_basis(shape[0])
    cond_offsets = {spec.conditions[0]: np.zeros(shape)}
    for cond in spec.conditions[1:]:
        cond_offsets[cond] = _illumination(rng, light, spec.condition_shift, shape[1])

    records = []
    n_places = math.ceil(spec.images_per_room / len(spec.conditions))
    width = len(str(n_places - 1))
    for room in range(spec.rooms):
        label = f"room{room:02d}"
        appearance = spec.room_contrast * _smooth_pattern(rng, shape)
        basis = np.stack([_smooth_pattern(rng, shape) for _ in range(k)])
        wavelength = rng.uniform(1.0, 2.5, k)
        heading = rng.uniform(0, 2 * np.pi, k)
        freq = (2 * np.pi / wavelength)[:, None] * np.stack([np.cos(heading), np.sin(heading)], axis=1)
        phase = rng.uniform(0, 2 * np.pi, k)
        poses = _trajectory(rng, spec.room_bounds(room), n_places)
        emitted = 0
        for place, (x, y) in enumerate(poses):
            coeff = np.sin(freq @ np.array([x, y]) + phase) * math.sqrt(2.0 / k)
            clean = 128.0 + appearance + spec.position_contrast * np.tensordot(coeff, basis, axes=1)
            noise = spec.appearance_noise * rng.standard_normal(shape) \
                + _illumination(rng, light, spec.illumination_jitter, shape[1])
            for cond in spec.conditions[:spec.images_per_room - emitted]:
                emitted += 1
                img = np.clip(np.rint(clean + noise + cond_offsets[cond]), 0, 255).astype(np.uint8)
                rid = f"{label}_p{place:0{width}d}_{cond}"
                records.append(ImageRecord(rid, label, cond, Pose(float(x), float(y)), pixels=img))
    return records


# --------------------------------------------------------------------------
# splits

def split_dataset(records, train_fraction: float = 0.5, test_fraction: float | None = None,
                  reference_condition: str | None = None, seed: int = 0) -> dict[str, list]:
    """Condition-aware train/test splits.

    Places (records sharing room and pose) are partitioned per room.  The
    ``train`` split holds the reference-condition variants of the training
    places; ``test_<condition>`` holds every condition's variants of the
    remaining (test) places.  Split lists keep the input record order.
    """
    if test_fraction is None:
        test_fraction = 1.0 - train_fraction
    if train_fraction < 0 or test_fraction < 0 or train_fraction + test_fraction > 1.0 + 1e-12:
        raise InvalidFractions(f"fractions ({train_fraction}, {test_fraction}) must be >= 0 and sum to <= 1")
    records = list(records)
    if reference_condition is None:
        reference_condition = records[0].condition if records else None
    conditions = list(dict.fromkeys(r.condition for r in records))

    places_by_room: dict[str, list] = {}
    for r in records:
        key = (r.pose.x, r.pose.y)
        places = places_by_room.setdefault(r.room, [])
        if key not in places:
            places.append(key)

    rng = np.random.default_rng(seed)
    role: dict[tuple, str] = {}
    for room, places in places_by_room.items():
        order = rng.permutation(len(places))
        n_train = int(round(train_fraction * len(places)))
        n_test = min(int(round(test_fraction * len(places))), len(places) - n_train)
        for rank, idx in enumerate(order):
            if rank < n_train:
                role[(room,) + places[idx]] = "train"
            elif rank < n_train + n_test:
                role[(room,) + places[idx]] = "test"

    splits = {"train": []}
    splits.update({f"test_{c}": [] for c in conditions})
    for r in records:
        which = role.get((r.room, r.pose.x, r.pose.y))
        if which == "train" and r.condition == reference_condition:
            splits["train"].append(r.id)
        elif which == "test":
            splits[f"test_{r.condition}"].append(r.id)
    return splits
