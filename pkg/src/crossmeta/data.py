"""Synthetic geo-temporal species data and the delimited dataset file format.

Sister species share a visual prototype exactly and differ only in where
(range disc) or when (season) they are observed.

File format (UTF-8, comma-delimited, header required)::

    id,class,lat,lon,date,features

``date`` is a day-of-year integer or an ISO-8601 date; ``features`` is a
semicolon-separated list of reals, or ``@relative/path.npy`` pointing at a
1-D array next to the table.
"""
from __future__ import annotations

import csv
import datetime as dt
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .encoders import ValidationError, validate_meta

EARTH_COLUMNS = ("id", "class", "lat", "lon", "date")


@dataclass(frozen=True)
class SpeciesSpec:
    class_id: int
    prototype: tuple[float, ...]
    noise: float
    range_center: tuple[float, float]  # (lat, lon)
    range_radius: float  # degrees of arc
    season_center: float  # day of year
    season_width: float  # days, std of the wrapped Gaussian
    sister_of: int | None = None
    name: str = ""

    @property
    def label(self) -> str:
        return self.name or f"species_{self.class_id}"


@dataclass
class Dataset:
    features: np.ndarray  # (N, D)
    labels: np.ndarray  # (N,) int
    lat: np.ndarray
    lon: np.ndarray
    date: np.ndarray  # day of year, int
    num_classes: int
    split: str = "train"
    seed: int | None = None
    ids: np.ndarray | None = None
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.labels)
        if self.ids is None:
            self.ids = np.arange(n)
        for name in ("features", "lat", "lon", "date", "ids"):
            if len(getattr(self, name)) != n:
                raise ValidationError(f"{name} has {len(getattr(self, name))} rows, expected {n}")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.features[idx], self.labels[idx], self.lat[idx], self.lon[idx],
                       self.date[idx], self.num_classes, self.split, self.seed, self.ids[idx],
                       list(self.class_names))


# ---------------------------------------------------------------- geometry


def great_circle_deg(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Central angle in degrees (haversine)."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    h = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    return np.degrees(2 * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0))))


def sample_spherical_cap(rng: np.random.Generator, center: tuple[float, float],
                         radius_deg: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform-by-area samples in the cap of angular ``radius_deg`` around ``center``."""
    r = math.radians(radius_deg)
    cos_d = rng.uniform(math.cos(r), 1.0, size=n)
    d = np.arccos(cos_d)
    az = rng.uniform(0.0, 2 * math.pi, size=n)
    lat0, lon0 = math.radians(center[0]), math.radians(center[1])
    lat = np.arcsin(np.sin(lat0) * np.cos(d) + np.cos(lat0) * np.sin(d) * np.cos(az))
    lon = lon0 + np.arctan2(np.sin(az) * np.sin(d) * np.cos(lat0),
                            np.cos(d) - np.sin(lat0) * np.sin(lat))
    lon = np.degrees(lon)
    lon = (lon + 180.0) % 360.0 - 180.0
    lon = np.where(lon == -180.0, 180.0, lon)
    return np.degrees(lat), lon


def circular_day_gap(a: float, b: float, period: float = 365.0) -> float:
    d = abs(a - b) % period
    return min(d, period - d)


# -------------------------------------------------------------- generation


def validate_specs(specs: list[SpeciesSpec]) -> None:
    problems = []
    ids = [s.class_id for s in specs]
    if sorted(ids) != list(range(len(specs))):
        problems.append(f"class ids must be 0..{len(specs) - 1}, got {ids}")
    dims = {len(s.prototype) for s in specs}
    if len(dims) != 1:
        problems.append(f"prototypes differ in length: {sorted(dims)}")
    by_id = {s.class_id: s for s in specs}
    for s in specs:
        if s.noise < 0 or s.range_radius <= 0 or s.season_width <= 0:
            problems.append(f"class {s.class_id}: noise, range_radius and season_width must be positive")
        try:
            validate_meta(s.range_center[0], s.range_center[1], max(1.0, min(366.0, s.season_center)))
        except ValidationError as exc:
            problems.append(f"class {s.class_id}: range center invalid ({exc})")
        if not 1 <= s.season_center <= 366:
            problems.append(f"class {s.class_id}: season_center {s.season_center} outside [1, 366]")
        if s.sister_of is None:
            continue
        o = by_id.get(s.sister_of)
        if o is None:
            problems.append(f"class {s.class_id}: sister {s.sister_of} does not exist")
            continue
        if tuple(s.prototype) != tuple(o.prototype):
            problems.append(f"sister pair ({s.class_id}, {o.class_id}): prototypes differ")
        dist = float(great_circle_deg(*s.range_center, *o.range_center))
        geo_ok = dist >= 3 * max(s.range_radius, o.range_radius)
        season_ok = circular_day_gap(s.season_center, o.season_center) >= 3 * max(s.season_width, o.season_width)
        if not (geo_ok or season_ok):
            problems.append(f"sister pair ({s.class_id}, {o.class_id}): neither ranges "
                            f"(centers {dist:.1f} deg apart) nor seasons are disjoint")
    if problems:
        raise ValidationError("invalid species specs: " + "; ".join(problems))


def sister_pairs(specs: list[SpeciesSpec]) -> list[tuple[int, int]]:
    pairs = {tuple(sorted((s.class_id, s.sister_of))) for s in specs if s.sister_of is not None}
    return sorted(pairs)


def default_specs(feature_dim: int = 64, noise: float = 1.0, seed: int = 0) -> list[SpeciesSpec]:
    """12 classes: two geo-separated sister pairs, two season-separated pairs, four singletons."""
    rng = np.random.default_rng(seed)
    protos = rng.normal(0.0, 1.0, size=(8, feature_dim))
    protos *= 6.0 / np.linalg.norm(protos, axis=1, keepdims=True)

    def p(i):
        return tuple(float(v) for v in protos[i])

    rows = [
        # geo-separated pairs: same season, distant ranges
        (0, 0, (45.0, -120.0), 8.0, 170, 40, 1),
        (1, 0, (40.0, -75.0), 8.0, 170, 40, 0),
        (2, 1, (60.0, -150.0), 7.0, 200, 35, 3),
        (3, 1, (25.0, -100.0), 7.0, 200, 35, 2),
        # season-separated pairs: same range, opposite seasons
        (4, 2, (38.0, -90.0), 10.0, 100, 25, 5),
        (5, 2, (38.0, -90.0), 10.0, 280, 25, 4),
        (6, 3, (50.0, -105.0), 10.0, 60, 20, 7),
        (7, 3, (50.0, -105.0), 10.0, 230, 20, 6),
        # singletons
        (8, 4, (33.0, -112.0), 9.0, 150, 60, None),
        (9, 5, (45.0, -68.0), 9.0, 190, 60, None),
        (10, 6, (30.0, -84.0), 9.0, 120, 60, None),
        (11, 7, (55.0, -125.0), 9.0, 210, 60, None),
    ]
    return [SpeciesSpec(cid, p(proto), noise, center, radius, float(sc), float(sw), sister,
                        f"species_{cid}")
            for cid, proto, center, radius, sc, sw, sister in rows]


def generate(specs: list[SpeciesSpec], n_per_class: int = 160, seed: int = 0,
             ) -> tuple[Dataset, Dataset]:
    """Draw ``n_per_class`` samples per species and split them 50/50 per class."""
    validate_specs(specs)
    if n_per_class < 2:
        raise ValidationError("n_per_class must be >= 2 so every class lands in both splits")
    rng = np.random.default_rng(seed)
    feats, labels, lats, lons, dates = [], [], [], [], []
    for s in sorted(specs, key=lambda s: s.class_id):
        proto = np.asarray(s.prototype)
        feats.append(proto + rng.normal(0.0, s.noise, size=(n_per_class, proto.size)) if s.noise > 0
                     else np.tile(proto, (n_per_class, 1)))
        la, lo = sample_spherical_cap(rng, s.range_center, s.range_radius, n_per_class)
        lats.append(la)
        lons.append(lo)
        day = np.rint(rng.normal(s.season_center, s.season_width, size=n_per_class))
        dates.append(((day - 1) % 365 + 1).astype(np.int64))
        labels.append(np.full(n_per_class, s.class_id))
    feats, labels = np.concatenate(feats), np.concatenate(labels)
    lats, lons, dates = np.concatenate(lats), np.concatenate(lons), np.concatenate(dates)
    names = [s.label for s in sorted(specs, key=lambda s: s.class_id)]

    train_idx, test_idx = [], []
    for c in range(len(specs)):
        idx = rng.permutation(np.flatnonzero(labels == c))
        half = len(idx) // 2
        train_idx.append(np.sort(idx[:half]))
        test_idx.append(np.sort(idx[half:]))
    full = Dataset(feats, labels, lats, lons, dates, len(specs), "all", seed, None, names)
    train = full.subset(np.concatenate(train_idx))
    test = full.subset(np.concatenate(test_idx))
    train.split, test.split = "train", "test"
    return train, test


def specs_to_json(specs: list[SpeciesSpec]) -> str:
    return json.dumps([asdict(s) for s in specs], sort_keys=True)


def specs_from_json(text: str) -> list[SpeciesSpec]:
    raw = json.loads(text)
    out = []
    for r in raw:
        r = dict(r)
        r["prototype"] = tuple(r["prototype"])
        r["range_center"] = tuple(r["range_center"])
        out.append(SpeciesSpec(**r))
    return out


# ------------------------------------------------------------------- files


def _parse_date(text: str) -> int:
    text = text.strip()
    if text.isdigit():
        return int(text)
    return dt.date.fromisoformat(text).timetuple().tm_yday


def write_table(ds: Dataset, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*EARTH_COLUMNS, "features"])
        for k in range(len(ds)):
            w.writerow([int(ds.ids[k]), ds.class_names[ds.labels[k]] if ds.class_names else int(ds.labels[k]),
                        repr(float(ds.lat[k])), repr(float(ds.lon[k])), int(ds.date[k]),
                        ";".join(repr(float(v)) for v in ds.features[k])])


def load_table(path, class_names: list[str] | None = None, split: str | None = None) -> Dataset:
    """Parse and validate a dataset file; invalid rows are all reported at once.

    Class labels are mapped to ids by ``class_names`` when given, else integer
    labels are used verbatim and other labels are numbered in sorted order.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ValidationError(f"{path}: empty file") from None
    missing = [c for c in (*EARTH_COLUMNS, "features") if c not in header]
    if missing:
        raise ValidationError(f"{path}: missing column(s) {missing}")
    col = {name: header.index(name) for name in header}

    ids, raw_labels, lats, lons, dates, feats, errors = [], [], [], [], [], [], []
    for rowno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            lat = float(row[col["lat"]])
            lon = float(row[col["lon"]])
            doy = _parse_date(row[col["date"]])
            ref = row[col["features"]].strip()
            if ref.startswith("@"):
                vec = np.load(path.parent / ref[1:]).astype(np.float64).ravel()
            else:
                vec = np.array([float(v) for v in ref.split(";")])
        except (ValueError, IndexError, OSError) as exc:
            errors.append(f"row {rowno}: unparsable value ({exc})")
            continue
        for field_name, ok in (("lat", -90 <= lat <= 90), ("lon", -180 < lon <= 180), ("date", 1 <= doy <= 366)):
            if not ok:
                errors.append(f"row {rowno}: field {field_name!r} out of range")
        if not np.all(np.isfinite(vec)):
            errors.append(f"row {rowno}: field 'features' not finite")
        ids.append(int(row[col["id"]]) if row[col["id"]].strip().lstrip("-").isdigit() else rowno - 2)
        raw_labels.append(row[col["class"]].strip())
        lats.append(lat)
        lons.append(lon)
        dates.append(doy)
        feats.append(vec)
    if errors:
        raise ValidationError(f"{path}: rejected rows: " + "; ".join(errors))
    if not raw_labels:
        raise ValidationError(f"{path}: no rows (class cardinality 0)")
    if len({v.size for v in feats}) != 1:
        raise ValidationError(f"{path}: feature vectors differ in length")

    numeric = all(l.lstrip("-").isdigit() for l in raw_labels)
    if class_names is None:
        if numeric:
            class_names = [str(c) for c in range(max(int(l) for l in raw_labels) + 1)]
        else:
            class_names = sorted(set(raw_labels))
    lookup = {n: i for i, n in enumerate(class_names)}
    unknown = sorted(set(raw_labels) - lookup.keys())
    if unknown:
        raise ValidationError(f"{path}: unknown class label(s) {unknown}")
    labels = np.array([lookup[l] for l in raw_labels])
    return Dataset(np.vstack(feats), labels, np.array(lats), np.array(lons),
                   np.array(dates, dtype=np.int64), len(class_names), split or path.stem,
                   None, np.array(ids), list(class_names))
