"""Metrics, loss-term ablations and the location exports (embeddings, heatmaps)."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import Dataset, great_circle_deg
from .encoders import EncoderConfig, ModelParams, embed_meta, encode_meta_features
from .autodiff import Tensor
from .loss import ALL_TERMS, TERMS
from .training import TrainConfig, config_hash, finetune, predict, predict_dataset, pretrain

ABLATIONS = {
    "full": (),
    "two_term": ("MT", "TM", "MI", "IM"),
    "drop_IM": ("IM", "MI"),
    "drop_TM": ("TM", "MT"),
    "no_pretrain": ALL_TERMS,
}


@dataclass
class EvalReport:
    accuracy: float
    per_class_accuracy: list[float]
    sister_pair_accuracy: dict[str, float]
    sister_accuracy: float | None
    confusion: list[list[int]]
    n: int
    seed: int | None = None
    config_hash: str | None = None
    variant: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))


def report_from_probs(labels, probs, num_classes: int, pairs=(), **meta) -> EvalReport:
    labels = np.asarray(labels)
    probs = np.asarray(probs)
    pred = np.argmax(probs, axis=1)
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (labels, pred), 1)
    counts = conf.sum(axis=1)
    per_class = [float(conf[c, c] / counts[c]) if counts[c] else float("nan") for c in range(num_classes)]
    sister = {}
    for a, b in pairs:
        sel = (labels == a) | (labels == b)
        if not np.any(sel):
            continue
        # binary decision between the two sisters, ties to the lower index
        lo, hi = min(a, b), max(a, b)
        choice = np.where(probs[sel, lo] >= probs[sel, hi], lo, hi)
        sister[f"{lo}-{hi}"] = float(np.mean(choice == labels[sel]))
    return EvalReport(
        accuracy=float(np.mean(pred == labels)),
        per_class_accuracy=per_class,
        sister_pair_accuracy=sister,
        sister_accuracy=float(np.mean(list(sister.values()))) if sister else None,
        confusion=conf.tolist(),
        n=int(len(labels)),
        **meta,
    )


def evaluate(ds: Dataset, params: ModelParams, enc: EncoderConfig, pairs=(), use_meta: bool = True,
             **meta) -> EvalReport:
    """Top-1, per-class, sister-pair accuracy and confusion matrix on ``ds``."""
    _, probs = predict_dataset(params, ds, enc, use_meta)
    return report_from_probs(ds.labels, probs, enc.num_classes, pairs, **meta)


def run_pipeline(train: Dataset, test: Dataset, config: TrainConfig, enc: EncoderConfig,
                 pairs=(), variant: str | None = None) -> tuple[EvalReport, ModelParams]:
    params, _ = pretrain(train, config, enc)
    params, _ = finetune(train, params, config, enc)
    report = evaluate(test, params, enc, pairs, config.use_meta, seed=config.seed,
                      config_hash=config_hash(asdict(enc), config.to_dict()), variant=variant)
    return report, params


def run_ablation(train: Dataset, test: Dataset, config: TrainConfig, enc: EncoderConfig,
                 variants: dict[str, tuple[str, ...]] | None = None, pairs=(),
                 seeds=None) -> dict[str, list[EvalReport]]:
    """Pre-train and fine-tune once per (variant, seed) with the named terms removed.

    Variants share the seed, so data order and initial parameters are identical
    across variants; only the loss composition differs.
    """
    variants = ABLATIONS if variants is None else variants
    seeds = [config.seed] if seeds is None else list(seeds)
    out: dict[str, list[EvalReport]] = {}
    for name, drop in variants.items():
        unknown = set(drop) - set(TERMS)
        if unknown:
            raise KeyError(f"variant {name!r}: unknown terms {sorted(unknown)}")
        terms = tuple(t for t in ALL_TERMS if t not in drop)
        out[name] = [run_pipeline(train, test, replace(config, terms=terms, seed=s), enc, pairs, name)[0]
                     for s in seeds]
    return out


def summarize(reports: list[EvalReport], key: str = "sister_accuracy") -> tuple[float, float]:
    vals = np.array([getattr(r, key) for r in reports], dtype=float)
    return float(vals.mean()), float(vals.std(ddof=1)) if len(vals) > 1 else 0.0


# ---------------------------------------------------------------- exports


@dataclass(frozen=True)
class GridSpec:
    n_lat: int = 60
    n_lon: int = 120
    lat_min: float = -90.0
    lat_max: float = 90.0
    lon_min: float = -180.0
    lon_max: float = 180.0

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-center latitudes (n_lat,) and longitudes (n_lon,)."""
        lat_edges = np.linspace(self.lat_min, self.lat_max, self.n_lat + 1)
        lon_edges = np.linspace(self.lon_min, self.lon_max, self.n_lon + 1)
        return (lat_edges[:-1] + lat_edges[1:]) / 2, (lon_edges[:-1] + lon_edges[1:]) / 2

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        lat, lon = self.centers()
        la, lo = np.meshgrid(lat, lon, indexing="ij")
        return la.ravel(), lo.ravel()


@dataclass
class HeatmapGrid:
    grid: GridSpec
    class_id: int
    date: int
    probs: np.ndarray  # (n_lat, n_lon), row 0 is the southernmost band
    image_features: np.ndarray = field(repr=False, default=None)

    def header(self) -> dict:
        return {"bbox": [self.grid.lat_min, self.grid.lat_max, self.grid.lon_min, self.grid.lon_max],
                "resolution": [self.grid.n_lat, self.grid.n_lon], "class_id": self.class_id,
                "date": self.date, "rows": "latitude ascending", "cols": "longitude ascending"}

    def write(self, path) -> None:
        """Delimited matrix at ``path`` plus ``<path>.json`` sidecar header."""
        path = Path(path)
        np.savetxt(path, self.probs, delimiter=",", fmt="%.17g")
        Path(str(path) + ".json").write_text(json.dumps(self.header(), sort_keys=True, indent=2))

    @classmethod
    def read(cls, path) -> "HeatmapGrid":
        path = Path(path)
        head = json.loads(Path(str(path) + ".json").read_text())
        la0, la1, lo0, lo1 = head["bbox"]
        grid = GridSpec(*head["resolution"], la0, la1, lo0, lo1)
        probs = np.atleast_2d(np.loadtxt(path, delimiter=","))
        return cls(grid, head["class_id"], head["date"], probs)


def class_heatmap(params: ModelParams, enc: EncoderConfig, class_id: int, image_features,
                  date: int = 183, grid: GridSpec | None = None) -> HeatmapGrid:
    """Probability of ``class_id`` at every grid cell for a fixed image and date."""
    grid = GridSpec() if grid is None else grid
    if not 0 <= class_id < enc.num_classes:
        raise ValueError(f"class_id {class_id} outside [0, {enc.num_classes})")
    lat, lon = grid.mesh()
    lon = np.where(lon <= -180.0, 180.0, lon)
    feats = np.tile(np.asarray(image_features, dtype=float), (lat.size, 1))
    _, probs = predict(params, feats, lat, lon, np.full(lat.size, date), enc)
    return HeatmapGrid(grid, class_id, date, probs[:, class_id].reshape(grid.n_lat, grid.n_lon),
                       np.asarray(image_features, dtype=float))


def export_location_embeddings(params: ModelParams, enc: EncoderConfig, grid: GridSpec | None = None,
                               date: int = 183, path=None) -> np.ndarray:
    """Normalized metadata embedding per grid cell.

    Returns an array with columns ``lat, lon, e_0 .. e_{S-1}``, one row per
    cell in latitude-major order; also written as CSV when ``path`` is given.
    """
    grid = GridSpec() if grid is None else grid
    lat, lon = grid.mesh()
    lon = np.where(lon <= -180.0, 180.0, lon)
    mf = encode_meta_features(lat, lon, np.full(lat.size, date), enc.meta_frequencies)
    p = {n: Tensor(params[n]) for n in params.names("meta")}
    emb = embed_meta(mf, p, enc.activation).data
    table = np.column_stack([lat, lon, emb])
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lat", "lon", *[f"e{k}" for k in range(emb.shape[1])]])
            w.writerows([[repr(float(v)) for v in row] for row in table])
    return table


def range_mask(grid: GridSpec, center: tuple[float, float], radius: float) -> np.ndarray:
    """Boolean (n_lat, n_lon) mask of cells whose center lies inside a range disc."""
    lat, lon = grid.mesh()
    inside = great_circle_deg(lat, lon, center[0], center[1]) <= radius
    return inside.reshape(grid.n_lat, grid.n_lon)
