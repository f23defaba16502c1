"""Image, text and metadata encoders projecting into one shared unit sphere.

The metadata encoder is the real thing: sine/cosine features of latitude,
longitude and day-of-year at octave frequencies, then a residual MLP. Image and
text backbones are toy stand-ins with the same interface (dense features in,
shared-dim embedding out).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterator, Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

GROUPS = ("image", "text", "meta", "head", "loss")


class ValidationError(ValueError):
    """Input outside its documented domain."""


@dataclass(frozen=True)
class MetaInput:
    latitude: float
    longitude: float
    date: int

    def __post_init__(self):
        validate_meta(self.latitude, self.longitude, self.date)


def validate_meta(lat, lon, doy) -> None:
    lat, lon, doy = np.asarray(lat, float), np.asarray(lon, float), np.asarray(doy, float)
    if not np.all((lat >= -90) & (lat <= 90)):
        raise ValidationError(f"latitude out of range [-90, 90]: {lat[(lat < -90) | (lat > 90) | np.isnan(lat)]}")
    if not np.all((lon > -180) & (lon <= 180)):
        raise ValidationError(f"longitude out of range (-180, 180]: {lon[~((lon > -180) & (lon <= 180))]}")
    if not np.all((doy >= 1) & (doy <= 366)):
        raise ValidationError(f"date (day-of-year) out of range [1, 366]: {doy[~((doy >= 1) & (doy <= 366))]}")


def normalize_meta(lat, lon, doy) -> np.ndarray:
    """Map (lat, lon, day-of-year) linearly onto [-1, 1]^3, shape (N, 3)."""
    lat, lon, doy = (np.atleast_1d(np.asarray(v, dtype=np.float64)) for v in (lat, lon, doy))
    return np.stack([lat / 90.0, lon / 180.0, 2.0 * (doy - 1.0) / 365.0 - 1.0], axis=1)


def encode_meta_features(lat, lon, doy, frequencies: int = 8) -> np.ndarray:
    """Sinusoidal metadata features, shape (N, 6 * frequencies).

    Column layout is coordinate-major: for each of (lat, lon, date) and each
    k in range(frequencies), the pair sin(2**k * pi * c), cos(2**k * pi * c).
    Accepts scalars or equal-length arrays.
    """
    if frequencies < 1:
        raise ValidationError(f"frequencies must be >= 1, got {frequencies}")
    validate_meta(lat, lon, doy)
    coords = normalize_meta(lat, lon, doy)
    omega = np.pi * 2.0 ** np.arange(frequencies)
    angles = coords[:, :, None] * omega[None, None, :]  # (N, 3, F)
    feats = np.stack([np.sin(angles), np.cos(angles)], axis=-1)  # (N, 3, F, 2)
    return feats.reshape(coords.shape[0], 6 * frequencies)


@dataclass(frozen=True)
class EncoderConfig:
    image_dim: int = 64
    image_hidden: int = 128
    num_classes: int = 12
    text_width: int = 64
    meta_frequencies: int = 8
    meta_hidden: int = 128
    shared_dim: int = 256
    head_hidden: int = 128
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        if self.activation not in ("relu", "softplus"):
            raise ValidationError(f"unknown activation {self.activation!r}")
        for name, value in asdict(self).items():
            if name not in ("activation", "seed") and value < 1:
                raise ValidationError(f"{name} must be positive, got {value}")

    @property
    def meta_dim(self) -> int:
        return 6 * self.meta_frequencies

    def shapes(self, head_input: int | None = None) -> dict[str, tuple[int, ...]]:
        """Names and shapes of every parameter, grouped by name prefix."""
        s, h = self.shared_dim, self.meta_hidden
        head_in = 2 * s if head_input is None else head_input
        return {
            "image.w1": (self.image_dim, self.image_hidden),
            "image.b1": (self.image_hidden,),
            "image.w2": (self.image_hidden, self.image_hidden),
            "image.b2": (self.image_hidden,),
            "image.proj_w": (self.image_hidden, s),
            "image.proj_b": (s,),
            "text.table": (self.num_classes, self.text_width),
            "text.proj_w": (self.text_width, s),
            "text.proj_b": (s,),
            "meta.w1": (self.meta_dim, h),
            "meta.b1": (h,),
            "meta.w2": (h, h),
            "meta.b2": (h,),
            "meta.proj_w": (h, s),
            "meta.proj_b": (s,),
            "head.w1": (head_in, self.head_hidden),
            "head.b1": (self.head_hidden,),
            "head.w2": (self.head_hidden, self.num_classes),
            "head.b2": (self.num_classes,),
        }


class ModelParams:
    """Flat name -> array store; the name prefix before '.' is the group."""

    def __init__(self, arrays: Mapping[str, np.ndarray]):
        self.arrays = {k: np.array(v, dtype=np.float64) for k, v in arrays.items()}

    @classmethod
    def initialize(cls, config: EncoderConfig, rng: np.random.Generator | None = None,
                   head_input: int | None = None) -> "ModelParams":
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(config.seed) if rng is None else rng
        arrays = {}
        for name, shape in config.shapes(head_input).items():
            if len(shape) == 1:
                arrays[name] = np.zeros(shape)
            else:
                a = np.sqrt(6.0 / (shape[0] + shape[1]))
                arrays[name] = rng.uniform(-a, a, size=shape)
        return cls(arrays)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self.arrays[name] = value

    def __contains__(self, name: str) -> bool:
        return name in self.arrays

    def __iter__(self) -> Iterator[str]:
        return iter(self.arrays)

    def names(self, group: str | None = None) -> list[str]:
        if group is None:
            return list(self.arrays)
        return [k for k in self.arrays if k.split(".", 1)[0] == group]

    def clone(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.arrays.items()})

    def perturb(self, name: str, index, delta: float) -> "ModelParams":
        out = self.clone()
        out.arrays[name][index] += delta
        return out

    def leaves(self, names=None) -> dict[str, Tensor]:
        """Fresh differentiable leaf tensors over copies of the arrays."""
        names = self.arrays if names is None else names
        return {k: Tensor(self.arrays[k], requires_grad=True) for k in names}

    def equal(self, other: "ModelParams") -> bool:
        return self.arrays.keys() == other.arrays.keys() and all(
            np.array_equal(v, other.arrays[k]) for k, v in self.arrays.items()
        )


def _act(x: Tensor, kind: str) -> Tensor:
    return ad.relu(x) if kind == "relu" else ad.softplus(x)


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input width {x.shape} does not match weight {w.shape}")
    return ad.add(ad.matmul(x, w), b)


def project_and_normalize(raw: Tensor, w: Tensor, b: Tensor, eps: float = 1e-12) -> Tensor:
    """Linear head into the shared space followed by row-wise l2 normalization."""
    return ad.l2_normalize_rows(_linear(raw, w, b), eps)


def _as_batch(x) -> Tensor:
    x = ad.as_tensor(x)
    if x.data.ndim == 1:
        x = Tensor(x.data[None, :], requires_grad=x.requires_grad)
    return x


def meta_backbone(features, p: Mapping[str, Tensor], activation: str = "relu") -> Tensor:
    f = _as_batch(features)
    h1 = _act(_linear(f, p["meta.w1"], p["meta.b1"]), activation)
    h2 = ad.add(_linear(h1, p["meta.w2"], p["meta.b2"]), h1)  # residual skip
    return _act(h2, activation)


def meta_encoder_forward(features, p: Mapping[str, Tensor], activation: str = "relu") -> Tensor:
    """Sin/cos features (N, 6F) -> unnormalized shared-dim embedding (N, S)."""
    return _linear(meta_backbone(features, p, activation), p["meta.proj_w"], p["meta.proj_b"])


def image_backbone(x, p: Mapping[str, Tensor], activation: str = "relu") -> Tensor:
    x = _as_batch(x)
    h = _act(_linear(x, p["image.w1"], p["image.b1"]), activation)
    return _act(_linear(h, p["image.w2"], p["image.b2"]), activation)


def image_encoder_forward(x, p: Mapping[str, Tensor], activation: str = "relu") -> Tensor:
    return _linear(image_backbone(x, p, activation), p["image.proj_w"], p["image.proj_b"])


def _class_rows(class_ids, p: Mapping[str, Tensor]) -> Tensor:
    ids = np.atleast_1d(np.asarray(class_ids))
    n = p["text.table"].shape[0]
    if ids.dtype.kind not in "iu":
        raise ValidationError(f"class ids must be integers, got dtype {ids.dtype}")
    bad = ids[(ids < 0) | (ids >= n)]
    if bad.size:
        raise ValidationError(f"class id(s) {bad.tolist()} outside [0, {n})")
    return ad.take_rows(p["text.table"], ids)


def text_encoder_forward(class_ids, p: Mapping[str, Tensor]) -> Tensor:
    """Per-class prompt embedding lookup followed by the projection head."""
    return _linear(_class_rows(class_ids, p), p["text.proj_w"], p["text.proj_b"])


def prompt(class_name: str) -> str:
    """Class prompt text; each distinct prompt owns one row of the text table."""
    return f"This is a photograph of a bird called {class_name}"


def embed_image(x, p, activation="relu", eps=1e-12) -> Tensor:
    return project_and_normalize(image_backbone(x, p, activation), p["image.proj_w"], p["image.proj_b"], eps)


def embed_text(class_ids, p, eps=1e-12) -> Tensor:
    return project_and_normalize(_class_rows(class_ids, p), p["text.proj_w"], p["text.proj_b"], eps)


def embed_meta(features, p, activation="relu", eps=1e-12) -> Tensor:
    return project_and_normalize(meta_backbone(features, p, activation), p["meta.proj_w"], p["meta.proj_b"], eps)
