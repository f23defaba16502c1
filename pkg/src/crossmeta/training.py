"""Adam/AdamW, cross-contrastive pre-training and classifier fine-tuning."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import autodiff as ad
from .autodiff import NumericError, Tensor
from .data import Dataset
from .encoders import (EncoderConfig, ModelParams, ValidationError, embed_image, embed_meta,
                       embed_text, encode_meta_features, _act, _linear)
from .loss import (ALL_TERMS, LOGIT_SCALE_NAME, TERMS, Temperature, clamp_logit_scale,
                   total_loss)

log = logging.getLogger(__name__)

# independent random substreams derived from the run seed
STREAMS = {"data": 0, "init": 1, "shuffle": 2, "head_init": 3, "finetune_shuffle": 4}


def rng_for(seed: int, stream: str) -> np.random.Generator:
    return np.random.default_rng([seed, STREAMS[stream]])


# -------------------------------------------------------------- optimizers


class Adam:
    """Bias-corrected Adam over a subset of a :class:`ModelParams` store."""

    def __init__(self, names, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        if lr < 0:
            raise ValueError(f"learning rate must be >= 0, got {lr}")
        self.names = list(names)
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def _decay(self, p: np.ndarray) -> np.ndarray:
        return p

    def step(self, params: ModelParams, grads: dict[str, np.ndarray | None]) -> None:
        """Update ``params`` in place. Parameters whose gradient is None are left alone."""
        for name in self.names:
            g = grads.get(name)
            if g is not None and not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in parameter slice {name!r}")
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for name in self.names:
            g = grads.get(name)
            if g is None:
                continue
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m = self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            p = self._decay(params[name])
            params[name] = p - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class AdamW(Adam):
    """Adam with decoupled weight decay applied before the moment update."""

    def __init__(self, names, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        super().__init__(names, lr, betas, eps)
        self.weight_decay = weight_decay

    def _decay(self, p):
        if self.weight_decay == 0:
            return p
        return p - self.lr * self.weight_decay * p


# ------------------------------------------------------------------ config


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 50
    lr_meta: float = 5e-5
    lr_text: float = 1e-5
    lr_image: float = 1e-4
    lr_temperature: float = 1e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    tau: float = 0.007
    tau_mode: str = "fixed"
    terms: tuple[str, ...] = ALL_TERMS
    seed: int = 0
    shuffle: bool = True
    finetune_epochs: int = 20
    lr_head: float = 1e-3
    lr_finetune_encoders: float = 1e-4
    freeze_encoders: bool = True
    use_meta: bool = True

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValidationError("batch_size must be >= 2 (contrastive loss is degenerate at 1)")
        for name in ("lr_meta", "lr_text", "lr_image", "lr_temperature", "lr_head", "lr_finetune_encoders"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        Temperature(self.tau, self.tau_mode)
        unknown = set(self.terms) - set(TERMS)
        if unknown:
            raise ValidationError(f"unknown loss terms {sorted(unknown)}")
        object.__setattr__(self, "terms", tuple(self.terms))

    @property
    def temperature(self) -> Temperature:
        return Temperature(self.tau, self.tau_mode)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["terms"] = list(self.terms)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown training keys {sorted(unknown)}")
        d = dict(d)
        if "terms" in d:
            d["terms"] = tuple(d["terms"])
        return cls(**d)


def config_hash(*dicts: dict) -> str:
    blob = json.dumps(dicts, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class History:
    records: list[dict] = field(default_factory=list)
    encoder_grad_nonzero: bool = False

    def column(self, key: str) -> list[float]:
        return [r[key] for r in self.records]


# ---------------------------------------------------------------- batching


def batches(n: int, batch_size: int, rng: np.random.Generator | None):
    """Index batches for one epoch; a trailing batch with fewer than 2 rows is dropped."""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        if len(idx) >= 2:
            yield idx


def meta_features(ds: Dataset, enc: EncoderConfig) -> np.ndarray:
    return encode_meta_features(ds.lat, ds.lon, ds.date, enc.meta_frequencies)


def init_params(enc: EncoderConfig, config: TrainConfig) -> ModelParams:
    params = ModelParams.initialize(enc, rng_for(config.seed, "init"))
    if config.tau_mode == "learnable":
        params[LOGIT_SCALE_NAME] = np.array(config.temperature.initial_logit_scale)
    return params


def _tau_arg(p: dict, config: TrainConfig):
    return p[LOGIT_SCALE_NAME] if config.tau_mode == "learnable" else config.tau


def contrastive_forward(params_or_leaves, features, class_ids, meta_feats, enc: EncoderConfig,
                        config: TrainConfig):
    """Embed one batch in all needed modalities and evaluate the configured loss terms."""
    p = params_or_leaves
    used = {m for t in config.terms for m in TERMS[t]}
    zi = embed_image(features, p, enc.activation) if "I" in used else None
    zt = embed_text(class_ids, p) if "T" in used else None
    zm = embed_meta(meta_feats, p, enc.activation) if "M" in used else None
    return total_loss(zi, zt, zm, class_ids, _tau_arg(p, config), terms=config.terms)


# ------------------------------------------------------------- pretraining


def pretrain(train: Dataset, config: TrainConfig, enc: EncoderConfig,
             params: ModelParams | None = None) -> tuple[ModelParams, History]:
    """Cross-contrastive pre-training of the three encoders.

    One AdamW per encoder (plus one for a learnable temperature), so each
    encoder keeps its own learning rate. Returns the trained parameters and the
    per-epoch mean of every loss term.
    """
    if train.num_classes != enc.num_classes:
        raise ValidationError(f"dataset has {train.num_classes} classes, encoders expect {enc.num_classes}")
    params = init_params(enc, config) if params is None else params.clone()
    lrs = {"image": config.lr_image, "text": config.lr_text, "meta": config.lr_meta,
           "loss": config.lr_temperature}
    opts = {g: AdamW(params.names(g), lr, (config.beta1, config.beta2), config.adam_eps,
                     config.weight_decay) for g, lr in lrs.items() if params.names(g)}
    trainable = [n for g in opts for n in params.names(g)]
    mf = meta_features(train, enc)
    shuffle_rng = rng_for(config.seed, "shuffle") if config.shuffle else None
    hist = History()

    for epoch in range(config.epochs):
        sums = {k: 0.0 for k in (*config.terms, "total")}
        n_batches = 0
        for idx in batches(len(train), config.batch_size, shuffle_rng):
            if not config.terms:
                continue
            leaves = params.leaves(trainable)
            br = contrastive_forward(leaves, train.features[idx], train.labels[idx], mf[idx], enc, config)
            ad.backward(br.loss)
            for g, opt in opts.items():
                opt.step(params, {n: leaves[n].grad for n in opt.names})
            if LOGIT_SCALE_NAME in params:
                params[LOGIT_SCALE_NAME] = clamp_logit_scale(params[LOGIT_SCALE_NAME])
            for k, v in br.terms.items():
                sums[k] += v
            sums["total"] += br.total
            n_batches += 1
        rec = {"epoch": epoch + 1, **{k: v / max(n_batches, 1) for k, v in sums.items()}}
        if not np.isfinite(rec["total"]):
            raise NumericError(f"non-finite pre-training loss at epoch {epoch + 1}")
        hist.records.append(rec)
        log.debug("pretrain epoch %d total %.5f", epoch + 1, rec["total"])
    return params, hist


# ------------------------------------------------------------- fine-tuning


def head_input_dim(enc: EncoderConfig, config: TrainConfig) -> int:
    return 2 * enc.shared_dim if config.use_meta else enc.shared_dim


def classifier_logits(p, features, meta_feats, enc: EncoderConfig, use_meta: bool = True) -> Tensor:
    """Two-layer head on the concatenated (image, metadata) embedding."""
    z = embed_image(features, p, enc.activation)
    if use_meta:
        z = ad.concat_cols(z, embed_meta(meta_feats, p, enc.activation))
    h = _act(_linear(z, p["head.w1"], p["head.b1"]), enc.activation)
    return _linear(h, p["head.w2"], p["head.b2"])


def cross_entropy(logits: Tensor, labels) -> Tensor:
    labels = np.asarray(labels)
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(labels)), labels] = 1.0 / len(labels)
    return ad.scale(ad.sum(ad.mul_const(ad.log_softmax_rows(logits), onehot)), -1.0)


def init_head(params: ModelParams, enc: EncoderConfig, config: TrainConfig) -> ModelParams:
    """Fresh head weights sized for the configured input (replaces any existing head)."""
    out = params.clone()
    rng = rng_for(config.seed, "head_init")
    shapes = enc.shapes(head_input_dim(enc, config))
    for name in ("head.w1", "head.b1", "head.w2", "head.b2"):
        shape = shapes[name]
        if len(shape) == 1:
            out[name] = np.zeros(shape)
        else:
            a = np.sqrt(6.0 / (shape[0] + shape[1]))
            out[name] = rng.uniform(-a, a, size=shape)
    return out


def finetune(train: Dataset, pretrained: ModelParams, config: TrainConfig, enc: EncoderConfig,
             test: Dataset | None = None) -> tuple[ModelParams, History]:
    """Train the classification head with cross-entropy and Adam.

    Encoders stay fixed when ``config.freeze_encoders`` is set; otherwise the
    image and metadata encoders are updated too (text is never used here).
    """
    if train.num_classes != enc.num_classes:
        raise ValidationError(f"dataset has {train.num_classes} classes, head outputs {enc.num_classes}")
    params = init_head(pretrained, enc, config)
    betas = (config.beta1, config.beta2)
    opts = [Adam(params.names("head"), config.lr_head, betas, config.adam_eps)]
    enc_names: list[str] = []
    if not config.freeze_encoders:
        enc_names = params.names("image") + (params.names("meta") if config.use_meta else [])
        opts.append(Adam(enc_names, config.lr_finetune_encoders, betas, config.adam_eps))
    trainable = [n for o in opts for n in o.names]
    mf = meta_features(train, enc)
    test_mf = meta_features(test, enc) if test is not None else None
    shuffle_rng = rng_for(config.seed, "finetune_shuffle") if config.shuffle else None
    hist = History()

    for epoch in range(config.finetune_epochs):
        total, correct, seen, n_batches = 0.0, 0, 0, 0
        for idx in batches(len(train), config.batch_size, shuffle_rng):
            leaves = params.leaves(trainable)
            frozen = {n: Tensor(params[n]) for n in params if n not in leaves}
            p = {**frozen, **leaves}
            logits = classifier_logits(p, train.features[idx], mf[idx], enc, config.use_meta)
            loss = cross_entropy(logits, train.labels[idx])
            ad.backward(loss)
            if enc_names and any(np.any(leaves[n].grad != 0) for n in enc_names):
                hist.encoder_grad_nonzero = True
            for opt in opts:
                opt.step(params, {n: leaves[n].grad for n in opt.names})
            total += loss.item()
            correct += int(np.sum(np.argmax(logits.data, axis=1) == train.labels[idx]))
            seen += len(idx)
            n_batches += 1
        rec = {"epoch": epoch + 1, "loss": total / max(n_batches, 1),
               "train_accuracy": correct / max(seen, 1)}
        if test is not None:
            pred, _ = predict_arrays(params, test.features, test_mf, enc, config.use_meta)
            rec["test_accuracy"] = float(np.mean(pred == test.labels))
        hist.records.append(rec)
    return params, hist


# --------------------------------------------------------------- inference


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def predict_arrays(params: ModelParams, features, meta_feats, enc: EncoderConfig,
                   use_meta: bool = True) -> tuple[np.ndarray, np.ndarray]:
    p = {n: Tensor(params[n]) for n in params}
    logits = classifier_logits(p, np.atleast_2d(features), np.atleast_2d(meta_feats), enc, use_meta).data
    probs = softmax_rows(logits)
    # np.argmax returns the first maximum: ties go to the lowest class index
    return np.argmax(probs, axis=1), probs


def predict(params: ModelParams, features, lat, lon, date, enc: EncoderConfig,
            use_meta: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Class ids and probability vectors for raw inputs (scalars or arrays)."""
    mf = encode_meta_features(lat, lon, date, enc.meta_frequencies)
    return predict_arrays(params, features, mf, enc, use_meta)


def predict_dataset(params: ModelParams, ds: Dataset, enc: EncoderConfig, use_meta: bool = True):
    return predict_arrays(params, ds.features, meta_features(ds, enc), enc, use_meta)


# ------------------------------------------------------------- checkpoints

CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: ModelParams, enc: EncoderConfig, config: TrainConfig,
                    extra: dict | None = None) -> None:
    meta = {"version": CHECKPOINT_VERSION, "encoder": asdict(enc), "train": config.to_dict(),
            "seed": config.seed, "config_hash": config_hash(asdict(enc), config.to_dict()),
            "shapes": {k: list(v.shape) for k, v in params.arrays.items()}, **(extra or {})}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **params.arrays)


def load_checkpoint(path) -> tuple[ModelParams, EncoderConfig, TrainConfig, dict]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValidationError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        arrays = {k: z[k] for k in z.files if k != "__meta__"}
    return ModelParams(arrays), EncoderConfig(**meta["encoder"]), TrainConfig.from_dict(meta["train"]), meta


def with_overrides(config: TrainConfig, **kw) -> TrainConfig:
    return replace(config, **kw)
