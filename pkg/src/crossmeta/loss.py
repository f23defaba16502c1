"""Class-positive cross-contrastive objective over image, text and metadata.

Each ordered modality pair (anchor X, target Y) contributes one term

    L_XY = -mean_i [ 1/|P(i)| * sum_{p in P(i)} log softmax_a(z_i . z_a / tau)[p] ]

where P(i) holds the targets sharing anchor i's label and the softmax runs over
every target in the batch. Six directed pairs are summed.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import mpmath
import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

# (anchor, target) modality for each directed term
TERMS = {
    "IT": ("I", "T"),
    "TI": ("T", "I"),
    "MT": ("M", "T"),
    "TM": ("T", "M"),
    "MI": ("M", "I"),
    "IM": ("I", "M"),
}
ALL_TERMS = tuple(TERMS)
TWO_TERMS = ("IT", "TI")

TAU_MIN, TAU_MAX = 1e-4, 100.0
LOGIT_SCALE_NAME = "loss.logit_scale"


class ContractWarning(UserWarning):
    """Inputs violate a soft precondition (e.g. rows not unit-norm)."""


@dataclass(frozen=True)
class Temperature:
    """Softmax temperature.

    ``fixed`` divides logits by ``value``. ``learnable`` stores log(1/tau) as the
    ``loss.logit_scale`` parameter, initialised from ``value`` and clamped so
    tau stays inside [1e-4, 100].
    """

    value: float = 0.007
    mode: str = "fixed"

    def __post_init__(self):
        if not self.value > 0:
            raise ValueError(f"temperature must be positive, got {self.value}")
        if self.mode not in ("fixed", "learnable"):
            raise ValueError(f"unknown temperature mode {self.mode!r}")

    @property
    def initial_logit_scale(self) -> float:
        return math.log(1.0 / self.value)


def clamp_logit_scale(x: np.ndarray) -> np.ndarray:
    return np.clip(x, math.log(1.0 / TAU_MAX), math.log(1.0 / TAU_MIN))


@dataclass
class LossBreakdown:
    terms: dict[str, float]
    total: float
    skipped: dict[str, int] = field(default_factory=dict)
    grad_norms: dict[str, float] = field(default_factory=dict)
    loss: Tensor | None = field(default=None, repr=False)

    def as_record(self) -> dict:
        rec = {f"L_{k}": v for k, v in self.terms.items()}
        rec["total"] = self.total
        return rec


def build_positive_mask(anchor_labels, target_labels) -> np.ndarray:
    a = np.asarray(anchor_labels)
    t = np.asarray(target_labels)
    if a.ndim != 1 or t.ndim != 1 or a.shape != t.shape:
        raise ShapeError(f"label vectors must have equal length, got {a.shape} and {t.shape}")
    return a[:, None] == t[None, :]


def _check_unit_rows(z: Tensor, name: str, tol: float = 1e-3) -> None:
    norms = np.linalg.norm(z.data, axis=1)
    if np.any(np.abs(norms - 1.0) > tol):
        warnings.warn(f"{name}: rows are not unit-norm (max deviation "
                      f"{np.max(np.abs(norms - 1.0)):.3g})", ContractWarning, stacklevel=3)


def similarity_logits(anchors: Tensor, targets: Tensor, tau) -> Tensor:
    """``anchors @ targets.T`` scaled by 1/tau; ``tau`` may be a float or a logit-scale tensor."""
    if anchors.shape[1] != targets.shape[1]:
        raise ShapeError(f"embedding widths differ: {anchors.shape} vs {targets.shape}")
    sims = ad.matmul(anchors, ad.transpose(targets))
    if isinstance(tau, Tensor):
        return ad.mul(sims, ad.exp(tau))
    if isinstance(tau, Temperature):
        tau = tau.value
    return ad.scale(sims, 1.0 / float(tau))


def pair_loss(anchors: Tensor, targets: Tensor, mask: np.ndarray, tau,
              strict: bool = False) -> tuple[Tensor, int]:
    """One directed term. Returns the scalar loss and the number of skipped anchors.

    Anchors with no positive target are left out of the mean.
    """
    mask = np.asarray(mask, dtype=bool)
    b = anchors.shape[0]
    if mask.shape != (b, targets.shape[0]):
        raise ShapeError(f"mask shape {mask.shape} does not match batches {anchors.shape}, {targets.shape}")
    if strict:
        _check_unit_rows(anchors, "anchors")
        _check_unit_rows(targets, "targets")
    logp = ad.log_softmax_rows(similarity_logits(anchors, targets, tau))
    n_pos = mask.sum(axis=1)
    valid = n_pos > 0
    n_valid = int(valid.sum())
    weights = np.zeros(mask.shape)
    if n_valid:
        weights[valid] = mask[valid] / (n_pos[valid, None] * n_valid)
    return ad.scale(ad.sum(ad.mul_const(logp, weights)), -1.0), b - n_valid


def total_loss(I: Tensor, T: Tensor, M: Tensor, labels, tau, terms=ALL_TERMS,
               strict: bool = False) -> LossBreakdown:
    """Sum of the requested directed terms (all six by default).

    ``labels`` is either one label vector shared by the three batches or a
    mapping ``{"I": ..., "T": ..., "M": ...}`` of per-modality labels.
    """
    batches = {"I": I, "T": T, "M": M}
    if isinstance(labels, dict):
        lab = {k: np.asarray(labels[k]) for k in "ITM"}
    else:
        lab = {k: np.asarray(labels) for k in "ITM"}
    shapes = {k: v.shape for k, v in batches.items() if v is not None}
    if len({s[1] for s in shapes.values()}) > 1:
        raise ShapeError(f"embedding batches disagree in width: {shapes}")
    for name in terms:
        if name not in TERMS:
            raise KeyError(f"unknown loss term {name!r}; expected one of {ALL_TERMS}")

    values: dict[str, float] = {}
    skipped: dict[str, int] = {}
    total = None
    for name in terms:
        a, t = TERMS[name]
        mask = build_positive_mask(lab[a], lab[t])
        term, n_skip = pair_loss(batches[a], batches[t], mask, tau, strict=strict)
        values[name] = term.item()
        skipped[name] = n_skip
        total = term if total is None else ad.add(total, term)
    if total is None:
        total = Tensor(0.0)
    return LossBreakdown(values, total.item(), skipped, loss=total)


def two_term_loss(I: Tensor, T: Tensor, labels, tau, strict: bool = False) -> LossBreakdown:
    """Image-text only objective (both directions)."""
    return total_loss(I, T, None, labels, tau, terms=TWO_TERMS, strict=strict)


def term_gradient_norms(I: Tensor, T: Tensor, M: Tensor, labels, tau,
                        terms=ALL_TERMS) -> dict[str, float]:
    """Norm of each term's gradient with respect to the stacked embedding inputs."""
    out = {}
    for name in terms:
        leaves = {k: Tensor(v.data, requires_grad=True) for k, v in (("I", I), ("T", T), ("M", M))}
        tau_leaf = Tensor(tau.data, requires_grad=True) if isinstance(tau, Tensor) else tau
        br = total_loss(leaves["I"], leaves["T"], leaves["M"], labels, tau_leaf, terms=(name,))
        ad.backward(br.loss)
        out[name] = float(np.sqrt(np.sum([np.sum(x.grad**2) for x in leaves.values() if x.grad is not None])))
    return out


# ------------------------------------------------------------------ oracle


def _as_float_tau(tau) -> float:
    if isinstance(tau, Tensor):
        return 1.0 / math.exp(tau.item())
    if isinstance(tau, Temperature):
        return tau.value
    return float(tau)


def brute_force_pair_loss(anchors, targets, anchor_labels, target_labels, tau, dps: int = 40) -> float:
    """Scalar-loop evaluation of one directed term in extended precision."""
    A = np.asarray(anchors, dtype=float)
    Z = np.asarray(targets, dtype=float)
    with mpmath.workdps(dps):
        inv_tau = 1 / mpmath.mpf(_as_float_tau(tau))
        acc = mpmath.mpf(0)
        n_anchor = 0
        for i in range(A.shape[0]):
            logits = []
            for a in range(Z.shape[0]):
                dot = mpmath.fsum(mpmath.mpf(A[i, d]) * mpmath.mpf(Z[a, d]) for d in range(A.shape[1]))
                logits.append(dot * inv_tau)
            log_denom = mpmath.log(mpmath.fsum(mpmath.exp(v) for v in logits))
            positives = [p for p in range(Z.shape[0]) if target_labels[p] == anchor_labels[i]]
            if not positives:
                continue
            n_anchor += 1
            acc += mpmath.fsum(logits[p] - log_denom for p in positives) / len(positives)
        return 0.0 if n_anchor == 0 else float(-acc / n_anchor)


def brute_force_total_loss(I, T, M, labels, tau, terms=ALL_TERMS) -> dict[str, float]:
    """All requested directed terms plus ``"total"`` from :func:`brute_force_pair_loss`."""
    batches = {"I": I, "T": T, "M": M}
    labels = list(labels)
    out = {}
    for name in terms:
        a, t = TERMS[name]
        out[name] = brute_force_pair_loss(batches[a], batches[t], labels, labels, tau)
    out["total"] = math.fsum(out[k] for k in terms)
    return out
