"""Focal loss family with analytic gradients w.r.t. predicted probabilities.

Tensors have the class axis last. Every per-class value is a mean over
voxels, and ``total`` is the sum of the per-class values, so batches of
different slice counts produce comparable numbers.

For each voxel and channel, with target ``y`` and prediction ``p``:

    focal = -alpha_fg * y * (1-p)^gamma * ln(p) - alpha_bg * (1-y) * p^gamma * ln(1-p)
    fp    = -(1-y) * p^gamma * ln(1-p)
    mfp   = (1-y) * p

``p`` is clamped to ``[epsilon, 1-epsilon]`` before the focal and fp terms;
the gradient is zero outside that interval. ``mfp`` is not clamped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import ShapeError

VARIANTS = ("focal", "hybrid_focal", "mean_fp_focal")
GRAD_VARIANTS = ("focal", "fp_focal", "mean_fp", "hybrid_focal", "mean_fp_focal")


class LossDomainError(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 2.0
    alpha_fg: float = 0.8
    alpha_bg: float = 0.2
    c_weight: float = 10.0
    variant: str = "hybrid_focal"
    epsilon: float = 1e-7

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        for name in ("alpha_fg", "alpha_bg"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.c_weight < 0:
            raise ValueError(f"c_weight must be >= 0, got {self.c_weight}")
        if not 0.0 < self.epsilon < 1e-3:
            raise ValueError(f"epsilon must lie in (0, 1e-3), got {self.epsilon}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")


@dataclass
class LossValue:
    total: float
    per_class: list[float]
    fp_term_applied: list[int] = field(default_factory=list)


def _check(target, pred) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(target, dtype=np.float64)
    p = np.asarray(pred, dtype=np.float64)
    if y.shape != p.shape:
        raise ShapeError(f"target dims {list(y.shape)} != pred dims {list(p.shape)}")
    if y.ndim < 1 or y.size == 0:
        raise ShapeError("tensors need a trailing class axis and at least one voxel")
    if not np.all(np.isfinite(p)) or p.min() < -1e-9 or p.max() > 1 + 1e-9:
        raise LossDomainError("predictions must lie in [0, 1]")
    return y, p


def _n_voxels(y: np.ndarray) -> int:
    return y.size // y.shape[-1]


def _focal_terms(y, p, gamma, eps):
    """Elementwise positive and negative focal terms (both >= 0)."""
    pc = np.clip(p, eps, 1.0 - eps)
    pos = -y * (1.0 - pc) ** gamma * np.log(pc)
    neg = -(1.0 - y) * pc**gamma * np.log1p(-pc)
    return pos, neg


def _focal_term_grads(y, p, gamma, eps):
    pc = np.clip(p, eps, 1.0 - eps)
    inside = (p >= eps) & (p <= 1.0 - eps)
    q = 1.0 - pc
    log_p, log_q = np.log(pc), np.log1p(-pc)
    # d/dp of -(1-p)^g ln(p) and of -p^g ln(1-p)
    dpos = gamma * q ** (gamma - 1) * log_p - q**gamma / pc
    dneg = -gamma * pc ** (gamma - 1) * log_q + pc**gamma / q
    return np.where(inside, y * dpos, 0.0), np.where(inside, (1.0 - y) * dneg, 0.0)


def _channel_means(elementwise: np.ndarray) -> np.ndarray:
    return elementwise.reshape(-1, elementwise.shape[-1]).mean(axis=0)


def _value(per_class: np.ndarray, applied=()) -> LossValue:
    return LossValue(float(per_class.sum()), [float(v) for v in per_class], list(applied))


def focal_loss(target, pred, cfg: LossConfig) -> LossValue:
    y, p = _check(target, pred)
    pos, neg = _focal_terms(y, p, cfg.gamma, cfg.epsilon)
    return _value(_channel_means(cfg.alpha_fg * pos + cfg.alpha_bg * neg))


def false_positive_focal_loss(target, pred, cfg: LossConfig) -> LossValue:
    y, p = _check(target, pred)
    _, neg = _focal_terms(y, p, cfg.gamma, cfg.epsilon)
    return _value(_channel_means(neg))


def mean_false_positive_loss(target, pred, cfg: LossConfig | None = None) -> LossValue:
    y, p = _check(target, pred)
    return _value(_channel_means((1.0 - y) * p))


def absent_classes(target) -> list[int]:
    """Tumour channels (index >= 1) with no positive voxel in ``target``."""
    y = np.asarray(target)
    present = y.reshape(-1, y.shape[-1]).max(axis=0) > 0
    return [k for k in range(1, y.shape[-1]) if not present[k]]


def batch_conditional_loss(target, pred, cfg: LossConfig) -> LossValue:
    """Focal loss, swapping in a false-positive term for absent tumour classes.

    The background channel always uses focal loss. A tumour channel with no
    positive voxel in the batch contributes ``c_weight * fp`` under
    ``hybrid_focal`` or ``mfp`` under ``mean_fp_focal``.
    """
    if cfg.variant not in ("hybrid_focal", "mean_fp_focal"):
        raise ValueError(f"batch-conditional loss needs a hybrid variant, got {cfg.variant!r}")
    y, p = _check(target, pred)
    pos, neg = _focal_terms(y, p, cfg.gamma, cfg.epsilon)
    per_class = _channel_means(cfg.alpha_fg * pos + cfg.alpha_bg * neg)
    absent = absent_classes(y)
    if absent:
        if cfg.variant == "hybrid_focal":
            fp = cfg.c_weight * _channel_means(neg)
        else:
            fp = _channel_means((1.0 - y) * p)
        per_class[absent] = fp[absent]
    return _value(per_class, absent)


def compute_loss(target, pred, cfg: LossConfig) -> LossValue:
    """Training loss selected by ``cfg.variant``."""
    if cfg.variant == "focal":
        return focal_loss(target, pred, cfg)
    return batch_conditional_loss(target, pred, cfg)


def loss_gradient(target, pred, cfg: LossConfig, variant: str | None = None) -> np.ndarray:
    """d(total)/d(pred) for ``variant`` (defaults to ``cfg.variant``)."""
    variant = cfg.variant if variant is None else variant
    if variant not in GRAD_VARIANTS:
        raise ValueError(f"variant must be one of {GRAD_VARIANTS}, got {variant!r}")
    y, p = _check(target, pred)
    n = _n_voxels(y)
    if variant == "mean_fp":
        return (1.0 - y) / n
    dpos, dneg = _focal_term_grads(y, p, cfg.gamma, cfg.epsilon)
    if variant == "fp_focal":
        return dneg / n
    grad = (cfg.alpha_fg * dpos + cfg.alpha_bg * dneg) / n
    if variant == "focal":
        return grad
    absent = absent_classes(y)
    if absent:
        if variant == "hybrid_focal":
            grad[..., absent] = cfg.c_weight * dneg[..., absent] / n
        else:
            grad[..., absent] = (1.0 - y[..., absent]) / n
    return grad
