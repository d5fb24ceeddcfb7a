"""Segmentation losses and evaluation metrics.

The segmentation objective is the focal Tversky loss computed from soft
per-slice confusion counts; the adversarial side uses binary cross-entropy
on patch score grids.  Scalar entry points work on plain counts; the
``*_t`` helpers operate on torch tensors and stay differentiable for
training.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch

# Clamp applied inside every logarithm.
EPSILON = 1e-7


@dataclass(frozen=True)
class TverskyParams:
    """Weights of the Tversky index and the focusing exponent.

    alpha weighs false negatives, beta false positives; gamma < 1 shifts
    training focus toward hard examples.
    """

    alpha: float = 0.7
    beta: float = 0.3
    gamma: float = 0.7

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0 or self.gamma <= 0:
            raise ValueError("alpha, beta and gamma must all be > 0")


@dataclass(frozen=True)
class ConfusionCounts:
    """Soft confusion counts: tp = sum(p*y), fn = sum((1-p)*y), etc."""

    tp: float
    fn: float
    fp: float
    tn: float

    def __post_init__(self):
        if min(self.tp, self.fn, self.fp, self.tn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def total(self) -> float:
        return self.tp + self.fn + self.fp + self.tn


@dataclass(frozen=True)
class LossBreakdown:
    """Tversky index plus the derived loss terms; total = ftl + lambda*adv."""

    ti: float
    tl: float
    ftl: float
    adv: float = 0.0
    total: float = 0.0


class SegmentationMetrics(NamedTuple):
    accuracy: float
    precision: float | None
    recall: float | None


def _as_array(x) -> np.ndarray:
    voxels = getattr(x, "voxels", x)
    if isinstance(voxels, torch.Tensor):
        voxels = voxels.detach().cpu().numpy()
    return np.asarray(voxels, dtype=np.float64)


def confusion(pred, target, granularity: str = "slice"):
    """Soft confusion counts between a prediction and a binary target.

    granularity "slice" returns one ConfusionCounts per depth slice,
    "cube" a single record over the whole volume.
    """
    p = _as_array(pred)
    y = _as_array(target)
    if p.shape != y.shape:
        raise ValueError(f"prediction/target shapes differ: {p.shape} vs {y.shape}")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("target must be binary {0, 1}")
    if granularity not in ("slice", "cube"):
        raise ValueError(f"unknown granularity {granularity!r}")

    if granularity == "cube" or p.ndim < 3:
        p, y = p.reshape(1, -1), y.reshape(1, -1)
    else:
        p, y = p.reshape(p.shape[0], -1), y.reshape(y.shape[0], -1)

    records = []
    for pi, yi in zip(p, y):
        tp = float((pi * yi).sum())
        fn = float(((1.0 - pi) * yi).sum())
        fp = float((pi * (1.0 - yi)).sum())
        tn = float(((1.0 - pi) * (1.0 - yi)).sum())
        records.append(ConfusionCounts(tp=tp, fn=fn, fp=fp, tn=tn))
    return records[0] if granularity == "cube" else records


def focal_tversky_loss(counts: ConfusionCounts, params: TverskyParams = TverskyParams()) -> LossBreakdown:
    """TI = tp / (tp + alpha*fn + beta*fp); TL = 1 - TI; FTL = TL**gamma.

    An empty slice with an empty prediction (tp = fn = fp = 0) is scored as
    a perfect match: TI = 1 and FTL = 0.
    """
    denom = counts.tp + params.alpha * counts.fn + params.beta * counts.fp
    ti = 1.0 if denom == 0.0 else counts.tp / denom
    tl = 1.0 - ti
    ftl = tl ** params.gamma
    return LossBreakdown(ti=ti, tl=tl, ftl=ftl, adv=0.0, total=ftl)


def tversky_loss_t(pred: torch.Tensor, target: torch.Tensor,
                   params: TverskyParams = TverskyParams()) -> torch.Tensor:
    """Per-slice Tversky loss for tensors shaped (..., D, H, W)."""
    if pred.shape != target.shape:
        raise ValueError(f"prediction/target shapes differ: {tuple(pred.shape)} vs {tuple(target.shape)}")
    flat_p = pred.reshape(*pred.shape[:-2], -1)
    flat_y = target.reshape(*target.shape[:-2], -1)
    tp = (flat_p * flat_y).sum(dim=-1)
    fn = ((1.0 - flat_p) * flat_y).sum(dim=-1)
    fp = (flat_p * (1.0 - flat_y)).sum(dim=-1)
    denom = tp + params.alpha * fn + params.beta * fp
    ti = torch.where(denom > 0, tp / denom.clamp(min=EPSILON), torch.ones_like(denom))
    return 1.0 - ti


def focal_tversky_t(pred: torch.Tensor, target: torch.Tensor,
                    params: TverskyParams = TverskyParams()) -> torch.Tensor:
    """Mean focal Tversky loss: per slice, averaged over slices then batch."""
    tl = tversky_loss_t(pred, target, params)
    return (tl ** params.gamma).mean()


def _log_clamped(x):
    if isinstance(x, torch.Tensor):
        return torch.log(x.clamp(EPSILON, 1.0 - EPSILON))
    return np.log(np.clip(x, EPSILON, 1.0 - EPSILON))


def _scores(x):
    s = getattr(x, "scores", x)
    if isinstance(s, torch.Tensor):
        return s
    return np.asarray(s, dtype=np.float64)


def discriminator_bce(real_scores, fake_scores):
    """BCE pushing real patch scores to 1 and generated ones to 0.

    Returns mean(-log real) + mean(-log(1 - fake)); a tensor when given
    tensors, a float otherwise.
    """
    real = _scores(real_scores)
    fake = _scores(fake_scores)
    loss = -(_log_clamped(real)).mean() + -(_log_clamped(1.0 - fake)).mean()
    if isinstance(loss, torch.Tensor):
        return loss
    return float(loss)


def adversarial_term(fake_scores):
    """Generator-side realism term: mean(-log fake)."""
    fake = _scores(fake_scores)
    term = -(_log_clamped(fake)).mean()
    if isinstance(term, torch.Tensor):
        return term
    return float(term)


def generator_objective(pred, target, fake_scores, params: TverskyParams = TverskyParams(),
                        lambda_adv: float = 0.2) -> LossBreakdown:
    """Composite generator loss: total = FTL + lambda_adv * mean(-log fake).

    With lambda_adv = 0 the total is exactly the focal Tversky loss.  Works
    on tensors (differentiable, whole-batch) or on cube-like arrays.
    """
    if lambda_adv < 0:
        raise ValueError("lambda_adv must be >= 0")
    if isinstance(pred, torch.Tensor):
        tl = tversky_loss_t(pred, target, params).mean()
        ftl = focal_tversky_t(pred, target, params)
        adv = adversarial_term(fake_scores)
        total = ftl + lambda_adv * adv if lambda_adv > 0 else ftl
        return LossBreakdown(ti=1.0 - tl, tl=tl, ftl=ftl, adv=adv, total=total)

    slice_counts = confusion(pred, target, granularity="slice")
    parts = [focal_tversky_loss(c, params) for c in slice_counts]
    ti = float(np.mean([b.ti for b in parts]))
    tl = float(np.mean([b.tl for b in parts]))
    ftl = float(np.mean([b.ftl for b in parts]))
    adv = adversarial_term(fake_scores)
    total = ftl + lambda_adv * adv if lambda_adv > 0 else ftl
    return LossBreakdown(ti=ti, tl=tl, ftl=ftl, adv=adv, total=total)


def segmentation_metrics(pred, target, threshold: float = 0.5) -> SegmentationMetrics:
    """Hard-count accuracy/precision/recall at the given threshold.

    Precision and recall are None when their denominator is zero.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    p = _as_array(pred) >= threshold
    y = _as_array(target)
    if p.shape != y.shape:
        raise ValueError(f"prediction/target shapes differ: {p.shape} vs {y.shape}")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("target must be binary {0, 1}")
    y = y.astype(bool)

    tp = float(np.logical_and(p, y).sum())
    fp = float(np.logical_and(p, ~y).sum())
    fn = float(np.logical_and(~p, y).sum())
    tn = float(np.logical_and(~p, ~y).sum())
    n = tp + fp + fn + tn
    accuracy = (tp + tn) / n
    precision = tp / (tp + fp) if tp + fp > 0 else None
    recall = tp / (tp + fn) if tp + fn > 0 else None
    return SegmentationMetrics(accuracy=accuracy, precision=precision, recall=recall)
