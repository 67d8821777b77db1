"""Dice loss, mask binarization, and IoU-family evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ArgumentError, DimensionError

DICE_SMOOTH = 1.0


def dice_loss(pred: Tensor, target, smooth: float = DICE_SMOOTH) -> Tensor:
    """Soft Dice: 1 - (2*sum(p*t) + smooth) / (sum(p) + sum(t) + smooth).

    `pred` holds probabilities in [0,1]; `target` is a constant binary mask.
    The smoothing term keeps the loss defined (and differentiable) when
    either mask is empty.
    """
    t_arr = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if t_arr.shape != pred.shape:
        raise DimensionError(f"pred shape {pred.shape} != target shape {t_arr.shape}")
    inter = ag.sum_(ag.mul(pred, Tensor(t_arr)))
    denom = ag.add(ag.sum_(pred), float(t_arr.sum()) + smooth)
    return ag.sub(1.0, ag.div(ag.add(ag.mul(inter, 2.0), smooth), denom))


def binarize(logits) -> np.ndarray:
    """Threshold at probability 0.5, i.e. logit >= 0; ties go to foreground."""
    arr = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return (arr >= 0.0).astype(np.float64)


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Intersection over union; both-empty counts as 1, one-empty as 0."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimensionError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    p = pred != 0
    g = gt != 0
    union = np.logical_or(p, g).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, g).sum() / union)


@dataclass
class MetricsReport:
    per_class_iou: dict[int, float] = field(default_factory=dict)
    miou: float = 0.0
    fb_iou: float = 0.0
    n_episodes: int = 0
    seed: int = 0
    empty_mask_warnings: int = 0
    episodes_per_class: dict[int, int] = field(default_factory=dict)


def compute_miou(episode_results: list[tuple[int, float]]) -> tuple[dict[int, float], float]:
    """Class-mean mIoU: average episode IoUs within each class, then across
    classes (classes with more episodes do not weigh more)."""
    if not episode_results:
        raise ArgumentError("compute_miou needs at least one episode result")
    by_class: dict[int, list[float]] = {}
    for class_id, value in episode_results:
        by_class.setdefault(class_id, []).append(value)
    per_class = {c: float(np.mean(v)) for c, v in sorted(by_class.items())}
    return per_class, float(np.mean(list(per_class.values())))


def compute_fb_iou(episode_results: list[tuple[np.ndarray, np.ndarray]]) -> float:
    """Two-class IoU over confusion counts pooled across all episodes."""
    if not episode_results:
        raise ArgumentError("compute_fb_iou needs at least one episode result")
    tp = fp = fn = tn = 0
    for pred, gt in episode_results:
        p = np.asarray(pred) != 0
        g = np.asarray(gt) != 0
        if p.shape != g.shape:
            raise DimensionError(f"mask shapes differ: {p.shape} vs {g.shape}")
        tp += int(np.logical_and(p, g).sum())
        fp += int(np.logical_and(p, ~g).sum())
        fn += int(np.logical_and(~p, g).sum())
        tn += int(np.logical_and(~p, ~g).sum())
    fg = tp / (tp + fp + fn) if (tp + fp + fn) else 1.0
    bg = tn / (tn + fp + fn) if (tn + fp + fn) else 1.0
    return float((fg + bg) / 2.0)
