"""Cross-and-within-task weighted loss."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import tensor as T
from .tensor import Tensor


class TaskWeights(NamedTuple):
    w_rb: float
    w_rt: float


def class_counts(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"label ids must lie in [0, {n_classes})")
    return np.bincount(labels.ravel(), minlength=n_classes)


def within_task_weights(gt_counts) -> np.ndarray:
    """Inverse-frequency class weights that sum to one.

    ``w_i = (N - N_i) / sum_j (N - N_j)`` with ``N`` the total ground-truth
    pixel count, so frequent classes get small weights.
    """
    counts = np.asarray(gt_counts, dtype=np.float64)
    if counts.ndim != 1 or counts.size < 2:
        raise ValueError(f"need per-class counts for at least 2 classes, got {counts.size}")
    if np.any(counts < 0):
        raise ValueError("pixel counts must be non-negative")
    total = counts.sum()
    if total <= 0:
        raise ValueError("all class counts are zero")
    num = total - counts
    return num / num.sum()


def within_task_loss(logits: Tensor, labels: np.ndarray, weights, reduction: str = "mean") -> Tensor:
    """Weighted cross-entropy over the channel softmax; ``reduction="sum"`` skips the pixel average."""
    return T.weighted_cross_entropy(logits, labels, weights, reduction=reduction)


def output_pixel_counts(height: int, width: int, boundary_classes: int, room_classes: int,
                        count_channels: bool = True) -> tuple[int, int]:
    """Network output sizes ``(N_rb, N_rt)`` of the two heads."""
    hw = height * width
    if not count_channels:
        return hw, hw
    return hw * boundary_classes, hw * room_classes


def cross_task_weights(n_rb: int, n_rt: int) -> TaskWeights:
    if n_rb < 0 or n_rt < 0:
        raise ValueError("pixel counts must be non-negative")
    total = n_rb + n_rt
    if total == 0:
        raise ValueError("both task pixel counts are zero")
    return TaskWeights(n_rt / total, n_rb / total)


def total_loss(loss_rb: Tensor, loss_rt: Tensor, tw: TaskWeights) -> Tensor:
    return T.add(T.scale(loss_rb, tw.w_rb), T.scale(loss_rt, tw.w_rt))
