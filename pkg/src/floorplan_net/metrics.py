"""Pixel accuracy, mean IoU and F-beta statistics for label maps."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BETA2 = 0.3


def _check_pair(pred, gt):
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} differs from ground truth shape {gt.shape}")
    return pred, gt


def confusion(pred, gt, n_classes: int) -> np.ndarray:
    """``conf[i, j]`` = number of pixels with ground truth ``i`` predicted as ``j``."""
    pred, gt = _check_pair(pred, gt)
    idx = gt.ravel().astype(np.int64) * n_classes + pred.ravel().astype(np.int64)
    return np.bincount(idx, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def _n_classes(pred, gt):
    return int(max(pred.max(initial=0), gt.max(initial=0))) + 1


def accuracy(pred, gt, n_classes: int | None = None) -> tuple[float, dict[int, float]]:
    """Overall pixel accuracy and per-class accuracy ``N_i / N^_i``.

    Classes absent from ``gt`` are left out of the per-class dict.
    """
    pred, gt = _check_pair(pred, gt)
    n = n_classes or _n_classes(pred, gt)
    conf = confusion(pred, gt, n)
    gt_counts = conf.sum(axis=1)
    correct = np.diag(conf)
    overall = correct.sum() / gt_counts.sum() if gt_counts.sum() else 0.0
    per_class = {i: correct[i] / gt_counts[i] for i in range(n) if gt_counts[i] > 0}
    return float(overall), {i: float(v) for i, v in per_class.items()}


def _iou_from_confusion(conf: np.ndarray) -> dict[int, float]:
    inter = np.diag(conf)
    union = conf.sum(axis=0) + conf.sum(axis=1) - inter
    return {i: inter[i] / union[i] for i in range(len(conf)) if union[i] > 0}


def mean_iou(pred, gt, n_classes: int | None = None, classes=None) -> float:
    """Mean over classes present in either map of ``|pred_i & gt_i| / |pred_i | gt_i|``.

    ``classes`` restricts the average to the listed class ids.
    """
    pred, gt = _check_pair(pred, gt)
    ious = _iou_from_confusion(confusion(pred, gt, n_classes or _n_classes(pred, gt)))
    if classes is not None:
        ious = {i: v for i, v in ious.items() if i in set(classes)}
    return float(np.mean(list(ious.values()))) if ious else 0.0


def f_beta(precision: float, recall: float, beta2: float = BETA2) -> float:
    den = beta2 * precision + recall
    if den == 0:
        return 0.0
    return (1 + beta2) * precision * recall / den


def binary_f_beta(pred_mask, gt_mask, beta2: float = BETA2) -> float:
    pred_mask, gt_mask = _check_pair(pred_mask, gt_mask)
    pred_mask, gt_mask = pred_mask.astype(bool), gt_mask.astype(bool)
    tp = np.count_nonzero(pred_mask & gt_mask)
    n_pred, n_gt = np.count_nonzero(pred_mask), np.count_nonzero(gt_mask)
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gt if n_gt else 0.0
    return f_beta(precision, recall, beta2)


def f_beta_sweep(prob_map, gt_mask, T: int = 256, beta2: float = BETA2) -> tuple[float, float]:
    """Best and mean F-beta over thresholds ``t / (T - 1)``, ``t = 0..T-1``.

    A pixel is predicted positive when ``prob >= threshold``.  A map that is
    already binary is scored as-is at every threshold, so both statistics
    coincide for it.
    """
    if T < 2:
        raise ValueError(f"need at least 2 thresholds, got {T}")
    prob, gt = _check_pair(prob_map, gt_mask)
    prob = prob.astype(np.float64)
    gt = gt.astype(bool)
    if np.all((prob == 0) | (prob == 1)):
        f = binary_f_beta(prob == 1, gt, beta2)
        return f, f

    # count positives per threshold via a sorted pass instead of T full scans
    thresholds = np.arange(T) / (T - 1)
    order = np.sort(prob.ravel())
    pos_sorted = np.sort(prob[gt])
    n_pred = order.size - np.searchsorted(order, thresholds, side="left")
    tp = pos_sorted.size - np.searchsorted(pos_sorted, thresholds, side="left")
    n_gt = pos_sorted.size
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(n_pred > 0, tp / np.maximum(n_pred, 1), 0.0)
    recall = tp / n_gt if n_gt else np.zeros(T)
    scores = np.array([f_beta(p, r, beta2) for p, r in zip(precision, recall)])
    return float(scores.max()), float(scores.mean())


@dataclass
class MetricsReport:
    """Aggregated evaluation of one run (counts are micro-summed over samples)."""

    label: str
    class_names: list[str]
    gt_counts: list[int]
    correct_counts: list[int]
    mean_iou: float
    f_beta_max: float
    f_beta_mean: float
    extra: dict = field(default_factory=dict)

    @property
    def overall_accu(self) -> float:
        total = sum(self.gt_counts)
        return sum(self.correct_counts) / total if total else 0.0

    @property
    def class_accu(self) -> dict[str, float]:
        return {n: c / g for n, g, c in zip(self.class_names, self.gt_counts, self.correct_counts) if g > 0}

    @property
    def average_class_accu(self) -> float:
        vals = list(self.class_accu.values())
        return float(np.mean(vals)) if vals else 0.0

    @classmethod
    def from_confusion(cls, conf: np.ndarray, class_names, label: str = "", f_beta_max: float = 0.0,
                       f_beta_mean: float = 0.0, extra: dict | None = None) -> "MetricsReport":
        ious = _iou_from_confusion(conf)
        return cls(
            label=label,
            class_names=list(class_names),
            gt_counts=[int(v) for v in conf.sum(axis=1)],
            correct_counts=[int(v) for v in np.diag(conf)],
            mean_iou=float(np.mean(list(ious.values()))) if ious else 0.0,
            f_beta_max=float(f_beta_max),
            f_beta_mean=float(f_beta_mean),
            extra=dict(extra or {}),
        )

    def to_text(self) -> str:
        lines = [
            f"label={self.label}",
            f"overall_accu={self.overall_accu!r}",
            f"average_class_accu={self.average_class_accu!r}",
            f"mean_iou={self.mean_iou!r}",
            f"f_beta_max={self.f_beta_max!r}",
            f"f_beta_mean={self.f_beta_mean!r}",
        ]
        accu = self.class_accu
        for name, g, c in zip(self.class_names, self.gt_counts, self.correct_counts):
            if name in accu:
                lines.append(f"class_accu.{name}={accu[name]!r}")
            lines.append(f"gt_count.{name}={g}")
            lines.append(f"correct_count.{name}={c}")
        for k, v in self.extra.items():
            lines.append(f"extra.{k}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetricsReport":
        kv = {}
        for line in text.splitlines():
            if line.strip():
                k, _, v = line.partition("=")
                kv[k] = v
        names = [k[len("gt_count."):] for k in kv if k.startswith("gt_count.")]
        return cls(
            label=kv.get("label", ""),
            class_names=names,
            gt_counts=[int(kv[f"gt_count.{n}"]) for n in names],
            correct_counts=[int(kv[f"correct_count.{n}"]) for n in names],
            mean_iou=float(kv["mean_iou"]),
            f_beta_max=float(kv["f_beta_max"]),
            f_beta_mean=float(kv["f_beta_mean"]),
            extra={k[len("extra."):]: v for k, v in kv.items() if k.startswith("extra.")},
        )

    def csv_row(self) -> dict:
        row = {"label": self.label, "overall_accu": self.overall_accu,
               "average_class_accu": self.average_class_accu, "mean_iou": self.mean_iou,
               "f_beta_max": self.f_beta_max, "f_beta_mean": self.f_beta_mean}
        accu = self.class_accu
        for name in self.class_names:
            row[f"class_accu.{name}"] = accu.get(name, "")
        return row


def write_reports_csv(reports, path) -> None:
    reports = list(reports)
    rows = [r.csv_row() for r in reports]
    header = list(rows[0]) if rows else ["label"]
    for row in rows[1:]:
        header += [k for k in row if k not in header]
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
