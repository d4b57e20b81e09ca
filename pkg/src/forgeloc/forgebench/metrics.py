"""Detection and localization metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


def auc(scores, labels) -> float:
    """ROC AUC as P(score_pos > score_neg) + 0.5 P(tie), via average ranks."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative sample")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def _confusion(pred: np.ndarray, gt: np.ndarray) -> tuple[int, int, int]:
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return tp, fp, fn


def f1_single(pred, gt) -> float:
    tp, fp, fn = _confusion(pred, gt)
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2 * tp / denom


def iou_single(pred, gt) -> float:
    tp, fp, fn = _confusion(pred, gt)
    denom = tp + fp + fn
    return 1.0 if denom == 0 else tp / denom


def pixel_f1(preds, gts, micro: bool = False) -> float:
    """Mean per-image F1 (empty vs empty counts as 1); ``micro`` pools counts instead."""
    if len(preds) != len(gts):
        raise ValueError("prediction and ground-truth counts differ")
    if micro:
        tp = fp = fn = 0
        for p, g in zip(preds, gts):
            a, b, c = _confusion(p, g)
            tp, fp, fn = tp + a, fp + b, fn + c
        denom = 2 * tp + fp + fn
        return 1.0 if denom == 0 else 2 * tp / denom
    return float(np.mean([f1_single(p, g) for p, g in zip(preds, gts)]))


def iou_fake_only(preds, gts, labels) -> float:
    """Mean per-image IoU over forged samples only."""
    values = [iou_single(p, g) for p, g, y in zip(preds, gts, labels) if y]
    if not values:
        raise ValueError("IoU is computed on forged samples and this set has none")
    return float(np.mean(values))


def overall(auc_value: float, f1: float, iou: float) -> float:
    for v in (auc_value, f1, iou):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"metric {v} outside [0, 1]")
    return (auc_value + f1 + iou) / 3


@dataclass
class MetricsReport:
    auc: float
    f1: float
    iou: float
    n_train: int
    n_val: int
    n_test: int

    @property
    def overall(self) -> float:
        return overall(self.auc, self.f1, self.iou)

    def to_text(self) -> str:
        rows = [
            ("auc", f"{self.auc:.6f}"),
            ("f1", f"{self.f1:.6f}"),
            ("iou", f"{self.iou:.6f}"),
            ("overall", f"{self.overall:.6f}"),
            ("n_train", str(self.n_train)),
            ("n_val", str(self.n_val)),
            ("n_test", str(self.n_test)),
        ]
        return "".join(f"{k} = {v}\n" for k, v in rows)

    @classmethod
    def from_text(cls, text: str) -> "MetricsReport":
        kv = {}
        for line in text.splitlines():
            if "=" in line:
                k, v = line.split("=", 1)
                kv[k.strip()] = v.strip()
        return cls(float(kv["auc"]), float(kv["f1"]), float(kv["iou"]),
                   int(kv["n_train"]), int(kv["n_val"]), int(kv["n_test"]))
