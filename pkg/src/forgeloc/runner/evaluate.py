"""Split evaluation with optional test-time adaptation."""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
import torch

from ..adaptation import TestTimeAdapter
from ..classifier import PolyFocalParams
from ..forgebench.dataset import Split
from ..forgebench.metrics import MetricsReport, auc, iou_fake_only, pixel_f1
from ..mask_decoder import merge_predictions
from ..model import ForgeryDetector
from .config import TTAConfig


@dataclass
class Predictions:
    scores: np.ndarray  # (N,) fused forgery probability
    score_maps: np.ndarray  # (N, H, W) pixel scores
    masks: np.ndarray  # (N, H, W) bool


def predict(model: ForgeryDetector, data: Split, batch_size: int = 96) -> Predictions:
    scores, maps = [], []
    with torch.no_grad():
        for i in range(0, len(data), batch_size):
            x = data.images[i:i + batch_size]
            cls_out, preds = model(x)
            score, _ = merge_predictions(preds, tuple(x.shape[-2:]))
            scores.append(cls_out.fused_prob)
            maps.append(score)
    score_maps = torch.cat(maps).float().numpy()
    return Predictions(torch.cat(scores).double().numpy(), score_maps, score_maps >= 0.5)


def predict_adapted(model: ForgeryDetector, data: Split, tta: TTAConfig, steps: int | None = None,
                    focal: PolyFocalParams | None = None) -> Predictions:
    """Adapt a private copy of ``model`` batch by batch; the caller's weights stay untouched."""
    work = copy.deepcopy(model)
    kwargs = {"focal": focal} if focal is not None else {}
    adapter = TestTimeAdapter(work, lr=tta.tta_lr, steps=steps or tta.tta_steps, mode=tta.tta_mode,
                              weight_decay=tta.tta_weight_decay, hard_targets=tta.tta_hard_targets, **kwargs)
    scores, maps = [], []
    for i in range(0, len(data), tta.tta_batch_size):
        x = data.images[i:i + tta.tta_batch_size]
        cls_out, _, score, _ = adapter.adapt_batch(x)
        scores.append(cls_out.fused_prob)
        maps.append(score.detach())
    score_maps = torch.cat(maps).float().numpy()
    return Predictions(torch.cat(scores).double().numpy(), score_maps, score_maps >= 0.5)


def metrics_from(pred: Predictions, data: Split, counts: dict[str, int], micro_f1: bool = False) -> MetricsReport:
    return MetricsReport(
        auc=auc(pred.scores, data.labels),
        f1=pixel_f1(pred.masks, data.masks, micro=micro_f1),
        iou=iou_fake_only(pred.masks, data.masks, data.labels),
        n_train=counts.get("train", 0),
        n_val=counts.get("val", 0),
        n_test=counts.get("test-ood", 0),
    )


def evaluate(model: ForgeryDetector, data: Split, counts: dict[str, int], tta: TTAConfig | None = None,
             steps: int | None = None) -> tuple[MetricsReport, Predictions]:
    if not data.labels.any():
        raise ValueError("IoU is computed on forged samples and this split has none")
    pred = predict(model, data) if tta is None else predict_adapted(model, data, tta, steps)
    return metrics_from(pred, data, counts), pred
