"""Stage-2 objective: matched mask, Tversky and box losses plus query classification."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor

from .classifier import STAGE2_FOCAL, PolyFocalParams, poly_focal_terms
from .mask_decoder import InstancePredictions
from .matching import extract_gt_instances, hungarian_match


@dataclass(frozen=True)
class LossConfig:
    lambda1: float = 5.0
    lambda2: float = 5.0
    lambda3: float = 2.0
    tversky_alpha: float = 0.3
    tversky_beta: float = 0.7
    tversky_smooth: float = 1.0
    focal: PolyFocalParams = field(default_factory=lambda: STAGE2_FOCAL)

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.tversky_smooth < 0:
            raise ValueError("tversky smoothing must be nonnegative")


@dataclass
class Targets:
    """Ground-truth instances of one image, with masks already at 1/4 resolution."""

    masks: Tensor  # (G, H/4, W/4) in {0, 1}
    boxes: Tensor  # (G, 4)

    @classmethod
    def from_mask(cls, mask: np.ndarray, stride: int = 4) -> "Targets":
        H, W = mask.shape
        inst = extract_gt_instances(mask)
        dtype = torch.get_default_dtype()
        if not inst:
            return cls(torch.zeros(0, H // stride, W // stride, dtype=dtype), torch.zeros(0, 4, dtype=dtype))
        full = torch.from_numpy(np.stack([i.mask for i in inst])).to(dtype)
        masks = F.max_pool2d(full.unsqueeze(1), stride).squeeze(1)
        boxes = torch.tensor([i.box for i in inst], dtype=dtype)
        return cls(masks, boxes)

    def __len__(self) -> int:
        return self.masks.shape[0]


def soft_confusion(pred: Tensor, gt: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Soft TP, FP, FN summed over the last two dims."""
    tp = (pred * gt).sum(dim=(-2, -1))
    fp = (pred * (1 - gt)).sum(dim=(-2, -1))
    fn = ((1 - pred) * gt).sum(dim=(-2, -1))
    return tp, fp, fn


def tversky_loss(pred: Tensor, gt: Tensor, alpha: float = 0.3, beta: float = 0.7, smooth: float = 1.0) -> Tensor:
    """1 - (TP + s) / (TP + alpha FP + beta FN + s), per leading index."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(gt.shape)}")
    tp, fp, fn = soft_confusion(pred, gt)
    return 1 - (tp + smooth) / (tp + alpha * fp + beta * fn + smooth)


def box_corners(box: Tensor) -> Tensor:
    cx, cy, w, h = box.unbind(-1)
    return torch.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], dim=-1)


def generalized_iou(a: Tensor, b: Tensor) -> Tensor:
    """GIoU of (cx, cy, w, h) boxes, broadcasting over leading dims."""
    a, b = box_corners(a), box_corners(b)
    area_a = (a[..., 2] - a[..., 0]) * (a[..., 3] - a[..., 1])
    area_b = (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1])
    lt = torch.maximum(a[..., :2], b[..., :2])
    rb = torch.minimum(a[..., 2:], b[..., 2:])
    inter = (rb - lt).clamp(min=0).prod(-1)
    union = area_a + area_b - inter
    elt = torch.minimum(a[..., :2], b[..., :2])
    erb = torch.maximum(a[..., 2:], b[..., 2:])
    enclose = (erb - elt).clamp(min=0).prod(-1)
    iou = inter / union.clamp(min=1e-12)
    return iou - (enclose - union) / enclose.clamp(min=1e-12)


def box_loss(pred: Tensor, gt: Tensor) -> Tensor:
    """L1 distance plus (1 - GIoU), per leading index."""
    if (gt[..., 2:] <= 0).any():
        raise ValueError("ground-truth box has non-positive width or height")
    return (pred - gt).abs().sum(-1) + (1 - generalized_iou(pred, gt))


def matching_cost(preds: InstancePredictions, b: int, target: Targets, config: LossConfig) -> np.ndarray:
    """(Q, G) cost mirroring the loss weights, plus forged-class negative log-likelihood."""
    with torch.no_grad():
        probs = torch.sigmoid(preds.mask_logits[b]).unsqueeze(1)  # (Q, 1, h, w)
        gts = target.masks.unsqueeze(0)  # (1, G, h, w)
        probs_b, gts_b = torch.broadcast_tensors(probs, gts)
        mask_cost = poly_focal_terms(probs_b, gts_b, config.focal).mean(dim=(-2, -1))
        tv_cost = tversky_loss(probs_b, gts_b, config.tversky_alpha, config.tversky_beta, config.tversky_smooth)
        bx_cost = box_loss(preds.boxes[b].unsqueeze(1), target.boxes.unsqueeze(0))
        cls_cost = -torch.log(preds.forged_prob[b].clamp(min=1e-7)).unsqueeze(1)
        cost = config.lambda1 * mask_cost + config.lambda2 * tv_cost + config.lambda3 * bx_cost + cls_cost
    return cost.double().numpy()


def segmentation_loss(preds: InstancePredictions, targets: list[Targets], config: LossConfig = LossConfig()) -> dict[str, Tensor]:
    """Weighted stage-2 loss and its decomposition.

    ``mask`` is the matched per-pixel poly focal term plus ``mask_cls``, the poly
    focal classification of every query (forged if matched, no-object otherwise).
    Tversky and box terms are averaged over matched pairs; images without
    instances contribute only to the classification term.
    """
    B, Q = preds.class_logits.shape[:2]
    cls_target = torch.zeros(B, Q, dtype=preds.class_logits.dtype)
    pair_mask, pair_tv, pair_box = [], [], []
    matches = []
    for b, target in enumerate(targets):
        if len(target) == 0:
            matches.append([])
            continue
        pairs = hungarian_match(matching_cost(preds, b, target, config))
        matches.append(pairs)
        qi = torch.tensor([p[0] for p in pairs])
        gi = torch.tensor([p[1] for p in pairs])
        cls_target[b, qi] = 1.0
        probs = torch.sigmoid(preds.mask_logits[b, qi])
        gts = target.masks[gi]
        pair_mask.append(poly_focal_terms(probs, gts, config.focal).mean(dim=(-2, -1)))
        pair_tv.append(tversky_loss(probs, gts, config.tversky_alpha, config.tversky_beta, config.tversky_smooth))
        pair_box.append(box_loss(preds.boxes[b, qi], target.boxes[gi]))
    zero = preds.mask_logits.sum() * 0
    mask_pairs = torch.cat(pair_mask).mean() if pair_mask else zero
    tversky = torch.cat(pair_tv).mean() if pair_tv else zero
    box = torch.cat(pair_box).mean() if pair_box else zero
    mask_cls = poly_focal_terms(preds.forged_prob, cls_target, config.focal).mean()
    mask = mask_pairs + mask_cls
    weighted = {
        "mask": config.lambda1 * mask,
        "tversky": config.lambda2 * tversky,
        "box": config.lambda3 * box,
    }
    return {
        "total": weighted["mask"] + weighted["tversky"] + weighted["box"],
        "mask": mask,
        "mask_pairs": mask_pairs,
        "mask_cls": mask_cls,
        "tversky": tversky,
        "box": box,
        "weighted": weighted,
        "matches": matches,
    }
