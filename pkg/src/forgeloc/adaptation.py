"""Pseudo-label-guided test-time adaptation of the segmenter."""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import Tensor

from .classifier import STAGE2_FOCAL, ClassifierOutput, PolyFocalParams, poly_focal_loss
from .mask_decoder import InstancePredictions, merge_predictions, score_map
from .model import ForgeryDetector

MODES = ("episodic", "continual")


def tta_loss(preds: InstancePredictions, patch_probs: Tensor, params: PolyFocalParams = STAGE2_FOCAL) -> Tensor:
    """Poly focal loss between the 1/16 average-pooled score map and patch probabilities."""
    score = score_map(preds)
    kh = score.shape[-2] // patch_probs.shape[-2]
    kw = score.shape[-1] // patch_probs.shape[-1]
    pooled = F.avg_pool2d(score.unsqueeze(1), (kh, kw)).squeeze(1)
    return poly_focal_loss(pooled, patch_probs, params)


class TestTimeAdapter:
    """Adapts the pixel decoder and mask decoder on unlabeled batches.

    The classifier's fused probability conditions the pixel decoder and its
    patch grid supervises the pooled segmentation scores. Encoder, classifier
    and pyramid weights are never touched. In episodic mode every call to
    :meth:`adapt_batch` starts from the stored snapshot.
    """

    __test__ = False  # keep pytest from collecting this as a test class

    def __init__(self, model: ForgeryDetector, lr: float = 1e-4, steps: int = 1, mode: str = "episodic",
                 weight_decay: float = 0.0, hard_targets: bool = False, focal: PolyFocalParams = STAGE2_FOCAL):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if steps < 1:
            raise ValueError("steps must be positive")
        self.model = model
        self.lr = lr
        self.steps = steps
        self.mode = mode
        self.weight_decay = weight_decay
        self.hard_targets = hard_targets
        self.focal = focal
        self.params = model.adaptable_parameters()
        self._snapshot: list[Tensor] | None = None
        self.step_count = 0
        self.snapshot()

    def snapshot(self) -> None:
        self._snapshot = [p.detach().clone() for p in self.params]
        self._new_optimizer()

    def _new_optimizer(self) -> None:
        self.optimizer = torch.optim.AdamW(self.params, lr=self.lr, weight_decay=self.weight_decay)
        self.step_count = 0

    def reset(self) -> None:
        if self._snapshot is None:
            raise RuntimeError("no snapshot to reset to")
        with torch.no_grad():
            for p, s in zip(self.params, self._snapshot):
                p.copy_(s)
        self._new_optimizer()

    @torch.no_grad()
    def pseudo_label(self, images: Tensor) -> tuple[Tensor, ClassifierOutput]:
        features, cls_out = self.model.classify(images)
        return features, cls_out

    def pseudo_condition(self, images: Tensor) -> Tensor:
        """Condition vectors interpolated at the classifier's fused probability."""
        _, cls_out = self.pseudo_label(images)
        return self.model.pixel_decoder.condition(cls_out.fused_prob)

    def loss(self, features: Tensor, cls_out: ClassifierOutput) -> Tensor:
        targets = cls_out.patch_probs
        if self.hard_targets:
            targets = (targets >= 0.5).to(targets.dtype)
        preds = self.model.segment(features, cls_out.fused_prob)
        return tta_loss(preds, targets, self.focal)

    def step(self, features: Tensor, cls_out: ClassifierOutput) -> float:
        self.optimizer.zero_grad(set_to_none=True)
        loss = self.loss(features, cls_out)
        loss.backward()
        self.optimizer.step()
        self.step_count += 1
        return float(loss.detach())

    def adapt_batch(self, images: Tensor, steps: int | None = None) -> tuple[ClassifierOutput, InstancePredictions, Tensor, Tensor]:
        """Adapt on ``images`` and return (classifier output, predictions, scores, binary masks)."""
        if images.shape[0] == 0:
            raise ValueError("empty batch")
        if self.mode == "episodic":
            self.reset()
        features, cls_out = self.pseudo_label(images)
        for _ in range(self.steps if steps is None else steps):
            self.step(features, cls_out)
        with torch.no_grad():
            preds = self.model.segment(features, cls_out.fused_prob)
        scores, binary = merge_predictions(preds, tuple(images.shape[-2:]))
        return cls_out, preds, scores, binary
