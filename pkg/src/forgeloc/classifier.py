"""Patch-aware classifier and the stage-1 objective."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .encoder import PATCH_SIZE
from .layers import MLP
from .numerics import init_module_, make_generator, stable_log_sigmoid

PROB_EPS = 1e-7


@dataclass(frozen=True)
class PolyFocalParams:
    alpha: float = 0.85
    gamma: float = 2.0
    epsilon: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.gamma < 0 or self.epsilon < 0:
            raise ValueError("gamma and epsilon must be nonnegative")


STAGE1_FOCAL = PolyFocalParams(alpha=0.85, gamma=2.0, epsilon=1.0)
STAGE2_FOCAL = PolyFocalParams(alpha=0.8, gamma=2.0, epsilon=1.0)


@dataclass
class ClassifierOutput:
    global_logit: Tensor  # (B,)
    patch_logits: Tensor  # (B, h, w)
    fused_logit: Tensor  # (B,)

    @property
    def patch_probs(self) -> Tensor:
        return torch.sigmoid(self.patch_logits)

    @property
    def fused_prob(self) -> Tensor:
        return torch.sigmoid(self.fused_logit)


class PatchAwareClassifier(nn.Module):
    """Global head on mean-pooled tokens, a shared per-token head, and a linear fusion.

    The fusion sees ``[global, mean(patch), max(patch)]``. With ``use_patch=False``
    it sees the global logit alone (the patch-prediction ablation).
    """

    def __init__(self, dim: int, use_patch: bool = True, seed: int = 1):
        super().__init__()
        self.use_patch = use_patch
        self.global_head = MLP(dim, dim, 1)
        self.patch_head = MLP(dim, dim, 1)
        self.fusion = nn.Linear(3 if use_patch else 1, 1)
        init_module_(self, make_generator(seed))

    def forward(self, features: Tensor) -> ClassifierOutput:
        B, D, h, w = features.shape
        tokens = features.flatten(2).transpose(1, 2)
        global_logit = self.global_head(tokens.mean(dim=1)).squeeze(-1)
        patch_logits = self.patch_head(tokens).squeeze(-1)
        if self.use_patch:
            fuse_in = torch.stack(
                [global_logit, patch_logits.mean(dim=1), patch_logits.max(dim=1).values], dim=-1
            )
        else:
            fuse_in = global_logit.unsqueeze(-1)
        fused = self.fusion(fuse_in).squeeze(-1)
        return ClassifierOutput(global_logit, patch_logits.view(B, h, w), fused)


def patch_targets_from_mask(mask: Tensor, patch_size: int = PATCH_SIZE) -> Tensor:
    """(..., H, W) binary mask -> (..., H/p, W/p); a patch is forged if any pixel is."""
    H, W = mask.shape[-2:]
    if H % patch_size or W % patch_size:
        raise ValueError(f"mask {H}x{W} does not tile into {patch_size}-pixel patches")
    lead = mask.shape[:-2]
    m = mask.reshape(-1, 1, H, W).to(torch.get_default_dtype())
    pooled = F.max_pool2d(m, patch_size)
    return (pooled > 0).to(m.dtype).reshape(*lead, H // patch_size, W // patch_size)


def poly_focal_terms(probs: Tensor, targets: Tensor, params: PolyFocalParams) -> Tensor:
    """Elementwise poly focal loss with the alpha_t convention.

    Soft targets in [0, 1] mix the positive- and negative-class terms linearly;
    for binary targets this is exactly the per-element loss on the true class.
    """
    if probs.shape != targets.shape:
        raise ValueError(f"shape mismatch {tuple(probs.shape)} vs {tuple(targets.shape)}")
    q = probs.clamp(PROB_EPS, 1 - PROB_EPS)
    a, g, e = params.alpha, params.gamma, params.epsilon

    def term(p: Tensor, weight: float) -> Tensor:
        return -weight * (1 - p).pow(g) * torch.log(p) + e * (1 - p).pow(g + 1)

    return targets * term(q, a) + (1 - targets) * term(1 - q, 1 - a)


def poly_focal_loss(probs: Tensor, targets: Tensor, params: PolyFocalParams = STAGE1_FOCAL) -> Tensor:
    return poly_focal_terms(probs, targets, params).mean()


def binary_cross_entropy_logits(logits: Tensor, labels: Tensor) -> Tensor:
    return -(labels * stable_log_sigmoid(logits) + (1 - labels) * stable_log_sigmoid(-logits)).mean()


def classification_loss(
    output: ClassifierOutput,
    labels: Tensor,
    patch_targets: Tensor,
    params: PolyFocalParams = STAGE1_FOCAL,
    use_patch: bool = True,
) -> dict[str, Tensor]:
    """Stage-1 loss: poly focal over the patch grid plus BCE on the fused prediction."""
    labels = labels.to(output.fused_logit.dtype)
    global_loss = binary_cross_entropy_logits(output.fused_logit, labels)
    if use_patch:
        patch_loss = poly_focal_loss(output.patch_probs, patch_targets.to(labels.dtype), params)
    else:
        patch_loss = torch.zeros((), dtype=global_loss.dtype)
    return {"patch": patch_loss, "global": global_loss, "total": patch_loss + global_loss}
