"""Query-based mask decoder with masked cross-attention over the refined pyramid."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .layers import MLP, Attention
from .numerics import fan_in_uniform_, init_module_, make_generator, stable_softmax
from .pixel_decoder import LevelLayout, sine_position

NUM_QUERIES = 20
ROUND_SCALES = (32, 16, 8)


@dataclass
class InstancePredictions:
    """Per-query outputs for a batch: Q predictions per image."""

    mask_logits: Tensor  # (B, Q, H/4, W/4)
    class_logits: Tensor  # (B, Q, 2) as (forged, no-object)
    boxes: Tensor  # (B, Q, 4) as (cx, cy, w, h) in [0, 1]

    @property
    def forged_prob(self) -> Tensor:
        return stable_softmax(self.class_logits, dim=-1)[..., 0]

    def __len__(self) -> int:
        return self.mask_logits.shape[0]


class DecoderLayer(nn.Module):
    """Masked cross-attention, self-attention, feed-forward; post-norm residuals."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.cross = Attention(dim, heads)
        self.norm1 = nn.LayerNorm(dim)
        self.self_attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = MLP(dim, 4 * dim, dim)
        self.norm3 = nn.LayerNorm(dim)

    def forward(self, q: Tensor, qpos: Tensor, memory: Tensor, mpos: Tensor, mask: Tensor | None) -> Tensor:
        q = self.norm1(q + self.cross(q + qpos, memory + mpos, memory, mask))
        qq = q + qpos
        q = self.norm2(q + self.self_attn(qq, qq, q))
        return self.norm3(q + self.ffn(q))


class MaskDecoder(nn.Module):
    def __init__(self, dim: int, num_queries: int = NUM_QUERIES, heads: int = 4, rounds: int = 3,
                 masked_attention: bool = True, seed: int = 4):
        super().__init__()
        self.dim = dim
        self.num_queries = num_queries
        self.masked_attention = masked_attention
        self.layers = nn.ModuleList(DecoderLayer(dim, heads) for _ in range(rounds * len(ROUND_SCALES)))
        self.norm = nn.LayerNorm(dim)
        self.class_head = nn.Linear(dim, 2)
        self.mask_embed = MLP(dim, dim, dim, num_layers=3)
        self.box_head = MLP(dim, dim, 4, num_layers=3)
        self.query_feat = nn.Parameter(torch.empty(num_queries, dim))
        self.query_pos = nn.Parameter(torch.empty(num_queries, dim))
        self.level_embed = nn.Parameter(torch.empty(len(ROUND_SCALES), dim))
        g = make_generator(seed)
        init_module_(self, g)
        for p in (self.query_feat, self.query_pos, self.level_embed):
            fan_in_uniform_(p, dim, g)

    def predict(self, q: Tensor, mask_features: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        q = self.norm(q)
        mask_logits = torch.einsum("bqd,bdhw->bqhw", self.mask_embed(q), mask_features)
        return self.class_head(q), mask_logits, torch.sigmoid(self.box_head(q))

    def attention_mask(self, mask_logits: Tensor, size: tuple[int, int]) -> Tensor | None:
        """Boolean (B, 1, Q, h*w): pixels whose pooled mask probability is >= 0.5."""
        if not self.masked_attention:
            return None
        H, W = mask_logits.shape[-2:]
        pooled = F.avg_pool2d(mask_logits.detach(), (H // size[0], W // size[1]))
        return (pooled >= 0).flatten(2).unsqueeze(1)

    def forward(self, levels: dict[int, Tensor], mask_features: Tensor) -> InstancePredictions:
        B = mask_features.shape[0]
        memories, positions = [], []
        for i, s in enumerate(ROUND_SCALES):
            fmap = levels[s]
            layout = LevelLayout.from_shapes([tuple(fmap.shape[-2:])])
            memories.append(fmap.flatten(2).transpose(1, 2))
            positions.append(sine_position(layout.reference.to(fmap.dtype), self.dim) + self.level_embed[i])
        q = self.query_feat.unsqueeze(0).expand(B, -1, -1)
        qpos = self.query_pos.unsqueeze(0).expand(B, -1, -1)
        cls, masks, boxes = self.predict(q, mask_features)
        for i, layer in enumerate(self.layers):
            k = i % len(ROUND_SCALES)
            size = tuple(levels[ROUND_SCALES[k]].shape[-2:])
            attn_mask = self.attention_mask(masks, size)
            q = layer(q, qpos, memories[k], positions[k], attn_mask)
            cls, masks, boxes = self.predict(q, mask_features)
        return InstancePredictions(masks, cls, boxes)


def score_map(preds: InstancePredictions) -> Tensor:
    """(B, H/4, W/4) forgery score: max over queries of P(forged) * sigmoid(mask)."""
    return (preds.forged_prob[..., None, None] * torch.sigmoid(preds.mask_logits)).amax(dim=1)


def merge_predictions(preds: InstancePredictions, size: tuple[int, int] | None = None) -> tuple[Tensor, Tensor]:
    """Full-resolution score map and binary mask (score >= 0.5).

    Scores are nearest-upsampled from 1/4 resolution to ``size`` (default 4x).
    """
    score = score_map(preds)
    h, w = score.shape[-2:]
    H, W = size if size is not None else (4 * h, 4 * w)
    if H % h or W % w:
        raise ValueError(f"target size {H}x{W} is not a multiple of {h}x{w}")
    score = score.repeat_interleave(H // h, dim=-2).repeat_interleave(W // w, dim=-1)
    return score, score >= 0.5
