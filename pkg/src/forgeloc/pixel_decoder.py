"""Conditional pixel decoder: deformable multi-scale self-attention, then
cross-attention to a semantic condition token, then a feed-forward network."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .layers import MLP, Attention
from .numerics import fan_in_uniform_, init_module_, make_generator, sample_nchw, stable_softmax
from .pyramid import SCALES


@dataclass(frozen=True)
class DeformableConfig:
    levels: int = 4
    points: int = 4
    heads: int = 4
    layers: int = 3


@dataclass
class LevelLayout:
    """How the flattened multi-level token sequence maps back to grids."""

    shapes: list[tuple[int, int]]
    reference: Tensor  # (N, 2) normalized pixel centres as (u, v)
    level_index: Tensor  # (N,) level id of every token

    @property
    def starts(self) -> list[int]:
        out, acc = [], 0
        for h, w in self.shapes:
            out.append(acc)
            acc += h * w
        return out

    @classmethod
    def from_shapes(cls, shapes: list[tuple[int, int]]) -> "LevelLayout":
        refs, lids = [], []
        for lvl, (h, w) in enumerate(shapes):
            ys, xs = torch.meshgrid(torch.arange(h), torch.arange(w), indexing="ij")
            u = (xs.reshape(-1) + 0.5) / w
            v = (ys.reshape(-1) + 0.5) / h
            refs.append(torch.stack([u, v], dim=-1))
            lids.append(torch.full((h * w,), lvl, dtype=torch.long))
        return cls(list(shapes), torch.cat(refs).to(torch.get_default_dtype()), torch.cat(lids))

    def validate(self, num_tokens: int, levels: int) -> None:
        if len(self.shapes) != levels:
            raise ValueError(f"expected {levels} levels, layout has {len(self.shapes)}")
        if any(h < 1 or w < 1 for h, w in self.shapes):
            raise ValueError("level shapes must be positive")
        if sum(h * w for h, w in self.shapes) != num_tokens or self.reference.shape != (num_tokens, 2):
            raise ValueError("layout does not match the token sequence")


def flatten_levels(levels: dict[int, Tensor]) -> tuple[Tensor, LevelLayout]:
    maps = [levels[s] for s in SCALES]
    layout = LevelLayout.from_shapes([tuple(m.shape[-2:]) for m in maps])
    tokens = torch.cat([m.flatten(2).transpose(1, 2) for m in maps], dim=1)
    return tokens, layout


def unflatten_levels(tokens: Tensor, layout: LevelLayout) -> dict[int, Tensor]:
    B, _, D = tokens.shape
    out = {}
    for s, start, (h, w) in zip(SCALES, layout.starts, layout.shapes):
        out[s] = tokens[:, start:start + h * w].transpose(1, 2).reshape(B, D, h, w)
    return out


def sine_position(reference: Tensor, dim: int, temperature: float = 10000.0) -> Tensor:
    """(N, 2) normalized positions -> (N, dim) fixed sin/cos code."""
    half = dim // 2
    freqs = temperature ** (2 * (torch.arange(half // 2, dtype=reference.dtype)) / half)
    pos = reference[:, :, None] * 2 * math.pi / freqs  # (N, 2, half/2)
    code = torch.cat([pos.sin(), pos.cos()], dim=-1)  # (N, 2, half)
    return code.reshape(reference.shape[0], -1)


class MultiScaleDeformableAttention(nn.Module):
    """Each query predicts ``points`` offsets per level and per head around its
    reference point, samples the value maps there bilinearly and mixes the
    samples with softmax weights over all levels x points."""

    def __init__(self, dim: int, config: DeformableConfig = DeformableConfig()):
        super().__init__()
        self.dim = dim
        self.config = config
        h, L, K = config.heads, config.levels, config.points
        self.offsets = nn.Linear(dim, h * L * K * 2)
        self.attn_logits = nn.Linear(dim, h * L * K)
        self.value = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def reset_sampling(self) -> None:
        # offsets start as a ring of directions, one per head, at growing radii
        h, L, K = self.config.heads, self.config.levels, self.config.points
        with torch.no_grad():
            self.offsets.weight.zero_()
            theta = torch.arange(h, dtype=self.offsets.bias.dtype) * (2 * math.pi / h)
            ring = torch.stack([theta.cos(), theta.sin()], -1)
            ring = ring / ring.abs().max(-1, keepdim=True).values
            grid = ring.view(h, 1, 1, 2).repeat(1, L, K, 1)
            grid = grid * torch.arange(1, K + 1, dtype=grid.dtype).view(1, 1, K, 1)
            self.offsets.bias.copy_(grid.reshape(-1))
            self.attn_logits.weight.zero_()
            self.attn_logits.bias.zero_()

    def sampling(self, query: Tensor, layout: LevelLayout) -> tuple[Tensor, Tensor]:
        """Sampling locations (B, N, heads, L, K, 2) and weights (B, N, heads, L, K)."""
        B, N, _ = query.shape
        h, L, K = self.config.heads, self.config.levels, self.config.points
        off = self.offsets(query).view(B, N, h, L, K, 2)
        sizes = torch.tensor([[w, hh] for hh, w in layout.shapes], dtype=query.dtype)  # (L, 2) as (W, H)
        loc = layout.reference.to(query.dtype).view(1, N, 1, 1, 1, 2) + off / sizes.view(1, 1, 1, L, 1, 2)
        weights = stable_softmax(self.attn_logits(query).view(B, N, h, L * K), dim=-1)
        return loc, weights.view(B, N, h, L, K)

    def forward(self, query: Tensor, value: Tensor, layout: LevelLayout) -> Tensor:
        B, N, D = query.shape
        h, L, K = self.config.heads, self.config.levels, self.config.points
        layout.validate(N, L)
        loc, weights = self.sampling(query, layout)
        dh = D // h
        v = self.value(value).view(B, N, h, dh)
        out = torch.zeros(B * h, dh, N, dtype=query.dtype)
        for lvl, (start, (H, W)) in enumerate(zip(layout.starts, layout.shapes)):
            vmap = v[:, start:start + H * W].permute(0, 2, 3, 1).reshape(B * h, dh, H, W)
            pts = loc[:, :, :, lvl].transpose(1, 2).reshape(B * h, N, K, 2)
            samples = sample_nchw(vmap, pts)  # (B*h, dh, N, K)
            w = weights[:, :, :, lvl].transpose(1, 2).reshape(B * h, 1, N, K)
            out = out + (samples * w).sum(dim=-1)
        out = out.view(B, h, dh, N).permute(0, 3, 1, 2).reshape(B, N, D)
        return self.out(out)


class ConditionEmbedding(nn.Module):
    """Learned 'authentic' and 'forged' vectors and their interpolation."""

    def __init__(self, dim: int, generator: torch.Generator | None = None):
        super().__init__()
        self.authentic = nn.Parameter(torch.empty(dim))
        self.forged = nn.Parameter(torch.empty(dim))
        fan_in_uniform_(self.authentic, dim, generator)
        fan_in_uniform_(self.forged, dim, generator)

    def forward(self, p: Tensor) -> Tensor:
        """(B,) forgery probabilities in [0, 1] -> (B, D) condition vectors."""
        p = torch.as_tensor(p, dtype=self.forged.dtype)
        if p.dim() == 0:
            p = p.unsqueeze(0)
        if ((p < 0) | (p > 1)).any():
            raise ValueError("condition probability must lie in [0, 1]")
        p = p.unsqueeze(-1)
        return p * self.forged + (1 - p) * self.authentic


class PixelDecoderLayer(nn.Module):
    def __init__(self, dim: int, config: DeformableConfig, use_condition: bool = True):
        super().__init__()
        self.use_condition = use_condition
        self.norm1 = nn.LayerNorm(dim)
        self.msda = MultiScaleDeformableAttention(dim, config)
        if use_condition:
            self.norm2 = nn.LayerNorm(dim)
            self.cross = Attention(dim, config.heads)
        self.norm3 = nn.LayerNorm(dim)
        self.ffn = MLP(dim, 4 * dim, dim)

    def forward(self, x: Tensor, pos: Tensor, layout: LevelLayout, condition: Tensor | None) -> Tensor:
        h = self.norm1(x)
        x = x + self.msda(h + pos, h, layout)
        if self.use_condition:
            token = condition.unsqueeze(1)
            x = x + self.cross(self.norm2(x), token, token)
        return x + self.ffn(self.norm3(x))


class ConditionalPixelDecoder(nn.Module):
    """Refines the pyramid and emits per-pixel mask embeddings at 1/4 resolution.

    ``decode(levels, condition)`` returns ``(refined_levels, mask_features)``.
    With ``use_condition=False`` the cross-attention sublayer is dropped.
    """

    def __init__(self, dim: int, config: DeformableConfig = DeformableConfig(), use_condition: bool = True, seed: int = 3):
        super().__init__()
        self.dim = dim
        self.config = config
        self.use_condition = use_condition
        self.layers = nn.ModuleList(PixelDecoderLayer(dim, config, use_condition) for _ in range(config.layers))
        self.norm = nn.LayerNorm(dim)
        self.level_embed = nn.Parameter(torch.empty(config.levels, dim))
        self.mask_proj = nn.Conv2d(dim, dim, 1)
        g = make_generator(seed)
        init_module_(self, g)
        fan_in_uniform_(self.level_embed, dim, g)
        self.condition = ConditionEmbedding(dim, g)
        for layer in self.layers:
            layer.msda.reset_sampling()
            if use_condition:
                with torch.no_grad():
                    layer.cross.out.weight.zero_()
                    layer.cross.out.bias.zero_()

    def forward(self, levels: dict[int, Tensor], condition: Tensor | None = None) -> tuple[dict[int, Tensor], Tensor]:
        if self.use_condition and condition is None:
            raise ValueError("a condition vector is required")
        x, layout = flatten_levels(levels)
        pos = sine_position(layout.reference.to(x.dtype), self.dim) + self.level_embed[layout.level_index]
        for layer in self.layers:
            x = layer(x, pos, layout, condition)
        refined = unflatten_levels(self.norm(x), layout)
        return refined, self.mask_proj(refined[4])
