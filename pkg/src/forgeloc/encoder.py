"""Small ViT-style image encoder producing the 1/16-resolution feature grid."""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .layers import TransformerBlock
from .numerics import fan_in_uniform_, init_module_, make_generator

PATCH_SIZE = 16


@dataclass(frozen=True)
class EncoderConfig:
    embed_dim: int = 128
    depth: int = 4
    heads: int = 4
    max_grid: int = 8  # positional table covers up to 128x128 images
    patch_size: int = PATCH_SIZE

    def __post_init__(self):
        if self.patch_size != PATCH_SIZE:
            raise ValueError("patch_size is fixed at 16")
        if self.embed_dim % self.heads:
            raise ValueError("embed_dim must be divisible by heads")


def grid_shape(height: int, width: int, patch_size: int = PATCH_SIZE) -> tuple[int, int]:
    if height % patch_size or width % patch_size:
        raise ValueError(f"image size {height}x{width} is not divisible by the patch size {patch_size}")
    return height // patch_size, width // patch_size


def patchify(images: Tensor, patch_size: int = PATCH_SIZE) -> Tensor:
    """(B, 3, H, W) -> (B, h*w, 3*p*p) raw patch vectors in row-major grid order."""
    B, C, H, W = images.shape
    h, w = grid_shape(H, W, patch_size)
    x = images.reshape(B, C, h, patch_size, w, patch_size)
    x = x.permute(0, 2, 4, 1, 3, 5)
    return x.reshape(B, h * w, C * patch_size * patch_size)


class Encoder(nn.Module):
    def __init__(self, config: EncoderConfig = EncoderConfig(), seed: int = 0):
        super().__init__()
        self.config = config
        D = config.embed_dim
        self.proj = nn.Linear(3 * config.patch_size**2, D)
        self.pos_embed = nn.Parameter(torch.zeros(config.max_grid, config.max_grid, D))
        self.blocks = nn.ModuleList(TransformerBlock(D, config.heads) for _ in range(config.depth))
        self.norm = nn.LayerNorm(D)
        g = make_generator(seed)
        init_module_(self, g)
        fan_in_uniform_(self.pos_embed, D, g)

    def embed(self, images: Tensor) -> Tensor:
        """Linear patch tokens, (B, h*w, D)."""
        return self.proj(patchify(images, self.config.patch_size))

    def forward(self, images: Tensor) -> Tensor:
        """(B, 3, H, W) -> F16 grid as (B, D, H/16, W/16)."""
        B, _, H, W = images.shape
        h, w = grid_shape(H, W, self.config.patch_size)
        if h > self.config.max_grid or w > self.config.max_grid:
            raise ValueError(f"grid {h}x{w} exceeds the positional table {self.config.max_grid}")
        x = self.embed(images) + self.pos_embed[:h, :w].reshape(h * w, -1)
        for block in self.blocks:
            x = block(x)
        x = self.norm(x)
        return x.transpose(1, 2).reshape(B, -1, h, w)
