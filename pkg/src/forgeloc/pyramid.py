"""Simple multi-scale pyramid built from the single 1/16 feature map."""
from __future__ import annotations

import torch.nn.functional as F
from torch import Tensor, nn

from .numerics import init_module_, make_generator, resample

SCALES = (4, 8, 16, 32)


class UpStage(nn.Module):
    """Nearest x2 upsample followed by a 3x3 conv."""

    def __init__(self, dim: int):
        super().__init__()
        self.conv = nn.Conv2d(dim, dim, 3, padding=1)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(resample(x, 2))


class FeaturePyramid(nn.Module):
    """Independent heads off F16: two up-stages for 1/4, one for 1/8, a 1x1 for 1/16
    and a stride-2 conv for 1/32, each followed by its own 1x1 output projection.

    Returns a dict ``{4: F4, 8: F8, 16: F16, 32: F32}`` of (B, D, H/s, W/s) maps.
    """

    def __init__(self, dim: int, seed: int = 2):
        super().__init__()
        self.up4 = nn.ModuleList([UpStage(dim), UpStage(dim)])
        self.up8 = UpStage(dim)
        self.lateral16 = nn.Conv2d(dim, dim, 1)
        self.down32 = nn.Conv2d(dim, dim, 3, stride=2, padding=1)
        self.out = nn.ModuleDict({str(s): nn.Conv2d(dim, dim, 1) for s in SCALES})
        init_module_(self, make_generator(seed))

    def forward(self, f16: Tensor) -> dict[int, Tensor]:
        h, w = f16.shape[-2:]
        if h % 2 or w % 2:
            raise ValueError(f"F16 grid {h}x{w} must have even sides for the 1/32 level")
        levels = {
            4: self.up4[1](F.gelu(self.up4[0](f16))),
            8: self.up8(f16),
            16: self.lateral16(f16),
            32: self.down32(f16),
        }
        return {s: self.out[str(s)](levels[s]) for s in SCALES}
