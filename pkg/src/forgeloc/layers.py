"""Attention and feed-forward building blocks shared by the encoder and decoders."""
from __future__ import annotations

import math

import torch
from torch import Tensor, nn

from .numerics import stable_softmax


class MLP(nn.Module):
    def __init__(self, in_dim: int, hidden: int, out_dim: int, num_layers: int = 2):
        super().__init__()
        dims = [in_dim] + [hidden] * (num_layers - 1) + [out_dim]
        self.layers = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))

    def forward(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = torch.nn.functional.gelu(x)
        return x


class Attention(nn.Module):
    """Multi-head scaled dot-product attention.

    ``mask`` is boolean, broadcastable to (B, heads, Nq, Nk); True marks keys a
    query may attend to. Rows with no allowed key fall back to attending to all.
    """

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, query: Tensor, key: Tensor, value: Tensor, mask: Tensor | None = None) -> Tensor:
        B, Nq, D = query.shape
        Nk = key.shape[1]
        h = self.heads
        q = self.q(query).view(B, Nq, h, D // h).transpose(1, 2)
        k = self.k(key).view(B, Nk, h, D // h).transpose(1, 2)
        v = self.v(value).view(B, Nk, h, D // h).transpose(1, 2)
        logits = q @ k.transpose(-1, -2) / math.sqrt(D // h)
        if mask is not None:
            mask = mask.expand_as(logits)
            empty = ~mask.any(dim=-1, keepdim=True)
            mask = mask | empty
            logits = logits.masked_fill(~mask, float("-inf"))
        attn = stable_softmax(logits, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(B, Nq, D)
        return self.out(out)


class TransformerBlock(nn.Module):
    """Pre-norm self-attention + feed-forward block."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int = 4):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = MLP(dim, dim * mlp_ratio, dim)

    def forward(self, x: Tensor) -> Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h, h)
        return x + self.ffn(self.norm2(x))
