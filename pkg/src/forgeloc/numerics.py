"""Tensor substrate: precision control, seeded init, stable primitives and gradients.

Autodiff and storage are torch's; this module pins down the conventions the rest
of the package relies on (half-pixel sampling, border clamping, finite-value
checks, fan-in initialization) and supplies a finite-difference oracle that is
independent of the autograd path it is used to check.
"""
from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterator, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

__all__ = [
    "NonFiniteError",
    "seed_everything",
    "make_generator",
    "precision",
    "check_finite",
    "reverse_gradient",
    "finite_difference_gradient",
    "bilinear_sample",
    "bilinear_sample_reference",
    "sample_nchw",
    "stable_softmax",
    "stable_log_sigmoid",
    "conv2d",
    "resample",
    "fan_in_uniform_",
    "init_module_",
]


class NonFiniteError(FloatingPointError):
    """Raised when a NaN or Inf shows up in a forward or backward pass."""


def seed_everything(seed: int) -> torch.Generator:
    torch.manual_seed(seed)
    np.random.seed(seed % (2**32))
    torch.use_deterministic_algorithms(True)
    return make_generator(seed)


def make_generator(seed: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(seed))
    return g


@contextlib.contextmanager
def precision(dtype: torch.dtype) -> Iterator[None]:
    """Temporarily switch the default float dtype (float64 for gradient checks)."""
    prev = torch.get_default_dtype()
    torch.set_default_dtype(dtype)
    try:
        yield
    finally:
        torch.set_default_dtype(prev)


def check_finite(t: Tensor, what: str = "tensor") -> Tensor:
    if not torch.isfinite(t).all():
        raise NonFiniteError(f"non-finite values in {what}")
    return t


def reverse_gradient(f: Callable[..., Tensor], inputs: Sequence[Tensor]) -> list[Tensor]:
    """Gradients of the scalar ``f(*inputs)`` with respect to every input."""
    leaves = [x.detach().clone().requires_grad_(True) for x in inputs]
    out = f(*leaves)
    if out.numel() != 1:
        raise ValueError(f"f must return a scalar, got shape {tuple(out.shape)}")
    check_finite(out, "forward output")
    grads = torch.autograd.grad(out.reshape(()), leaves, allow_unused=True)
    result = []
    for leaf, g in zip(leaves, grads):
        g = torch.zeros_like(leaf) if g is None else g
        result.append(check_finite(g, "gradient"))
    return result


def finite_difference_gradient(
    f: Callable[..., Tensor], inputs: Sequence[Tensor], h: float = 1e-3
) -> list[Tensor]:
    """Central-difference gradient, one coordinate at a time (the oracle)."""
    base = [x.detach().clone() for x in inputs]
    grads = []
    with torch.no_grad():
        for k, x in enumerate(base):
            g = torch.zeros_like(x)
            flat = x.view(-1)
            gflat = g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                plus = float(f(*base))
                flat[i] = orig - h
                minus = float(f(*base))
                flat[i] = orig
                gflat[i] = (plus - minus) / (2 * h)
            grads.append(g)
    return grads


def sample_nchw(fmap: Tensor, points: Tensor) -> Tensor:
    """Bilinear sampling of (N, C, H, W) maps at (N, P, Q, 2) normalized (u, v) points -> (N, C, P, Q).

    Pixel ``i`` has its centre at ``(i + 0.5) / size``; coordinates beyond the
    outermost centres clamp to them.
    """
    if fmap.numel() == 0:
        raise ValueError("cannot sample from an empty map")
    return F.grid_sample(fmap, points * 2 - 1, mode="bilinear", padding_mode="border", align_corners=False)


def bilinear_sample(fmap: Tensor, points: Tensor) -> Tensor:
    """Sample ``fmap`` (..., H, W, C) at normalized ``points`` (..., P, 2) given as (u, v).

    ``u`` runs along the width and ``v`` along the height; leading dims of
    ``fmap`` and ``points`` must match. Returns (..., P, C).
    """
    if fmap.numel() == 0:
        raise ValueError("cannot sample from an empty map")
    *lead, H, W, C = fmap.shape
    P = points.shape[-2]
    fm = fmap.reshape(-1, H, W, C).permute(0, 3, 1, 2)
    pts = points.reshape(-1, P, 1, 2)
    out = sample_nchw(fm, pts)  # (n, C, P, 1)
    return out.squeeze(-1).transpose(1, 2).reshape(*lead, P, C)


def bilinear_sample_reference(fmap: Tensor, points: Tensor) -> Tensor:
    """Gather-based implementation of :func:`bilinear_sample`, kept as a cross-check."""
    if fmap.numel() == 0:
        raise ValueError("cannot sample from an empty map")
    *lead, H, W, C = fmap.shape
    x = (points[..., 0] * W - 0.5).clamp(0, W - 1)
    y = (points[..., 1] * H - 0.5).clamp(0, H - 1)
    x0 = x.detach().floor().clamp(max=max(W - 2, 0))
    y0 = y.detach().floor().clamp(max=max(H - 2, 0))
    wx = (x - x0).unsqueeze(-1)
    wy = (y - y0).unsqueeze(-1)
    x0 = x0.long()
    y0 = y0.long()
    x1 = (x0 + 1).clamp(max=W - 1)
    y1 = (y0 + 1).clamp(max=H - 1)
    flat = fmap.reshape(*lead, H * W, C)

    def gather(yi: Tensor, xi: Tensor) -> Tensor:
        idx = (yi * W + xi).unsqueeze(-1).expand(*yi.shape, C)
        return torch.gather(flat, -2, idx)

    top = gather(y0, x0) * (1 - wx) + gather(y0, x1) * wx
    bottom = gather(y1, x0) * (1 - wx) + gather(y1, x1) * wx
    return top * (1 - wy) + bottom * wy


def stable_softmax(logits: Tensor, dim: int = -1) -> Tensor:
    if logits.shape[dim] == 0:
        raise ValueError("softmax of an empty vector")
    shifted = logits - logits.max(dim=dim, keepdim=True).values.detach()
    e = shifted.exp()
    return e / e.sum(dim=dim, keepdim=True)


def stable_log_sigmoid(x: Tensor) -> Tensor:
    # log sigma(x) = min(x, 0) - log1p(exp(-|x|))
    check_finite(x, "log-sigmoid input")
    return torch.minimum(x, torch.zeros_like(x)) - torch.log1p(torch.exp(-x.abs()))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution over (B, C_in, H, W) or (C_in, H, W) inputs."""
    k = weight.shape[-1]
    if weight.shape[-2] != k or k % 2 == 0:
        raise ValueError("kernel must be square with odd size")
    if stride not in (1, 2):
        raise ValueError("stride must be 1 or 2")
    H, W = x.shape[-2:]
    if k > H + 2 * padding or k > W + 2 * padding:
        raise ValueError(f"kernel {k} larger than padded input {H + 2 * padding}x{W + 2 * padding}")
    squeeze = x.dim() == 3
    if squeeze:
        x = x.unsqueeze(0)
    out = F.conv2d(x, weight, bias, stride=stride, padding=padding)
    return out.squeeze(0) if squeeze else out


def resample(x: Tensor, scale: float) -> Tensor:
    """Nearest resampling of (..., H, W) by 2 (duplicate) or 0.5 (top-left pick)."""
    if scale == 2:
        return x.repeat_interleave(2, dim=-2).repeat_interleave(2, dim=-1)
    if scale == 0.5:
        H, W = x.shape[-2:]
        if H % 2 or W % 2:
            raise ValueError(f"cannot halve odd dimensions {H}x{W}")
        return x[..., ::2, ::2]
    raise ValueError(f"unsupported scale {scale}")


def fan_in_uniform_(t: Tensor, fan_in: int, generator: torch.Generator | None = None) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        return t.uniform_(-bound, bound, generator=generator)


def init_module_(module: nn.Module, generator: torch.Generator) -> None:
    """Re-initialize every Linear/Conv2d in ``module`` from ``generator``.

    Walks modules in registration order, so the same seed gives the same weights.
    """
    for m in module.modules():
        if isinstance(m, (nn.Linear, nn.Conv2d)):
            fan_in = m.weight[0].numel()
            fan_in_uniform_(m.weight, fan_in, generator)
            if m.bias is not None:
                fan_in_uniform_(m.bias, fan_in, generator)
