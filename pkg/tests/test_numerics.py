import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st

from forgeloc.numerics import (
    NonFiniteError,
    bilinear_sample,
    bilinear_sample_reference,
    conv2d,
    resample,
    reverse_gradient,
    stable_log_sigmoid,
    stable_softmax,
)

from .conftest import assert_gradients_match


def test_square_gradient():
    (g,) = reverse_gradient(lambda x: (x**2).sum(), [torch.tensor([3.0])])
    assert g.item() == 6.0


def test_sigmoid_sum_gradient_at_zero():
    (g,) = reverse_gradient(lambda x: torch.sigmoid(x).sum(), [torch.zeros(5)])
    assert torch.allclose(g, torch.full((5,), 0.25))


def test_layernorm_affine_gradient(f64):
    gen = torch.Generator().manual_seed(0)
    x = torch.randn(4, 8, generator=gen)
    w = torch.randn(8, 3, generator=gen)
    b = torch.randn(3, generator=gen)
    probe = torch.randn(4, 3, generator=gen)

    def f(x, w, b):
        return ((F.layer_norm(x, (8,)) @ w + b) * probe).sum()

    assert_gradients_match(f, [x, w, b])


def test_reverse_gradient_rejects_non_scalar():
    with pytest.raises(ValueError):
        reverse_gradient(lambda x: x * 2, [torch.ones(3)])


def test_reverse_gradient_rejects_non_finite():
    with pytest.raises(NonFiniteError):
        reverse_gradient(lambda x: torch.log(x).sum(), [torch.tensor([-1.0])])
    with pytest.raises(NonFiniteError):
        reverse_gradient(lambda x: torch.sqrt(x).sum(), [torch.tensor([0.0])])


# bilinear sampling


def test_sample_at_pixel_centre_returns_pixel():
    fmap = torch.arange(12.0).view(3, 4, 1)
    pts = torch.tensor([[(2 + 0.5) / 4, (1 + 0.5) / 3]])
    assert bilinear_sample(fmap, pts).item() == fmap[1, 2, 0].item()


def test_sample_midpoint_of_2x2():
    fmap = torch.tensor([[0.0, 1.0], [2.0, 3.0]]).view(2, 2, 1)
    assert bilinear_sample(fmap, torch.tensor([[0.5, 0.5]])).item() == pytest.approx(1.5)


def test_sample_clamps_to_border():
    fmap = torch.tensor([[0.0, 1.0], [2.0, 3.0]]).view(2, 2, 1)
    assert bilinear_sample(fmap, torch.tensor([[-5.0, -5.0]])).item() == 0.0
    assert bilinear_sample(fmap, torch.tensor([[7.0, 7.0]])).item() == 3.0


def test_sample_empty_map_errors():
    with pytest.raises(ValueError):
        bilinear_sample(torch.zeros(0, 3, 2), torch.zeros(1, 2))


def test_sample_matches_gather_reference(f64):
    gen = torch.Generator().manual_seed(3)
    for H, W in [(1, 1), (1, 5), (3, 4), (6, 6)]:
        fmap = torch.randn(2, H, W, 3, generator=gen)
        pts = torch.rand(2, 17, 2, generator=gen) * 1.6 - 0.3
        assert torch.allclose(bilinear_sample(fmap, pts), bilinear_sample_reference(fmap, pts), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 10_000))
def test_sample_is_linear_in_map(a, b, seed):
    gen = torch.Generator().manual_seed(seed)
    M = torch.randn(5, 4, 2, generator=gen, dtype=torch.float64)
    N = torch.randn(5, 4, 2, generator=gen, dtype=torch.float64)
    p = torch.rand(9, 2, generator=gen, dtype=torch.float64) * 1.4 - 0.2
    lhs = bilinear_sample(a * M + b * N, p)
    rhs = a * bilinear_sample(M, p) + b * bilinear_sample(N, p)
    assert torch.allclose(lhs, rhs, atol=1e-6)


@pytest.mark.parametrize("shape", [(3, 3, 2), (4, 5, 1), (2, 6, 3)])
def test_sample_gradients(f64, shape):
    gen = torch.Generator().manual_seed(sum(shape))
    fmap = torch.randn(*shape, generator=gen)
    # keep points off the pixel-centre grid, where the interpolant has kinks
    H, W, _ = shape
    cells = torch.stack([torch.randint(0, W - 1 if W > 1 else 1, (6,), generator=gen),
                         torch.randint(0, H - 1 if H > 1 else 1, (6,), generator=gen)], -1).double()
    frac = 0.1 + 0.8 * torch.rand(6, 2, generator=gen)
    pts = (cells + 0.5 + frac) / torch.tensor([W, H], dtype=torch.float64)
    probe = torch.randn(6, shape[2], generator=gen)
    assert_gradients_match(lambda m, p: (bilinear_sample(m, p) * probe).sum(), [fmap, pts])


# softmax / log-sigmoid


def test_softmax_examples():
    assert torch.allclose(stable_softmax(torch.tensor([0.0, 0.0])), torch.tensor([0.5, 0.5]))
    out = stable_softmax(torch.tensor([1000.0, 0.0]))
    assert torch.isfinite(out).all()
    assert abs(out[0].item() - 1) < 1e-6 and out[1].item() < 1e-6


def test_softmax_empty_errors():
    with pytest.raises(ValueError):
        stable_softmax(torch.zeros(0))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=12), st.floats(-100, 100))
def test_softmax_properties(xs, c):
    x = torch.tensor(xs, dtype=torch.float64)
    p = stable_softmax(x)
    assert torch.all((p >= 0) & (p <= 1))
    assert abs(p.sum().item() - 1) < 1e-6
    assert torch.allclose(stable_softmax(x + c), p, atol=1e-6)


@pytest.mark.parametrize("n", [2, 5, 9])
def test_softmax_gradient(f64, n):
    gen = torch.Generator().manual_seed(n)
    x = torch.randn(3, n, generator=gen)
    probe = torch.randn(3, n, generator=gen)
    assert_gradients_match(lambda x: (stable_softmax(x) * probe).sum(), [x])


def test_log_sigmoid_examples():
    assert stable_log_sigmoid(torch.tensor(0.0)).item() == pytest.approx(math.log(0.5), abs=1e-6)
    assert stable_log_sigmoid(torch.tensor(-100.0, dtype=torch.float64)).item() == pytest.approx(-100, abs=1e-6)
    assert stable_log_sigmoid(torch.tensor(100.0, dtype=torch.float64)).item() == pytest.approx(0, abs=1e-6)
    assert torch.isfinite(stable_log_sigmoid(torch.tensor(-1e4)))


def test_log_sigmoid_rejects_non_finite():
    with pytest.raises(NonFiniteError):
        stable_log_sigmoid(torch.tensor(float("nan")))


@pytest.mark.parametrize("n", [1, 4, 7])
def test_log_sigmoid_gradient(f64, n):
    x = torch.linspace(-6, 6, n)
    assert_gradients_match(lambda x: stable_log_sigmoid(x).sum(), [x])


# conv2d / resample


def naive_conv(x, w, stride, padding):
    C_in, H, W = x.shape
    C_out, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    Ho = (H + 2 * padding - k) // stride + 1
    Wo = (W + 2 * padding - k) // stride + 1
    out = np.zeros((C_out, Ho, Wo))
    for o in range(C_out):
        for i in range(Ho):
            for j in range(Wo):
                for c in range(C_in):
                    for di in range(k):
                        for dj in range(k):
                            out[o, i, j] += w[o, c, di, dj] * xp[c, i * stride + di, j * stride + dj]
    return out


@pytest.mark.parametrize("k,stride,padding,H,W", [(1, 1, 0, 5, 4), (3, 1, 1, 6, 6), (3, 2, 1, 8, 7), (5, 2, 2, 9, 9)])
def test_conv_matches_naive_loops(rng, k, stride, padding, H, W):
    x = rng.standard_normal((3, H, W))
    w = rng.standard_normal((2, 3, k, k))
    out = conv2d(torch.tensor(x), torch.tensor(w), stride=stride, padding=padding).numpy()
    assert out.shape == (2, (H + 2 * padding - k) // stride + 1, (W + 2 * padding - k) // stride + 1)
    assert np.allclose(out, naive_conv(x, w, stride, padding), atol=1e-5)


def test_conv_identity_and_constant():
    x = torch.randn(2, 5, 5)
    eye = torch.eye(2).view(2, 2, 1, 1)
    assert torch.equal(conv2d(x, eye), x)
    const = torch.full((1, 6, 6), 2.5)
    out = conv2d(const, torch.ones(1, 1, 3, 3), padding=1)
    assert out[0, 2, 3].item() == pytest.approx(9 * 2.5)
    assert conv2d(torch.zeros(1, 8, 8), torch.ones(1, 1, 1, 1), stride=2).shape == (1, 4, 4)


def test_conv_kernel_too_large():
    with pytest.raises(ValueError):
        conv2d(torch.zeros(1, 2, 2), torch.ones(1, 1, 5, 5))


@pytest.mark.parametrize("shape", [(1, 4, 4), (2, 3, 5), (3, 2, 2)])
def test_conv_gradient(f64, shape):
    gen = torch.Generator().manual_seed(shape[1])
    x = torch.randn(*shape, generator=gen)
    w = torch.randn(2, shape[0], 3, 3, generator=gen)
    probe = torch.randn(2, shape[1], shape[2], generator=gen)
    assert_gradients_match(lambda x, w: (conv2d(x, w, padding=1) * probe).sum(), [x, w])


def test_resample_examples():
    const = torch.full((2, 3, 3), 4.0)
    up = resample(const, 2)
    assert up.shape == (2, 6, 6) and torch.all(up == 4.0)
    m = torch.tensor([[0.0, 1.0], [2.0, 3.0]])
    assert torch.equal(resample(m, 2), torch.tensor([[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 3, 3], [2, 2, 3, 3]], dtype=m.dtype))
    x = torch.randn(1, 4, 4)
    assert resample(resample(x, 0.5), 2).shape == (1, 4, 4)
    assert torch.equal(resample(x, 0.5), x[:, ::2, ::2])


def test_resample_odd_downsample_errors():
    with pytest.raises(ValueError):
        resample(torch.zeros(1, 3, 4), 0.5)


def test_forward_is_bit_deterministic():
    gen = torch.Generator().manual_seed(9)
    x = torch.randn(2, 3, 8, 8, generator=gen)
    w = torch.randn(4, 3, 3, 3, generator=gen)
    assert torch.equal(conv2d(x, w, padding=1), conv2d(x, w, padding=1))
