"""Procedural forgery benchmark.

Authentic images are procedural textures carrying a camera fingerprint: a faint
2x2 mosaic pattern (as left by colour-filter demosaicing) plus sensor noise. A
forged image has one or two feathered regions replaced by one family's
manipulation, each of which disturbs the mosaic phase or amplitude;
the mask records every pixel the blend touched. Each sample is a pure function
of ``(seed, split, index)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from ..errors import DataError
from .pnm import write_pgm, write_ppm

FAMILIES = ("copy-move", "splice", "noise-inpaint", "blur-patch")
SPLITS = ("train", "val", "test-ood")
INDEX_COLUMNS = ("id", "image", "label", "mask", "family", "split")


@dataclass(frozen=True)
class DataConfig:
    n_train: int = 2000
    n_val: int = 500
    n_test: int = 500
    image_size: int = 64
    families: tuple[str, ...] = FAMILIES
    heldout_family: str = "copy-move"
    forged_fraction: float = 0.20  # target mean tampered-pixel share over forged images
    forged_share: float = 0.5  # share of forged samples in every split

    def __post_init__(self):
        for fam in (*self.families, self.heldout_family):
            if fam not in FAMILIES:
                raise DataError(f"unknown forgery family {fam!r}")
        if self.heldout_family not in self.families:
            raise DataError("held-out family must be one of the configured families")
        if len(self.train_families) == 0:
            raise DataError("no families left for train/val after holding one out")
        if min(self.n_train, self.n_val, self.n_test) <= 0:
            raise DataError("split counts must be positive")
        if self.image_size % 32:
            raise DataError("image size must be a multiple of 32")

    @property
    def train_families(self) -> tuple[str, ...]:
        return tuple(f for f in self.families if f != self.heldout_family)

    def count(self, split: str) -> int:
        return {"train": self.n_train, "val": self.n_val, "test-ood": self.n_test}[split]


@dataclass
class SampleRecord:
    id: str
    image: np.ndarray  # (H, W, 3) uint8
    mask: np.ndarray  # (H, W) bool
    family: str
    split: str
    label: str = field(init=False)

    def __post_init__(self):
        self.label = "authentic" if self.family == "none" else "forged"

    def validate(self) -> None:
        if self.family == "none":
            if self.mask.any():
                raise DataError(f"{self.id}: authentic sample with non-empty mask")
        elif not self.mask.any():
            raise DataError(f"{self.id}: forged sample with empty mask")


def value_noise(rng: np.random.Generator, size: int, octaves=(4, 8, 16)) -> np.ndarray:
    out = np.zeros((size, size))
    for k, cells in enumerate(octaves):
        grid = rng.random((cells + 1, cells + 1))
        up = ndimage.zoom(grid, size / cells, order=1)[:size, :size]
        out += up / (k + 1)
    out -= out.min()
    return out / max(out.max(), 1e-8)


def random_color(rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0.1, 0.9, size=3)


def base_image(rng: np.random.Generator, size: int) -> tuple[np.ndarray, float]:
    """Float (H, W, 3) texture in [0, 1] and the sensor-noise level applied to it."""
    kind = rng.integers(3)
    yy, xx = np.mgrid[0:size, 0:size] / size
    if kind == 0:
        n = value_noise(rng, size)
        c0, c1 = random_color(rng), random_color(rng)
        img = c0 + n[..., None] * (c1 - c0)
    elif kind == 1:
        theta = rng.uniform(0, 2 * math.pi)
        t = (math.cos(theta) * xx + math.sin(theta) * yy)
        t = (t - t.min()) / max(t.max() - t.min(), 1e-8)
        c0, c1 = random_color(rng), random_color(rng)
        img = c0 + t[..., None] * (c1 - c0)
        img = img + 0.15 * (value_noise(rng, size)[..., None] - 0.5)
    else:
        img = np.broadcast_to(random_color(rng), (size, size, 3)).copy()
        img = img + 0.1 * (value_noise(rng, size)[..., None] - 0.5)
        for _ in range(rng.integers(3, 8)):
            cx, cy = rng.uniform(0, 1, 2)
            r = rng.uniform(0.05, 0.25)
            if rng.random() < 0.5:
                shape = (xx - cx) ** 2 + (yy - cy) ** 2 < r**2
            else:
                shape = (abs(xx - cx) < r) & (abs(yy - cy) < r * rng.uniform(0.4, 1.0))
            img[shape] = random_color(rng)
    img = img + mosaic_pattern(size, rng.uniform(0.03, 0.05))
    sigma = rng.uniform(0.01, 0.025)
    img = img + rng.normal(0, sigma, img.shape)
    return np.clip(img, 0, 1), sigma


def mosaic_pattern(size: int, amplitude: float) -> np.ndarray:
    """Zero-mean Bayer-like pattern: red peaks at (0, 0), blue at (1, 1), green on the other two sites."""
    cell = np.zeros((2, 2, 3))
    cell[0, 0] = (3, -1, -1)
    cell[1, 1] = (-1, -1, 3)
    cell[0, 1] = cell[1, 0] = (-1, 1, -1)
    cell -= cell.mean(axis=(0, 1))
    return amplitude / 3 * np.tile(cell, (size // 2, size // 2, 1))


def region_mask(rng: np.random.Generator, size: int, fraction: float) -> np.ndarray:
    """Boolean ellipse or rectangle covering roughly ``fraction`` of the image."""
    area = fraction * size * size
    aspect = rng.uniform(0.6, 1.6)
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    if rng.random() < 0.5:
        a = math.sqrt(area * aspect / math.pi)
        b = area / (math.pi * a)
        cx = rng.uniform(a, size - a) if 2 * a < size else size / 2
        cy = rng.uniform(b, size - b) if 2 * b < size else size / 2
        mask = ((xx - cx) / a) ** 2 + ((yy - cy) / b) ** 2 <= 1
    else:
        w = min(math.sqrt(area * aspect), size - 2)
        h = min(area / w, size - 2)
        x0 = rng.uniform(0, size - w)
        y0 = rng.uniform(0, size - h)
        mask = (xx >= x0) & (xx < x0 + w) & (yy >= y0) & (yy < y0 + h)
    if not mask.any():
        mask[int(size / 2), int(size / 2)] = True
    return mask


def feather(mask: np.ndarray, width: float = 3.0) -> np.ndarray:
    """Blend weights ramping up from the region border; zero exactly outside the mask."""
    return np.clip(ndimage.distance_transform_edt(mask) / width, 0, 1)


def _copy_move(rng, img, mask, sigma):
    size = img.shape[0]
    ys, xs = np.nonzero(mask)
    cy, cx = ys.mean(), xs.mean()
    scale = rng.choice([-1, 1]) * rng.uniform(0.08, 0.2) + 1.0
    sy, sx = rng.uniform(0.2, 0.8, 2) * size
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    src_y = sy + (yy - cy) / scale
    src_x = sx + (xx - cx) / scale
    out = np.stack(
        [ndimage.map_coordinates(img[..., c], [src_y, src_x], order=1, mode="reflect") for c in range(3)], axis=-1
    )
    return out * rng.uniform(0.95, 1.05)


def _splice(rng, img, mask, sigma):
    donor, _ = base_image(rng, img.shape[0])
    # pasted at an arbitrary position, so the donor's mosaic phase does not line up
    dy, dx = [(1, 0), (0, 1), (1, 1)][rng.integers(3)]
    return np.roll(donor, (dy + 2 * rng.integers(8), dx + 2 * rng.integers(8)), axis=(0, 1))


def _noise_inpaint(rng, img, mask, sigma):
    smooth = ndimage.gaussian_filter(img, sigma=(4, 4, 0))
    return smooth + rng.normal(0, rng.uniform(0.05, 0.09), img.shape)


def _blur_patch(rng, img, mask, sigma):
    s = rng.uniform(1.2, 2.5)
    return ndimage.gaussian_filter(img, sigma=(s, s, 0))


MANIPULATIONS = {
    "copy-move": _copy_move,
    "splice": _splice,
    "noise-inpaint": _noise_inpaint,
    "blur-patch": _blur_patch,
}


def forge(rng: np.random.Generator, img: np.ndarray, sigma: float, family: str, fraction: float) -> tuple[np.ndarray, np.ndarray]:
    if family not in MANIPULATIONS:
        raise DataError(f"unknown forgery family {family!r}")
    size = img.shape[0]
    total = rng.uniform(0.4, 1.6) * fraction
    parts = [total] if rng.random() < 0.8 else [total * 0.6, total * 0.4]
    mask = np.zeros((size, size), dtype=bool)
    for part in parts:
        mask |= region_mask(rng, size, part)
    alpha = feather(mask)[..., None]
    tampered = MANIPULATIONS[family](rng, img, mask, sigma)
    return np.clip(alpha * tampered + (1 - alpha) * img, 0, 1), mask


def make_sample(config: DataConfig, seed: int, split: str, index: int) -> SampleRecord:
    rng = np.random.default_rng(np.random.SeedSequence([seed, SPLITS.index(split), index]))
    img, sigma = base_image(rng, config.image_size)
    forged = rng.random() < config.forged_share
    if forged:
        pool = (config.heldout_family,) if split == "test-ood" else config.train_families
        family = pool[rng.integers(len(pool))]
        img, mask = forge(rng, img, sigma, family, config.forged_fraction)
    else:
        family = "none"
        mask = np.zeros(img.shape[:2], dtype=bool)
    pixels = np.round(img * 255).astype(np.uint8)
    return SampleRecord(f"{split}-{index:05d}", pixels, mask, family, split)


def generate_dataset(config: DataConfig, seed: int, out: Path) -> list[SampleRecord]:
    """Write images, masks and ``index.tsv`` under ``out``."""
    out = Path(out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    lines = ["\t".join(INDEX_COLUMNS)]
    records = []
    for split in SPLITS:
        for i in range(config.count(split)):
            rec = make_sample(config, seed, split, i)
            rec.validate()
            image_rel = f"images/{rec.id}.ppm"
            mask_rel = f"masks/{rec.id}.pgm"
            write_ppm(out / image_rel, rec.image)
            write_pgm(out / mask_rel, rec.mask.astype(np.uint8) * 255)
            lines.append("\t".join([rec.id, image_rel, rec.label, mask_rel, rec.family, rec.split]))
            records.append(rec)
    (out / "index.tsv").write_text("\n".join(lines) + "\n")
    return records
