"""Loading a generated benchmark split into memory."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..errors import DataError
from .generate import INDEX_COLUMNS, SPLITS
from .pnm import read_pgm, read_ppm


@dataclass
class Split:
    ids: list[str]
    images: torch.Tensor  # (N, 3, H, W) float in [0, 1]
    masks: np.ndarray  # (N, H, W) bool
    labels: np.ndarray  # (N,) int, 1 = forged
    families: list[str]

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, idx) -> "Split":
        idx = list(idx)
        return Split([self.ids[i] for i in idx], self.images[idx], self.masks[idx], self.labels[idx],
                     [self.families[i] for i in idx])


def read_index(root: Path) -> list[dict[str, str]]:
    path = Path(root) / "index.tsv"
    if not path.exists():
        raise DataError(f"no index.tsv under {root}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        if tuple(reader.fieldnames or ()) != INDEX_COLUMNS:
            raise DataError(f"index.tsv columns must be {INDEX_COLUMNS}")
        return list(reader)


def count_splits(root: Path) -> dict[str, int]:
    counts = {s: 0 for s in SPLITS}
    for row in read_index(root):
        counts[row["split"]] = counts.get(row["split"], 0) + 1
    return counts


def load_split(root: Path, split: str) -> Split:
    if split not in SPLITS:
        raise DataError(f"unknown split {split!r}")
    root = Path(root)
    rows = [r for r in read_index(root) if r["split"] == split]
    if not rows:
        raise DataError(f"split {split!r} is empty")
    images, masks, labels = [], [], []
    for r in rows:
        try:
            img = read_ppm(root / r["image"])
            mask = read_pgm(root / r["mask"]) > 127
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read sample {r['id']}: {exc}") from exc
        forged = r["label"] == "forged"
        if forged != (r["family"] != "none") or forged != bool(mask.any()):
            raise DataError(f"sample {r['id']} violates label/mask/family consistency")
        images.append(img)
        masks.append(mask)
        labels.append(int(forged))
    arr = np.stack(images).transpose(0, 3, 1, 2).astype(np.float32) / 255.0
    return Split([r["id"] for r in rows], torch.from_numpy(arr).to(torch.get_default_dtype()),
                 np.stack(masks), np.array(labels), [r["family"] for r in rows])
