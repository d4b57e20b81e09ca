"""Ground-truth instance extraction and minimum-cost bipartite matching."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass
class GroundTruthInstance:
    mask: np.ndarray  # (H, W) bool, one 4-connected component
    box: tuple[float, float, float, float]  # (cx, cy, w, h), normalized by image size


def extract_gt_instances(mask: np.ndarray) -> list[GroundTruthInstance]:
    """Split a binary mask into 4-connected components with tight normalized boxes.

    Boxes use pixel edges: a component spanning columns ``x0..x1`` covers
    ``[x0, x1 + 1) / W`` horizontally.
    """
    mask = np.asarray(mask).astype(bool)
    H, W = mask.shape
    labels, count = ndimage.label(mask)  # default structure is 4-connectivity
    instances = []
    for k, sl in enumerate(ndimage.find_objects(labels), start=1):
        ys, xs = sl
        x0, x1 = xs.start / W, xs.stop / W
        y0, y1 = ys.start / H, ys.stop / H
        box = ((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)
        instances.append(GroundTruthInstance(labels == k, box))
    return instances


def hungarian_match(cost: np.ndarray) -> list[tuple[int, int]]:
    """Minimum-cost assignment of every column (ground truth) to a distinct row (query).

    ``cost`` is (Q, G) with G <= Q. Returns ``(query, gt)`` pairs sorted by gt.
    Shortest augmenting paths with dual potentials, O(G^2 Q); on ties the scan
    order favours lower query indices.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    Q, G = cost.shape
    if G > Q:
        raise ValueError(f"more ground-truth instances ({G}) than queries ({Q})")
    if G == 0:
        return []
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix contains non-finite entries")

    # rows of the working problem are ground truths (n), columns are queries (m)
    a = cost.T
    n, m = G, Q
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=np.int64)  # owner[j] = 1-based row matched to column j
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, m + 1):
                if used[j]:
                    continue
                cur = a[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[owner[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    pairs = [(j - 1, int(owner[j]) - 1) for j in range(1, m + 1) if owner[j]]
    return sorted(pairs, key=lambda p: p[1])
