"""Binary PPM (P6) and PGM (P5) reading and writing, 8-bit only."""
from __future__ import annotations

from pathlib import Path

import numpy as np


def write_ppm(path: Path, rgb: np.ndarray) -> None:
    """Write an (H, W, 3) uint8 array."""
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("PPM data must be (H, W, 3)")
    H, W, _ = rgb.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (W, H) + rgb.tobytes())


def write_pgm(path: Path, gray: np.ndarray) -> None:
    gray = np.ascontiguousarray(gray, dtype=np.uint8)
    if gray.ndim != 2:
        raise ValueError("PGM data must be (H, W)")
    H, W = gray.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (W, H) + gray.tobytes())


def _read(path: Path, magic: bytes) -> tuple[int, int, bytes]:
    raw = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != magic:
        raise ValueError(f"{path}: expected {magic.decode()} header, got {tokens[0]!r}")
    if tokens[3] != b"255":
        raise ValueError(f"{path}: only 8-bit maps are supported")
    return int(tokens[1]), int(tokens[2]), raw[pos + 1:]


def read_ppm(path: Path) -> np.ndarray:
    W, H, data = _read(path, b"P6")
    return np.frombuffer(data, dtype=np.uint8, count=H * W * 3).reshape(H, W, 3).copy()


def read_pgm(path: Path) -> np.ndarray:
    W, H, data = _read(path, b"P5")
    return np.frombuffer(data, dtype=np.uint8, count=H * W).reshape(H, W).copy()
