"""Synthetic test images."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..imaging import Image


def _normalise(a: np.ndarray, lo: float = 0.05, hi: float = 0.95) -> np.ndarray:
    a = a - a.min()
    span = a.max()
    if span == 0:
        return np.full_like(a, 0.5)
    return lo + (hi - lo) * a / span


def textured(size: int = 320, seed: int = 0) -> Image:
    """Band-limited noise plus random flat rectangles.

    The rectangles give well-separated corners; the noise gives every patch
    enough texture to constrain all six warp parameters.
    """
    rng = np.random.default_rng(seed)
    base = (ndimage.gaussian_filter(rng.normal(size=(size, size)), 1.2)
            + 0.6 * ndimage.gaussian_filter(rng.normal(size=(size, size)), 3.0) * 3.0)
    base = (base - base.mean()) / base.std()
    blocks = np.zeros((size, size))
    for _ in range(size // 4):
        w, h = rng.integers(6, size // 6, size=2)
        x, y = rng.integers(0, size - 6, size=2)
        blocks[y:y + h, x:x + w] = rng.uniform(-2.0, 2.0)
    blocks = ndimage.gaussian_filter(blocks, 0.7)
    return Image(_normalise(0.35 * base + blocks))


def smooth(size: int = 64, seed: int = 0, sigma: float = 3.0) -> Image:
    """Low-frequency texture for finite-difference and basin tests."""
    rng = np.random.default_rng(seed)
    return Image(_normalise(ndimage.gaussian_filter(rng.normal(size=(size, size)), sigma)))


def checkerboard(size: int = 64, square: int = 8, offset: int = 4):
    """Checkerboard image and its interior junctions as ``(x, y)`` pairs.

    Junctions sit between pixels; the returned points are the pixel at the
    lower-right of each junction.
    """
    idx = np.arange(size)
    cells = (idx - offset) // square
    board = ((cells[:, None] + cells[None, :]) % 2).astype(float)
    board[:offset] = 0.5
    board[:, :offset] = 0.5
    img = Image(0.1 + 0.8 * board)
    lines = [offset + k * square for k in range(1, size) if offset + k * square < size]
    junctions = [(x, y) for x in lines for y in lines]
    return img, junctions


def resolve(name: str) -> Image:
    """Load ``fixture:<kind>[:seed]`` or a PGM path."""
    from ..imaging import load_pgm

    if not name.startswith("fixture:"):
        return load_pgm(name)
    parts = name.split(":")
    kind = parts[1]
    seed = int(parts[2]) if len(parts) > 2 else 0
    if kind == "textured":
        return textured(seed=seed)
    if kind == "smooth":
        return smooth(size=128, seed=seed)
    if kind == "checker":
        return checkerboard(128, 8)[0]
    raise ValueError(f"unknown fixture {kind!r}")
