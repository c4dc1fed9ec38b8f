"""Grayscale images, patch sampling, gradients, corners and PGM files.

Images are ``float64`` arrays indexed ``[row, col]`` with intensities in
``[0, 1]``. Points are ``(x, y)`` = ``(col, row)`` pairs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage

from .errors import OutOfBounds, ParseError

PATTERNS = {"dense": 0, "strided": 1}


@dataclass(frozen=True, eq=False)
class Image:
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError("Image data must be 2-D")
        if not np.all(np.isfinite(data)):
            raise ValueError("Image contains non-finite values")
        if data.size and (data.min() < 0.0 or data.max() > 1.0):
            raise ValueError("Image intensities must lie in [0, 1]")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def __eq__(self, other):
        return isinstance(other, Image) and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True)
class PatchSpec:
    """Which pixels of a square patch are used.

    ``dense`` takes every pixel of the ``side x side`` grid; ``strided`` keeps
    every other row and column (the centre is always kept).
    """

    side: int = 9
    pattern: str = "dense"

    def __post_init__(self):
        if self.side < 3 or self.side % 2 == 0:
            raise ValueError(f"patch side must be odd and >= 3, got {self.side}")
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown patch pattern {self.pattern!r}")
        if self.n < 7:
            raise ValueError(f"patch selects {self.n} pixels, need at least 7")

    @property
    def half(self) -> int:
        return self.side // 2

    @property
    def pattern_id(self) -> int:
        return PATTERNS[self.pattern]

    @cached_property
    def offsets(self) -> np.ndarray:
        """Selected pixel offsets from the centre, ``(n, 2)`` as (x, y), row-major."""
        r = np.arange(-self.half, self.half + 1)
        ys, xs = np.meshgrid(r, r, indexing="ij")
        pts = np.column_stack([xs.ravel(), ys.ravel()]).astype(np.float64)
        if self.pattern == "strided":
            keep = (pts[:, 0] % 2 == 0) & (pts[:, 1] % 2 == 0)
            pts = pts[keep]
        return pts

    @property
    def n(self) -> int:
        return len(self.offsets)


@dataclass(frozen=True)
class BoundingBox:
    """Integer half-extents of a pixel box around a patch centre."""

    left: int
    right: int
    top: int
    bottom: int

    @property
    def width(self) -> int:
        return self.left + self.right + 1

    @property
    def height(self) -> int:
        return self.top + self.bottom + 1

    @property
    def l(self) -> int:  # noqa: E743
        return self.width * self.height

    @property
    def offsets(self) -> np.ndarray:
        xs = np.arange(-self.left, self.right + 1)
        ys = np.arange(-self.top, self.bottom + 1)
        yy, xx = np.meshgrid(ys, xs, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()]).astype(np.float64)

    def index(self, ix, iy):
        """Row-major box index of integer offsets; no bounds check."""
        return (np.asarray(iy) + self.top) * self.width + (np.asarray(ix) + self.left)

    def contains(self, ix, iy) -> np.ndarray:
        ix = np.asarray(ix)
        iy = np.asarray(iy)
        return (ix >= -self.left) & (ix <= self.right) & (iy >= -self.top) & (iy <= self.bottom)


def _check_inside(img: Image, xs, ys):
    if xs.size == 0:
        return
    if (xs.min() < 0.0 or ys.min() < 0.0
            or xs.max() > img.width - 1 or ys.max() > img.height - 1):
        raise OutOfBounds(
            f"sample locations x in [{xs.min():.3f}, {xs.max():.3f}], "
            f"y in [{ys.min():.3f}, {ys.max():.3f}] leave a "
            f"{img.width}x{img.height} image")


def sample(img: Image, pts) -> np.ndarray:
    """Bilinearly sample ``img`` at absolute subpixel points ``(k, 2)``."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    xs, ys = pts[:, 0], pts[:, 1]
    _check_inside(img, xs, ys)
    w, h = img.width, img.height
    # clamping keeps the 2x2 cell inside the image; the weight of the clamped side is then 0
    x0 = np.minimum(np.floor(xs), max(w - 2, 0))
    y0 = np.minimum(np.floor(ys), max(h - 2, 0))
    fx = xs - x0
    fy = ys - y0
    flat = img.data.ravel()
    idx = (y0 * w + x0).astype(np.intp)
    dx = 1 if w > 1 else 0
    dy = w if h > 1 else 0
    top = flat[idx] + fx * (flat[idx + dx] - flat[idx])
    bot = flat[idx + dy] + fx * (flat[idx + dy + dx] - flat[idx + dy])
    return top + fy * (bot - top)


def sample_with_gradient(img: Image, pts) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bilinear values and their exact spatial derivatives at ``pts``.

    The derivative is the one of the interpolant itself, so it is
    discontinuous across cell edges; on an edge the cell to the right
    (or below) is used.
    """
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    xs, ys = pts[:, 0], pts[:, 1]
    _check_inside(img, xs, ys)
    w, h = img.width, img.height
    x0 = np.minimum(np.floor(xs), max(w - 2, 0))
    y0 = np.minimum(np.floor(ys), max(h - 2, 0))
    fx = xs - x0
    fy = ys - y0
    flat = img.data.ravel()
    idx = (y0 * w + x0).astype(np.intp)
    dx = 1 if w > 1 else 0
    dy = w if h > 1 else 0
    a, b = flat[idx], flat[idx + dx]
    c, d = flat[idx + dy], flat[idx + dy + dx]
    top = a + fx * (b - a)
    bot = c + fx * (d - c)
    gx = (b - a) + fy * ((d - c) - (b - a))
    return top + fy * (bot - top), gx, bot - top


def bilinear_sample(img: Image, x) -> float:
    return float(sample(img, x)[0])


def _center(center) -> np.ndarray:
    c = np.asarray(center, dtype=np.float64).reshape(2)
    return c


def extract_template(img: Image, spec: PatchSpec, center) -> np.ndarray:
    """Patch intensities at integer locations, in ``spec.offsets`` order."""
    return sample(img, spec.offsets + _center(center))


def extract_bbox(img: Image, center, bbox: BoundingBox) -> np.ndarray:
    """Bounding-box intensities, row-major."""
    cx, cy = (int(v) for v in np.asarray(center).reshape(2))
    if (cx - bbox.left < 0 or cy - bbox.top < 0
            or cx + bbox.right > img.width - 1 or cy + bbox.bottom > img.height - 1):
        raise OutOfBounds(f"bounding box around ({cx}, {cy}) leaves the image")
    return img.data[cy - bbox.top:cy + bbox.bottom + 1,
                    cx - bbox.left:cx + bbox.right + 1].ravel().copy()


def gradient(img: Image, x) -> tuple[float, float]:
    gx, gy = gradients(img, np.asarray(x).reshape(1, 2))
    return float(gx[0]), float(gy[0])


def gradients(img: Image, pts) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradients at integer points ``(k, 2)``."""
    pts = np.asarray(pts).reshape(-1, 2)
    ix = np.rint(pts[:, 0]).astype(np.intp)
    iy = np.rint(pts[:, 1]).astype(np.intp)
    if ix.size and (ix.min() < 1 or iy.min() < 1
                    or ix.max() > img.width - 2 or iy.max() > img.height - 2):
        raise OutOfBounds("gradient needs a one-pixel margin inside the image")
    d = img.data
    gx = (d[iy, ix + 1] - d[iy, ix - 1]) / 2.0
    gy = (d[iy + 1, ix] - d[iy - 1, ix]) / 2.0
    return gx, gy


def harris_response(img: Image, sigma: float = 1.0, k: float = 0.04) -> np.ndarray:
    d = img.data
    gx = np.zeros_like(d)
    gy = np.zeros_like(d)
    gx[:, 1:-1] = (d[:, 2:] - d[:, :-2]) / 2.0
    gy[1:-1] = (d[2:] - d[:-2]) / 2.0
    sxx = ndimage.gaussian_filter(gx * gx, sigma, mode="constant")
    syy = ndimage.gaussian_filter(gy * gy, sigma, mode="constant")
    sxy = ndimage.gaussian_filter(gx * gy, sigma, mode="constant")
    return sxx * syy - sxy * sxy - k * (sxx + syy) ** 2


def _plateau_peaks(R: np.ndarray) -> np.ndarray:
    """3x3 maxima keeping one pixel per plateau of tied maxima.

    A pixel must beat the neighbours that precede it in raster order and
    match or beat the rest, so the first pixel of a tie wins.
    """
    h, w = R.shape
    pad = np.pad(R, 1, constant_values=-np.inf)
    peaks = np.ones_like(R, dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            nb = pad[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
            peaks &= (R > nb) if (dy, dx) < (0, 0) else (R >= nb)
    return peaks


def detect_corners(img: Image, max_count: int = 500, min_score: float = 1e-6,
                   border_margin: int = 0, extent: int = 0) -> list[tuple[int, int]]:
    """Harris corners with 3x3 non-maximum suppression.

    Returns ``(x, y)`` pixel coordinates by descending score, keeping only
    points at least ``border_margin + extent`` pixels from every border.
    """
    R = harris_response(img)
    peaks = _plateau_peaks(R) & (R > min_score)
    margin = border_margin + extent
    peaks[:margin] = False
    peaks[:, :margin] = False
    if margin:
        peaks[-margin:] = False
        peaks[:, -margin:] = False
    ys, xs = np.nonzero(peaks)
    scores = R[ys, xs]
    # ties broken by raster order for repeatability
    order = np.lexsort((xs, ys, -scores))[:max_count]
    return [(int(xs[i]), int(ys[i])) for i in order]


def _pgm_tokens(raw: bytes, count: int):
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace() and raw[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ParseError("truncated PGM header")
        tokens.append(raw[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def load_pgm(path) -> Image:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] != b"P5":
        raise ParseError(f"{os.fspath(path)}: not a binary PGM (magic {raw[:2]!r})")
    tokens, offset = _pgm_tokens(raw, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ParseError(f"bad PGM header: {exc}") from None
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise ParseError(f"bad PGM header values {width}x{height} maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    body = raw[offset:offset + need]
    if len(body) != need:
        raise ParseError(f"PGM raster truncated: {len(body)} of {need} bytes")
    data = np.frombuffer(body, dtype=dtype).reshape(height, width)
    return Image(np.minimum(data.astype(np.float64) / maxval, 1.0))


def save_pgm(img: Image, path, maxval: int = 255) -> None:
    if not 0 < maxval < 65536:
        raise ValueError("maxval must be in 1..65535")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    raster = np.rint(img.data * maxval).astype(dtype)
    header = f"P5\n{img.width} {img.height}\n{maxval}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(raster.tobytes())
