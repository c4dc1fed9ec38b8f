"""Six-parameter affine warps.

A warp ``p = (p0, ..., p5)`` maps a point ``(x, y)`` given relative to the
patch centre to::

    x' = (1 + p0) x + p1 y + p2
    y' = p3 x + (1 + p4) y + p5

Parameter vectors are plain ``float64`` numpy arrays of shape ``(6,)``.
Warp matrices (one warp per column) have shape ``(6, m)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularWarp

IDENTITY = np.zeros(6)

_DET_EPS = 1e-12


def as_params(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64).reshape(6)
    if not np.all(np.isfinite(p)):
        raise ValueError(f"warp parameters must be finite, got {p}")
    return p


def translation(tx: float, ty: float) -> np.ndarray:
    return np.array([0.0, 0.0, tx, 0.0, 0.0, ty])


def to_matrix(p) -> np.ndarray:
    """Return the 2x3 affine matrix of ``p``."""
    p = as_params(p)
    return np.array([[1.0 + p[0], p[1], p[2]],
                     [p[3], 1.0 + p[4], p[5]]])


def from_matrix(M) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    return np.array([M[0, 0] - 1.0, M[0, 1], M[0, 2],
                     M[1, 0], M[1, 1] - 1.0, M[1, 2]])


def apply(M, x) -> np.ndarray:
    """Map points through a 2x3 matrix.

    ``x`` may be a single ``(x, y)`` pair or an array of shape ``(k, 2)``.
    """
    M = np.asarray(M, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    return x @ M[:, :2].T + M[:, 2]


def warp_points(p, pts) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    pts = np.asarray(pts, dtype=np.float64)
    x = pts[..., 0]
    y = pts[..., 1]
    return np.stack([(1.0 + p[0]) * x + p[1] * y + p[2],
                     p[3] * x + (1.0 + p[4]) * y + p[5]], axis=-1)


def compose(p_outer, p_inner) -> np.ndarray:
    """Warp equivalent to applying ``p_inner`` first, then ``p_outer``."""
    a0, a1, a2, a3, a4, a5 = np.asarray(p_outer, dtype=np.float64).tolist()
    b0, b1, b2, b3, b4, b5 = np.asarray(p_inner, dtype=np.float64).tolist()
    a0 += 1.0
    a4 += 1.0
    b0 += 1.0
    b4 += 1.0
    return np.array([a0 * b0 + a1 * b3 - 1.0, a0 * b1 + a1 * b4, a0 * b2 + a1 * b5 + a2,
                     a3 * b0 + a4 * b3, a3 * b1 + a4 * b4 - 1.0, a3 * b2 + a4 * b5 + a5])


def invert(p) -> np.ndarray:
    a0, a1, a2, a3, a4, a5 = np.asarray(p, dtype=np.float64).tolist()
    a0 += 1.0
    a4 += 1.0
    det = a0 * a4 - a1 * a3
    if not abs(det) >= _DET_EPS:
        raise SingularWarp(f"warp linear part is singular (det={det:.3g})")
    i0, i1, i3, i4 = a4 / det, -a1 / det, -a3 / det, a0 / det
    return np.array([i0 - 1.0, i1, -(i0 * a2 + i1 * a5),
                     i3, i4 - 1.0, -(i3 * a2 + i4 * a5)])


def jacobian(pts) -> np.ndarray:
    """d(warp(p, x))/dp for every point, shape ``(k, 2, 6)``.

    The affine Jacobian does not depend on ``p``.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    k = len(pts)
    J = np.zeros((k, 2, 6))
    J[:, 0, 0] = pts[:, 0]
    J[:, 0, 1] = pts[:, 1]
    J[:, 0, 2] = 1.0
    J[:, 1, 3] = pts[:, 0]
    J[:, 1, 4] = pts[:, 1]
    J[:, 1, 5] = 1.0
    return J


@dataclass(frozen=True)
class WarpRanges:
    """Closed per-parameter sampling intervals.

    ``lo`` and ``hi`` have six entries each; every interval must contain 0.
    """

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 6 or len(hi) != 6:
            raise ValueError("WarpRanges needs six lower and six upper bounds")
        for i, (a, b) in enumerate(zip(lo, hi)):
            if not (np.isfinite(a) and np.isfinite(b)):
                raise ValueError(f"range {i} is not finite")
            if a > b:
                raise ValueError(f"range {i}: lower bound {a} exceeds upper bound {b}")
            if a > 0.0 or b < 0.0:
                raise ValueError(f"range {i} = [{a}, {b}] does not contain 0")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def symmetric(cls, translation: float, other: float) -> "WarpRanges":
        """Ranges of ``+-translation`` for p2, p5 and ``+-other`` for the rest."""
        half = np.array([other, other, translation, other, other, translation], dtype=float)
        return cls(tuple(-half), tuple(half))

    @classmethod
    def zero(cls) -> "WarpRanges":
        return cls((0.0,) * 6, (0.0,) * 6)

    def as_array(self) -> np.ndarray:
        """Return the ranges as a ``(6, 2)`` array of ``[lo, hi]`` rows."""
        return np.column_stack([self.lo, self.hi])

    def contains(self, P, atol: float = 0.0) -> np.ndarray:
        P = np.asarray(P, dtype=np.float64).reshape(6, -1)
        lo = np.asarray(self.lo)[:, None] - atol
        hi = np.asarray(self.hi)[:, None] + atol
        return np.all((P >= lo) & (P <= hi), axis=0)

    def is_zero(self) -> bool:
        return all(v == 0.0 for v in self.lo + self.hi)

    def scaled(self, factor: float) -> "WarpRanges":
        return WarpRanges(tuple(factor * v for v in self.lo),
                          tuple(factor * v for v in self.hi))

    def issubset(self, other: "WarpRanges") -> bool:
        return all(a >= c and b <= d for a, b, c, d in
                   zip(self.lo, self.hi, other.lo, other.hi))


def sample_warps(ranges: WarpRanges, m: int, seed: int) -> np.ndarray:
    """Draw ``m`` warps, each parameter uniform over its interval.

    The stream is ``numpy.random.default_rng(seed)`` (PCG64 seeded through
    SeedSequence) consumed as a single ``uniform(size=(m, 6))`` call in
    row-major order, so column ``c`` of the result uses draws ``6c .. 6c+5``.
    Models saved to disk depend on this mapping; do not change it.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    rng = np.random.default_rng(seed)
    lo = np.asarray(ranges.lo)
    hi = np.asarray(ranges.hi)
    draws = rng.uniform(size=(m, 6))
    return np.ascontiguousarray((lo + draws * (hi - lo)).T)
