"""Linear predictors learned directly from an error matrix.

``P`` is the ``6 x m`` warp matrix, ``E`` the ``n x m`` error matrix whose
column ``c`` holds the intensity change of the template under warp ``c``.
A predictor ``A`` (``6 x n``) maps an intensity residual to a warp update.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import linalg

from . import warp
from .energy import AlignResult
from .errors import DimensionMismatch, SingularSystem
from .imaging import Image, PatchSpec, extract_template, sample
from .warp import WarpRanges

RIDGE_SCALE = 1e-8


@dataclass(frozen=True, eq=False)
class LinearPredictor:
    A: np.ndarray
    learner: str
    m: int
    spec: PatchSpec | None = None
    ranges: WarpRanges | None = None

    def __post_init__(self):
        if self.A.ndim != 2 or self.A.shape[0] != 6:
            raise DimensionMismatch(f"predictor must be 6 x n, got {self.A.shape}")
        if not np.all(np.isfinite(self.A)):
            raise SingularSystem(f"{self.learner}: predictor has non-finite entries")


def default_ridge(M: np.ndarray) -> float:
    """Scale-aware regulariser: ``1e-8 * trace(M) / dim``."""
    return RIDGE_SCALE * float(np.trace(M)) / M.shape[0]


def spd_solve(M: np.ndarray, B: np.ndarray, ridge: float | None = None) -> np.ndarray:
    """Solve ``(M + ridge I) X = B`` for symmetric ``M``.

    ``ridge=None`` selects :func:`default_ridge`. Raises SingularSystem if the
    regularised matrix is not numerically positive definite.
    """
    if ridge is None:
        ridge = default_ridge(M)
    K = M + ridge * np.eye(M.shape[0])
    scale = float(np.max(np.abs(np.diag(K)))) if K.size else 0.0
    if not scale > 0.0:
        raise SingularSystem("normal matrix is zero")
    try:
        factor = linalg.cho_factor(K, check_finite=True)
    except linalg.LinAlgError:
        raise SingularSystem("normal matrix is not positive definite") from None
    diag = np.abs(np.diag(factor[0]))
    if diag.min() ** 2 <= np.finfo(float).eps * scale * K.shape[0]:
        raise SingularSystem("normal matrix is numerically singular")
    return linalg.cho_solve(factor, B)


def _check_pe(P, E):
    P = np.asarray(P, dtype=np.float64)
    E = np.asarray(E, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != 6:
        raise DimensionMismatch(f"warp matrix must be 6 x m, got {P.shape}")
    if E.ndim != 2 or E.shape[1] != P.shape[1]:
        raise DimensionMismatch(f"error matrix {E.shape} does not match warp matrix {P.shape}")
    return P, E


def warped_offsets(offsets: np.ndarray, P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Warped x and y of every offset under every warp column, each ``(n, m)``."""
    x = offsets[:, 0:1]
    y = offsets[:, 1:2]
    wx = (1.0 + P[0]) * x + P[1] * y + P[2]
    wy = P[3] * x + (1.0 + P[4]) * y + P[5]
    return wx, wy


def build_error_matrix(img: Image, center, spec: PatchSpec, P) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64).reshape(6, -1)
    c = np.asarray(center, dtype=np.float64).reshape(2)
    template = extract_template(img, spec, c)
    wx, wy = warped_offsets(spec.offsets, P)
    pts = np.column_stack([(wx + c[0]).ravel(), (wy + c[1]).ravel()])
    return sample(img, pts).reshape(wx.shape) - template[:, None]


def learn_jd(P, E, ridge: float | None = None) -> LinearPredictor:
    """``A = P E^T (E E^T + ridge I)^-1``."""
    P, E = _check_pe(P, E)
    A = spd_solve(E @ E.T, E @ P.T, ridge).T
    return LinearPredictor(A, "jd", P.shape[1])


@dataclass(frozen=True, eq=False)
class DctMapping:
    """Orthonormal 2-D DCT of a rasterised ``h x h`` patch.

    ``W[k]`` is the coefficient ``(i, j)`` with ``k = i*h + j``. ``order``
    lists coefficients by ascending ``i + j``, ties by ascending ``i``;
    ``W_r`` keeps the first ``r`` of them.
    """

    C: np.ndarray
    W: np.ndarray
    order: np.ndarray
    r: int

    @property
    def h(self) -> int:
        return self.C.shape[0]

    @cached_property
    def W_r(self) -> np.ndarray:
        return self.W[self.order[:self.r]]


def dct_matrix(h: int) -> np.ndarray:
    i = np.arange(h)[:, None]
    j = np.arange(h)[None, :]
    alpha = np.where(i == 0, 1.0, 2.0)
    return np.sqrt(alpha / h) * np.cos(np.pi * (2 * j + 1) * i / (2 * h))


def build_dct_mapping(h: int, r: int) -> DctMapping:
    if not 1 <= r <= h * h:
        raise ValueError(f"retained count r={r} must lie in 1..{h * h}")
    C = dct_matrix(h)
    # column k of W is C B_k C^T rasterised, which is kron(C, C)
    W = np.kron(C, C)
    i, j = np.divmod(np.arange(h * h), h)
    order = np.lexsort((i, i + j))
    return DctMapping(C, W, order, r)


def _check_dct(mapping: DctMapping, E):
    if E.shape[0] != mapping.W.shape[1]:
        raise DimensionMismatch(
            f"DCT mapping for {mapping.h}x{mapping.h} needs a dense patch, "
            f"error matrix has {E.shape[0]} rows")


def learn_dct(P, E, mapping: DctMapping, ridge: float | None = None) -> LinearPredictor:
    """``A = P Er^T (Er Er^T + ridge I)^-1 W_r`` with ``Er = W_r E``."""
    P, E = _check_pe(P, E)
    _check_dct(mapping, E)
    Wr = mapping.W_r
    Er = Wr @ E
    A = spd_solve(Er @ Er.T, Er @ P.T, ridge).T @ Wr
    return LinearPredictor(A, f"dct-{mapping.r}", P.shape[1])


def _hp_from_d(D: np.ndarray, ridge) -> np.ndarray:
    return spd_solve(D.T @ D, D.T, ridge)


def _ppt_inverse_map(P: np.ndarray) -> np.ndarray:
    """``P^T (P P^T)^-1``, shape ``m x 6``."""
    return spd_solve(P @ P.T, P, ridge=0.0).T


def learn_hp(P, E, ridge: float | None = None) -> LinearPredictor:
    """Re-formulated learner: ``D = E P^T (P P^T)^-1``, ``A = (D^T D + ridge I)^-1 D^T``."""
    P, E = _check_pe(P, E)
    D = E @ _ppt_inverse_map(P)
    return LinearPredictor(_hp_from_d(D, ridge), "hp", P.shape[1])


def learn_hpdct(P, E, mapping: DctMapping, ridge: float | None = None) -> LinearPredictor:
    """Hybrid learner on ``D = W_r^T (W_r E) P^T (P P^T)^-1``."""
    P, E = _check_pe(P, E)
    _check_dct(mapping, E)
    Wr = mapping.W_r
    D = Wr.T @ ((Wr @ E) @ _ppt_inverse_map(P))
    return LinearPredictor(_hp_from_d(D, ridge), f"hpdct-{mapping.r}", P.shape[1])


def predict(lp: LinearPredictor, img: Image, center, template, p0=None,
            iterations: int = 1, residual: bool = False) -> AlignResult:
    """Apply ``dp = A (I(p) - T)`` and ``p <- p o dp^-1`` ``iterations`` times.

    The final SSD is only evaluated when ``residual`` is set; otherwise the
    result carries ``residual=None``.
    """
    A = lp.A
    offsets = lp.spec.offsets if lp.spec is not None else None
    if offsets is None or len(offsets) != A.shape[1]:
        raise DimensionMismatch("predictor has no patch spec matching its width")
    center = np.asarray(center, dtype=np.float64)
    p = warp.IDENTITY.copy() if p0 is None else warp.as_params(p0).copy()
    for _ in range(iterations):
        di = sample(img, center + warp.warp_points(p, offsets)) - template
        p = warp.compose(p, warp.invert(A @ di))
    res = None
    if residual:
        r = sample(img, center + warp.warp_points(p, offsets)) - template
        res = float(r @ r)
    return AlignResult(p, iterations, res, True)


def learn(method: str, P, E, mapping: DctMapping | None = None,
          ridge: float | None = None) -> LinearPredictor:
    """Dispatch on a method tag: ``jd``, ``hp``, ``dct-r`` or ``hpdct-r``."""
    base = method.split("-")[0]
    if base == "jd":
        return learn_jd(P, E, ridge)
    if base == "hp":
        return learn_hp(P, E, ridge)
    if mapping is None:
        raise ValueError(f"{method} needs a DCT mapping")
    if base == "dct":
        return learn_dct(P, E, mapping, ridge)
    if base == "hpdct":
        return learn_hpdct(P, E, mapping, ridge)
    raise ValueError(f"unknown learner {method!r}")
