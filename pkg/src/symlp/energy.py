"""Energy-minimisation aligners: forward-additive LK, IC-LK and ESM.

All aligners estimate the warp ``p`` for which the observed image sampled
at ``center + warp(p, x)`` matches the template sampled at ``x``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import warp
from .errors import SingularWarp
from .imaging import (Image, PatchSpec, extract_template, sample,
                      sample_with_gradient)

DEFAULT_ITERS = 10
DEFAULT_TOL = 1e-4

# relative eigenvalue floor below which a 6x6 normal matrix counts as rank deficient
_RANK_RTOL = 1e-10


@dataclass
class AlignResult:
    p: np.ndarray
    iterations: int
    residual: float | None
    converged: bool
    history: list = field(default_factory=list, repr=False)


@dataclass(frozen=True, eq=False)
class IclkPrecomp:
    spec: PatchSpec
    template: np.ndarray
    J: np.ndarray
    pinv: np.ndarray


def steepest_descent(gx, gy, offsets) -> np.ndarray:
    """Rows ``grad(x_b) . dW/dp`` for an affine warp about the patch centre."""
    x = offsets[:, 0]
    y = offsets[:, 1]
    return np.column_stack([gx * x, gx * y, gx, gy * x, gy * y, gy])


def _normal_pinv(J: np.ndarray) -> np.ndarray:
    """``(J^T J)^-1 J^T`` via a Cholesky solve; refuses rank-deficient ``J``."""
    H = J.T @ J
    scale = np.trace(H)
    if not scale > 0.0:
        raise SingularWarp("steepest-descent image is identically zero")
    if np.linalg.eigvalsh(H)[0] <= _RANK_RTOL * scale:
        raise SingularWarp("steepest-descent image does not have full column rank")
    try:
        factor = linalg.cho_factor(H)
    except linalg.LinAlgError:
        raise SingularWarp("normal equations are not positive definite") from None
    return linalg.cho_solve(factor, J.T)


def _solve_ls(J: np.ndarray, r: np.ndarray) -> np.ndarray:
    return _normal_pinv(J) @ r


def warped_patch(img: Image, center, offsets, p) -> np.ndarray:
    return sample(img, np.asarray(center, dtype=np.float64) + warp.warp_points(p, offsets))


def ssd(img: Image, center, template, offsets, p) -> float:
    r = warped_patch(img, center, offsets, p) - template
    return float(r @ r)


def _subpixel_gradients(img: Image, pts) -> tuple[np.ndarray, np.ndarray]:
    ex = np.array([1.0, 0.0])
    ey = np.array([0.0, 1.0])
    gx = (sample(img, pts + ex) - sample(img, pts - ex)) / 2.0
    gy = (sample(img, pts + ey) - sample(img, pts - ey)) / 2.0
    return gx, gy


def ssd_gradient(img: Image, center, template, offsets, p) -> np.ndarray:
    """Analytic gradient of :func:`ssd` with respect to ``p`` (additive).

    Exact for the bilinear interpolant away from cell edges.
    """
    pts = np.asarray(center, dtype=np.float64) + warp.warp_points(p, offsets)
    vals, gx, gy = sample_with_gradient(img, pts)
    r = vals - template
    return 2.0 * steepest_descent(gx, gy, offsets).T @ r


def lk_refine(template, img: Image, center, spec: PatchSpec, p0=None,
              max_iters: int = DEFAULT_ITERS, tol: float = DEFAULT_TOL) -> AlignResult:
    """Forward-additive Lucas-Kanade; the steepest-descent image is rebuilt every iteration."""
    offsets = spec.offsets
    center = np.asarray(center, dtype=np.float64)
    template = np.asarray(template, dtype=np.float64)
    p = warp.IDENTITY.copy() if p0 is None else warp.as_params(p0).copy()
    history = []
    converged = False
    it = 0
    while it < max_iters:
        pts = center + warp.warp_points(p, offsets)
        r = sample(img, pts) - template
        history.append(float(r @ r))
        gx, gy = _subpixel_gradients(img, pts)
        dp = _solve_ls(steepest_descent(gx, gy, offsets), -r)
        p = p + dp
        it += 1
        if np.max(np.abs(dp)) < tol:
            converged = True
            break
    res = ssd(img, center, template, offsets, p)
    history.append(res)
    return AlignResult(p, it, res, converged, history)


def iclk_precompute(img: Image, center, spec: PatchSpec) -> IclkPrecomp:
    """Template, its steepest-descent image and pseudo-inverse.

    Raises SingularWarp when the template cannot constrain all six parameters.
    """
    pts = spec.offsets + np.asarray(center, dtype=np.float64)
    template = extract_template(img, spec, center)
    # sampled differences equal the pixel ones at integer centres and stay
    # consistent with the template at subpixel ones
    gx, gy = _subpixel_gradients(img, pts)
    J = steepest_descent(gx, gy, spec.offsets)
    return IclkPrecomp(spec, template, J, _normal_pinv(J))


def iclk_refine(pre: IclkPrecomp, img: Image, center, p0=None,
                max_iters: int = DEFAULT_ITERS, tol: float = DEFAULT_TOL) -> AlignResult:
    """Inverse-compositional LK with update ``p <- p o dp^-1``.

    ``tol <= 0`` forces exactly ``max_iters`` iterations.
    """
    offsets = pre.spec.offsets
    center = np.asarray(center, dtype=np.float64)
    p = warp.IDENTITY.copy() if p0 is None else warp.as_params(p0).copy()
    history = []
    converged = False
    it = 0
    while it < max_iters:
        r = warped_patch(img, center, offsets, p) - pre.template
        history.append(float(r @ r))
        dp = pre.pinv @ r
        p = warp.compose(p, warp.invert(dp))
        it += 1
        if np.max(np.abs(dp)) < tol:
            converged = True
            break
    res = ssd(img, center, pre.template, offsets, p)
    history.append(res)
    return AlignResult(p, it, res, converged, history)


def esm_refine(pre: IclkPrecomp, img: Image, center, p0=None,
               max_iters: int = DEFAULT_ITERS, tol: float = DEFAULT_TOL) -> AlignResult:
    """Efficient second-order minimisation with update ``p <- p o dp``.

    The step uses the mean of the template steepest-descent image and the one
    of the current re-warped image, the latter taken by central differences
    in the template frame.
    """
    offsets = pre.spec.offsets
    center = np.asarray(center, dtype=np.float64)
    p = warp.IDENTITY.copy() if p0 is None else warp.as_params(p0).copy()
    ex = np.array([1.0, 0.0])
    ey = np.array([0.0, 1.0])
    history = []
    converged = False
    it = 0
    while it < max_iters:
        r = warped_patch(img, center, offsets, p) - pre.template
        history.append(float(r @ r))
        gx = (warped_patch(img, center, offsets + ex, p)
              - warped_patch(img, center, offsets - ex, p)) / 2.0
        gy = (warped_patch(img, center, offsets + ey, p)
              - warped_patch(img, center, offsets - ey, p)) / 2.0
        J = 0.5 * (pre.J + steepest_descent(gx, gy, offsets))
        dp = _solve_ls(J, -r)
        p = warp.compose(p, dp)
        it += 1
        if np.max(np.abs(dp)) < tol:
            converged = True
            break
    res = ssd(img, center, pre.template, offsets, p)
    history.append(res)
    return AlignResult(p, it, res, converged, history)
