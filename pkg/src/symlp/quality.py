"""Expected squared alignment error of a linear predictor and keypoint ranking."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class QualityReport:
    keypoint: int
    e2: float
    tr_ppt: float
    tr_a_lin: float


def trace_ppt(P) -> float:
    P = np.asarray(P, dtype=np.float64)
    return float(np.sum(P * P))


def expected_sq_error(A, lin, tr_ppt: float, keypoint: int = 0) -> QualityReport:
    """``e2 = Tr(P P^T) - Tr(A (P E^T))``.

    ``A`` may be a LinearPredictor or a ``6 x n`` array; ``lin`` is ``P E^T``
    for the same patch. Cost is ``O(6n)`` whatever the number of warps.
    """
    A = np.asarray(getattr(A, "A", A), dtype=np.float64)
    lin = np.asarray(lin, dtype=np.float64)
    if A.shape != lin.shape or A.shape[0] != 6:
        raise DimensionMismatch(f"predictor {A.shape} and linear term {lin.shape} differ")
    tr_a_lin = float(np.einsum("ab,ab->", A, lin))
    e2 = tr_ppt - tr_a_lin
    if e2 < -1e-6 * tr_ppt:
        log.warning("keypoint %d: negative expected error %.3g; predictor and linear "
                    "term probably come from different patches", keypoint, e2)
    return QualityReport(keypoint, e2, tr_ppt, tr_a_lin)


def rank_keypoints(reports, k: int | None = None) -> list[QualityReport]:
    """Reports by ascending expected error, ties by keypoint id, at most ``k``."""
    ranked = sorted(reports, key=lambda r: (r.e2, r.keypoint))
    return ranked if k is None else ranked[:k]
