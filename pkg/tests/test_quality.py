import logging

import numpy as np
import pytest

from symlp import lp, quality, symbolic, warp
from symlp.errors import DimensionMismatch
from symlp.imaging import PatchSpec, extract_bbox


def test_trace_ppt_examples(rng):
    assert quality.trace_ppt(np.zeros((6, 10))) == 0.0
    assert quality.trace_ppt(np.eye(6)) == 6.0
    P = rng.normal(size=(6, 37))
    oracle = 0.0
    for a in range(6):
        for c in range(37):
            oracle += P[a, c] * P[a, c]
    assert quality.trace_ppt(P) == pytest.approx(oracle, rel=1e-12)


def test_exact_model_has_zero_error(rng):
    P = rng.normal(size=(6, 200))
    G = rng.normal(size=(6, 6))
    E = G.T @ P
    A = lp.learn_jd(P, E, ridge=0.0)
    report = quality.expected_sq_error(A, P @ E.T, quality.trace_ppt(P))
    assert report.e2 == pytest.approx(0.0, abs=1e-8)


def test_zero_predictor_gives_trace(rng):
    P = rng.normal(size=(6, 50))
    E = rng.normal(size=(10, 50))
    tr = quality.trace_ppt(P)
    report = quality.expected_sq_error(np.zeros((6, 10)), P @ E.T, tr, keypoint=4)
    assert report == quality.QualityReport(4, tr, tr, 0.0)


@pytest.mark.parametrize("seed", range(10))
def test_matches_dense_residual_trace(seed):
    rng = np.random.default_rng(seed)
    P = rng.normal(size=(6, 300))
    E = rng.normal(size=(25, 300)) + 0.3 * rng.normal(size=(25, 6)) @ P
    A = lp.learn_jd(P, E, ridge=0.0)
    R = A.A @ E - P
    oracle = np.trace(R @ R.T)
    report = quality.expected_sq_error(A, P @ E.T, quality.trace_ppt(P))
    assert report.e2 == pytest.approx(oracle, rel=1e-8)
    assert report.e2 >= -1e-8
    assert report.e2 == report.tr_ppt - report.tr_a_lin


def test_symbolic_terms_give_same_error(textured):
    spec = PatchSpec(9)
    ranges = warp.WarpRanges.symmetric(1.0, 0.2)
    model = symbolic.build_model(spec, ranges, 800, 3)
    center = (120, 180)
    u = extract_bbox(textured, center, model.bbox)
    A = symbolic.learn_symbolic(model, u, ridge=0.0)
    lin, _ = symbolic.symbolic_terms(model, u)
    report = quality.expected_sq_error(A, lin, model.tr_ppt)
    P = model.warps()
    R = A.A @ lp.build_error_matrix(textured, center, spec, P) - P
    assert report.e2 == pytest.approx(np.sum(R * R), rel=1e-8)


def test_shape_mismatch():
    with pytest.raises(DimensionMismatch):
        quality.expected_sq_error(np.zeros((6, 9)), np.zeros((6, 8)), 1.0)


def test_mismatched_inputs_warn(caplog, rng):
    lin = rng.normal(size=(6, 9))
    with caplog.at_level(logging.WARNING, logger="symlp.quality"):
        quality.expected_sq_error(lin, lin, 1.0)
    assert "negative expected error" in caplog.text


def reports(scores):
    return [quality.QualityReport(k, v, 1.0, 1.0 - v) for k, v in scores.items()]


def test_ranking_examples():
    assert quality.rank_keypoints([], 3) == []
    ranked = quality.rank_keypoints(reports({3: 0.5, 1: 0.2, 2: 0.9}), 2)
    assert [r.keypoint for r in ranked] == [1, 3]
    ties = quality.rank_keypoints(reports({5: 0.1, 2: 0.1, 9: 0.1}))
    assert [r.keypoint for r in ties] == [2, 5, 9]


def test_median_error_grows_with_observation_noise(textured):
    # each training observation gets its own white noise; 50 draws per level
    spec = PatchSpec(9)
    P = warp.sample_warps(warp.WarpRanges.symmetric(1.0, 0.2), 1000, 1)
    tr = quality.trace_ppt(P)
    E0 = lp.build_error_matrix(textured, (160, 160), spec, P)
    medians = []
    for sigma in (0.0, 0.005, 0.01, 0.02, 0.05, 0.1):
        e2 = []
        for trial in range(50):
            E = E0 + np.random.default_rng([trial, 7]).normal(0.0, sigma, E0.shape)
            e2.append(quality.expected_sq_error(lp.learn_jd(P, E), P @ E.T, tr).e2)
        medians.append(np.median(e2))
    assert np.all(np.diff(medians) >= 0)
