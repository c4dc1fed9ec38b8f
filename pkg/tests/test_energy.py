import numpy as np
import pytest

from symlp import energy, warp
from symlp.errors import OutOfBounds, SingularWarp
from symlp.imaging import Image, PatchSpec, extract_template, gradients


CENTER = np.array([32.0, 32.0])


def subpixel_template(img, spec, shift):
    """Template sampled at ``CENTER + shift`` so that ``translation(shift)`` is exact."""
    return extract_template(img, spec, CENTER + np.asarray(shift, dtype=float))


def test_steepest_descent_translation_columns_are_gradients(smooth, spec9):
    pts = CENTER + spec9.offsets
    gx, gy = gradients(smooth, pts)
    J = energy.steepest_descent(gx, gy, spec9.offsets)
    assert J.shape == (spec9.n, 6)
    np.testing.assert_array_equal(J[:, 2], gx)
    np.testing.assert_array_equal(J[:, 5], gy)


def test_steepest_descent_matches_warp_jacobian(smooth, spec9):
    pts = CENTER + spec9.offsets
    gx, gy = gradients(smooth, pts)
    dW = warp.jacobian(spec9.offsets)
    oracle = gx[:, None] * dW[:, 0, :] + gy[:, None] * dW[:, 1, :]
    np.testing.assert_allclose(energy.steepest_descent(gx, gy, spec9.offsets), oracle, atol=1e-15)


def test_constant_template_is_singular(spec9):
    img = Image(np.full((32, 32), 0.5))
    with pytest.raises(SingularWarp):
        energy.iclk_precompute(img, (16, 16), spec9)


def test_ramp_template_is_singular(spec9):
    # a linear ramp only constrains motion along its gradient
    ys, xs = np.mgrid[0:32, 0:32]
    img = Image((xs + 2.0 * ys) / 100.0)
    with pytest.raises(SingularWarp):
        energy.iclk_precompute(img, (16, 16), spec9)


def test_pseudo_inverse_is_left_inverse(textured, spec9):
    pre = energy.iclk_precompute(textured, (160, 160), spec9)
    np.testing.assert_allclose(pre.pinv @ pre.J, np.eye(6), atol=1e-8)


def test_ssd_zero_at_identity_on_own_image(smooth, spec9):
    T = extract_template(smooth, spec9, CENTER)
    assert energy.ssd(smooth, CENTER, T, spec9.offsets, warp.IDENTITY) == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_ssd_gradient_finite_difference(smooth, spec9, seed):
    rng = np.random.default_rng(seed)
    T = subpixel_template(smooth, spec9, (0.3, -0.2))
    p = rng.uniform(-0.05, 0.05, 6)
    g = energy.ssd_gradient(smooth, CENTER, T, spec9.offsets, p)
    eps = 1e-4
    base = energy.ssd(smooth, CENTER, T, spec9.offsets, p)
    fd = np.array([
        (energy.ssd(smooth, CENTER, T, spec9.offsets, p + eps * np.eye(6)[i]) - base) / eps
        for i in range(6)
    ])
    np.testing.assert_allclose(fd, g, rtol=0.05)


def test_zero_residual_leaves_parameters_unchanged(textured, spec9):
    c = np.array([160.0, 160.0])
    T = extract_template(textured, spec9, c)
    pre = energy.iclk_precompute(textured, c, spec9)
    for result in (energy.lk_refine(T, textured, c, spec9),
                   energy.iclk_refine(pre, textured, c),
                   energy.esm_refine(pre, textured, c)):
        np.testing.assert_array_equal(result.p, warp.IDENTITY)
        assert result.converged and result.iterations == 1


@pytest.mark.parametrize("shift", [(0.3, 0.0), (0.0, -0.3), (0.25, 0.2)])
def test_translation_recovered(smooth, spec9, shift):
    T = subpixel_template(smooth, spec9, shift)
    pre = energy.iclk_precompute(smooth, CENTER + shift, spec9)
    expected = warp.translation(*shift)
    for result in (energy.lk_refine(T, smooth, CENTER, spec9),
                   energy.iclk_refine(pre, smooth, CENTER),
                   energy.esm_refine(pre, smooth, CENTER)):
        assert result.converged
        assert result.iterations <= 10
        np.testing.assert_allclose(result.p, expected, atol=1e-3)


def test_iclk_agrees_with_forward_additive(smooth, spec9):
    shift = (0.3, 0.1)
    T = subpixel_template(smooth, spec9, shift)
    pre = energy.iclk_precompute(smooth, CENTER + shift, spec9)
    lk = energy.lk_refine(T, smooth, CENTER, spec9)
    ic = energy.iclk_refine(pre, smooth, CENTER)
    np.testing.assert_allclose(ic.p, lk.p, atol=1e-3)


def iterations_to_reach(refine, pre, img, center, expected, limit=15, tol=1e-3):
    """Smallest iteration count whose estimate is within ``tol`` of ``expected``.

    Divergence out of the image counts as never reaching it.
    """
    for k in range(1, limit + 1):
        try:
            p = refine(pre, img, center, max_iters=k, tol=0.0).p
        except OutOfBounds:
            break
        if np.max(np.abs(p - expected)) < tol:
            return k
    return limit + 1


@pytest.mark.parametrize("seed", range(20))
def test_esm_needs_no_more_iterations_than_iclk(smooth, spec9, seed):
    # shifts of half a pixel or more; below that the piecewise-linear slope of
    # the bilinear interpolant, not the second-order term, decides the race
    rng = np.random.default_rng(seed)
    c = CENTER + rng.integers(-8, 8, 2)
    shift = rng.uniform(0.5, 2.0, 2) * rng.choice([-1.0, 1.0], 2)
    pre = energy.iclk_precompute(smooth, c + shift, spec9)
    expected = warp.translation(*shift)
    ic = iterations_to_reach(energy.iclk_refine, pre, smooth, c, expected)
    esm = iterations_to_reach(energy.esm_refine, pre, smooth, c, expected)
    assert esm <= 10
    assert esm <= ic


def test_residual_non_increasing_in_basin(smooth, spec9):
    T = subpixel_template(smooth, spec9, (0.3, -0.2))
    pre = energy.iclk_precompute(smooth, CENTER + (0.3, -0.2), spec9)
    for result in (energy.lk_refine(T, smooth, CENTER, spec9, tol=0.0),
                   energy.iclk_refine(pre, smooth, CENTER, tol=0.0),
                   energy.esm_refine(pre, smooth, CENTER, tol=0.0)):
        h = np.asarray(result.history)
        assert np.all(np.diff(h) <= 1e-12 + 1e-9 * h[0])


def test_forced_iterations(smooth, spec9):
    pre = energy.iclk_precompute(smooth, CENTER + (0.2, 0.0), spec9)
    result = energy.iclk_refine(pre, smooth, CENTER, max_iters=7, tol=0.0)
    assert result.iterations == 7
    assert not result.converged


def reports_convergence(refine):
    try:
        return refine().converged
    except OutOfBounds:
        return False


def test_far_displacement_does_not_converge(textured, spec9):
    c = np.array([200.0, 120.0])
    T = extract_template(textured, spec9, c)
    pre = energy.iclk_precompute(textured, c, spec9)
    moved = c + (20.0, 0.0)
    assert not reports_convergence(lambda: energy.lk_refine(T, textured, moved, spec9))
    assert not reports_convergence(lambda: energy.iclk_refine(pre, textured, moved))
    assert not reports_convergence(lambda: energy.esm_refine(pre, textured, moved))
