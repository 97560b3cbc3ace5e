"""Tests for the residual stacks, weighting, predictor, policy and solver."""

import numpy as np
import pytest

from homreg import (
    Mode,
    Photometric,
    ReferenceTemplate,
    SingularSystemError,
    SolverConfig,
    TemplateRegion,
    compute_weights,
    corner_rms_error,
    estimate,
    exp_lie,
    local_global_policy,
    normalize_det,
    scale_homography,
    translation,
    warp_points,
    zncc,
    zncc_predictor,
)
from homreg.features import _empty_feature_set
from homreg.image import build_pyramid, warp_template
from homreg.solver import (
    apply_update,
    assemble_and_solve,
    fb_residuals_and_jacobian,
    ib_residuals_and_jacobian,
)
from homreg.synthetic import warp_image
from fd_oracle import (
    fd_columns as _fd_columns,
    fractional_rows as _fractional_rows,
    perturbed_state as _perturbed_state,
    warp_column_scales as _warp_column_scales,
)


def _ramp_image(h, w, gu, gv, c):
    vv, uu = np.mgrid[0:h, 0:w].astype(float)
    return gu * uu + gv * vv + c


def test_ib_jacobian_matches_finite_differences(ref_image, reference):
    rng = np.random.default_rng(11)
    grid = reference.level(0).grid
    for _ in range(10):
        H = _perturbed_state(rng)
        photo = Photometric(1.0 + rng.uniform(-0.1, 0.1),
                            rng.uniform(-5, 5))

        def residual(Hx, px):
            y, _, _ = ib_residuals_and_jacobian(
                reference, 0, ref_image, Hx, px, esm=False)
            return y

        y, J, _ = ib_residuals_and_jacobian(
            reference, 0, ref_image, H, photo, esm=False)
        J_fd = _fd_columns(residual, H, photo, _warp_column_scales(H, grid))
        rows = _fractional_rows(H, grid)
        rows &= np.abs(J).max(axis=1) > 1e-6
        rel = np.abs(J_fd[rows] - J[rows]) / np.maximum(np.abs(J[rows]), 1.0)
        assert rel.max() < 1e-3


def test_fb_jacobian_matches_finite_differences():
    rng = np.random.default_rng(12)
    for _ in range(10):
        H = _perturbed_state(rng)
        q_star = rng.uniform(10, 90, size=(15, 2))
        q = warp_points(H, q_star) + rng.normal(0, 1.0, size=(15, 2))

        def residual(Hx, px):
            y, _ = fb_residuals_and_jacobian(q_star, q, Hx)
            return y

        y, J = fb_residuals_and_jacobian(q_star, q, H)
        J_fd = _fd_columns(residual, H, Photometric(),
                           _warp_column_scales(H, q_star))
        assert J[:, 8:].max() == 0.0
        rel = np.abs(J_fd - J) / np.maximum(np.abs(J), 1.0)
        assert rel.max() < 1e-5


def test_fb_jacobian_scale_consistency():
    # a coarse-level evaluation must reproduce the full-resolution residual
    rng = np.random.default_rng(13)
    H = translation(3.7, -1.2)
    q_star = rng.uniform(20, 80, size=(10, 2))
    q = rng.uniform(20, 80, size=(10, 2))
    y1, _ = fb_residuals_and_jacobian(q_star, q, H)
    H2 = scale_homography(H, 1, 2)
    y2, _ = fb_residuals_and_jacobian(q_star, q, H2, scale=2.0)
    assert np.allclose(y1, y2, atol=1e-10)


def test_esm_equals_first_order_at_exact_solution():
    # on a linear ramp both gradient estimates are exact, so the averaged
    # Jacobian coincides with the plain first-order one when the model and
    # the data agree
    img = _ramp_image(120, 160, 3.0, 5.0, 7.0)
    region = TemplateRegion(40, 30, 48, 48)
    ref = ReferenceTemplate(img, region, levels=1)

    A = np.array([[1.2, 0.0, 6.0], [0.0, 0.8, -4.0], [0.0, 0.0, 1.0]])
    vv, uu = np.mgrid[0:120, 0:160].astype(float)
    wx = (uu - 6.0) / 1.2
    wy = (vv + 4.0) / 0.8
    cur = 3.0 * wx + 5.0 * wy + 7.0

    _, J_esm, _ = ib_residuals_and_jacobian(ref, 0, cur, A, Photometric(),
                                            esm=True)
    _, J_first, _ = ib_residuals_and_jacobian(ref, 0, cur, A, Photometric(),
                                              esm=False)
    assert np.allclose(J_esm, J_first, atol=1e-9)


# ---------------------------------------------------------------------------
# residual conventions


def test_ib_residual_sign_on_brighter_image(ref_image, reference):
    y, _, _ = ib_residuals_and_jacobian(
        reference, 0, ref_image + 10.0, np.eye(3), Photometric())
    assert np.allclose(y, 10.0, atol=1e-12)


def test_ib_photometric_columns(ref_image, reference):
    _, J, m = ib_residuals_and_jacobian(
        reference, 0, ref_image, np.eye(3), Photometric())
    assert J.shape == (m, 10)
    data = reference.level(0)
    assert np.allclose(J[:, 8], data.values, atol=1e-12)
    assert np.allclose(J[:, 9], 1.0)


def test_fb_residual_hand_value():
    y, J = fb_residuals_and_jacobian(np.array([[0.0, 0.0]]),
                                     np.array([[3.0, 4.0]]), np.eye(3))
    assert np.allclose(y, [-3.0, -4.0])
    assert J.shape == (2, 10)


def test_template_lost_when_warp_leaves_frame(ref_image, reference):
    from homreg import TemplateLostError
    with pytest.raises(TemplateLostError):
        ib_residuals_and_jacobian(reference, 0, ref_image,
                                  translation(2000.0, 0.0), Photometric())


# ---------------------------------------------------------------------------
# weighting


def test_weights_without_matches():
    assert compute_weights(None) == (1.0, 0.0)


def test_weights_hand_values():
    w_ib, w_fb = compute_weights(0.0)
    assert w_fb == 0.0 and w_ib == 1.0
    w_ib, w_fb = compute_weights(np.log(2.0))
    assert abs(w_fb - 0.5) < 1e-12
    assert abs(w_ib - 0.5) < 1e-12
    w_ib, w_fb = compute_weights(10.0)
    assert abs(w_fb - 0.9999546000702375) < 1e-12


def test_weights_monotone_and_normalized():
    d = np.linspace(0.0, 20.0, 200)
    w = np.array([compute_weights(x) for x in d])
    assert np.all(np.diff(w[:, 1]) >= 0)
    assert np.allclose(w.sum(axis=1), 1.0, atol=1e-15)


def test_weights_reject_negative_distance():
    with pytest.raises(ValueError):
        compute_weights(-0.5)


# ---------------------------------------------------------------------------
# assembling and solving


def test_assemble_matches_explicit_normal_equations():
    rng = np.random.default_rng(20)
    m, n = 50, 8
    y_ib = rng.normal(size=m)
    J_ib = rng.normal(size=(m, 10))
    y_fb = rng.normal(size=2 * n)
    J_fb = rng.normal(size=(2 * n, 10))
    w = (0.3, 0.7)
    lam = 1e-4

    z, cost = assemble_and_solve(y_ib, J_ib, m, y_fb, J_fb, n, w, lam)

    Js = np.vstack([np.sqrt(w[0] / m) * J_ib, np.sqrt(w[1] / (2 * n)) * J_fb])
    ys = np.concatenate([np.sqrt(w[0] / m) * y_ib,
                         np.sqrt(w[1] / (2 * n)) * y_fb])
    A = Js.T @ Js
    A += lam * np.diag(np.diag(A))
    z_ref = np.linalg.solve(A, -Js.T @ ys)
    assert np.allclose(z, z_ref, atol=1e-10)
    assert cost == pytest.approx(float(ys @ ys))


def test_assemble_skips_zero_weight_blocks():
    rng = np.random.default_rng(21)
    y_ib = rng.normal(size=30)
    J_ib = rng.normal(size=(30, 10))
    z_a, _ = assemble_and_solve(y_ib, J_ib, 30, None, None, 0, (1.0, 0.0),
                                1e-4)
    junk = np.full((4, 10), np.nan)
    z_b, _ = assemble_and_solve(y_ib, J_ib, 30, np.full(4, np.nan), junk, 2,
                                (1.0, 0.0), 1e-4)
    assert np.allclose(z_a, z_b)


def test_assemble_raises_on_empty_and_singular():
    with pytest.raises(SingularSystemError):
        assemble_and_solve(None, None, 0, None, None, 0, (1.0, 0.0), 1e-4)
    y = np.ones(5)
    J = np.zeros((5, 10))
    with pytest.raises(SingularSystemError):
        assemble_and_solve(y, J, 5, None, None, 0, (1.0, 0.0), 1e-4)


def test_apply_update_composes_left_and_adds_photometric():
    rng = np.random.default_rng(22)
    H = _perturbed_state(rng)
    z = np.concatenate([rng.normal(0, 0.01, 8), [0.05, -2.0]])
    H2, photo2 = apply_update(H, Photometric(1.1, 3.0), z)
    assert abs(np.linalg.det(H2) - 1.0) < 1e-12
    assert np.allclose(H2, normalize_det(exp_lie(z[:8]) @ H), atol=1e-12)
    assert photo2.alpha == pytest.approx(1.15)
    assert photo2.beta == pytest.approx(1.0)
    H3, photo3 = apply_update(H, Photometric(1.1, 3.0), z[:8],
                              photometric=False)
    assert photo3.alpha == 1.1 and photo3.beta == 3.0


# ---------------------------------------------------------------------------
# predictor


def test_predictor_recovers_integer_translation(ref_image, reference):
    H_true = translation(8.0, -4.0)
    cur = warp_image(ref_image, H_true)
    pyr = build_pyramid(cur, 3)
    H = zncc_predictor(reference, pyr, np.eye(3), 15)
    assert np.allclose(H, H_true, atol=1e-12)


def test_predictor_composes_onto_prior_estimate(ref_image, reference):
    cur = warp_image(ref_image, translation(9.0, -3.0))
    pyr = build_pyramid(cur, 3)
    H = zncc_predictor(reference, pyr, translation(1.0, 1.0), 15)
    assert np.allclose(H, translation(9.0, -3.0), atol=1e-12)


def test_predictor_no_op_cases(ref_image, reference):
    pyr = build_pyramid(ref_image, 3)
    H0 = np.eye(3)
    assert zncc_predictor(reference, pyr, H0, 15) is H0

    flat = np.full((200, 200), 90.0)
    ref_flat = ReferenceTemplate(flat, TemplateRegion(50, 50, 64, 64))
    assert zncc_predictor(ref_flat, build_pyramid(flat, 3), H0, 15) is H0


# ---------------------------------------------------------------------------
# local/global policy


def test_policy_local_at_exact_threshold(ref_image, reference, region):
    cur = warp_image(ref_image, translation(0.5, 0.0))
    vals, valid = warp_template(cur, np.eye(3), region)
    score = zncc(vals, reference.level(0).values, mask=valid)
    cfg = SolverConfig(zncc_local_threshold=float(score))
    out = local_global_policy(reference, cur, np.eye(3), cfg,
                              np.random.default_rng(0))
    assert out.decision == "local"
    assert out.H is not None and not out.used_global
    assert out.score == pytest.approx(score)


def test_policy_global_recovers_large_shift(ref_image, reference, region):
    H_true = translation(40.0, 25.0)
    cur = warp_image(ref_image, H_true)
    cfg = SolverConfig()
    out = local_global_policy(reference, cur, np.eye(3), cfg,
                              np.random.default_rng(0))
    assert out.decision == "global" and out.used_global
    assert not out.global_failed
    # the fit rides on detector positions, good to a few tenths of a pixel
    assert corner_rms_error(out.H, H_true, region.corners()) < 0.5
    assert len(out.matches) >= 30


def test_policy_global_failure_keeps_prior(ref_image, reference, region):
    cur = ref_image.copy()
    cur[region.y:region.y + region.height,
        region.x:region.x + region.width] = 210.0
    cfg = SolverConfig()
    H0 = np.eye(3)
    out = local_global_policy(reference, cur, H0, cfg,
                              np.random.default_rng(0))
    assert out.decision == "global" and out.global_failed
    assert out.H is H0
    assert out.matches == []


# ---------------------------------------------------------------------------
# end-to-end solver behavior


def test_fixed_point_of_exact_solution(ref_image, reference):
    H_true = translation(4.0, -8.0)
    alpha, beta = 1.25, 5.0
    cur = (warp_image(ref_image, H_true) - beta) / alpha
    for mode in (Mode.IB_ONLY, Mode.UNIFIED):
        rep = estimate(reference, cur, SolverConfig(mode=mode),
                       H0=H_true, photo0=Photometric(alpha, beta))
        iters = [s for s in rep.steps if "-" in s.label]
        assert all(s.step_norm < 1e-8 for s in iters)
        assert np.allclose(rep.H, H_true, atol=1e-9)
        assert rep.alpha == pytest.approx(alpha)
        assert rep.beta == pytest.approx(beta)


def test_unified_without_matches_equals_intensity_only(ref_image, region):
    ref_a = ReferenceTemplate(ref_image, region)
    ref_a.features = _empty_feature_set()
    cur = warp_image(ref_image, translation(2.0, 1.0))
    rep_u = estimate(ref_a, cur, SolverConfig(mode=Mode.UNIFIED))
    rep_i = estimate(ref_a, cur, SolverConfig(mode=Mode.IB_ONLY))
    assert len(rep_u.steps) == len(rep_i.steps)
    for su, si in zip(rep_u.steps, rep_i.steps):
        assert su.label == si.label
        assert su.w_fb == 0.0
        assert np.allclose(su.H, si.H, atol=1e-12)
    assert rep_u.num_matches == 0


def test_photometric_recovery(ref_image, reference, region):
    cur = (ref_image - 10.0) / 1.2
    rep = estimate(reference, cur, SolverConfig(mode=Mode.IB_ONLY))
    iters = [s for s in rep.steps if "-" in s.label]
    assert len(iters) <= 9
    assert abs(rep.alpha - 1.2) < 1e-3
    assert abs(rep.beta - 10.0) < 0.1
    assert corner_rms_error(rep.H, np.eye(3), region.corners()) < 0.05
    assert rep.converged


def test_unified_converges_on_moderate_perturbation(ref_image, reference,
                                                    region):
    rng = np.random.default_rng(30)
    from homreg import dlt_homography
    dst = region.corners() + rng.normal(0, 6.0, size=(4, 2))
    H_true = dlt_homography(region.corners(), dst)
    cur = warp_image(ref_image, H_true)
    rep = estimate(reference, cur, SolverConfig(mode=Mode.UNIFIED))
    assert corner_rms_error(rep.H, H_true, region.corners()) < 1.0
    assert rep.converged
    for s in rep.steps:
        assert abs(np.linalg.det(s.H) - 1.0) < 1e-9


def test_report_flags_divergence(ref_image, reference):
    rep = estimate(reference, warp_image(ref_image, translation(500.0, 0.0)),
                   SolverConfig(mode=Mode.IB_ONLY))
    assert not rep.converged


def test_report_serializes_to_json(ref_image, reference):
    import json
    rep = estimate(reference, ref_image, SolverConfig())
    blob = json.loads(rep.to_json())
    assert blob["converged"] is True
    assert len(blob["H"]) == 3
    assert blob["num_matches"] > 0


def test_step_labels_follow_coarse_to_fine(ref_image, reference):
    rep = estimate(reference, ref_image,
                   SolverConfig(mode=Mode.UNIFIED, predictor_enabled=True))
    labels = [s.label for s in rep.steps]
    assert labels[0] == "predictor"
    level_iters = [l for l in labels if "-" in l]
    assert level_iters[0].startswith("1-")
    assert level_iters == sorted(level_iters)
