"""Benchmark harness: test-case generation, trial records, CSV outputs."""

import csv
import os

import numpy as np
import pytest

from homreg.bench import (
    METHODS, STEP_LABELS, BenchConfig, TrialRecord, build_config,
    bundled_reference_path, generate_test_case, main, perturb_corners,
    run_campaign, run_trial, step_rms_table, trial_rng, write_outputs,
    _quad_is_convex_ccw,
)
from homreg.geometry import corner_rms_error
from homreg.image import TemplateRegion
from homreg.solver import ReferenceTemplate


def _small_config(tmp_path, **kw):
    args = dict(image=bundled_reference_path(),
                template=TemplateRegion(350, 216, 100, 100),
                sigmas=(0.0,), trials=1, methods=tuple(METHODS),
                seed=0, threads=1, out=str(tmp_path / "out"))
    args.update(kw)
    return BenchConfig(**args)


class TestQuadCheck:
    def test_square_accepted(self):
        quad = np.array([[0, 0], [10, 0], [10, 10], [0, 10]], float)
        assert _quad_is_convex_ccw(quad)

    def test_self_intersecting_rejected(self):
        quad = np.array([[0, 0], [10, 10], [10, 0], [0, 10]], float)
        assert not _quad_is_convex_ccw(quad)

    def test_collinear_rejected(self):
        quad = np.array([[0, 0], [5, 0], [10, 0], [0, 10]], float)
        assert not _quad_is_convex_ccw(quad)

    def test_reflected_rejected(self):
        quad = np.array([[0, 0], [0, 10], [10, 10], [10, 0]], float)
        assert not _quad_is_convex_ccw(quad)


class TestGenerateTestCase:
    def test_sigma_zero_is_identity(self, ref_image, region):
        rng = np.random.default_rng(0)
        H, cur, resamples = generate_test_case(ref_image, region, 0.0, rng)
        assert resamples == 0
        assert np.allclose(H, np.eye(3), atol=1e-12)
        assert np.allclose(cur, ref_image, atol=1e-9)

    def test_homography_maps_corners_to_draw(self, ref_image, region):
        rng = np.random.default_rng(3)
        H, cur, _ = generate_test_case(ref_image, region, 6.0, rng)
        rng2 = np.random.default_rng(3)
        dst = perturb_corners(region.corners(), 6.0, rng2)
        from homreg.geometry import warp_points
        assert np.allclose(warp_points(H, region.corners()), dst, atol=1e-9)

    def test_perturbation_std(self, region):
        rng = np.random.default_rng(7)
        draws = np.stack([perturb_corners(region.corners(), 5.0, rng)
                          for _ in range(10000)])
        deltas = draws - region.corners()
        assert abs(np.std(deltas) - 5.0) / 5.0 < 0.03
        assert abs(np.mean(deltas)) < 0.1

    def test_degenerate_quads_resampled(self, ref_image, region):
        rng = np.random.default_rng(0)
        H, cur, resamples = generate_test_case(ref_image, region, 60.0, rng)
        assert resamples >= 1
        assert np.all(np.isfinite(H))
        assert abs(np.linalg.det(H) - 1.0) < 1e-9


class TestTrialRng:
    def test_same_key_same_stream(self):
        a = trial_rng(0, 2.0, 5).normal(size=4)
        b = trial_rng(0, 2.0, 5).normal(size=4)
        assert np.array_equal(a, b)

    def test_distinct_keys_distinct_streams(self):
        base = trial_rng(0, 2.0, 5).normal(size=4)
        for other in (trial_rng(1, 2.0, 5), trial_rng(0, 4.0, 5),
                      trial_rng(0, 2.0, 6)):
            assert not np.array_equal(base, other.normal(size=4))


class TestRunTrial:
    def test_sigma_zero_converges(self, ref_image, region, reference):
        rng = np.random.default_rng(0)
        H_test, cur, _ = generate_test_case(ref_image, region, 0.0, rng)
        for method in ("ESM", "UNIF"):
            rec = run_trial(reference, method, cur, H_test, 0.0, 0)
            assert rec.converged
            assert rec.final_rms < 1e-3
            assert rec.error is None

    def test_constant_reference_fb_esm_fails(self):
        flat = np.full((240, 240), 64.0)
        ref = ReferenceTemplate(flat, TemplateRegion(70, 70, 100, 100))
        rec = run_trial(ref, "FB_ESM", flat.copy(), np.eye(3), 0.0, 0)
        assert not rec.converged
        assert rec.error == "global-estimation-failed"

    def test_steps_recorded_with_rms(self, ref_image, region, reference):
        rng = trial_rng(0, 4.0, 0)
        H_test, cur, _ = generate_test_case(ref_image, region, 4.0, rng)
        rec = run_trial(reference, "UNIF", cur, H_test, 4.0, 0)
        assert rec.step_rms
        assert all(label in STEP_LABELS for label in rec.step_rms)
        assert rec.initial_rms == pytest.approx(
            corner_rms_error(np.eye(3), H_test, region.corners()))
        assert rec.wall_time > 0.0


class TestStepTable:
    def test_carry_forward(self):
        rec = TrialRecord(sigma=0.0, method="ESM", trial=0, converged=True,
                          final_rms=0.1, initial_rms=8.0,
                          step_rms={"1-1": 4.0, "2-1": 2.0})
        table = step_rms_table([rec])
        by_label = dict(zip(STEP_LABELS, table))
        assert by_label["predictor"] == 8.0
        assert by_label["global"] == 8.0
        assert by_label["1-1"] == 4.0
        assert by_label["1-3"] == 4.0
        assert by_label["2-1"] == 2.0
        assert by_label["3-3"] == 2.0

    def test_non_converged_excluded(self):
        good = TrialRecord(sigma=0.0, method="ESM", trial=0, converged=True,
                           final_rms=0.1, initial_rms=2.0,
                           step_rms={"1-1": 1.0})
        bad = TrialRecord(sigma=0.0, method="ESM", trial=1, converged=False,
                          final_rms=90.0, initial_rms=100.0,
                          step_rms={"1-1": 95.0})
        table = step_rms_table([good, bad])
        assert dict(zip(STEP_LABELS, table))["1-1"] == 1.0
        assert step_rms_table([bad]) is None


class TestConfig:
    def test_unknown_method_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            _small_config(tmp_path, methods=("UNIF", "BOGUS"))

    def test_bad_trials_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            _small_config(tmp_path, trials=0)

    def test_negative_sigma_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            _small_config(tmp_path, sigmas=(-1.0,))

    def test_template_margin_enforced(self, tmp_path):
        cfg = _small_config(tmp_path,
                            template=TemplateRegion(4, 216, 100, 100),
                            sigmas=(14.0,))
        with pytest.raises(ValueError):
            run_campaign(cfg)

    def test_defaults_desk_scale(self):
        cfg = build_config(["--out", "x"])
        assert cfg.sigmas == tuple(float(s) for s in range(0, 15, 2))
        assert cfg.trials == 100
        assert cfg.methods == tuple(METHODS)

    def test_full_scale_flag(self):
        cfg = build_config(["--full-scale", "--out", "x"])
        assert cfg.sigmas == tuple(float(s) for s in range(21))
        assert cfg.trials == 1000


class TestCampaign:
    def test_single_trial_sigma_zero_all_methods(self, tmp_path):
        cfg = _small_config(tmp_path)
        records = run_campaign(cfg)
        assert len(records) == len(METHODS)
        assert all(r.converged for r in records)
        out = write_outputs(cfg, records)
        with open(os.path.join(out, "convergence.csv")) as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == len(METHODS)
        assert all(float(r["convergence_pct"]) == 100.0 for r in rows)

    def test_rate_csv_labels(self, tmp_path):
        cfg = _small_config(tmp_path, methods=("ESM", "UNIF_P"))
        out = write_outputs(cfg, run_campaign(cfg))
        with open(os.path.join(out, "rate.csv")) as f:
            rows = list(csv.DictReader(f))
        assert [r["step"] for r in rows if r["method"] == "ESM"] \
            == STEP_LABELS
        assert [r["step"] for r in rows if r["method"] == "UNIF_P"] \
            == STEP_LABELS
        assert all(np.isfinite(float(r["mean_rms"])) for r in rows)

    def test_outputs_deterministic(self, tmp_path):
        texts = []
        for run in ("a", "b"):
            cfg = _small_config(tmp_path, sigmas=(0.0, 6.0), trials=2,
                                methods=("ESM", "UNIF"), seed=3,
                                out=str(tmp_path / run))
            out = write_outputs(cfg, run_campaign(cfg))
            texts.append({
                name: open(os.path.join(out, name), "rb").read()
                for name in ("convergence.csv", "rate.csv",
                             "manifest.json")})
        assert texts[0] == texts[1]

    def test_timing_csv_schema(self, tmp_path):
        cfg = _small_config(tmp_path, methods=("UNIF",))
        out = write_outputs(cfg, run_campaign(cfg))
        with open(os.path.join(out, "timing.csv")) as f:
            rows = list(csv.DictReader(f))
        assert list(rows[0]) == ["sigma", "method", "mean_seconds"]
        assert float(rows[0]["mean_seconds"]) > 0.0


class TestCli:
    def test_main_writes_outputs(self, tmp_path, capsys):
        out = str(tmp_path / "cli")
        rc = main(["--sigmas", "0", "--trials", "1",
                   "--methods", "UNIF", "--out", out])
        assert rc == 0
        for name in ("convergence.csv", "rate.csv", "timing.csv",
                     "manifest.json"):
            assert os.path.exists(os.path.join(out, name))
        assert "sigma" in capsys.readouterr().out
