"""Tests for pyramids, range refinement, texture masking and the full pipeline."""

from __future__ import annotations

import numpy as np
import pytest

from oracles import small_view
from sweepsgm import parallel, pipeline
from sweepsgm.evalkit import fronto_parallel_scene, l1_abs, render_synthetic, two_plane_scene
from sweepsgm.geometry import CameraView, SamplingPlaneSet
from sweepsgm.pipeline import (
    PipelineConfig,
    PipelineError,
    blur3x3,
    build_pyramid,
    dog_mask,
    downsample_to,
    refine_ranges,
    run_pipeline,
    upscale_nearest,
)


def _view(w, h, f=None):
    f = f or float(w)
    K = np.array([[f, 0.0, (w - 1) / 2], [0.0, f, (h - 1) / 2], [0.0, 0.0, 1.0]])
    return CameraView(K, np.eye(3), np.zeros(3), (w, h))


@pytest.fixture(scope="module")
def small_scene():
    return render_synthetic(two_plane_scene(width=160, height=120, focal=150.0, baseline=0.1, noise=0.0, seed=4))


class TestConfig:
    @pytest.mark.parametrize(
        "cost,mode,P1,P2,phi,tau",
        [
            ("ncc", "gradient", 150.0, None, 80.0, 10.0),
            ("ncc", "line", 60.0, 220.0, 80.0, 10.0),
            ("census", "gradient", 15.0, None, 650.0, 80.0),
            ("census", "line", 10.0, 55.0, 650.0, 80.0),
        ],
    )
    def test_published_defaults(self, cost, mode, P1, P2, phi, tau):
        cfg = PipelineConfig.published_defaults(1.0, 5.0, cost, mode)
        assert (cfg.P1, cfg.P2, cfg.phi, cfg.tau) == (P1, P2, phi, tau)
        assert (cfg.levels, cfg.delta_d, cfg.alpha, cfg.beta) == (3, 6, 8.0, 10.0)
        assert cfg.census_window == (9, 7) and cfg.ncc_window == (5, 5)
        assert cfg.gestalt_kernel == (21, 21) and cfg.gestalt_radius == 10
        assert cfg.median_kernel == (5, 5)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(levels=0),
            dict(delta_d=0),
            dict(d_min=5.0, d_max=1.0),
            dict(cost="sad"),
            dict(variant="xx"),
            dict(dog_sigma1=2.0, dog_sigma2=1.0),
            dict(gestalt_kernel=(20, 20)),
            dict(phi=0.0),
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises((PipelineError, ValueError)):
            PipelineConfig.published_defaults(1.0, 5.0).with_overrides(**kwargs)

    def test_unknown_defaults(self):
        with pytest.raises(PipelineError):
            PipelineConfig.published_defaults(1.0, 5.0, "sad")


class TestPyramid:
    def test_single_level(self):
        img = np.random.default_rng(0).uniform(0, 255, (30, 40))
        pyr = build_pyramid(img, _view(40, 30), 1)
        assert len(pyr) == 1
        np.testing.assert_array_equal(pyr.images[0], img)

    def test_constant_image(self):
        pyr = build_pyramid(np.full((48, 64), 77.0), _view(64, 48), 3)
        for img in pyr.images:
            np.testing.assert_allclose(img, 77.0, atol=1e-12)

    def test_sizes(self):
        pyr = build_pyramid(np.zeros((480, 640)), _view(640, 480), 3)
        assert [im.shape[::-1] for im in pyr.images] == [(160, 120), (320, 240), (640, 480)]
        assert [v.image_size for v in pyr.views] == [(160, 120), (320, 240), (640, 480)]

    def test_odd_sizes_floor(self):
        pyr = build_pyramid(np.zeros((61, 83)), _view(83, 61), 2)
        assert pyr.images[0].shape == (30, 41)

    def test_too_small(self):
        with pytest.raises(PipelineError, match="too small"):
            build_pyramid(np.zeros((20, 30)), _view(30, 20), 3)

    def test_blur_kernel(self):
        img = np.zeros((5, 5))
        img[2, 2] = 1.0
        out = blur3x3(img)
        g = np.exp(-0.5 * np.array([1.0, 0.0, 1.0]))
        k = np.outer(g, g) / np.outer(g, g).sum()
        np.testing.assert_allclose(out[1:4, 1:4], k, atol=1e-12)
        assert out[0].sum() == 0.0


class TestRefineRanges:
    planes = SamplingPlaneSet(1.0 + 0.25 * np.arange(30))

    def test_interior(self):
        start, length = refine_ranges(np.full((2, 2), self.planes.depths[12]), self.planes, 6)
        assert np.all(start == 6) and np.all(length == 13)

    def test_clamped(self):
        start, length = refine_ranges(np.full((2, 2), self.planes.depths[2]), self.planes, 6)
        assert np.all(start == 0) and np.all(length == 9)

    def test_invalid_gets_full_range(self):
        depth = np.array([[np.nan, 2.0]])
        start, length = refine_ranges(depth, self.planes, 6)
        assert start.shape == (2, 4)
        assert np.all(start[:, :2] == 0) and np.all(length[:, :2] == 30)

    def test_contains_nearest(self):
        rng = np.random.default_rng(1)
        depth = rng.uniform(0.5, 10.0, (6, 7))
        start, length = refine_ranges(depth, self.planes, 3, (12, 14))
        nearest = self.planes.nearest_index(upscale_nearest(depth, (12, 14)))
        assert np.all((nearest >= start) & (nearest < start + length))

    def test_upscale_nearest(self):
        arr = np.arange(6.0).reshape(2, 3)
        up = upscale_nearest(arr, (5, 7))
        assert up.shape == (5, 7)
        np.testing.assert_array_equal(up[:2, :2], 0.0)
        np.testing.assert_array_equal(up[4, 6], 5.0)
        np.testing.assert_array_equal(downsample_to(up[:4, :6], (2, 3), 2), arr)


class TestDogMask:
    def test_constant(self):
        assert not dog_mask(np.full((20, 20), 90.0)).any()

    def test_checkerboard(self):
        y, x = np.mgrid[:40, :40]
        board = np.where(((x // 2) + (y // 2)) % 2 == 0, 50.0, 200.0)
        assert dog_mask(board)[5:-5, 5:-5].mean() > 0.9

    def test_ramp(self):
        ramp = np.tile(np.linspace(0, 255, 60), (40, 1))
        assert not dog_mask(ramp)[8:-8, 8:-8].any()

    def test_bad_sigmas(self):
        with pytest.raises(ValueError):
            dog_mask(np.zeros((4, 4)), 2.0, 1.0)


class TestRunPipeline:
    def test_zero_texture(self):
        sc = render_synthetic(fronto_parallel_scene(width=72, height=56, focal=60.0, noise=0.0))
        flat = [np.full_like(im, 128.0) for im in sc.images]
        cfg = PipelineConfig.published_defaults(0.8, 8.0, levels=2)
        res = run_pipeline(flat, sc.views, cfg)
        assert np.all(np.isnan(res.depth))
        assert np.all(np.isnan(res.confidence)) and np.all(np.isnan(res.normals))

    def test_wrong_bundle_size(self):
        sc = render_synthetic(fronto_parallel_scene(width=72, height=56, focal=60.0))
        with pytest.raises(PipelineError, match="expected 5 images"):
            run_pipeline(sc.images[:4], sc.views[:4], PipelineConfig(0.8, 8.0))

    def test_level_failure_has_context(self, monkeypatch):
        sc = render_synthetic(fronto_parallel_scene(width=72, height=56, focal=60.0))

        def boom(*args, **kwargs):
            raise RuntimeError("out of memory")

        monkeypatch.setattr(pipeline, "build_cost_volume", boom)
        with pytest.raises(PipelineError, match="level 0 failed: out of memory"):
            run_pipeline(sc.images, sc.views, PipelineConfig(0.8, 8.0, levels=2))

    def test_validity_relations(self, small_scene):
        cfg = PipelineConfig.published_defaults(small_scene.description.d_min, small_scene.description.d_max)
        res = run_pipeline(small_scene.images, small_scene.views, cfg)
        valid = np.isfinite(res.depth)
        assert valid.mean() > 0.5
        assert np.all(np.isfinite(res.confidence[valid]))
        assert np.all(valid[np.isfinite(res.normals[..., 0])])
        assert np.all((res.confidence[valid] >= 0) & (res.confidence[valid] <= 1))
        assert [lv.variant for lv in res.levels] == ["fp"] * 3

    def test_coarse_to_fine_consistency(self, small_scene):
        cfg = PipelineConfig.published_defaults(small_scene.description.d_min, small_scene.description.d_max)
        res = run_pipeline(small_scene.images, small_scene.views, cfg)
        errors = []
        for lv in res.levels:
            factor = 2 ** (cfg.levels - 1 - lv.level)
            gt = downsample_to(small_scene.gt_depth, lv.depth.shape, factor)
            errors.append(l1_abs(lv.depth, gt))
        assert all(b <= a for a, b in zip(errors, errors[1:])), errors

    def test_sn_falls_back_to_fp_on_coarsest_level(self, small_scene):
        cfg = PipelineConfig.published_defaults(0.8, 8.0, variant="sn", levels=2)
        res = run_pipeline(small_scene.images, small_scene.views, cfg)
        assert [lv.variant for lv in res.levels] == ["fp", "sn"]

    def test_deterministic_across_threads(self, small_scene):
        cfg = PipelineConfig.published_defaults(0.8, 8.0, cost="census", p2_mode="line", levels=2)
        try:
            parallel.set_threads(1)
            a = run_pipeline(small_scene.images, small_scene.views, cfg)
            parallel.set_threads(3)
            b = run_pipeline(small_scene.images, small_scene.views, cfg)
        finally:
            parallel.set_threads(None)
        for name in ("depth", "normals", "confidence"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))

    def test_normal_prior_shape(self, small_scene):
        with pytest.raises(PipelineError, match="normal prior"):
            run_pipeline(small_scene.images, small_scene.views, PipelineConfig(0.8, 8.0), np.zeros((3, 3, 3)))


def test_small_view_helper_matches_pipeline_convention():
    # the oracle helper and the pyramid share the pixel-center convention
    v = small_view(8, 6)
    assert v.K[0, 2] == 3.5 and v.K[1, 2] == 2.5
