"""Tests for accuracy metrics, ROC generation and the synthetic scene renderer."""

from __future__ import annotations

import numpy as np
import pytest

from sweepsgm.evalkit import (
    ROC_THRESHOLDS,
    EvalError,
    Patch,
    SceneDescription,
    SceneError,
    fronto_parallel_scene,
    l1_abs,
    l1_rel,
    metric_report,
    read_roc_csv,
    render_synthetic,
    roc_curve,
    slanted_scene,
    two_plane_scene,
    write_roc_csv,
)
from sweepsgm.geometry import SamplingPlane, plane_homography
from sweepsgm.matching import warp_image


class TestL1:
    def test_identical(self):
        d = np.random.default_rng(0).uniform(1, 5, (4, 5))
        assert l1_abs(d, d) == 0.0 and l1_rel(d, d) == 0.0

    def test_hand_values(self):
        pred, gt = np.array([2.0, 4.0]), np.array([1.0, 2.0])
        assert l1_abs(pred, gt) == 1.5
        assert l1_rel(pred, gt) == 1.0

    def test_masking(self):
        pred = np.array([2.0, 4.0, 100.0, np.nan])
        gt = np.array([1.0, 2.0, np.nan, 7.0])
        assert l1_abs(pred, gt) == 1.5

    def test_abs_symmetric_rel_not(self):
        a, b = np.array([2.0, 4.0]), np.array([1.0, 2.0])
        assert l1_abs(a, b) == l1_abs(b, a)
        assert l1_rel(a, b) != l1_rel(b, a)

    def test_rel_scale_invariant(self):
        rng = np.random.default_rng(1)
        pred, gt = rng.uniform(1, 5, 50), rng.uniform(1, 5, 50)
        assert l1_rel(2 * pred, 2 * gt) == pytest.approx(l1_rel(pred, gt), rel=1e-12)

    def test_errors(self):
        with pytest.raises(EvalError):
            l1_abs(np.zeros(3), np.zeros(4))
        with pytest.raises(EvalError):
            l1_abs(np.full(3, np.nan), np.ones(3))
        with pytest.raises(EvalError):
            l1_rel(np.ones(2), np.array([1.0, 0.0]))

    def test_report(self):
        rep = metric_report(np.array([2.0, 4.0, np.nan]), np.array([1.0, 2.0, 3.0]))
        assert rep.mL1_abs == 1.5 and rep.mL1_rel == 1.0
        assert rep.pixel_count == 2 and rep.density == pytest.approx(2 / 3)
        assert "mL1-abs = 1.5" in str(rep)


class TestRoc:
    def _maps(self, seed=0):
        rng = np.random.default_rng(seed)
        gt = rng.uniform(1, 4, (20, 20))
        conf = rng.uniform(0, 1, gt.shape)
        pred = gt + rng.normal(scale=0.3, size=gt.shape) * (1.2 - conf)
        return pred, conf, gt

    def test_default_grid(self):
        assert len(ROC_THRESHOLDS) == 21
        assert ROC_THRESHOLDS[0] == 0.0 and ROC_THRESHOLDS[-1] == 1.0
        np.testing.assert_allclose(np.diff(ROC_THRESHOLDS), 0.05)

    def test_zero_threshold_uses_everything(self):
        pred, conf, gt = self._maps()
        pts = roc_curve(pred, conf, gt)
        assert pts[0].threshold == 0.0 and pts[0].density == 1.0
        assert pts[0].mL1_rel == pytest.approx(l1_rel(pred, gt))

    def test_constant_confidence_is_flat(self):
        pred, _, gt = self._maps()
        pts = roc_curve(pred, np.ones_like(gt), gt)
        assert len(pts) == 21
        assert len({p.row()[1:] for p in pts}) == 1

    def test_density_non_increasing(self):
        for seed in range(5):
            pts = roc_curve(*self._maps(seed))
            dens = [p.density for p in pts]
            assert all(b <= a for a, b in zip(dens, dens[1:]))

    def test_empty_selection_omitted(self):
        pred, _, gt = self._maps()
        pts = roc_curve(pred, np.full_like(gt, 0.5), gt)
        assert pts[-1].threshold == 0.5

    def test_normalized(self):
        pred, conf, gt = self._maps()
        for p in roc_curve(pred, conf, gt):
            assert p.mL1_rel_normalized == pytest.approx(p.mL1_rel / p.density)

    def test_csv_round_trip(self, tmp_path):
        pts = roc_curve(*self._maps())
        path = tmp_path / "roc.csv"
        write_roc_csv(pts, path)
        assert path.read_text().splitlines()[0] == "threshold,density,mL1_abs,mL1_rel,mL1_rel_normalized"
        back = read_roc_csv(path)
        assert [p.row() for p in back] == [p.row() for p in pts]


class TestRenderer:
    def test_fronto_ground_truth(self):
        sc = render_synthetic(fronto_parallel_scene(depth=2.0, width=64, height=48, focal=50.0, noise=0.0))
        assert np.all(sc.gt_depth == 2.0)
        np.testing.assert_array_equal(sc.gt_normals, np.broadcast_to([0.0, 0.0, -1.0], sc.gt_normals.shape))
        assert len(sc.images) == 5 and sc.images[2].shape == (48, 64)

    def test_occlusion_takes_nearer_patch(self):
        sc = render_synthetic(two_plane_scene(near=1.5, far=3.0, width=80, height=60, focal=60.0))
        d = sc.gt_depth
        assert np.nanmin(d) == pytest.approx(1.5) and np.nanmax(d) == pytest.approx(3.0)
        assert d[30, 40] == pytest.approx(1.5)
        assert np.all(d[sc.patch_id == 0] == pytest.approx(3.0))

    def test_slant_depth_matches_plane(self):
        desc = slanted_scene(angle_deg=45.0, width=64, height=48, focal=50.0)
        sc = render_synthetic(desc)
        patch = desc.patches[0]
        n = np.asarray(patch.normal) / np.linalg.norm(patch.normal)
        view = sc.views[2]
        ok = sc.patch_id == 0
        X = sc.gt_depth[..., None] * view.pixel_rays()
        np.testing.assert_allclose((X[ok] - np.asarray(patch.center)) @ n, 0.0, atol=1e-9)
        np.testing.assert_allclose(sc.gt_normals[ok] @ n, -1.0 if n[2] > 0 else 1.0, atol=1e-9)

    def test_same_seed_identical(self):
        desc = fronto_parallel_scene(width=64, height=48, focal=50.0, noise=3.0, seed=7)
        a, b = render_synthetic(desc), render_synthetic(desc)
        for x, y in zip(a.images, b.images):
            np.testing.assert_array_equal(x, y)
        c = render_synthetic(fronto_parallel_scene(width=64, height=48, focal=50.0, noise=3.0, seed=8))
        assert not np.array_equal(a.images[0], c.images[0])

    def test_behind_camera(self):
        desc = SceneDescription(patches=(Patch((0.0, 0.0, 2.0), (0, 0, -1), (1, 1)), Patch((0.0, 0.0, -1.0), (0, 0, -1), (1, 1))))
        with pytest.raises(SceneError, match="patch 1"):
            render_synthetic(desc)

    def test_self_consistency(self):
        desc = fronto_parallel_scene(depth=2.0, width=120, height=90, focal=100.0, noise=0.0)
        sc = render_synthetic(desc)
        ref = sc.images[2]
        for k in (0, 1, 3, 4):
            H = plane_homography(sc.views[2], sc.views[k], SamplingPlane(2.0))
            warped, inside = warp_image(sc.images[k], H, ref.shape)
            inside[:2] = inside[-2:] = False
            inside[:, :2] = inside[:, -2:] = False
            assert np.abs(warped[inside] - ref[inside]).max() < 2.0
