"""Depth accuracy metrics, confidence ROC curves and a synthetic scene renderer."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import CameraView

ROC_THRESHOLDS = tuple(np.round(np.arange(21) * 0.05, 2))
ROC_HEADER = ("threshold", "density", "mL1_abs", "mL1_rel", "mL1_rel_normalized")


class EvalError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def _co_valid(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise EvalError(f"shape mismatch: prediction {pred.shape} vs ground truth {gt.shape}")
    return np.isfinite(pred) & np.isfinite(gt)


def l1_abs(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean absolute depth error over pixels valid in both maps."""
    both = _co_valid(pred, gt)
    if not both.any():
        raise EvalError("no pixel has both a prediction and a ground truth depth")
    return float(np.mean(np.abs(np.asarray(pred)[both] - np.asarray(gt)[both])))


def l1_rel(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean absolute depth error relative to the ground truth depth."""
    both = _co_valid(pred, gt)
    if not both.any():
        raise EvalError("no pixel has both a prediction and a ground truth depth")
    g = np.asarray(gt, dtype=np.float64)[both]
    if np.any(g <= 0):
        raise EvalError("ground truth depths must be positive")
    return float(np.mean(np.abs(np.asarray(pred)[both] - g) / g))


@dataclass(frozen=True)
class MetricReport:
    mL1_abs: float
    std_abs: float
    mL1_rel: float
    std_rel: float
    density: float
    pixel_count: int

    def __str__(self) -> str:
        return (
            f"mL1-abs = {self.mL1_abs:.6g} +- {self.std_abs:.6g}\n"
            f"mL1-rel = {self.mL1_rel:.6g} +- {self.std_rel:.6g}\n"
            f"density = {self.density:.6g}\n"
            f"pixels  = {self.pixel_count}"
        )


def metric_report(pred: np.ndarray, gt: np.ndarray) -> MetricReport:
    """Both L1 measures with their spreads; density is co-valid over GT-valid pixels."""
    both = _co_valid(pred, gt)
    if not both.any():
        raise EvalError("no pixel has both a prediction and a ground truth depth")
    p = np.asarray(pred, dtype=np.float64)[both]
    g = np.asarray(gt, dtype=np.float64)[both]
    if np.any(g <= 0):
        raise EvalError("ground truth depths must be positive")
    err = np.abs(p - g)
    rel = err / g
    n_gt = int(np.isfinite(np.asarray(gt, dtype=np.float64)).sum())
    return MetricReport(
        mL1_abs=float(err.mean()),
        std_abs=float(err.std()),
        mL1_rel=float(rel.mean()),
        std_rel=float(rel.std()),
        density=both.sum() / n_gt,
        pixel_count=int(both.sum()),
    )


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    density: float
    mL1_abs: float
    mL1_rel: float

    @property
    def mL1_rel_normalized(self) -> float:
        return self.mL1_rel / self.density

    def row(self) -> tuple[float, ...]:
        return (self.threshold, self.density, self.mL1_abs, self.mL1_rel, self.mL1_rel_normalized)


def roc_curve(
    pred: np.ndarray,
    conf: np.ndarray,
    gt: np.ndarray,
    thresholds: Iterable[float] = ROC_THRESHOLDS,
) -> list[RocPoint]:
    """Accuracy against completeness as the confidence threshold rises.

    For each threshold the pixels with confidence at or above it are kept;
    density is their share of all co-valid pixels. Thresholds keeping no
    pixel are left out.
    """
    both = _co_valid(pred, gt)
    conf = np.asarray(conf, dtype=np.float64)
    if conf.shape != both.shape:
        raise EvalError("confidence map does not match the depth maps")
    total = int(both.sum())
    if total == 0:
        return []
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    points = []
    for t in thresholds:
        keep = both & (np.nan_to_num(conf, nan=-np.inf) >= t)
        n = int(keep.sum())
        if n == 0:
            continue
        err = np.abs(p[keep] - g[keep])
        points.append(RocPoint(float(t), n / total, float(err.mean()), float(np.mean(err / g[keep]))))
    return points


def write_roc_csv(points: Sequence[RocPoint], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ROC_HEADER)
        for pt in points:
            writer.writerow([f"{pt.threshold:.2f}"] + [repr(float(v)) for v in pt.row()[1:]])


def read_roc_csv(path: str | Path) -> list[RocPoint]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            RocPoint(float(r["threshold"]), float(r["density"]), float(r["mL1_abs"]), float(r["mL1_rel"]))
            for r in reader
        ]


# ---------------------------------------------------------------------------
# Synthetic scenes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Patch:
    """Textured planar rectangle in world coordinates.

    ``texture_scale`` is the finest lattice spacing of the value-noise
    texture, in scene units.
    """

    center: tuple[float, float, float]
    normal: tuple[float, float, float]
    half_extent: tuple[float, float]
    texture_scale: float = 0.02
    seed: int = 0

    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = np.asarray(self.normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        up = np.array([0.0, 1.0, 0.0])
        if abs(n @ up) > 0.9:
            up = np.array([1.0, 0.0, 0.0])
        eu = np.cross(up, n)
        eu /= np.linalg.norm(eu)
        ev = np.cross(n, eu)
        return n, eu, ev


@dataclass(frozen=True)
class SceneDescription:
    """A horizontal five-camera rig looking down +z at textured patches.

    Cameras sit at ``x = (-2, -1, 0, 1, 2) * baseline``; the middle one is
    the reference.
    """

    patches: tuple[Patch, ...]
    width: int = 320
    height: int = 240
    focal: float = 300.0
    baseline: float = 0.1
    noise: float = 0.0
    seed: int = 0
    d_min: float = 0.5
    d_max: float = 10.0
    background: float = 0.0

    def views(self) -> list[CameraView]:
        K = np.array(
            [
                [self.focal, 0.0, (self.width - 1) / 2.0],
                [0.0, self.focal, (self.height - 1) / 2.0],
                [0.0, 0.0, 1.0],
            ]
        )
        return [
            CameraView(K, np.eye(3), np.array([k * self.baseline, 0.0, 0.0]), (self.width, self.height))
            for k in (-2, -1, 0, 1, 2)
        ]


@dataclass
class SyntheticScene:
    images: list[np.ndarray]
    views: list[CameraView]
    gt_depth: np.ndarray
    gt_normals: np.ndarray
    description: SceneDescription
    patch_id: np.ndarray = field(repr=False, default=None)


class SceneError(ValueError):
    pass


_OCTAVES = 4


def _value_noise(u: np.ndarray, v: np.ndarray, patch: Patch) -> np.ndarray:
    """Multi-octave smooth value noise in roughly ``[-1, 1]``.

    Octave spacings are ``texture_scale * 2**k``; coarser octaves keep the
    texture visible after pyramid downsampling.
    """
    rng = np.random.default_rng(patch.seed)
    hu, hv = patch.half_extent
    total = np.zeros_like(u)
    weight = 0.0
    for k in range(_OCTAVES):
        spacing = patch.texture_scale * 2**k
        nu = int(np.ceil(2 * hu / spacing)) + 3
        nv = int(np.ceil(2 * hv / spacing)) + 3
        lattice = rng.uniform(-1.0, 1.0, size=(nv, nu))
        gu = (u + hu) / spacing + 1.0
        gv = (v + hv) / spacing + 1.0
        iu = np.clip(np.floor(gu).astype(int), 0, nu - 2)
        iv = np.clip(np.floor(gv).astype(int), 0, nv - 2)
        fu = gu - iu
        fv = gv - iv
        # smoothstep fade keeps the texture C1 across lattice cells
        fu = fu * fu * (3 - 2 * fu)
        fv = fv * fv * (3 - 2 * fv)
        top = lattice[iv, iu] * (1 - fu) + lattice[iv, iu + 1] * fu
        bot = lattice[iv + 1, iu] * (1 - fu) + lattice[iv + 1, iu + 1] * fu
        total += top * (1 - fv) + bot * fv
        weight += 1.0
    return total / weight * 2.0


def _trace(view: CameraView, desc: SceneDescription):
    """Nearest patch hit per pixel: (camera depth, patch index, u, v)."""
    rays_cam = view.pixel_rays()
    dirs = rays_cam @ view.R.T
    h, w = view.height, view.width
    best_t = np.full((h, w), np.inf)
    best_id = np.full((h, w), -1)
    best_u = np.zeros((h, w))
    best_v = np.zeros((h, w))
    for i, patch in enumerate(desc.patches):
        n, eu, ev = patch.axes()
        c = np.asarray(patch.center, dtype=np.float64)
        denom = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((c - view.C) @ n) / denom
        X = view.C + t[..., None] * dirs
        u = (X - c) @ eu
        v = (X - c) @ ev
        hit = (
            np.isfinite(t)
            & (t > 0)
            & (np.abs(u) <= patch.half_extent[0])
            & (np.abs(v) <= patch.half_extent[1])
            & (t < best_t)
        )
        best_t = np.where(hit, t, best_t)
        best_id = np.where(hit, i, best_id)
        best_u = np.where(hit, u, best_u)
        best_v = np.where(hit, v, best_v)
    # rays have unit camera-z, so the ray parameter is the fronto-parallel depth
    return best_t, best_id, best_u, best_v


def render_synthetic(desc: SceneDescription, noise: float | None = None) -> SyntheticScene:
    """Render the bundle and analytic ground truth for the reference camera.

    Each pixel takes the texture of the nearest patch its ray hits (or the
    background value), then Gaussian noise of std ``noise`` is added and the
    result clipped to ``[0, 255]``. Everything is seeded, so equal inputs
    give identical scenes.

    Raises:
        SceneError: if a patch center lies behind any camera.
    """
    sigma = desc.noise if noise is None else noise
    views = desc.views()
    for i, patch in enumerate(desc.patches):
        for k, view in enumerate(views):
            if view.world_to_camera(np.asarray(patch.center))[2] <= 0:
                raise SceneError(f"patch {i} is behind camera {k}")

    rng = np.random.default_rng(desc.seed)
    images = []
    gt_depth = gt_normals = patch_id = None
    for k, view in enumerate(views):
        t, ids, u, v = _trace(view, desc)
        img = np.full(t.shape, float(desc.background))
        for i, patch in enumerate(desc.patches):
            sel = ids == i
            if sel.any():
                img[sel] = 128.0 + 60.0 * _value_noise(u[sel], v[sel], patch)
        if sigma > 0:
            img = img + rng.normal(0.0, sigma, size=img.shape)
        images.append(np.clip(img, 0.0, 255.0))
        if k == 2:
            gt_depth = np.where(ids >= 0, t, np.nan)
            gt_normals = np.full(t.shape + (3,), np.nan)
            for i, patch in enumerate(desc.patches):
                sel = ids == i
                n = view.R.T @ patch.axes()[0]
                if n[2] > 0:
                    n = -n
                gt_normals[sel] = n
            patch_id = ids
    return SyntheticScene(images, views, gt_depth, gt_normals, desc, patch_id)


def fronto_parallel_scene(
    depth: float = 2.0,
    width: int = 320,
    height: int = 240,
    focal: float = 300.0,
    baseline: float = 0.1,
    noise: float = 2.0,
    seed: int = 0,
    d_min: float = 0.8,
    d_max: float = 8.0,
    texel_px: float = 3.0,
) -> SceneDescription:
    """One large textured plane facing the reference camera."""
    scale = texel_px * depth / focal
    patch = Patch((0.0, 0.0, depth), (0.0, 0.0, -1.0), (4.0 * depth, 4.0 * depth), scale, seed)
    return SceneDescription(
        (patch,), width, height, focal, baseline, noise, seed, d_min, d_max
    )


def slanted_scene(
    angle_deg: float = 45.0,
    depth: float = 2.0,
    width: int = 320,
    height: int = 240,
    focal: float = 300.0,
    baseline: float = 0.1,
    noise: float = 2.0,
    seed: int = 0,
    d_min: float = 0.8,
    d_max: float = 8.0,
    texel_px: float = 3.0,
) -> SceneDescription:
    """One textured plane rotated ``angle_deg`` about the vertical axis."""
    a = np.radians(angle_deg)
    normal = (np.sin(a), 0.0, -np.cos(a))
    scale = texel_px * depth / focal
    patch = Patch((0.0, 0.0, depth), normal, (8.0 * depth, 4.0 * depth), scale, seed)
    return SceneDescription(
        (patch,), width, height, focal, baseline, noise, seed, d_min, d_max
    )


def two_plane_scene(
    near: float = 1.5,
    far: float = 3.0,
    width: int = 320,
    height: int = 240,
    focal: float = 300.0,
    baseline: float = 0.1,
    noise: float = 2.0,
    seed: int = 0,
    d_min: float = 0.8,
    d_max: float = 8.0,
    texel_px: float = 3.0,
) -> SceneDescription:
    """A far background plane partly occluded by a nearer square."""
    back = Patch((0.0, 0.0, far), (0.0, 0.0, -1.0), (4.0 * far, 4.0 * far), texel_px * far / focal, seed)
    size = 0.25 * near * width / focal
    front = Patch(
        (0.0, 0.0, near), (0.0, 0.0, -1.0), (size, size), texel_px * near / focal, seed + 1
    )
    return SceneDescription(
        (back, front), width, height, focal, baseline, noise, seed, d_min, d_max
    )
