"""Camera models, plane-induced homographies and fronto-parallel sweep planes.

Conventions used throughout the package:

- ``R`` rotates camera coordinates into world coordinates and ``C`` is the
  camera center, so a world point ``X`` has camera coordinates
  ``R.T @ (X - C)`` and the projection matrix is ``K @ [R.T | -R.T @ C]``.
- Pixel ``(0, 0)`` is the center of the top-left pixel; homogeneous pixels
  are ``(x, y, 1)``.
- Sampling planes are fronto-parallel in the reference camera frame and are
  parameterised by their depth along the optical axis.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

FRONTO_PARALLEL = np.array([0.0, 0.0, 1.0])


class GeometryError(ValueError):
    """Raised for degenerate camera or plane configurations."""


@dataclass(frozen=True)
class CameraView:
    """Pinhole camera: intrinsics ``K``, orientation ``R``, center ``C``.

    Args:
        K: 3x3 upper-triangular intrinsic matrix in pixels.
        R: 3x3 rotation (camera axes expressed in world coordinates).
        C: Camera center in world coordinates.
        image_size: ``(width, height)`` in pixels.
    """

    K: np.ndarray
    R: np.ndarray
    C: np.ndarray
    image_size: tuple[int, int]

    def __post_init__(self) -> None:
        K = np.array(self.K, dtype=np.float64).reshape(3, 3)
        R = np.array(self.R, dtype=np.float64).reshape(3, 3)
        C = np.array(self.C, dtype=np.float64).reshape(3)
        width, height = (int(v) for v in self.image_size)

        if width < 1 or height < 1:
            raise GeometryError(f"image size must be positive, got {width}x{height}")
        if abs(K[1, 0]) > 0 or abs(K[2, 0]) > 0 or abs(K[2, 1]) > 0:
            raise GeometryError("K must be upper triangular")
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise GeometryError("focal lengths must be positive")
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9, rtol=0):
            raise GeometryError("R is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise GeometryError("R must have determinant +1")
        if not (np.all(np.isfinite(K)) and np.all(np.isfinite(C))):
            raise GeometryError("camera parameters must be finite")

        for name, value in (("K", K), ("R", R), ("C", C)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "image_size", (width, height))

    @property
    def width(self) -> int:
        return self.image_size[0]

    @property
    def height(self) -> int:
        return self.image_size[1]

    @property
    def focal(self) -> float:
        return float(self.K[0, 0])

    def world_to_camera(self, X: np.ndarray) -> np.ndarray:
        """Map world points of shape ``(..., 3)`` into this camera's frame."""
        return (np.asarray(X, dtype=np.float64) - self.C) @ self.R

    def camera_to_world(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.R.T + self.C

    def project(self, X: np.ndarray) -> np.ndarray:
        """Project world points ``(..., 3)`` to pixel coordinates ``(..., 2)``."""
        x = self.world_to_camera(X) @ self.K.T
        return x[..., :2] / x[..., 2:3]

    def pixel_rays(self) -> np.ndarray:
        """Camera-frame rays ``K^-1 (x, y, 1)`` for every pixel, shape ``(H, W, 3)``.

        Every ray has unit z-component, so scaling a ray by a depth gives the
        camera-frame point at that fronto-parallel distance.
        """
        ys, xs = np.mgrid[0 : self.height, 0 : self.width].astype(np.float64)
        pix = np.stack([xs, ys, np.ones_like(xs)], axis=-1)
        rays = pix @ np.linalg.inv(self.K).T
        return rays / rays[..., 2:3]


@dataclass(frozen=True)
class SamplingPlane:
    """Plane ``n . X = depth`` in reference-camera coordinates."""

    depth: float
    normal: np.ndarray = field(default_factory=lambda: FRONTO_PARALLEL.copy())

    def __post_init__(self) -> None:
        n = np.array(self.normal, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(n) - 1.0) > 1e-12:
            raise GeometryError("plane normal must be unit length")
        n.setflags(write=False)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "depth", float(self.depth))


@dataclass(frozen=True)
class SamplingPlaneSet:
    """Fronto-parallel planes ordered by strictly increasing depth.

    The position of a plane in :attr:`depths` is its index; indices are what
    the smoothness term compares.
    """

    depths: np.ndarray

    def __post_init__(self) -> None:
        d = np.array(self.depths, dtype=np.float64).reshape(-1)
        if d.size < 1:
            raise GeometryError("plane set must not be empty")
        if np.any(d <= 0):
            raise GeometryError("plane depths must be positive")
        if np.any(np.diff(d) <= 0):
            raise GeometryError("plane depths must be strictly increasing")
        d.setflags(write=False)
        object.__setattr__(self, "depths", d)

    def __len__(self) -> int:
        return int(self.depths.size)

    def __getitem__(self, index: int) -> SamplingPlane:
        return SamplingPlane(self.depths[index])

    @property
    def d_min(self) -> float:
        return float(self.depths[0])

    @property
    def d_max(self) -> float:
        return float(self.depths[-1])

    def index_of(self, plane: SamplingPlane) -> int:
        """Return the index of ``plane`` within the set."""
        i = int(np.searchsorted(self.depths, plane.depth))
        if i >= len(self) or self.depths[i] != plane.depth:
            raise KeyError(f"no plane at depth {plane.depth}")
        return i

    def nearest_index(self, depth: np.ndarray | float) -> np.ndarray:
        """Index of the plane nearest in depth (ties go to the lower index)."""
        depth = np.asarray(depth, dtype=np.float64)
        hi = np.clip(np.searchsorted(self.depths, depth), 1, len(self) - 1)
        if len(self) == 1:
            return np.zeros(depth.shape, dtype=np.int64)
        lo = hi - 1
        pick_hi = np.abs(self.depths[hi] - depth) < np.abs(depth - self.depths[lo])
        return np.where(pick_hi, hi, lo).astype(np.int64)

    def spacing_at(self, depth: np.ndarray | float) -> np.ndarray:
        """Local distance between the two planes surrounding ``depth``."""
        depth = np.asarray(depth, dtype=np.float64)
        hi = np.clip(np.searchsorted(self.depths, depth), 1, max(len(self) - 1, 1))
        if len(self) == 1:
            return np.zeros(depth.shape)
        return self.depths[hi] - self.depths[hi - 1]


def projection_matrix(view: CameraView) -> np.ndarray:
    """Return the 3x4 projection matrix ``K [R^T | -R^T C]``."""
    Rt = view.R.T
    return view.K @ np.hstack([Rt, (-Rt @ view.C)[:, None]])


def relative_pose(ref: CameraView, match: CameraView) -> tuple[np.ndarray, np.ndarray]:
    """Pose of ``match`` relative to ``ref``: ``X_match = R_rel @ X_ref + t_rel``."""
    R_rel = match.R.T @ ref.R
    t_rel = match.R.T @ (ref.C - match.C)
    return R_rel, t_rel


def plane_homography(ref: CameraView, match: CameraView, plane: SamplingPlane) -> np.ndarray:
    """Homography mapping reference pixels on ``plane`` to ``match`` pixels.

    For a plane ``n . X = d`` in the reference frame,
    ``H = K_m (R_rel + t_rel n^T / d) K_ref^-1``.

    Raises:
        GeometryError: if the plane depth is not positive or the plane
            passes through the match camera center.
    """
    d = plane.depth
    if d <= 1e-12:
        raise GeometryError(f"degenerate plane at depth {d}")
    n = plane.normal
    center_in_ref = ref.world_to_camera(match.C)
    if abs(n @ center_in_ref - d) <= 1e-12 * max(1.0, d):
        raise GeometryError("plane passes through the match camera center")
    R_rel, t_rel = relative_pose(ref, match)
    H = match.K @ (R_rel + np.outer(t_rel, n) / d) @ np.linalg.inv(ref.K)
    return H / H[2, 2] if abs(H[2, 2]) > 1e-15 else H


def sweep_homographies(
    ref: CameraView, matches: Sequence[CameraView], planes: SamplingPlaneSet
) -> np.ndarray:
    """All plane homographies, shape ``(n_planes, n_matches, 3, 3)``."""
    out = np.empty((len(planes), len(matches), 3, 3))
    for k, match in enumerate(matches):
        R_rel, t_rel = relative_pose(ref, match)
        Kinv = np.linalg.inv(ref.K)
        A = match.K @ R_rel @ Kinv
        B = match.K @ np.outer(t_rel, FRONTO_PARALLEL) @ Kinv
        for i, d in enumerate(planes.depths):
            out[i, k] = A + B / d
    return out


def _corner_pixels(view: CameraView) -> np.ndarray:
    w, h = view.width - 1, view.height - 1
    return np.array([[0, 0, 1], [w, 0, 1], [0, h, 1], [w, h, 1]], dtype=np.float64)


def _next_inverse_depths(
    a: np.ndarray, b: np.ndarray, s: float, step_px: float
) -> float:
    """Smallest inverse depth ``s' > s`` giving ``step_px`` displacement at some corner.

    A camera-frame point ``r / s`` (with ``r`` the corner ray) projects into
    the match view at ``(a + s b)_xy / (a + s b)_z``. Its image moves along a
    fixed direction with speed ``|v| / (a_z + s b_z)^2`` in ``s``, so the
    displacement between ``s`` and ``s'`` is
    ``|v| (s' - s) / ((a_z + s b_z)(a_z + s' b_z))``, solved for ``s'``.
    Returns ``inf`` if no corner reaches the requested displacement.
    """
    best = np.inf
    for ai, bi in zip(a, b):
        v = np.linalg.norm(bi[:2] * ai[2] - ai[:2] * bi[2])
        A = ai[2] + s * bi[2]
        if v <= 0 or A <= 0:
            continue
        denom = v - step_px * A * bi[2]
        if denom <= 0:
            continue
        s_next = (v * s + step_px * A * ai[2]) / denom
        if s_next > s:
            best = min(best, s_next)
    return best


def _sweep(a: np.ndarray, b: np.ndarray, s_far: float, s_near: float, step_px: float) -> list[float]:
    s_values = [s_far]
    while True:
        s_next = _next_inverse_depths(a, b, s_values[-1], step_px)
        if not s_next < s_near:
            break
        s_values.append(s_next)
    return s_values


def max_corner_displacement(
    ref: CameraView, match: CameraView, d_near: float, d_far: float
) -> float:
    """Largest displacement over the reference corners between two plane depths."""
    worst = 0.0
    for corner in _corner_pixels(ref):
        ray = np.linalg.inv(ref.K) @ corner
        ray = ray / ray[2]
        pts = []
        for depth in (d_near, d_far):
            X = ref.camera_to_world(ray * depth)
            pts.append(match.project(X))
        worst = max(worst, float(np.linalg.norm(pts[0] - pts[1])))
    return worst


def generate_sampling_planes(
    ref: CameraView, matches: Sequence[CameraView], d_min: float, d_max: float
) -> SamplingPlaneSet:
    """Fronto-parallel planes spaced so neighbours move a corner pixel by at most 1 px.

    The displacement is measured on the epipolar line of the match view whose
    center is farthest from the reference, at whichever reference corner
    moves the most. Planes are stepped uniformly in that displacement from
    ``d_max`` towards ``d_min``; the step is shrunk just enough that the last
    plane lands on ``d_min``, so every step lies in ``[0.5, 1]`` px whenever
    the range spans at least one pixel.

    Raises:
        GeometryError: if ``d_min >= d_max`` or no match view is given.
    """
    if not 0 < d_min < d_max:
        raise GeometryError(f"empty depth range [{d_min}, {d_max}]")
    if not matches:
        raise GeometryError("at least one match view is required")

    far = max(matches, key=lambda m: float(np.linalg.norm(m.C - ref.C)))
    R_rel, t_rel = relative_pose(ref, far)
    Kinv = np.linalg.inv(ref.K)
    rays = _corner_pixels(ref) @ Kinv.T
    rays = rays / rays[:, 2:3]
    a = rays @ (far.K @ R_rel).T
    b = np.tile(far.K @ t_rel, (len(rays), 1))

    s_far, s_near = 1.0 / d_max, 1.0 / d_min
    unit = _sweep(a, b, s_far, s_near, 1.0)
    if len(unit) == 1:
        total = max_corner_displacement(ref, far, d_min, d_max)
        if total < 1e-9:
            logger.warning("zero baseline: sampling degenerates to the two bounding planes")
        return SamplingPlaneSet(np.array([d_min, d_max]))

    # n full steps plus a remainder: find the step length in (0, 1] that
    # covers the range in exactly n + 1 steps.
    n_steps = len(unit)
    lo, hi = 0.0, 1.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if len(_sweep(a, b, s_far, s_near, mid)) > n_steps:
            lo = mid
        else:
            hi = mid
    s_values = _sweep(a, b, s_far, s_near, hi)
    depths = 1.0 / np.array(s_values[: n_steps] + [s_near])
    depths[0] = d_max
    depths[-1] = d_min
    return SamplingPlaneSet(np.sort(depths))


def scale_view(view: CameraView, level: int, levels: int) -> CameraView:
    """Camera for pyramid ``level`` (0 = coarsest) of a ``levels``-deep pyramid.

    ``view`` describes the finest level; focal lengths, principal point, skew
    and image size are halved once per level above it.
    """
    if not 0 <= level < levels:
        raise ValueError(f"level {level} outside pyramid of {levels} levels")
    factor = 2 ** (levels - 1 - level)
    K = view.K.copy()
    K[:2, :] /= factor
    K[2, :] = (0.0, 0.0, 1.0)
    size = (view.width // factor, view.height // factor)
    return CameraView(K, view.R, view.C, size)


def ray_plane_intersection(
    p: Sequence[float], plane: SamplingPlane, ref: CameraView, frame: str = "camera"
) -> np.ndarray:
    """Point where the viewing ray through pixel ``p`` meets ``plane``.

    Returns camera-frame coordinates by default, world coordinates with
    ``frame="world"``.
    """
    ray = np.linalg.inv(ref.K) @ np.array([p[0], p[1], 1.0])
    denom = plane.normal @ ray
    if abs(denom) < 1e-12 * np.linalg.norm(ray):
        raise GeometryError("viewing ray is parallel to the plane")
    X = ray * (plane.depth / denom)
    if frame == "world":
        return ref.camera_to_world(X)
    if frame != "camera":
        raise ValueError(f"unknown frame {frame!r}")
    return X
