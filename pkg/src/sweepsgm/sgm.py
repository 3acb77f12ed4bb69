"""Semi-global path aggregation over a dynamic plane-sweep cost volume.

Three smoothness variants share one recursion and differ only in where the
zero-cost transition sits between neighbouring pixels along a path:

``fp``
    same plane index (fronto-parallel prior).
``sn``
    index shifted by the jump a known surface normal induces between the
    pixel and its path predecessor.
``pg``
    index shifted towards the predecessor's running minimum-cost plane.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numba as nb
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from . import parallel
from .geometry import CameraView, SamplingPlaneSet, ray_plane_intersection, SamplingPlane
from .matching import CostVolume

logger = logging.getLogger(__name__)

# (dx, dy) steps; the predecessor of p is p - r.
DIRECTIONS: tuple[tuple[int, int], ...] = (
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (-1, -1),
    (1, -1),
    (-1, 1),
)
MAX_INDEX_JUMP = 3
GRAZING_COS = 1e-6

_VARIANTS = {"fp": 0, "sn": 1, "pg": 2}
_P2_MODES = {"gradient": 0, "line": 1}


class SGMError(ValueError):
    pass


@dataclass(frozen=True)
class PenaltyConfig:
    """Smoothness penalties.

    ``P2`` is only used in ``line`` mode; in ``gradient`` mode the large
    penalty is derived per pixel from ``P1``, ``alpha`` and ``beta`` and
    ``P2`` may be ``None``.
    """

    P1: float
    P2: float | None = None
    p2_mode: str = "gradient"
    alpha: float = 8.0
    beta: float = 10.0

    def __post_init__(self) -> None:
        if self.p2_mode not in _P2_MODES:
            raise SGMError(f"unknown P2 mode {self.p2_mode!r}")
        if self.P1 <= 0:
            raise SGMError("P1 must be positive")
        if self.p2_mode == "line":
            if self.P2 is None or self.P2 < self.P1:
                raise SGMError("line mode needs P2 >= P1")
        elif self.P2 is not None and self.P2 < self.P1:
            raise SGMError("P2 must not be smaller than P1")
        if self.alpha <= 0 or self.beta <= 0:
            raise SGMError("alpha and beta must be positive")


@dataclass(frozen=True)
class VariantSpec:
    kind: str = "fp"
    normal_map: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.kind not in _VARIANTS:
            raise SGMError(f"unknown SGM variant {self.kind!r}")
        if self.kind == "sn" and self.normal_map is None:
            raise SGMError("the sn variant needs a normal map")


@dataclass
class AggregatedVolume:
    """Summed path costs with the same per-pixel layout as the cost volume."""

    summed: np.ndarray
    path_min_sum: np.ndarray
    start: np.ndarray
    length: np.ndarray
    n_planes: int
    paths: list[np.ndarray] | None = field(default=None, repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.summed.shape[:2]


def adaptive_p2(cfg: PenaltyConfig, intensity_step: float, line_mask_hit: bool = False) -> float:
    """Large-jump penalty for one transition along a path."""
    if cfg.p2_mode == "gradient":
        return cfg.P1 * (1.0 + cfg.alpha * np.exp(-abs(intensity_step) / cfg.beta))
    return cfg.P1 if line_mask_hit else float(cfg.P2)


def line_mask(ref: np.ndarray, k_sigma: float = 2.0) -> np.ndarray:
    """Binary edge-line image of ``ref``.

    Sobel magnitude above ``mean + k_sigma * std``, thinned to one pixel by
    non-maximum suppression across the gradient direction.
    """
    img = np.asarray(ref, dtype=np.float64)
    gx = ndimage.sobel(img, axis=1, mode="nearest")
    gy = ndimage.sobel(img, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)
    thresh = mag.mean() + k_sigma * mag.std()
    strong = (mag > thresh) & (mag > 0)

    # quantise gradient direction to 0/45/90/135 degrees
    angle = (np.rad2deg(np.arctan2(gy, gx)) + 180.0) % 180.0
    sector = ((angle + 22.5) // 45).astype(int) % 4
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    padded = np.pad(mag, 1, mode="constant")
    h, w = img.shape
    keep = np.zeros_like(strong)
    for s, (oy, ox) in offsets.items():
        fwd = padded[1 + oy : 1 + oy + h, 1 + ox : 1 + ox + w]
        bwd = padded[1 - oy : 1 - oy + h, 1 - ox : 1 - ox + w]
        # ">=" on one side only keeps exactly one pixel of a flat ridge
        keep |= (sector == s) & (mag >= fwd) & (mag > bwd)
    return (strong & keep).astype(np.uint8)


# ---------------------------------------------------------------------------
# Index jumps
# ---------------------------------------------------------------------------


@nb.njit(cache=True, nogil=True)
def _nearest_plane(depths, z):
    n = depths.shape[0]
    lo = 0
    hi = n
    while lo < hi:
        mid = (lo + hi) // 2
        if depths[mid] < z:
            lo = mid + 1
        else:
            hi = mid
    if lo == 0:
        return 0
    if lo >= n:
        return n - 1
    if depths[lo] - z < z - depths[lo - 1]:
        return lo
    return lo - 1


@nb.njit(cache=True, nogil=True)
def _depth_ratio(nx, ny, nz, rp, rq):
    """Depth ratio z(q)/z(p) on the tangent plane through p, or -1 if unusable."""
    if not (np.isfinite(nx) and np.isfinite(ny) and np.isfinite(nz)):
        return -1.0
    dot_p = nx * rp[0] + ny * rp[1] + nz * rp[2]
    dot_q = nx * rq[0] + ny * rq[1] + nz * rq[2]
    norm_q = np.sqrt(rq[0] * rq[0] + rq[1] * rq[1] + rq[2] * rq[2])
    if abs(dot_q) < GRAZING_COS * norm_q:
        return -1.0
    ratio = dot_p / dot_q
    if ratio <= 0.0:
        return -1.0
    return ratio


@nb.njit(cache=True, nogil=True)
def _clamp_jump(jump, max_jump):
    if jump > max_jump:
        return max_jump
    if jump < -max_jump:
        return -max_jump
    return jump


def index_jump_sn(
    p: Sequence[float],
    direction: Sequence[int],
    normal: Sequence[float],
    plane_index: int,
    planes: SamplingPlaneSet,
    ref: CameraView,
    max_jump: int = MAX_INDEX_JUMP,
) -> int:
    """Plane-index jump a surface normal induces towards the path predecessor.

    The ray through ``p`` meets plane ``plane_index`` at ``X_p``; the tangent
    plane at ``X_p`` with ``normal`` is intersected with the ray through
    ``p - direction`` and the nearest sweep plane to that depth is compared
    with ``plane_index``.
    """
    n = np.asarray(normal, dtype=np.float64)
    Xp = ray_plane_intersection(p, planes[plane_index], ref)
    q = (p[0] - direction[0], p[1] - direction[1])
    rq = np.linalg.inv(ref.K) @ np.array([q[0], q[1], 1.0])
    denom = n @ rq
    if not np.all(np.isfinite(n)) or abs(denom) < GRAZING_COS * np.linalg.norm(rq):
        logger.debug("grazing tangent plane at %s, jump set to 0", p)
        return 0
    t = (n @ Xp) / denom
    if t <= 0:
        logger.debug("tangent plane behind camera at %s, jump set to 0", p)
        return 0
    z = (t * rq)[2]
    k = int(planes.nearest_index(z))
    return int(np.clip(k - plane_index, -max_jump, max_jump))


# ---------------------------------------------------------------------------
# Aggregation kernel
# ---------------------------------------------------------------------------


@nb.njit(cache=True, nogil=True)
def _aggregate_direction(
    costs,
    start,
    length,
    dx,
    dy,
    p1,
    p2,
    p2_mode,
    alpha,
    beta,
    ref_img,
    lines,
    variant,
    normals,
    rays,
    depths,
    max_jump,
    normalize,
):
    h, w, lmax = costs.shape
    L = np.full((h, w, lmax), np.inf)
    pmin = np.empty((h, w))
    y_first, y_last, y_step = (0, h, 1) if dy >= 0 else (h - 1, -1, -1)
    x_first, x_last, x_step = (0, w, 1) if dx >= 0 else (w - 1, -1, -1)

    for y in range(y_first, y_last, y_step):
        for x in range(x_first, x_last, x_step):
            s0 = start[y, x]
            n0 = length[y, x]
            qx = x - dx
            qy = y - dy
            if qx < 0 or qx >= w or qy < 0 or qy >= h:
                for j in range(n0):
                    L[y, x, j] = costs[y, x, j]
            else:
                qs = start[qy, qx]
                qn = length[qy, qx]
                m = np.inf
                am = 0
                for j in range(qn):
                    v = L[qy, qx, j]
                    if v < m:
                        m = v
                        am = j
                d_hat = qs + am

                if p2_mode == 0:
                    big = p1 * (1.0 + alpha * np.exp(-abs(ref_img[y, x] - ref_img[qy, qx]) / beta))
                elif lines[y, x] != 0:
                    big = p1
                else:
                    big = p2

                ratio = -1.0
                if variant == 1:
                    ratio = _depth_ratio(
                        normals[y, x, 0], normals[y, x, 1], normals[y, x, 2], rays[y, x], rays[qy, qx]
                    )
                shift = m if normalize else 0.0

                for j in range(n0):
                    d = s0 + j
                    target = d
                    if variant == 1:
                        if ratio > 0.0:
                            k = _nearest_plane(depths, depths[d] * ratio)
                            target = d + _clamp_jump(k - d, max_jump)
                    elif variant == 2:
                        target = d + _clamp_jump(d_hat - d, max_jump)

                    best = m + big
                    jt = target - qs
                    if 0 <= jt < qn:
                        v = L[qy, qx, jt]
                        if v < best:
                            best = v
                    if 0 <= jt - 1 < qn:
                        v = L[qy, qx, jt - 1] + p1
                        if v < best:
                            best = v
                    if 0 <= jt + 1 < qn:
                        v = L[qy, qx, jt + 1] + p1
                        if v < best:
                            best = v
                    L[y, x, j] = costs[y, x, j] + best - shift

            low = np.inf
            for j in range(n0):
                if L[y, x, j] < low:
                    low = L[y, x, j]
            pmin[y, x] = low
    return L, pmin


def aggregate_direction(
    volume: CostVolume,
    ref: np.ndarray,
    cfg: PenaltyConfig,
    variant: VariantSpec,
    planes: SamplingPlaneSet,
    view: CameraView,
    direction: tuple[int, int],
    normalize: bool = True,
    lines: np.ndarray | None = None,
    max_jump: int = MAX_INDEX_JUMP,
) -> tuple[np.ndarray, np.ndarray]:
    """Path costs ``L_r`` along one direction and their per-pixel minimum."""
    args = _kernel_args(volume, ref, cfg, variant, planes, view, lines)
    return _aggregate_direction(
        *args[:3], direction[0], direction[1], *args[3:], max_jump, normalize
    )


def _kernel_args(volume, ref, cfg, variant, planes, view, lines):
    h, w = volume.shape
    ref = np.ascontiguousarray(ref, dtype=np.float64)
    if ref.shape != (h, w) or (view.width, view.height) != (w, h):
        raise SGMError(f"reference {ref.shape} does not match cost volume {(h, w)}")
    if len(planes) != volume.n_planes:
        raise SGMError("plane set does not match the cost volume")
    if cfg.p2_mode == "line":
        lines = line_mask(ref) if lines is None else np.asarray(lines, dtype=np.uint8)
    else:
        lines = np.zeros((1, 1), dtype=np.uint8)
    if variant.kind == "sn":
        normals = np.ascontiguousarray(variant.normal_map, dtype=np.float64)
        if normals.shape != (h, w, 3):
            raise SGMError(f"normal map {normals.shape} does not match image {(h, w)}")
        rays = np.ascontiguousarray(view.pixel_rays())
    else:
        normals = np.zeros((1, 1, 3))
        rays = np.zeros((1, 1, 3))
    costs = np.ascontiguousarray(volume.costs, dtype=np.float64)
    p2 = float(cfg.P2) if cfg.P2 is not None else float(cfg.P1)
    return (
        costs,
        volume.start,
        volume.length,
        float(cfg.P1),
        p2,
        _P2_MODES[cfg.p2_mode],
        float(cfg.alpha),
        float(cfg.beta),
        ref,
        lines,
        _VARIANTS[variant.kind],
        normals,
        rays,
        np.ascontiguousarray(planes.depths),
    )


def aggregate_paths(
    volume: CostVolume,
    ref: np.ndarray,
    cfg: PenaltyConfig,
    variant: VariantSpec,
    planes: SamplingPlaneSet,
    view: CameraView,
    normalize: bool = True,
    keep_paths: bool = False,
    lines: np.ndarray | None = None,
    max_jump: int = MAX_INDEX_JUMP,
) -> AggregatedVolume:
    """Sum the eight directional path costs into an aggregated volume.

    Directions run concurrently when more than one worker thread is
    configured; their sum is always accumulated in :data:`DIRECTIONS` order,
    so the result does not depend on the thread count.

    Args:
        volume: matching costs.
        ref: reference image at the volume's resolution (for adaptive P2).
        cfg: penalties.
        variant: smoothness variant, with the normal map for ``sn``.
        planes: sweep planes the volume indexes into.
        view: reference camera at this resolution.
        normalize: subtract the predecessor minimum inside the recursion.
            This only shifts each pixel's costs by a constant.
        keep_paths: retain every directional ``L_r`` on the result.
        lines: precomputed line image for ``line`` mode.
    """
    args = _kernel_args(volume, ref, cfg, variant, planes, view, lines)

    def run(direction):
        return _aggregate_direction(
            *args[:3], direction[0], direction[1], *args[3:], max_jump, normalize
        )

    workers = min(parallel.get_threads(), len(DIRECTIONS))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = pool.map(run, DIRECTIONS)
            summed, pmin_sum, paths = _accumulate(results, keep_paths)
    else:
        summed, pmin_sum, paths = _accumulate(map(run, DIRECTIONS), keep_paths)
    return AggregatedVolume(
        summed=summed,
        path_min_sum=pmin_sum,
        start=volume.start,
        length=volume.length,
        n_planes=volume.n_planes,
        paths=paths,
    )


def _accumulate(results, keep_paths):
    summed = pmin_sum = None
    paths = [] if keep_paths else None
    for L, pmin in results:
        if summed is None:
            summed = L.copy()
            pmin_sum = pmin.copy()
        else:
            summed += L
            pmin_sum += pmin
        if keep_paths:
            paths.append(L)
    return summed, pmin_sum, paths


# ---------------------------------------------------------------------------
# Winners and post-filtering
# ---------------------------------------------------------------------------


def _local_mask(length: np.ndarray, lmax: int) -> np.ndarray:
    return np.arange(lmax)[None, None, :] < length[..., None]


def winner_indices(agg: AggregatedVolume) -> np.ndarray:
    """Plane index of the lowest summed cost per pixel (ties -> lowest index)."""
    values = np.where(_local_mask(agg.length, agg.summed.shape[2]), agg.summed, np.inf)
    return agg.start + np.argmin(values, axis=2)


def extract_winners(agg: AggregatedVolume, planes: SamplingPlaneSet) -> np.ndarray:
    """Depth map of winning planes."""
    return planes.depths[winner_indices(agg)]


def median_filter(depth: np.ndarray, size: int = 5) -> np.ndarray:
    """Median of the valid (non-NaN) depths in a window clipped to the image.

    Invalid pixels stay invalid.
    """
    depth = np.asarray(depth, dtype=np.float64)
    r = size // 2
    padded = np.pad(depth, r, mode="constant", constant_values=np.nan)
    windows = sliding_window_view(padded, (size, size))
    out = np.full_like(depth, np.nan)
    valid = ~np.isnan(depth)
    if valid.any():
        out[valid] = np.nanmedian(windows[valid], axis=(-2, -1))
    return out


def median_filter_5x5(depth: np.ndarray) -> np.ndarray:
    return median_filter(depth, 5)
