"""Normal maps from depth maps and appearance-weighted normal smoothing."""

from __future__ import annotations

import numba as nb
import numpy as np

from .geometry import CameraView

GESTALT_RADIUS = 10
GESTALT_BETA = 10.0


def depth_to_points(depth: np.ndarray, view: CameraView) -> np.ndarray:
    """Camera-frame points ``(H, W, 3)`` for a fronto-parallel depth map."""
    return np.asarray(depth, dtype=np.float64)[..., None] * view.pixel_rays()


def _axis_difference(points: np.ndarray, valid: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray]:
    """Central difference along ``axis`` with one-sided fallback.

    A pixel needs two valid points along the axis (itself plus one
    neighbour, or both neighbours).
    """
    nan = np.full_like(points, np.nan)

    def shifted(arr, offset, fill):
        out = np.full_like(arr, fill)
        src = [slice(None)] * arr.ndim
        dst = [slice(None)] * arr.ndim
        if offset > 0:
            src[axis], dst[axis] = slice(offset, None), slice(None, -offset)
        else:
            src[axis], dst[axis] = slice(None, offset), slice(-offset, None)
        out[tuple(dst)] = arr[tuple(src)]
        return out

    nxt, prv = shifted(points, 1, np.nan), shifted(points, -1, np.nan)
    v_next, v_prev = shifted(valid, 1, False), shifted(valid, -1, False)
    central = v_next & v_prev
    forward = ~central & v_next & valid
    backward = ~central & ~v_next & v_prev & valid
    diff = nan.copy()
    diff[central] = nxt[central] - prv[central]
    diff[forward] = nxt[forward] - points[forward]
    diff[backward] = points[backward] - prv[backward]
    return diff, central | forward | backward


def normals_from_depth(depth: np.ndarray, view: CameraView) -> np.ndarray:
    """Unit surface normals, oriented towards the camera; NaN where undefined.

    The normal is the cross product of the horizontal and vertical point
    differences around each pixel.
    """
    depth = np.asarray(depth, dtype=np.float64)
    valid = np.isfinite(depth) & (depth > 0)
    points = depth_to_points(np.where(valid, depth, np.nan), view)
    h, h_ok = _axis_difference(points, valid, axis=1)
    v, v_ok = _axis_difference(points, valid, axis=0)
    n = np.cross(h, v)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    ok = valid & h_ok & v_ok & (norm[..., 0] > 0)
    out = np.full(depth.shape + (3,), np.nan)
    n_ok = n[ok] / norm[ok]
    facing = np.einsum("ij,ij->i", n_ok, points[ok])
    n_ok[facing > 0] *= -1.0
    out[ok] = n_ok
    return out


@nb.njit(cache=True, parallel=True)
def _gestalt_kernel(normals, img, radius, beta):
    h, w, _ = normals.shape
    sigma = float(radius)
    norm_const = 1.0 / np.sqrt(2.0 * np.pi * sigma * sigma)
    out = normals.copy()
    for y in nb.prange(h):
        for x in range(w):
            if not np.isfinite(normals[y, x, 0]):
                continue
            ax = normals[y, x, 0]
            ay = normals[y, x, 1]
            az = normals[y, x, 2]
            ip = img[y, x]
            for qy in range(max(0, y - radius), min(h, y + radius + 1)):
                for qx in range(max(0, x - radius), min(w, x + radius + 1)):
                    if qy == y and qx == x:
                        continue
                    if not np.isfinite(normals[qy, qx, 0]):
                        continue
                    r2 = (qx - x) * (qx - x) + (qy - y) * (qy - y)
                    wgt = (
                        norm_const
                        * np.exp(-r2 / (2.0 * sigma * sigma))
                        * np.exp(-abs(img[qy, qx] - ip) / beta)
                    )
                    ax += wgt * normals[qy, qx, 0]
                    ay += wgt * normals[qy, qx, 1]
                    az += wgt * normals[qy, qx, 2]
            mag = np.sqrt(ax * ax + ay * ay + az * az)
            if mag > 1e-12:
                out[y, x, 0] = ax / mag
                out[y, x, 1] = ay / mag
                out[y, x, 2] = az / mag
    return out


def gestalt_smooth(
    normals: np.ndarray, ref: np.ndarray, radius: int = GESTALT_RADIUS, beta: float = GESTALT_BETA
) -> np.ndarray:
    """Appearance-weighted Gaussian smoothing of a normal map.

    Each valid normal is summed with its neighbours in a
    ``(2 radius + 1)^2`` window, weighted by an isotropic Gaussian of the
    pixel distance (sigma = ``radius``) and by ``exp(-|I_q - I_p| / beta)``,
    then renormalised. Invalid normals neither change nor contribute.
    """
    if radius < 1:
        raise ValueError("radius must be at least 1")
    normals = np.ascontiguousarray(normals, dtype=np.float64)
    img = np.ascontiguousarray(ref, dtype=np.float64)
    if normals.shape != img.shape + (3,):
        raise ValueError(f"normal map {normals.shape} does not match image {img.shape}")
    return _gestalt_kernel(normals, img, int(radius), float(beta))


def angular_error_deg(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Angle in degrees between two normal fields (NaN where either is invalid)."""
    cos = np.einsum("...i,...i->...", a, b)
    return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
