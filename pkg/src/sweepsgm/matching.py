"""Census / NCC matching costs and the dynamic plane-sweep cost volume."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numba as nb
import numpy as np
from scipy import ndimage

from .geometry import CameraView, SamplingPlaneSet, sweep_homographies

CENSUS_WINDOW = (9, 7)
NCC_WINDOW = (5, 5)
NCC_SCALE = 255.0
BUNDLE_SIZE = 5
REF_INDEX = 2
LEFT_VIEWS = (0, 1)
RIGHT_VIEWS = (3, 4)

_VAR_EPS = 1e-9


class MatchingError(ValueError):
    pass


def worst_cost(kind: str, census_window: tuple[int, int] = CENSUS_WINDOW) -> float:
    if kind == "census":
        return float(census_window[0] * census_window[1] - 1)
    if kind == "ncc":
        return NCC_SCALE
    raise MatchingError(f"unknown cost kind {kind!r}")


# ---------------------------------------------------------------------------
# Census transform
# ---------------------------------------------------------------------------


def census_transform(img: np.ndarray, window: tuple[int, int] = CENSUS_WINDOW) -> np.ndarray:
    """Census bit strings, one ``uint64`` per pixel.

    Bit ``k`` is set when the ``k``-th window neighbour (row-major, center
    skipped) is strictly darker than the center. Samples outside the image
    are clamped to the nearest edge pixel.

    Args:
        img: ``(H, W)`` intensities.
        window: ``(width, height)`` of the comparison window, both odd.
    """
    img = np.asarray(img, dtype=np.float64)
    ww, wh = window
    if ww % 2 == 0 or wh % 2 == 0 or ww * wh - 1 > 64:
        raise MatchingError(f"invalid census window {ww}x{wh}")
    h, w = img.shape
    if w < ww or h < wh:
        raise MatchingError(f"image {w}x{h} smaller than census window {ww}x{wh}")
    rx, ry = ww // 2, wh // 2
    padded = np.pad(img, ((ry, ry), (rx, rx)), mode="edge")
    out = np.zeros((h, w), dtype=np.uint64)
    bit = 0
    for dy in range(-ry, ry + 1):
        for dx in range(-rx, rx + 1):
            if dx == 0 and dy == 0:
                continue
            neighbour = padded[ry + dy : ry + dy + h, rx + dx : rx + dx + w]
            out |= (neighbour < img).astype(np.uint64) << np.uint64(bit)
            bit += 1
    return out


def census_cost(a: int | np.ndarray, b: int | np.ndarray) -> int | np.ndarray:
    """Hamming distance between census strings."""
    x = np.bitwise_xor(np.asarray(a, dtype=np.uint64), np.asarray(b, dtype=np.uint64))
    out = np.bitwise_count(x)
    return int(out) if out.ndim == 0 else out.astype(np.int64)


# ---------------------------------------------------------------------------
# NCC
# ---------------------------------------------------------------------------


def ncc_cost(ref_patch: np.ndarray, match_patch: np.ndarray, scale: float = NCC_SCALE) -> float:
    """Negated, truncated and scaled NCC: ``scale * min(1 - ncc, 1)``.

    A patch without variance on either side is maximally ambiguous and costs
    ``scale``.
    """
    a = np.asarray(ref_patch, dtype=np.float64).ravel()
    b = np.asarray(match_patch, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise MatchingError("patches must have the same size")
    da = a - a.mean()
    db = b - b.mean()
    va = float(da @ da)
    vb = float(db @ db)
    if va <= _VAR_EPS * a.size or vb <= _VAR_EPS * b.size:
        return float(scale)
    ncc = float(da @ db) / np.sqrt(va * vb)
    return float(scale * min(max(1.0 - ncc, 0.0), 1.0))


# ---------------------------------------------------------------------------
# Warping helpers
# ---------------------------------------------------------------------------


def warp_image(img: np.ndarray, H: np.ndarray, shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Resample ``img`` onto a ``shape`` grid through homography ``H`` (ref -> img).

    Bilinear with edge clamping. Returns the warped image and a mask of grid
    pixels whose mapped center lies inside ``img``.
    """
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    pts = np.stack([xs, ys, np.ones_like(xs)], axis=-1) @ np.asarray(H).T
    u = pts[..., 0] / pts[..., 2]
    v = pts[..., 1] / pts[..., 2]
    ih, iw = img.shape
    inside = (pts[..., 2] > 0) & (u >= 0) & (u <= iw - 1) & (v >= 0) & (v <= ih - 1)
    warped = ndimage.map_coordinates(
        np.asarray(img, dtype=np.float64),
        [np.clip(v, 0, ih - 1), np.clip(u, 0, iw - 1)],
        order=1,
        mode="nearest",
    )
    return warped, inside


@nb.njit(cache=True, nogil=True, inline="always")
def _bilinear(img, u, v):
    h, w = img.shape
    if u < 0.0:
        u = 0.0
    elif u > w - 1:
        u = w - 1.0
    if v < 0.0:
        v = 0.0
    elif v > h - 1:
        v = h - 1.0
    x0 = int(np.floor(u))
    y0 = int(np.floor(v))
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    fx = u - x0
    fy = v - y0
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


@nb.njit(cache=True, nogil=True, inline="always")
def _popcount64(x):
    x = x - ((x >> np.uint64(1)) & np.uint64(0x5555555555555555))
    x = (x & np.uint64(0x3333333333333333)) + ((x >> np.uint64(2)) & np.uint64(0x3333333333333333))
    x = (x + (x >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    return int((x * np.uint64(0x0101010101010101)) >> np.uint64(56))


@nb.njit(cache=True, nogil=True)
def _map(Hm, x, y):
    zx = Hm[0, 0] * x + Hm[0, 1] * y + Hm[0, 2]
    zy = Hm[1, 0] * x + Hm[1, 1] * y + Hm[1, 2]
    zz = Hm[2, 0] * x + Hm[2, 1] * y + Hm[2, 2]
    return zx, zy, zz


@nb.njit(cache=True, nogil=True)
def _census_cost_at(ref_bits, match, Hm, x, y, rx, ry, h, w, worst):
    cu, cv, cz = _map(Hm, x, y)
    if cz <= 0.0:
        return worst
    cu /= cz
    cv /= cz
    mh, mw = match.shape
    if cu < 0.0 or cu > mw - 1 or cv < 0.0 or cv > mh - 1:
        return worst
    center = _bilinear(match, cu, cv)
    bits = np.uint64(0)
    k = 0
    for dy in range(-ry, ry + 1):
        yy = min(max(y + dy, 0), h - 1)
        for dx in range(-rx, rx + 1):
            if dx == 0 and dy == 0:
                continue
            xx = min(max(x + dx, 0), w - 1)
            nu, nv, nz = _map(Hm, xx, yy)
            if nz > 0.0:
                val = _bilinear(match, nu / nz, nv / nz)
            else:
                val = center
            if val < center:
                bits |= np.uint64(1) << np.uint64(k)
            k += 1
    return float(_popcount64(bits ^ ref_bits[y, x]))


@nb.njit(cache=True, nogil=True)
def _ncc_cost_at(ref_img, ref_mean, ref_ss, match, Hm, x, y, rx, ry, h, w, scale, buf):
    cu, cv, cz = _map(Hm, x, y)
    if cz <= 0.0:
        return scale
    cu /= cz
    cv /= cz
    mh, mw = match.shape
    if cu < 0.0 or cu > mw - 1 or cv < 0.0 or cv > mh - 1:
        return scale
    n = 0
    total = 0.0
    for dy in range(-ry, ry + 1):
        yy = min(max(y + dy, 0), h - 1)
        for dx in range(-rx, rx + 1):
            xx = min(max(x + dx, 0), w - 1)
            nu, nv, nz = _map(Hm, xx, yy)
            if nz > 0.0:
                val = _bilinear(match, nu / nz, nv / nz)
            else:
                val = _bilinear(match, cu, cv)
            buf[n] = val
            total += val
            n += 1
    mean = total / n
    ss = 0.0
    cross = 0.0
    n = 0
    rm = ref_mean[y, x]
    for dy in range(-ry, ry + 1):
        yy = min(max(y + dy, 0), h - 1)
        for dx in range(-rx, rx + 1):
            xx = min(max(x + dx, 0), w - 1)
            dm = buf[n] - mean
            ss += dm * dm
            cross += dm * (ref_img[yy, xx] - rm)
            n += 1
    if ref_ss[y, x] <= _VAR_EPS * n or ss <= _VAR_EPS * n:
        return scale
    ncc = cross / np.sqrt(ref_ss[y, x] * ss)
    c = 1.0 - ncc
    if c < 0.0:
        c = 0.0
    elif c > 1.0:
        c = 1.0
    return scale * c


@nb.njit(cache=True, parallel=True)
def _volume_kernel(
    kind, ref_img, ref_bits, ref_mean, ref_ss, matches, Hs, start, length, lmax, rx, ry, worst
):
    h, w = ref_img.shape
    n_views = matches.shape[0]
    out = np.full((h, w, lmax), np.inf, dtype=np.float32)
    for y in nb.prange(h):
        buf = np.empty((2 * rx + 1) * (2 * ry + 1))
        per_view = np.empty(n_views)
        for x in range(w):
            s0 = start[y, x]
            for j in range(length[y, x]):
                d = s0 + j
                for k in range(n_views):
                    if kind == 0:
                        per_view[k] = _census_cost_at(
                            ref_bits, matches[k], Hs[d, k], x, y, rx, ry, h, w, worst
                        )
                    else:
                        per_view[k] = _ncc_cost_at(
                            ref_img, ref_mean, ref_ss, matches[k], Hs[d, k], x, y, rx, ry, h, w, worst, buf
                        )
                left = 0.5 * (per_view[0] + per_view[1])
                right = 0.5 * (per_view[2] + per_view[3])
                out[y, x, j] = min(left, right)
    return out


# ---------------------------------------------------------------------------
# Cost volume
# ---------------------------------------------------------------------------


@dataclass
class CostVolume:
    """Per-pixel matching costs over a pixel-dependent plane index range.

    ``costs[y, x, j]`` holds the cost of plane ``start[y, x] + j`` for
    ``j < length[y, x]``; trailing slots are padding (``inf``) and are never
    read by the aggregation.
    """

    costs: np.ndarray
    start: np.ndarray
    length: np.ndarray
    n_planes: int
    kind: str

    @property
    def shape(self) -> tuple[int, int]:
        return self.costs.shape[:2]

    @classmethod
    def full(cls, costs: np.ndarray, kind: str = "census") -> "CostVolume":
        """Wrap a dense ``(H, W, D)`` array covering every plane."""
        costs = np.asarray(costs)
        h, w, d = costs.shape
        return cls(
            costs=costs,
            start=np.zeros((h, w), dtype=np.int32),
            length=np.full((h, w), d, dtype=np.int32),
            n_planes=d,
            kind=kind,
        )

    def dense(self, fill: float = np.inf) -> np.ndarray:
        """Expand to an ``(H, W, n_planes)`` array indexed by plane."""
        return _to_dense(self.costs, self.start, self.length, self.n_planes, fill)


def _to_dense(values, start, length, n_planes, fill):
    h, w, lmax = values.shape
    out = np.full((h, w, n_planes), fill, dtype=values.dtype)
    j = np.arange(lmax)
    valid = j[None, None, :] < length[..., None]
    yy, xx, jj = np.nonzero(valid)
    out[yy, xx, start[yy, xx] + jj] = values[yy, xx, jj]
    return out


def full_ranges(shape: tuple[int, int], n_planes: int) -> tuple[np.ndarray, np.ndarray]:
    h, w = shape
    return np.zeros((h, w), dtype=np.int32), np.full((h, w), n_planes, dtype=np.int32)


def _window_stats(img: np.ndarray, rx: int, ry: int) -> tuple[np.ndarray, np.ndarray]:
    size = (2 * ry + 1, 2 * rx + 1)
    padded = np.pad(img, ((ry, ry), (rx, rx)), mode="edge")
    h, w = img.shape
    shifted = [padded[dy : dy + h, dx : dx + w] for dy in range(size[0]) for dx in range(size[1])]
    mean = sum(shifted) / len(shifted)
    # Explicit squared deviations; E[x^2] - E[x]^2 is too lossy for the
    # zero-variance guard.
    ss = sum((s - mean) ** 2 for s in shifted)
    return mean, ss


def build_cost_volume(
    images: Sequence[np.ndarray],
    views: Sequence[CameraView],
    planes: SamplingPlaneSet,
    ranges: tuple[np.ndarray, np.ndarray] | None = None,
    cost_kind: str = "census",
    census_window: tuple[int, int] = CENSUS_WINDOW,
    ncc_window: tuple[int, int] = NCC_WINDOW,
) -> CostVolume:
    """Plane-sweep matching costs for the center image of a five-image bundle.

    Every in-range plane warps each pixel (and its matching window) into the
    four match images. Costs are averaged over the two views before and the
    two after the reference and the smaller of those two means is kept,
    which tolerates occlusions on one side. A view whose warped center falls
    outside its image contributes the worst cost of the metric.

    Args:
        images: five ``(H, W)`` images, reference in the middle.
        views: cameras matching ``images``.
        planes: sweep planes at this image resolution.
        ranges: per-pixel ``(start, length)`` plane index ranges; full range
            if omitted.
        cost_kind: ``"census"`` or ``"ncc"``.
    """
    if len(images) != BUNDLE_SIZE or len(views) != BUNDLE_SIZE:
        raise MatchingError(f"expected {BUNDLE_SIZE} images, got {len(images)}")
    if cost_kind not in ("census", "ncc"):
        raise MatchingError(f"unknown cost kind {cost_kind!r}")
    ref_img = np.ascontiguousarray(images[REF_INDEX], dtype=np.float64)
    h, w = ref_img.shape
    ref = views[REF_INDEX]
    if (ref.width, ref.height) != (w, h):
        raise MatchingError("reference view size does not match reference image")

    n_planes = len(planes)
    if ranges is None:
        ranges = full_ranges((h, w), n_planes)
    start = np.ascontiguousarray(ranges[0], dtype=np.int32)
    length = np.ascontiguousarray(ranges[1], dtype=np.int32)
    if start.shape != (h, w) or length.shape != (h, w):
        raise MatchingError("range arrays must match the image shape")
    if np.any(start < 0) or np.any(length < 1) or np.any(start + length > n_planes):
        raise MatchingError("per-pixel range exceeds the plane set")

    match_ids = LEFT_VIEWS + RIGHT_VIEWS
    match_imgs = [np.asarray(images[i], dtype=np.float64) for i in match_ids]
    shapes = {m.shape for m in match_imgs}
    if len(shapes) != 1:
        raise MatchingError("match images must share one size")
    matches = np.ascontiguousarray(np.stack(match_imgs))
    Hs = np.ascontiguousarray(sweep_homographies(ref, [views[i] for i in match_ids], planes))
    lmax = int(length.max())

    if cost_kind == "census":
        rx, ry = census_window[0] // 2, census_window[1] // 2
        bits = census_transform(ref_img, census_window)
        mean = ss = np.zeros((1, 1))
        kind = 0
    else:
        rx, ry = ncc_window[0] // 2, ncc_window[1] // 2
        bits = np.zeros((1, 1), dtype=np.uint64)
        mean, ss = _window_stats(ref_img, rx, ry)
        kind = 1
    worst = worst_cost(cost_kind, census_window)
    costs = _volume_kernel(
        kind, ref_img, bits, mean, ss, matches, Hs, start, length, lmax, rx, ry, worst
    )
    return CostVolume(costs=costs, start=start, length=length, n_planes=n_planes, kind=cost_kind)
