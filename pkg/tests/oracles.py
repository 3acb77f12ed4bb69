"""Slow, obviously-correct reference implementations used by the tests."""

from __future__ import annotations

import itertools
import math

import numpy as np

from sweepsgm.geometry import CameraView, SamplingPlaneSet, ray_plane_intersection
from sweepsgm.sgm import DIRECTIONS, index_jump_sn


def small_view(width: int, height: int, focal: float = 6.0) -> CameraView:
    K = np.array([[focal, 0.0, (width - 1) / 2.0], [0.0, focal, (height - 1) / 2.0], [0.0, 0.0, 1.0]])
    return CameraView(K, np.eye(3), np.zeros(3), (width, height))


def pg_jump(p, direction, d, d_hat, planes: SamplingPlaneSet, view: CameraView, max_jump: int) -> int:
    """Index jump from the scene-space gradient between X_p and the predecessor's best point.

    The gradient line through ``X_p`` is intersected (least squares) with the
    predecessor's viewing ray, and the nearest plane to that depth is taken.
    """
    q = (p[0] - direction[0], p[1] - direction[1])
    Xp = ray_plane_intersection(p, planes[d], view)
    Xq = ray_plane_intersection(q, planes[d_hat], view)
    grad = Xp - Xq
    rq = np.linalg.inv(view.K) @ np.array([q[0], q[1], 1.0])
    if np.linalg.norm(grad) == 0.0:
        return 0
    # X_p - s * grad = t * rq
    A = np.stack([-grad, -rq], axis=1)
    (s, t), *_ = np.linalg.lstsq(A, -Xp, rcond=None)
    k = int(planes.nearest_index((t * rq)[2]))
    return int(np.clip(k - d, -max_jump, max_jump))


def path_costs(
    S: np.ndarray,
    direction: tuple[int, int],
    p1: float,
    big: np.ndarray,
    variant: str = "fp",
    normals: np.ndarray | None = None,
    planes: SamplingPlaneSet | None = None,
    view: CameraView | None = None,
    max_jump: int = 3,
) -> np.ndarray:
    """Unnormalized path costs L_r on a dense volume by memoized recursion.

    ``big[y, x]`` is the large-jump penalty for the step into ``(x, y)``.
    Every predecessor plane is tried with its penalty; no shortcuts.
    """
    h, w, n = S.shape
    dx, dy = direction
    memo: dict[tuple[int, int], np.ndarray] = {}

    def L(x: int, y: int) -> np.ndarray:
        if (x, y) in memo:
            return memo[(x, y)]
        qx, qy = x - dx, y - dy
        if not (0 <= qx < w and 0 <= qy < h):
            out = S[y, x].astype(np.float64).copy()
        else:
            prev = L(qx, qy)
            d_hat = int(np.argmin(prev))
            out = np.empty(n)
            for d in range(n):
                if variant == "fp":
                    target = d
                elif variant == "sn":
                    target = d + index_jump_sn((x, y), direction, normals[y, x], d, planes, view, max_jump)
                else:
                    target = d + pg_jump((x, y), direction, d, d_hat, planes, view, max_jump)
                best = np.inf
                for dp in range(n):
                    gap = abs(dp - target)
                    pen = 0.0 if gap == 0 else p1 if gap == 1 else big[y, x]
                    best = min(best, prev[dp] + pen)
                out[d] = S[y, x, d] + best
        memo[(x, y)] = out
        return out

    return np.stack([np.stack([L(x, y) for x in range(w)]) for y in range(h)])


def gradient_penalty(ref: np.ndarray, direction: tuple[int, int], p1: float, alpha: float, beta: float) -> np.ndarray:
    h, w = ref.shape
    dx, dy = direction
    big = np.zeros((h, w))
    for y, x in itertools.product(range(h), range(w)):
        qx, qy = x - dx, y - dy
        if 0 <= qx < w and 0 <= qy < h:
            big[y, x] = p1 * (1.0 + alpha * math.exp(-abs(ref[y, x] - ref[qy, qx]) / beta))
    return big


def all_paths(S, p1, big_for, **kw) -> list[np.ndarray]:
    return [path_costs(S, r, p1, big_for(r), **kw) for r in DIRECTIONS]


def exhaustive_row(S: np.ndarray, p1: float, p2: float) -> np.ndarray:
    """L values for a single left-to-right row by enumerating every label sequence.

    ``L(x, d)`` is the minimum over all label sequences ending in ``d`` at
    ``x`` of data costs plus transition penalties.
    """
    w, n = S.shape
    out = np.full((w, n), np.inf)
    for x in range(w):
        for seq in itertools.product(range(n), repeat=x + 1):
            cost = sum(S[i, seq[i]] for i in range(x + 1))
            for i in range(1, x + 1):
                gap = abs(seq[i] - seq[i - 1])
                cost += 0 if gap == 0 else p1 if gap == 1 else p2
            out[x, seq[-1]] = min(out[x, seq[-1]], cost)
    return out


def median_oracle(depth: np.ndarray, size: int = 5) -> np.ndarray:
    h, w = depth.shape
    r = size // 2
    out = np.full_like(depth, np.nan)
    for y in range(h):
        for x in range(w):
            if np.isnan(depth[y, x]):
                continue
            win = depth[max(0, y - r) : y + r + 1, max(0, x - r) : x + r + 1].ravel()
            vals = np.sort(win[~np.isnan(win)])
            m = len(vals)
            out[y, x] = vals[m // 2] if m % 2 else 0.5 * (vals[m // 2 - 1] + vals[m // 2])
    return out
