"""Coarse-to-fine depth, normal and confidence estimation for a five-image bundle."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np
from scipy import ndimage

from .confidence import DEFAULT_CONFIDENCE, ConfidenceParams, confidence_map
from .geometry import CameraView, SamplingPlaneSet, generate_sampling_planes, scale_view
from .matching import BUNDLE_SIZE, REF_INDEX, build_cost_volume, full_ranges
from .sgm import (
    MAX_INDEX_JUMP,
    PenaltyConfig,
    VariantSpec,
    aggregate_paths,
    extract_winners,
    line_mask,
    median_filter,
)
from .surface import gestalt_smooth, normals_from_depth

logger = logging.getLogger(__name__)

# Penalties per (cost, P2 strategy); P2 is derived per pixel in gradient mode.
PUBLISHED_PENALTIES: dict[tuple[str, str], tuple[float, float | None]] = {
    ("ncc", "gradient"): (150.0, None),
    ("ncc", "line"): (60.0, 220.0),
    ("census", "gradient"): (15.0, None),
    ("census", "line"): (10.0, 55.0),
}


class PipelineError(RuntimeError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    d_min: float
    d_max: float
    levels: int = 3
    delta_d: int = 6
    cost: str = "ncc"
    variant: str = "fp"
    p2_mode: str = "gradient"
    P1: float = 150.0
    P2: float | None = None
    alpha: float = 8.0
    beta: float = 10.0
    phi: float = 80.0
    tau: float = 10.0
    dog_sigma1: float = 1.0
    dog_sigma2: float = 2.0
    dog_threshold: float = 2.0
    census_window: tuple[int, int] = (9, 7)
    ncc_window: tuple[int, int] = (5, 5)
    gestalt_kernel: tuple[int, int] = (21, 21)
    median_kernel: tuple[int, int] = (5, 5)
    max_index_jump: int = MAX_INDEX_JUMP

    def __post_init__(self) -> None:
        if self.levels < 1:
            raise PipelineError("levels must be at least 1")
        if self.delta_d < 1:
            raise PipelineError("delta_d must be at least 1")
        if not 0 < self.d_min < self.d_max:
            raise PipelineError(f"invalid depth range [{self.d_min}, {self.d_max}]")
        if self.cost not in ("census", "ncc"):
            raise PipelineError(f"unknown cost {self.cost!r}")
        if self.variant not in ("fp", "sn", "pg"):
            raise PipelineError(f"unknown variant {self.variant!r}")
        if not 0 < self.dog_sigma1 < self.dog_sigma2:
            raise PipelineError("DoG needs 0 < sigma1 < sigma2")
        for name in ("gestalt_kernel", "median_kernel"):
            kw, kh = getattr(self, name)
            if kw != kh or kw % 2 == 0:
                raise PipelineError(f"{name} must be square with odd size")
        # validates P1/P2/alpha/beta and phi/tau
        self.penalties
        self.confidence

    @classmethod
    def published_defaults(
        cls, d_min: float, d_max: float, cost: str = "ncc", p2_mode: str = "gradient", **overrides
    ) -> "PipelineConfig":
        """Configuration with the published parameters for ``cost`` and ``p2_mode``."""
        try:
            P1, P2 = PUBLISHED_PENALTIES[(cost, p2_mode)]
        except KeyError:
            raise PipelineError(f"no defaults for cost={cost!r}, p2={p2_mode!r}") from None
        conf = DEFAULT_CONFIDENCE[cost]
        base = dict(
            d_min=d_min,
            d_max=d_max,
            cost=cost,
            p2_mode=p2_mode,
            P1=P1,
            P2=P2,
            phi=conf.phi,
            tau=conf.tau,
        )
        base.update(overrides)
        return cls(**base)

    @property
    def penalties(self) -> PenaltyConfig:
        return PenaltyConfig(P1=self.P1, P2=self.P2, p2_mode=self.p2_mode, alpha=self.alpha, beta=self.beta)

    @property
    def confidence(self) -> ConfidenceParams:
        return ConfidenceParams(phi=self.phi, tau=self.tau)

    @property
    def gestalt_radius(self) -> int:
        return self.gestalt_kernel[0] // 2

    def with_overrides(self, **kwargs) -> "PipelineConfig":
        return replace(self, **kwargs)

    def items(self) -> list[tuple[str, object]]:
        return [(f.name, getattr(self, f.name)) for f in fields(self)]


@dataclass
class ImagePyramid:
    """Images and cameras per level, index 0 being the coarsest."""

    images: list[np.ndarray]
    views: list[CameraView]

    def __len__(self) -> int:
        return len(self.images)


def blur3x3(img: np.ndarray) -> np.ndarray:
    """Gaussian blur with sigma 1 on a 3x3 support."""
    return ndimage.gaussian_filter(np.asarray(img, dtype=np.float64), sigma=1.0, truncate=1.0, mode="nearest")


def build_pyramid(
    img: np.ndarray, view: CameraView, levels: int, min_size: tuple[int, int] = (9, 7)
) -> ImagePyramid:
    """Blur-and-halve pyramid whose finest level is the input image.

    Odd sizes are floor-divided; the kept samples are the even pixels, which
    matches halving the intrinsics.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    factor = 2 ** (levels - 1)
    if w < min_size[0] * factor or h < min_size[1] * factor:
        raise PipelineError(
            f"image {w}x{h} too small for {levels} levels (needs {min_size[0] * factor}x{min_size[1] * factor})"
        )
    if (view.width, view.height) != (w, h):
        raise PipelineError("camera size does not match image size")
    images = [img]
    for _ in range(levels - 1):
        prev = images[0]
        ph, pw = prev.shape
        images.insert(0, blur3x3(prev)[: ph // 2 * 2 : 2, : pw // 2 * 2 : 2])
    views = [scale_view(view, level, levels) for level in range(levels)]
    return ImagePyramid(images=images, views=views)


def upscale_nearest(arr: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour upscaling by two onto ``shape`` (extra odd rows repeat the edge)."""
    arr = np.asarray(arr)
    h, w = shape
    ys = np.minimum(np.arange(h) // 2, arr.shape[0] - 1)
    xs = np.minimum(np.arange(w) // 2, arr.shape[1] - 1)
    return arr[ys][:, xs]


def downsample_to(arr: np.ndarray, shape: tuple[int, int], factor: int) -> np.ndarray:
    h, w = shape
    return np.asarray(arr)[::factor, ::factor][:h, :w]


def refine_ranges(
    prev_depth: np.ndarray,
    planes_next: SamplingPlaneSet,
    delta_d: int,
    shape: tuple[int, int] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel ``(start, length)`` plane ranges around an upscaled estimate.

    The range spans ``delta_d`` plane indices either side of the plane nearest
    the upscaled previous depth, clipped to the plane set. Pixels without a
    previous estimate get the full range.
    """
    if shape is None:
        shape = (2 * prev_depth.shape[0], 2 * prev_depth.shape[1])
    up = upscale_nearest(prev_depth, shape)
    n = len(planes_next)
    valid = np.isfinite(up)
    center = planes_next.nearest_index(np.where(valid, up, planes_next.d_min))
    lo = np.clip(center - delta_d, 0, n - 1)
    hi = np.clip(center + delta_d, 0, n - 1)
    lo = np.where(valid, lo, 0)
    hi = np.where(valid, hi, n - 1)
    return lo.astype(np.int32), (hi - lo + 1).astype(np.int32)


def dog_mask(ref: np.ndarray, sigma1: float = 1.0, sigma2: float = 2.0, threshold: float = 2.0) -> np.ndarray:
    """True where the difference-of-Gaussians response shows enough texture."""
    if not 0 < sigma1 < sigma2:
        raise ValueError("DoG needs 0 < sigma1 < sigma2")
    img = np.asarray(ref, dtype=np.float64)
    g1 = ndimage.gaussian_filter(img, sigma1, mode="nearest")
    g2 = ndimage.gaussian_filter(img, sigma2, mode="nearest")
    return np.abs(g1 - g2) >= threshold


@dataclass
class LevelResult:
    level: int
    planes: SamplingPlaneSet
    depth: np.ndarray
    normals: np.ndarray
    confidence: np.ndarray
    variant: str
    seconds: float


@dataclass
class PipelineResult:
    depth: np.ndarray
    normals: np.ndarray
    confidence: np.ndarray
    mask: np.ndarray
    levels: list[LevelResult] = field(default_factory=list)

    @property
    def planes(self) -> SamplingPlaneSet:
        return self.levels[-1].planes


def run_pipeline(
    images: Sequence[np.ndarray],
    views: Sequence[CameraView],
    cfg: PipelineConfig,
    normal_prior: np.ndarray | None = None,
) -> PipelineResult:
    """Estimate depth, normals and confidence for the bundle's center image.

    Args:
        images: five grayscale images, reference in the middle.
        views: their cameras at full resolution.
        cfg: pipeline parameters.
        normal_prior: optional full-resolution normal map for the ``sn``
            variant. Without it, ``sn`` uses the previous level's normals and
            runs as ``fp`` on the coarsest level.

    Returns:
        Final maps with invalid pixels (NaN) wherever the reference lacks
        texture, plus per-level intermediate results.
    """
    if len(images) != BUNDLE_SIZE or len(views) != BUNDLE_SIZE:
        raise PipelineError(f"expected {BUNDLE_SIZE} images, got {len(images)}")
    min_size = cfg.census_window if cfg.cost == "census" else cfg.ncc_window
    pyramids = [build_pyramid(img, v, cfg.levels, min_size) for img, v in zip(images, views)]
    ref_full = np.asarray(images[REF_INDEX], dtype=np.float64)
    if normal_prior is not None and normal_prior.shape != ref_full.shape + (3,):
        raise PipelineError("normal prior must match the reference image")

    results: list[LevelResult] = []
    prev_depth = prev_normals = None
    for level in range(cfg.levels):
        t0 = time.perf_counter()
        try:
            level_imgs = [p.images[level] for p in pyramids]
            level_views = [p.views[level] for p in pyramids]
            ref_img = level_imgs[REF_INDEX]
            ref_view = level_views[REF_INDEX]
            shape = ref_img.shape
            matches = [v for i, v in enumerate(level_views) if i != REF_INDEX]
            planes = generate_sampling_planes(ref_view, matches, cfg.d_min, cfg.d_max)

            if prev_depth is None:
                ranges = full_ranges(shape, len(planes))
            else:
                ranges = refine_ranges(prev_depth, planes, cfg.delta_d, shape)

            volume = build_cost_volume(
                level_imgs,
                level_views,
                planes,
                ranges,
                cfg.cost,
                census_window=cfg.census_window,
                ncc_window=cfg.ncc_window,
            )

            variant = VariantSpec("fp")
            if cfg.variant == "pg":
                variant = VariantSpec("pg")
            elif cfg.variant == "sn":
                if normal_prior is not None:
                    factor = 2 ** (cfg.levels - 1 - level)
                    variant = VariantSpec("sn", downsample_to(normal_prior, shape, factor))
                elif prev_normals is not None:
                    variant = VariantSpec("sn", upscale_nearest(prev_normals, shape))

            lines = line_mask(ref_img) if cfg.p2_mode == "line" else None
            agg = aggregate_paths(
                volume,
                ref_img,
                cfg.penalties,
                variant,
                planes,
                ref_view,
                lines=lines,
                max_jump=cfg.max_index_jump,
            )
            depth = median_filter(extract_winners(agg, planes), cfg.median_kernel[0])
            conf = confidence_map(agg, cfg.confidence)
            conf = np.where(np.isfinite(depth), conf, np.nan)
            normals = gestalt_smooth(normals_from_depth(depth, ref_view), ref_img, cfg.gestalt_radius, cfg.beta)
        except Exception as exc:
            raise PipelineError(f"level {level} failed: {exc}") from exc

        seconds = time.perf_counter() - t0
        logger.info(
            "level %d: %dx%d, %d planes, variant %s, %.3f s",
            level, shape[1], shape[0], len(planes), variant.kind, seconds,
        )
        results.append(LevelResult(level, planes, depth, normals, conf, variant.kind, seconds))
        prev_depth, prev_normals = depth, normals

    final = results[-1]
    mask = dog_mask(ref_full, cfg.dog_sigma1, cfg.dog_sigma2, cfg.dog_threshold)
    mask &= np.isfinite(final.depth)
    depth = np.where(mask, final.depth, np.nan)
    normals = np.where(mask[..., None] & np.isfinite(final.normals), final.normals, np.nan)
    confidence = np.where(mask, final.confidence, np.nan)
    return PipelineResult(depth=depth, normals=normals, confidence=confidence, mask=mask, levels=results)
