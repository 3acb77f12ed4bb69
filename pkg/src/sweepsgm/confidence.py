"""Per-pixel confidence from SGM path statistics."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .sgm import AggregatedVolume

logger = logging.getLogger(__name__)

EPS = 1e-9


@dataclass(frozen=True)
class ConfidenceParams:
    """``phi`` sets the decay with path inconsistency, ``tau`` the uniqueness margin."""

    phi: float
    tau: float

    def __post_init__(self) -> None:
        if self.phi <= 0:
            raise ValueError("phi must be positive")
        if self.tau < 0:
            raise ValueError("tau must be non-negative")


DEFAULT_CONFIDENCE = {
    "ncc": ConfidenceParams(phi=80.0, tau=10.0),
    "census": ConfidenceParams(phi=650.0, tau=80.0),
}


def _masked(agg: AggregatedVolume) -> np.ndarray:
    lmax = agg.summed.shape[2]
    valid = np.arange(lmax)[None, None, :] < agg.length[..., None]
    return np.where(valid, agg.summed, np.inf)


def path_consistency_map(agg: AggregatedVolume) -> np.ndarray:
    """Gap between the winning summed cost and the sum of per-path minima."""
    return _masked(agg).min(axis=2) - agg.path_min_sum


def uniqueness_map(agg: AggregatedVolume) -> np.ndarray:
    """Second-lowest minus lowest summed cost; NaN where only one plane is in range."""
    values = _masked(agg)
    if values.shape[2] < 2:
        return np.full(values.shape[:2], np.nan)
    two = np.partition(values, 1, axis=2)[..., :2]
    out = two[..., 1] - two[..., 0]
    return np.where(agg.length >= 2, out, np.nan)


def path_consistency(agg: AggregatedVolume, p: tuple[int, int]) -> float:
    """Path-consistency term at pixel ``p = (x, y)``."""
    x, y = p
    n = agg.length[y, x]
    return float(agg.summed[y, x, :n].min() - agg.path_min_sum[y, x])


def uniqueness(agg: AggregatedVolume, p: tuple[int, int]) -> float:
    """Uniqueness margin at pixel ``p = (x, y)``; 0 for a single-plane range."""
    x, y = p
    n = agg.length[y, x]
    if n < 2:
        logger.debug("uniqueness undefined at %s: single plane in range", p)
        return 0.0
    two = np.partition(agg.summed[y, x, :n], 1)[:2]
    return float(two[1] - two[0])


def confidence_from_terms(
    path_gap: np.ndarray, margin: np.ndarray, params: ConfidenceParams
) -> np.ndarray:
    """``exp(-U_p / phi) * min(exp(U_u - tau), 1)``; a NaN margin counts as 1."""
    path_gap = np.asarray(path_gap, dtype=np.float64)
    margin = np.asarray(margin, dtype=np.float64)
    gap = np.where(path_gap <= EPS, 0.0, path_gap)
    decay = np.exp(-gap / params.phi)
    with np.errstate(over="ignore"):
        unique = np.minimum(np.exp(np.minimum(margin - params.tau, 0.0)), 1.0)
    unique = np.where(np.isnan(margin), 1.0, unique)
    return decay * unique


def confidence_map(agg: AggregatedVolume, params: ConfidenceParams) -> np.ndarray:
    """Confidence in ``[0, 1]`` for every pixel of the aggregated volume."""
    return confidence_from_terms(path_consistency_map(agg), uniqueness_map(agg), params)
