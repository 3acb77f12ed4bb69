"""Hierarchical plane-sweep multi-view stereo with surface-aware semi-global matching."""

from . import parallel  # noqa: F401  (configures the numba threading layer first)

__version__ = "0.1.0"
