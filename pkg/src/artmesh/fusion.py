"""Fusion of the two backend depth maps into one normalized map.

The combined map is a pixel-wise convex combination of the global-structure
map and the fine-detail map (after resampling the latter onto the former's
grid), followed by an affine renormalization onto a fixed depth interval so
the arbitrary scales of the two backends cannot leak into the geometry.
"""

from dataclasses import dataclass

import numpy as np

from .raster import DepthMap, resize_bilinear

__all__ = ["FusionParams", "fuse", "normalize_range", "fuse_and_normalize"]

DEFAULT_ALPHA = 0.97
DEFAULT_D_MIN = 0.6
DEFAULT_D_MAX = 1.0


@dataclass(frozen=True)
class FusionParams:
    """Blend weight and target depth interval for fusion + normalization."""

    alpha: float = DEFAULT_ALPHA
    d_min: float = DEFAULT_D_MIN
    d_max: float = DEFAULT_D_MAX

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not self.d_min < self.d_max:
            raise ValueError(f"require d_min < d_max, got [{self.d_min}, {self.d_max}]")


def fuse(d_glpn, d_da, params=FusionParams()):
    """Blend two depth maps: alpha * d_glpn + (1 - alpha) * d_da.

    d_da is first resampled to d_glpn's resolution, so the output always has
    d_glpn's dimensions.
    """
    resized = resize_bilinear(d_da, d_glpn.width, d_glpn.height)
    combined = params.alpha * d_glpn.values + (1.0 - params.alpha) * resized.values
    return DepthMap(combined)


def normalize_range(d, params=FusionParams()):
    """Affinely map the depth values' [min, max] onto [d_min, d_max].

    The endpoints are attained exactly. A constant input has no range to
    stretch and maps to the interval midpoint.
    """
    vals = d.values
    lo = vals.min()
    hi = vals.max()
    if hi == lo:
        out = np.full_like(vals, 0.5 * (params.d_min + params.d_max))
    else:
        t = (vals - lo) / (hi - lo)
        # Lerp form: endpoints land on d_min/d_max exactly, unlike
        # d_min + t * (d_max - d_min) which can miss d_max by one ulp.
        out = params.d_min * (1.0 - t) + params.d_max * t
    return DepthMap(out)


def fuse_and_normalize(d_glpn, d_da, params=FusionParams()):
    """Fuse the two maps, then normalize the result onto [d_min, d_max]."""
    return normalize_range(fuse(d_glpn, d_da, params), params)
