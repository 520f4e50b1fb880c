"""Image and depth raster I/O plus the resampling used by the fusion stage.

RGB images are 8/16-bit PNG; depth rasters travel as grayscale PFM
(lossless float32) or 16-bit grayscale PNG with a ``.range`` sidecar
holding the de-quantization interval.
"""

import os
import re
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

__all__ = [
    "RgbImage",
    "DepthMap",
    "load_rgb",
    "load_depth",
    "read_pfm",
    "write_pfm",
    "resize_bilinear",
    "resize_to_multiple_of_32",
]


@dataclass(frozen=True, eq=False)
class RgbImage:
    """RGB raster with channels in [0, 1], stored as a (H, W, 3) float array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64, copy=True)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("RgbImage expects a (H, W, 3) array with H, W >= 1")
        if not np.isfinite(px).all():
            raise ValueError("RgbImage contains non-finite channel values")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("RgbImage channel values must lie in [0, 1]")
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Single-channel relative-depth raster, stored as a (H, W) float array.

    Values are unitless, finite and non-negative; only their ordering is
    meaningful until range normalization fixes a scale.
    """

    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, copy=True)
        if vals.ndim != 2 or vals.shape[0] < 1 or vals.shape[1] < 1:
            raise ValueError("DepthMap expects a (H, W) array with H, W >= 1")
        if not np.isfinite(vals).all():
            raise ValueError("DepthMap contains NaN or Inf values")
        if vals.min() < 0.0:
            raise ValueError("DepthMap contains negative values")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def height(self):
        return self.values.shape[0]


def load_rgb(path):
    """Load an 8- or 16-bit PNG as an RgbImage with channels scaled to [0, 1].

    Grayscale inputs are replicated across channels; an alpha channel, if
    present, is dropped.
    """
    path = str(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such image file: {path}")
    raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ValueError(f"malformed or unreadable PNG: {path}")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ValueError(f"unsupported bit depth {raw.dtype} in {path}")
    if raw.ndim == 2:
        rgb = np.repeat(raw[:, :, None], 3, axis=2)
    elif raw.ndim == 3 and raw.shape[2] in (3, 4):
        rgb = raw[:, :, 2::-1]  # BGR(A) -> RGB
    else:
        raise ValueError(f"unsupported channel layout {raw.shape} in {path}")
    return RgbImage(rgb.astype(np.float64) / scale)


def read_pfm(path):
    """Read a grayscale ("Pf") PFM file into a (H, W) float array.

    The scale line's sign selects endianness per the PFM convention; rows are
    stored bottom-to-top and flipped to top-down order here.
    """
    path = str(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such PFM file: {path}")
    with open(path, "rb") as f:
        header = f.readline().rstrip()
        if header == b"PF":
            raise ValueError(f"color PFM not supported: {path}")
        if header != b"Pf":
            raise ValueError(f"not a grayscale PFM (bad magic {header!r}): {path}")
        dims = f.readline().decode("ascii", "replace")
        m = re.match(r"^\s*(\d+)\s+(\d+)\s*$", dims)
        if not m:
            raise ValueError(f"malformed PFM dimension line {dims!r}: {path}")
        width, height = int(m.group(1)), int(m.group(2))
        if width < 1 or height < 1:
            raise ValueError(f"bad PFM dimensions {width}x{height}: {path}")
        try:
            scale = float(f.readline().decode("ascii", "replace"))
        except ValueError:
            raise ValueError(f"malformed PFM scale line: {path}") from None
        dtype = "<f4" if scale < 0 else ">f4"
        buf = f.read(4 * width * height)
    if len(buf) != 4 * width * height:
        raise ValueError(f"truncated PFM body ({len(buf)} bytes): {path}")
    data = np.frombuffer(buf, dtype=dtype).reshape(height, width)
    if not np.isfinite(data).all():
        raise ValueError(f"PFM contains NaN or Inf samples: {path}")
    return np.flipud(data).astype(np.float64)


def write_pfm(path, values):
    """Write a (H, W) float array as canonical little-endian grayscale PFM.

    Header is exactly ``Pf\\n<w> <h>\\n-1.0\\n``; the body is float32
    bottom-to-top, so a write/read round trip is bit-exact at that precision.
    """
    vals = np.asarray(values, dtype=np.float32)
    if vals.ndim != 2:
        raise ValueError("write_pfm expects a (H, W) array")
    if not np.isfinite(vals).all():
        raise ValueError("refusing to write NaN or Inf to PFM")
    height, width = vals.shape
    with open(str(path), "wb") as f:
        f.write(f"Pf\n{width} {height}\n-1.0\n".encode("ascii"))
        f.write(np.flipud(vals).tobytes())


def _read_range_sidecar(png_path):
    sidecar = Path(png_path).with_suffix(".range")
    if not sidecar.is_file():
        raise ValueError(f"16-bit depth PNG requires a sidecar {sidecar}")
    parts = sidecar.read_text().split()
    if len(parts) != 2:
        raise ValueError(f"sidecar {sidecar} must contain exactly 'min max'")
    lo, hi = float(parts[0]), float(parts[1])
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi < lo:
        raise ValueError(f"bad sidecar range [{lo}, {hi}] in {sidecar}")
    return lo, hi


def load_depth(path):
    """Load a depth raster from PFM or from 16-bit grayscale PNG + sidecar.

    PFM floats are taken verbatim; PNG samples are linearly de-quantized
    onto the sidecar [min, max] interval.
    """
    p = Path(path)
    suffix = p.suffix.lower()
    if suffix == ".pfm":
        return DepthMap(read_pfm(p))
    if suffix == ".png":
        if not p.is_file():
            raise FileNotFoundError(f"no such depth file: {p}")
        raw = cv2.imread(str(p), cv2.IMREAD_UNCHANGED)
        if raw is None:
            raise ValueError(f"malformed or unreadable PNG: {p}")
        if raw.dtype != np.uint16 or raw.ndim != 2:
            raise ValueError(f"depth PNG must be 16-bit grayscale: {p}")
        lo, hi = _read_range_sidecar(p)
        return DepthMap(lo + raw.astype(np.float64) / 65535.0 * (hi - lo))
    raise ValueError(f"unsupported depth format {suffix!r}: {p}")


def _corner_coords(n_in, n_out):
    # Corner-aligned mapping: first/last output samples hit the first/last
    # input samples. A single output sample takes the input midpoint.
    if n_out == 1:
        return np.array([(n_in - 1) / 2.0])
    return np.linspace(0.0, n_in - 1.0, n_out)


def _resample_axis(coords, n_in):
    lo = np.clip(np.floor(coords).astype(np.intp), 0, max(n_in - 2, 0))
    frac = np.clip(coords - lo, 0.0, 1.0)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, frac


def _resize2d(values, target_w, target_h):
    h, w = values.shape
    if target_w == w and target_h == h:
        return values.copy()
    x0, x1, tx = _resample_axis(_corner_coords(w, target_w), w)
    y0, y1, ty = _resample_axis(_corner_coords(h, target_h), h)
    tx = tx[None, :]
    ty = ty[:, None]
    top = values[np.ix_(y0, x0)] * (1.0 - tx) + values[np.ix_(y0, x1)] * tx
    bot = values[np.ix_(y1, x0)] * (1.0 - tx) + values[np.ix_(y1, x1)] * tx
    return top * (1.0 - ty) + bot * ty


def resize_bilinear(d, target_w, target_h):
    """Resample a DepthMap to the target size with corner-aligned bilinear
    interpolation; output values are convex combinations of input samples."""
    if target_w < 1 or target_h < 1:
        raise ValueError("resize targets must be >= 1 pixel")
    return DepthMap(_resize2d(d.values, target_w, target_h))


def resize_to_multiple_of_32(img):
    """Floor an RgbImage's dimensions to the nearest multiples of 32.

    Flooring (never padding) avoids fabricating content at the borders;
    inputs smaller than 32 pixels on a side are rejected.
    """
    if img.width < 32 or img.height < 32:
        raise ValueError(f"image {img.width}x{img.height} smaller than 32 in a dimension")
    new_w = 32 * (img.width // 32)
    new_h = 32 * (img.height // 32)
    if new_w == img.width and new_h == img.height:
        return img
    channels = [_resize2d(img.pixels[:, :, c], new_w, new_h) for c in range(3)]
    return RgbImage(np.clip(np.stack(channels, axis=2), 0.0, 1.0))
