"""Raster images, tissue masking, coverage, cropping, and bicubic resampling.

All pixel data is 8-bit RGB held in ``(height, width, 3)`` uint8 arrays.
Every operation here is a pure function of its inputs and safe to call from
any number of concurrent workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image


class BoundsError(ValueError):
    """A rectangle does not lie fully within its parent image."""


@dataclass(frozen=True)
class RasterImage:
    """In-memory RGB raster.

    ``pixels`` is a C-contiguous ``(height, width, 3)`` uint8 array; the
    constructor normalizes layout and validates shape/range.
    """

    pixels: np.ndarray

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected (h, w, 3) pixel array, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if px.dtype != np.uint8:
            if np.issubdtype(px.dtype, np.integer) and px.min() >= 0 and px.max() <= 255:
                px = px.astype(np.uint8)
            else:
                raise ValueError(f"pixel values must be uint8 in [0, 255], got {px.dtype}")
        object.__setattr__(self, "pixels", np.ascontiguousarray(px))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def full(cls, width: int, height: int, color=(255, 255, 255)) -> "RasterImage":
        """Solid-color image, white by default."""
        px = np.empty((height, width, 3), dtype=np.uint8)
        px[:, :] = np.asarray(color, dtype=np.uint8)
        return cls(px)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RasterImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )

    def __hash__(self):  # pragma: no cover - images are not meant to be dict keys
        return hash((self.pixels.shape, self.pixels.tobytes()))


@dataclass(frozen=True)
class TissueMask:
    """Per-pixel foreground map; True marks tissue."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise ValueError(f"expected (h, w) boolean array, got shape {bits.shape}")
        if bits.dtype != np.bool_:
            bits = bits.astype(bool)
        object.__setattr__(self, "bits", np.ascontiguousarray(bits))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle inside a parent image, in pixel units."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self) -> None:
        if self.x < 0 or self.y < 0:
            raise ValueError(f"rect origin must be non-negative, got ({self.x}, {self.y})")
        if self.w < 1 or self.h < 1:
            raise ValueError(f"rect extent must be positive, got {self.w}x{self.h}")

    def check_within(self, width: int, height: int) -> None:
        if self.x + self.w > width or self.y + self.h > height:
            raise BoundsError(
                f"rect {self} exceeds {width}x{height} parent bounds"
            )

    @property
    def area(self) -> int:
        return self.w * self.h


DEFAULT_BG_THRESHOLD = 240


def tissue_mask(img: RasterImage, bg_threshold: int = DEFAULT_BG_THRESHOLD) -> TissueMask:
    """Background removal by per-pixel min-channel threshold.

    A pixel is tissue iff ``min(R, G, B) < bg_threshold``: stained tissue is
    dark in at least one channel while slide background is near-white. The
    default of 240 is a stand-in; real slides may need tuning.
    """
    if not 0 <= bg_threshold <= 255:
        raise ValueError(f"bg_threshold must be in [0, 255], got {bg_threshold}")
    px = img.pixels
    darkest = np.minimum(np.minimum(px[:, :, 0], px[:, :, 1]), px[:, :, 2])
    return TissueMask(darkest < bg_threshold)


def coverage_fraction(mask: TissueMask, rect: Rect) -> float:
    """Fraction of ``rect``'s pixels that are tissue (exact count / area)."""
    rect.check_within(mask.width, mask.height)
    window = mask.bits[rect.y : rect.y + rect.h, rect.x : rect.x + rect.w]
    return int(np.count_nonzero(window)) / rect.area


def crop(img: RasterImage, rect: Rect) -> RasterImage:
    """Copy of the sub-image covered by ``rect``."""
    rect.check_within(img.width, img.height)
    return RasterImage(img.pixels[rect.y : rect.y + rect.h, rect.x : rect.x + rect.w].copy())


# --- bicubic resampling -----------------------------------------------------
#
# Cubic convolution with the Catmull-Rom kernel (a = -0.5), half-pixel-centered
# coordinate mapping, edge clamp for out-of-range taps. One canonical kernel is
# pinned so outputs are bit-stable across runs and platforms.

CUBIC_A = -0.5


def cubic_kernel(x: np.ndarray, a: float = CUBIC_A) -> np.ndarray:
    """Cubic convolution kernel; weight at signed tap distance ``x``."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    near = ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    far = (((x - 5.0) * x + 8.0) * x - 4.0) * a
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


def _axis_taps(src: int, dst: int) -> tuple[np.ndarray, np.ndarray]:
    """Clamped tap indices (dst, 4) and kernel weights (dst, 4) for one axis."""
    pos = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    base = np.floor(pos).astype(np.int64)
    frac = pos - base
    offsets = np.arange(-1, 3)
    weights = cubic_kernel(offsets[None, :] - frac[:, None])
    taps = np.clip(base[:, None] + offsets[None, :], 0, src - 1)
    return taps, weights


def _resample_rows(arr: np.ndarray, taps: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Cubic convolution along axis 0; row gathers keep memory access contiguous."""
    out = weights[:, 0, None, None] * arr[taps[:, 0]]
    for k in range(1, 4):
        out += weights[:, k, None, None] * arr[taps[:, k]]
    return out


def resize_bicubic(img: RasterImage, target_w: int, target_h: int) -> RasterImage:
    """Resample to ``target_w x target_h`` by separable cubic convolution.

    Intended for downscaling; upscaling is supported for the degenerate case
    of images smaller than a patch. Output values are rounded half away from
    zero and clamped to [0, 255]. Resampling to the source size is an exact
    identity.
    """
    if target_w < 1 or target_h < 1:
        raise ValueError(f"target dimensions must be positive, got {target_w}x{target_h}")
    # float32 keeps accumulation error ~1e-5 of an intensity unit, far inside
    # the rounding slack, at half the memory traffic of float64
    src = img.pixels.astype(np.float32)

    taps_y, w_y = _axis_taps(img.height, target_h)
    mid = _resample_rows(src, taps_y, w_y.astype(np.float32))  # (target_h, src_w, 3)

    taps_x, w_x = _axis_taps(img.width, target_w)
    out = _resample_rows(np.ascontiguousarray(mid.transpose(1, 0, 2)), taps_x,
                         w_x.astype(np.float32))

    return RasterImage(np.clip(np.floor(out.transpose(1, 0, 2) + 0.5), 0, 255).astype(np.uint8))


# --- file formats -----------------------------------------------------------


def write_png(img: RasterImage, path: str | Path) -> None:
    Image.fromarray(img.pixels, mode="RGB").save(str(path), format="PNG")


def read_png(path: str | Path) -> RasterImage:
    with Image.open(str(path)) as im:
        return RasterImage(np.asarray(im.convert("RGB")))


def write_ppm(img: RasterImage, path: str | Path) -> None:
    """Binary P6, maxval 255."""
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.width} {img.height}\n255\n".encode("ascii"))
        fh.write(img.pixels.tobytes())


def _read_netpbm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """First ``count`` whitespace/comment-delimited header tokens and the
    offset just past the single whitespace byte that ends the last one."""
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < count:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if i < len(data) and data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < len(data) and not data[i : i + 1].isspace():
            i += 1
        if start == i:
            raise ValueError("truncated netpbm header")
        tokens.append(data[start:i])
    return tokens, i + 1


def read_ppm(path: str | Path) -> RasterImage:
    data = Path(path).read_bytes()
    (magic, w, h, maxval), offset = _read_netpbm_tokens(data, 4)
    if magic != b"P6" or maxval != b"255":
        raise ValueError(f"expected binary P6 with maxval 255, got {magic!r}/{maxval!r}")
    width, height = int(w), int(h)
    raw = np.frombuffer(data, dtype=np.uint8, count=width * height * 3, offset=offset)
    return RasterImage(raw.reshape(height, width, 3).copy())


def write_pgm(mask: TissueMask, path: str | Path) -> None:
    """Binary P5; tissue maps to 255, background to 0."""
    with open(path, "wb") as fh:
        fh.write(f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii"))
        fh.write((mask.bits.astype(np.uint8) * 255).tobytes())


def read_pgm(path: str | Path) -> TissueMask:
    data = Path(path).read_bytes()
    (magic, w, h, maxval), offset = _read_netpbm_tokens(data, 4)
    if magic != b"P5" or maxval != b"255":
        raise ValueError(f"expected binary P5 with maxval 255, got {magic!r}/{maxval!r}")
    width, height = int(w), int(h)
    raw = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=offset)
    return TissueMask(raw.reshape(height, width) >= 128)


def load_image(path: str | Path) -> RasterImage:
    """Load a PNG or PPM image by file suffix."""
    suffix = Path(path).suffix.lower()
    if suffix == ".ppm":
        return read_ppm(path)
    return read_png(path)
