"""Geometric training-time augmentation of square patches.

Transforms compose in a fixed order (scale, rotate, translate, flip) and all
parameters are drawn from an explicit random stream, so the same stream and
spec always reproduce the same output. Right-angle rotations, flips, and
integer translations take an exact permutation path with no resampling;
anything else is resampled with the shared cubic-convolution kernel and
exposed regions are filled with background white.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .imaging import RasterImage, cubic_kernel

_WHITE = 255


@dataclass(frozen=True)
class AugmentSpec:
    """Parameter ranges for one augmentation draw.

    rotations: right-angle choices in degrees (clockwise), sampled uniformly.
    extra_rotation: optional continuous range added to the sampled rotation.
    translation: max offset per axis as a fraction of the patch side, in [0, 0.5].
    scale: multiplicative range, 0 < lo <= hi.
    flip_h / flip_v: enable 50/50 random flips along each axis.
    """

    rotations: tuple[int, ...] = (0, 90, 180, 270)
    extra_rotation: Optional[tuple[float, float]] = None
    translation: float = 0.1
    scale: tuple[float, float] = (0.9, 1.1)
    flip_h: bool = True
    flip_v: bool = True

    def __post_init__(self) -> None:
        if not self.rotations:
            raise ValueError("rotations must be non-empty")
        if any(r % 90 != 0 for r in self.rotations):
            raise ValueError(f"rotations must be right angles, got {self.rotations}")
        if self.extra_rotation is not None and self.extra_rotation[0] > self.extra_rotation[1]:
            raise ValueError(f"invalid extra_rotation range {self.extra_rotation}")
        if not 0.0 <= self.translation <= 0.5:
            raise ValueError(f"translation fraction must be in [0, 0.5], got {self.translation}")
        lo, hi = self.scale
        if not 0.0 < lo <= hi:
            raise ValueError(f"scale range must satisfy 0 < lo <= hi, got {self.scale}")

    @classmethod
    def identity(cls) -> "AugmentSpec":
        return cls(rotations=(0,), extra_rotation=None, translation=0.0,
                   scale=(1.0, 1.0), flip_h=False, flip_v=False)

    @property
    def is_identity(self) -> bool:
        return (tuple(self.rotations) == (0,) and self.extra_rotation is None
                and self.translation == 0.0 and self.scale == (1.0, 1.0)
                and not self.flip_h and not self.flip_v)


def augment(patch: RasterImage, spec: AugmentSpec, rng: np.random.Generator) -> RasterImage:
    """One augmentation draw applied to a square patch.

    Parameters are sampled in a fixed order (scale, rotation, translation x/y,
    flips) so a given stream state always yields the same transform. Output
    dimensions equal the input's.
    """
    if patch.width != patch.height:
        raise ValueError(f"augment expects square patches, got {patch.width}x{patch.height}")
    side = patch.width

    scale = float(rng.uniform(spec.scale[0], spec.scale[1]))
    angle = float(spec.rotations[int(rng.integers(0, len(spec.rotations)))])
    if spec.extra_rotation is not None:
        angle += float(rng.uniform(spec.extra_rotation[0], spec.extra_rotation[1]))
    tx = float(rng.uniform(-spec.translation, spec.translation)) * side
    ty = float(rng.uniform(-spec.translation, spec.translation)) * side
    flip_h = bool(rng.integers(0, 2)) and spec.flip_h
    flip_v = bool(rng.integers(0, 2)) and spec.flip_v

    exact = (angle % 90.0 == 0.0 and scale == 1.0
             and tx == np.floor(tx) and ty == np.floor(ty))
    if exact:
        return _apply_exact(patch, int(angle) % 360, int(tx), int(ty), flip_h, flip_v)
    return _apply_resampled(patch, scale, angle, tx, ty, flip_h, flip_v)


def _apply_exact(patch: RasterImage, angle: int, tx: int, ty: int,
                 flip_h: bool, flip_v: bool) -> RasterImage:
    """Pure pixel permutation: right-angle rotate, integer shift, flips."""
    px = np.rot90(patch.pixels, k=(-angle // 90) % 4)
    if tx or ty:
        shifted = np.full_like(px, _WHITE)
        h, w = px.shape[:2]
        xs0, xd0 = (0, tx) if tx >= 0 else (-tx, 0)
        ys0, yd0 = (0, ty) if ty >= 0 else (-ty, 0)
        cw, ch = w - abs(tx), h - abs(ty)
        if cw > 0 and ch > 0:
            shifted[yd0:yd0 + ch, xd0:xd0 + cw] = px[ys0:ys0 + ch, xs0:xs0 + cw]
        px = shifted
    if flip_h:
        px = px[:, ::-1]
    if flip_v:
        px = px[::-1, :]
    return RasterImage(np.ascontiguousarray(px))


def _apply_resampled(patch: RasterImage, scale: float, angle: float,
                     tx: float, ty: float, flip_h: bool, flip_v: bool) -> RasterImage:
    """Inverse-map affine resampling with cubic interpolation, white fill."""
    side = patch.width
    c = (side - 1) / 2.0
    theta = np.deg2rad(angle)
    # y-down coordinates: this matrix rotates clockwise on screen
    rot = np.array([[np.cos(theta), -np.sin(theta)],
                    [np.sin(theta), np.cos(theta)]])
    flip = np.diag([-1.0 if flip_h else 1.0, -1.0 if flip_v else 1.0])
    forward = flip @ rot * scale
    inverse = np.linalg.inv(forward)
    shift = flip @ np.array([tx, ty])

    ys, xs = np.mgrid[0:side, 0:side].astype(np.float64)
    q = np.stack([xs - c - shift[0], ys - c - shift[1]])
    src_x = inverse[0, 0] * q[0] + inverse[0, 1] * q[1] + c
    src_y = inverse[1, 0] * q[0] + inverse[1, 1] * q[1] + c

    pad = 2
    padded = np.pad(patch.pixels.astype(np.float64),
                    ((pad, pad), (pad, pad), (0, 0)), constant_values=float(_WHITE))
    base_x = np.floor(src_x).astype(np.int64)
    base_y = np.floor(src_y).astype(np.int64)
    frac_x = src_x - base_x
    frac_y = src_y - base_y

    out = np.zeros((side, side, 3), dtype=np.float64)
    for ky in range(-1, 3):
        wy = cubic_kernel(ky - frac_y)
        iy = np.clip(base_y + ky + pad, 0, padded.shape[0] - 1)
        for kx in range(-1, 3):
            wx = cubic_kernel(kx - frac_x)
            ix = np.clip(base_x + kx + pad, 0, padded.shape[1] - 1)
            out += (wy * wx)[:, :, None] * padded[iy, ix]

    return RasterImage(np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8))
