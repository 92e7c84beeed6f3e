"""Sliding-window patch enumeration and the tissue-coverage filter.

Windows advance by half the patch size so neighbours overlap 50%; the last
origin per axis is clamped to the image edge so every pixel is covered
without padding in synthetic pixels. Patches keeping more than the coverage
threshold of tissue survive the filter.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .imaging import Rect, TissueMask, coverage_fraction
from .labels import Label, parse_label

DEFAULT_COVERAGE_THRESHOLD = 0.10


@dataclass(frozen=True)
class PatchRef:
    """A window within a parent image plus its coverage and inherited label.

    ``patch_index`` is the window's ordinal in the deterministic row-major
    enumeration of the *unfiltered* tiling, so indices stay stable when the
    coverage filter drops neighbours.
    """

    parent_id: str
    rect: Rect
    coverage: float
    inherited_label: Optional[Label]
    patch_index: int


def _axis_origins(dim: int, patch: int) -> list[int]:
    if dim <= patch:
        return [0]
    stride = patch // 2
    origins = list(range(0, dim - patch + 1, stride))
    if origins[-1] != dim - patch:
        origins.append(dim - patch)
    return origins


def tile(img_w: int, img_h: int, patch: int) -> list[Rect]:
    """Row-major sliding-window rectangles covering the full image.

    Stride is ``patch // 2``. When the image is smaller than the patch along
    an axis, a single window of the image's extent is produced there; the
    pipeline later resizes such degenerate windows instead of dropping the
    image.
    """
    if patch < 2 or patch % 2 != 0:
        raise ValueError(f"patch size must be even and >= 2, got {patch}")
    if img_w < 1 or img_h < 1:
        raise ValueError(f"image dimensions must be positive, got {img_w}x{img_h}")
    w = min(patch, img_w)
    h = min(patch, img_h)
    return [
        Rect(x, y, w, h)
        for y in _axis_origins(img_h, patch)
        for x in _axis_origins(img_w, patch)
    ]


def filter_patches(
    rects: Sequence[Rect],
    mask: TissueMask,
    threshold: float = DEFAULT_COVERAGE_THRESHOLD,
    parent_id: str = "",
    label: Optional[Label] = None,
) -> list[PatchRef]:
    """Keep windows with tissue coverage strictly greater than ``threshold``.

    Order is preserved and each kept patch records its coverage and its index
    in the input enumeration.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"coverage threshold must be in [0, 1], got {threshold}")
    kept = []
    for index, rect in enumerate(rects):
        cov = coverage_fraction(mask, rect)
        if cov > threshold:
            kept.append(PatchRef(parent_id, rect, cov, label, index))
    return kept


PATCH_CSV_HEADER = ["parent_id", "patch_index", "x", "y", "w", "h", "coverage", "label"]


def write_patch_csv(patches: Sequence[PatchRef], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PATCH_CSV_HEADER)
        for p in patches:
            writer.writerow([
                p.parent_id, p.patch_index, p.rect.x, p.rect.y, p.rect.w, p.rect.h,
                repr(p.coverage),
                p.inherited_label.value if p.inherited_label is not None else "",
            ])


def read_patch_csv(path: str | Path) -> list[PatchRef]:
    patches = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != PATCH_CSV_HEADER:
            raise ValueError(f"unexpected patch CSV header: {reader.fieldnames}")
        for row in reader:
            patches.append(PatchRef(
                parent_id=row["parent_id"],
                rect=Rect(int(row["x"]), int(row["y"]), int(row["w"]), int(row["h"])),
                coverage=float(row["coverage"]),
                inherited_label=parse_label(row["label"]) if row["label"] else None,
                patch_index=int(row["patch_index"]),
            ))
    return patches
