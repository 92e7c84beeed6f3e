"""Manifests, the balanced train/validation split, and synthetic biopsies.

The synthetic generator renders a smooth tissue-like blob on a white slide
background and, for positive images, plants small dark elliptical marks in
one of four spatial arrangements: a compact local cluster, a band along the
blob boundary, one half of the blob, or spread across the whole blob (the
last additionally shifts the base tint globally). Every planted mark is
recorded in a ground-truth sidecar so locality experiments have an exact
oracle for where the signal lives.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from ._rng import child_seed
from .imaging import RasterImage, write_png
from .labels import Label, parse_label


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    path: str
    label: Label
    resolution_class: str  # "WxH"


MANIFEST_HEADER = ["image_id", "path", "label", "resolution_class"]


def write_manifest(entries: Sequence[ManifestEntry], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for e in entries:
            writer.writerow([e.image_id, e.path, e.label.value, e.resolution_class])


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_HEADER:
            raise ValueError(f"unexpected manifest header: {reader.fieldnames}")
        for row in reader:
            entries.append(ManifestEntry(
                image_id=row["image_id"], path=row["path"],
                label=parse_label(row["label"]),
                resolution_class=row["resolution_class"],
            ))
    return entries


# --- balanced split ----------------------------------------------------------


class SplitShortfallError(ValueError):
    """A (class, resolution) cell has fewer images than the split requires."""

    def __init__(self, label: Label, resolution_class: str, needed: int, available: int):
        self.label = label
        self.resolution_class = resolution_class
        self.needed = needed
        self.available = available
        super().__init__(
            f"split cell (label={label.value}, resolution={resolution_class}) "
            f"needs {needed} images but only {available} are available"
        )


@dataclass(frozen=True)
class SplitSpec:
    """Counts for a class- and resolution-balanced split.

    ``per_resolution_counts`` gives, per class, how many images of each
    resolution class participate overall (train plus validation); the totals
    must sum to ``train_per_class + val_per_class``.
    """

    train_per_class: int
    val_per_class: int
    per_resolution_counts: dict[str, int]
    seed: int = 0

    def __post_init__(self) -> None:
        if self.train_per_class < 0 or self.val_per_class < 0:
            raise ValueError("split counts must be non-negative")
        total = sum(self.per_resolution_counts.values())
        if total != self.train_per_class + self.val_per_class:
            raise ValueError(
                f"per-resolution counts sum to {total}, expected "
                f"{self.train_per_class + self.val_per_class} (train + val per class)"
            )


def _largest_remainder_allocation(cell_counts: list[int], total_to_allocate: int,
                                  rng: np.random.Generator) -> list[int]:
    """Split ``total_to_allocate`` across cells proportionally to their sizes,
    flooring quotas and handing leftovers to the largest remainders. Exact
    remainder ties are broken by a seeded shuffle, so they vary across seeds
    but are deterministic for a given one."""
    grand = sum(cell_counts)
    if grand == 0:
        return [0] * len(cell_counts)
    quotas = [n * total_to_allocate / grand for n in cell_counts]
    alloc = [math.floor(q) for q in quotas]
    tie_order = rng.permutation(len(quotas))
    ranked = sorted(tie_order, key=lambda i: -(quotas[i] - alloc[i]))  # stable
    for i in ranked[: total_to_allocate - sum(alloc)]:
        alloc[i] += 1
    return alloc


def balanced_split(manifest: Sequence[ManifestEntry],
                   spec: SplitSpec) -> tuple[list[ManifestEntry], list[ManifestEntry]]:
    """Seeded uniform selection per (class, resolution) cell, then a
    proportional train/validation allocation within each cell.

    Selection order is canonicalized by image_id before shuffling, so the
    result depends only on the manifest's contents and the seed. Train and
    validation are disjoint, per-class counts are equal in both sets, and
    per-resolution counts are equal across classes.
    """
    rng = np.random.default_rng(child_seed(spec.seed, "split"))
    resolutions = sorted(spec.per_resolution_counts)
    train_alloc = _largest_remainder_allocation(
        [spec.per_resolution_counts[r] for r in resolutions], spec.train_per_class, rng)

    pools: dict[tuple[str, str], list[ManifestEntry]] = {}
    for e in manifest:
        pools.setdefault((e.label.value, e.resolution_class), []).append(e)

    train: list[ManifestEntry] = []
    val: list[ManifestEntry] = []
    for label in (Label.ACTIVE_EOE, Label.NON_EOE):
        for res, n_train in zip(resolutions, train_alloc):
            needed = spec.per_resolution_counts[res]
            pool = sorted(pools.get((label.value, res), []), key=lambda e: e.image_id)
            if len(pool) < needed:
                raise SplitShortfallError(label, res, needed, len(pool))
            chosen = [pool[i] for i in rng.permutation(len(pool))[:needed]]
            train.extend(chosen[:n_train])
            val.extend(chosen[n_train:])
    return train, val


# --- synthetic generator ------------------------------------------------------


class PatternKind(Enum):
    LOCAL_CLUSTER = "local"
    EDGE_BAND = "edge"
    HALF_TISSUE = "half"
    GLOBAL_DIFFUSE = "global"


_DEFAULT_DENSITY = {
    PatternKind.LOCAL_CLUSTER: 0.25,
    PatternKind.EDGE_BAND: 0.05,
    PatternKind.HALF_TISSUE: 0.03,
    PatternKind.GLOBAL_DIFFUSE: 0.02,
}


@dataclass(frozen=True)
class SynthPattern:
    """Geometry and texture parameters for one synthetic arrangement.

    ``feature_density`` is the approximate fraction of the pattern's support
    region (cluster disk, boundary band, half blob, or whole blob) covered by
    marks; the planted mark count is derived from it.
    """

    kind: PatternKind
    feature_density: float = 0.0  # 0 selects the per-kind default
    feature_size: int = 12
    cluster_diameter: int = 64
    blob_radius_frac: float = 0.45
    harmonic_amp: float = 0.06
    center_jitter: float = 0.01
    base_rgb: tuple[int, int, int] = (205, 170, 200)
    noise_sigma: float = 8.0
    mark_rgb: tuple[int, int, int] = (70, 35, 110)
    global_shift: tuple[int, int, int] = (-12, -16, -12)

    def __post_init__(self) -> None:
        if self.feature_size < 1:
            raise ValueError(f"feature_size must be >= 1, got {self.feature_size}")
        if self.feature_density < 0 or self.feature_density > 1:
            raise ValueError(f"feature_density must be in (0, 1], got {self.feature_density}")
        if self.cluster_diameter < self.feature_size:
            raise ValueError("cluster_diameter must be at least feature_size")
        if not 0.0 < self.blob_radius_frac < 0.5:
            raise ValueError(f"blob_radius_frac must be in (0, 0.5), got {self.blob_radius_frac}")

    @property
    def density(self) -> float:
        return self.feature_density if self.feature_density > 0 else _DEFAULT_DENSITY[self.kind]


def make_pattern(kind: str | PatternKind, **overrides) -> SynthPattern:
    kind = PatternKind(kind) if not isinstance(kind, PatternKind) else kind
    return SynthPattern(kind=kind, **overrides)


@dataclass
class SynthTruth:
    """Complete generator ground truth for one synthetic image."""

    image_id: str
    kind: str
    label: str
    width: int
    height: int
    blob_center: tuple[float, float]
    blob_r0: float
    blob_amps: list[float]
    blob_phases: list[float]
    marks: list[dict] = field(default_factory=list)
    cluster: Optional[dict] = None
    half_axis_deg: Optional[float] = None
    global_shift_applied: bool = False

    def to_json_dict(self) -> dict:
        return {
            "image_id": self.image_id, "kind": self.kind, "label": self.label,
            "width": self.width, "height": self.height,
            "blob_center": list(self.blob_center), "blob_r0": self.blob_r0,
            "blob_amps": self.blob_amps, "blob_phases": self.blob_phases,
            "marks": self.marks, "cluster": self.cluster,
            "half_axis_deg": self.half_axis_deg,
            "global_shift_applied": self.global_shift_applied,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "SynthTruth":
        return cls(image_id=d["image_id"], kind=d["kind"], label=d["label"],
                   width=d["width"], height=d["height"],
                   blob_center=tuple(d["blob_center"]), blob_r0=d["blob_r0"],
                   blob_amps=list(d["blob_amps"]), blob_phases=list(d["blob_phases"]),
                   marks=list(d["marks"]), cluster=d.get("cluster"),
                   half_axis_deg=d.get("half_axis_deg"),
                   global_shift_applied=bool(d.get("global_shift_applied", False)))


_HARMONICS = np.arange(2, 6)
_THETA_LUT_SIZE = 4096


@lru_cache(maxsize=4)
def _centered_grids(width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    yy, xx = np.mgrid[0:height, 0:width]
    return xx.astype(np.float32), yy.astype(np.float32)


def _check_geometry(pattern: SynthPattern, width: int, height: int) -> float:
    """Validate that blob, marks, and (for the local kind) the cluster fit;
    returns a conservative lower bound on the blob radius."""
    min_dim = min(width, height)
    r_inner = pattern.blob_radius_frac * 0.96 * (1.0 - pattern.harmonic_amp) * min_dim
    mark_r = pattern.feature_size / 2.0
    needed = mark_r + 2.0
    if pattern.kind is PatternKind.LOCAL_CLUSTER:
        needed += pattern.cluster_diameter / 2.0
    if needed >= r_inner:
        raise ValueError(
            f"feature geometry (needs ~{needed:.0f}px of blob radius) does not fit "
            f"a {width}x{height} image with blob radius ~{r_inner:.0f}px"
        )
    return r_inner


def _blob_radius(theta: np.ndarray, r0: float, amps: np.ndarray,
                 phases: np.ndarray) -> np.ndarray:
    ripple = np.zeros_like(theta)
    for k, a, p in zip(_HARMONICS, amps, phases):
        ripple += a * np.cos(k * theta + p)
    return r0 * (1.0 + ripple)


def _sample_in_blob(rng: np.random.Generator, center, r0, amps, phases,
                    margin: float, radial_range=(0.0, 1.0), predicate=None,
                    max_tries: int = 200) -> tuple[float, float]:
    lo, hi = radial_range
    for _ in range(max_tries):
        theta = float(rng.uniform(0.0, 2.0 * np.pi))
        rim = float(_blob_radius(np.array([theta]), r0, amps, phases)[0]) - margin
        if rim <= 0:
            continue
        u = float(rng.uniform(lo * lo, hi * hi))
        rad = math.sqrt(u) * rim
        x = center[0] + rad * math.cos(theta)
        y = center[1] + rad * math.sin(theta)
        if predicate is None or predicate(x, y):
            return x, y
    raise ValueError("could not place a feature inside the tissue blob")


def _render_mark(canvas: np.ndarray, blob: np.ndarray, mark: dict,
                 color: np.ndarray, rng: np.random.Generator) -> None:
    h, w = blob.shape
    cx, cy, rx, ry, ang = mark["x"], mark["y"], mark["rx"], mark["ry"], mark["angle"]
    extent = int(math.ceil(max(rx, ry))) + 1
    x0, x1 = max(0, int(cx) - extent), min(w, int(cx) + extent + 1)
    y0, y1 = max(0, int(cy) - extent), min(h, int(cy) + extent + 1)
    yy, xx = np.mgrid[y0:y1, x0:x1].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    u = dx * math.cos(ang) + dy * math.sin(ang)
    v = -dx * math.sin(ang) + dy * math.cos(ang)
    inside = ((u / rx) ** 2 + (v / ry) ** 2 <= 1.0) & blob[y0:y1, x0:x1]
    jitter = rng.normal(0.0, 4.0, size=(inside.sum(), 3))
    canvas[y0:y1, x0:x1][inside] = color + jitter


def generate_image(pattern: SynthPattern, label: Label, width: int, height: int,
                   seed: int, image_id: str) -> tuple[RasterImage, SynthTruth]:
    """Render one synthetic biopsy image plus its ground-truth record."""
    _check_geometry(pattern, width, height)
    rng = np.random.default_rng(seed)
    min_dim = min(width, height)

    r0 = pattern.blob_radius_frac * min_dim * float(rng.uniform(0.98, 1.02))
    center = (width / 2.0 + float(rng.uniform(-1, 1)) * pattern.center_jitter * min_dim,
              height / 2.0 + float(rng.uniform(-1, 1)) * pattern.center_jitter * min_dim)
    raw = rng.uniform(0.2, 1.0, size=len(_HARMONICS))
    amps = raw / raw.sum() * pattern.harmonic_amp * float(rng.uniform(0.5, 1.0))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=len(_HARMONICS))

    # rasterize the boundary radius through a dense angle table; the ~0.2 px
    # quantization is far below the 2 px placement margins used for marks
    lut_theta = np.linspace(-np.pi, np.pi, _THETA_LUT_SIZE, endpoint=False)
    radius_lut = _blob_radius(lut_theta, r0, amps, phases).astype(np.float32)
    xx, yy = _centered_grids(width, height)
    dx, dy = xx - np.float32(center[0]), yy - np.float32(center[1])
    idx = ((np.arctan2(dy, dx) + np.float32(np.pi))
           * np.float32(_THETA_LUT_SIZE / (2 * np.pi))).astype(np.int32)
    rim = radius_lut[np.clip(idx, 0, _THETA_LUT_SIZE - 1)]
    blob = dx * dx + dy * dy <= rim * rim

    truth = SynthTruth(image_id=image_id, kind=pattern.kind.value, label=label.value,
                       width=width, height=height, blob_center=center, blob_r0=r0,
                       blob_amps=amps.tolist(), blob_phases=phases.tolist())

    base = np.array(pattern.base_rgb, dtype=np.float32)
    if label.is_positive and pattern.kind is PatternKind.GLOBAL_DIFFUSE:
        base = base + np.array(pattern.global_shift, dtype=np.float32)
        truth.global_shift_applied = True

    noise = rng.standard_normal((height, width, 3), dtype=np.float32) * np.float32(pattern.noise_sigma)
    canvas = np.where(blob[:, :, None], base + noise, np.float32(255.0))

    if label.is_positive:
        _plant_marks(pattern, truth, canvas, blob, center, r0, amps, phases, rng)

    return RasterImage(np.clip(np.floor(canvas + 0.5), 0, 255).astype(np.uint8)), truth


def _plant_marks(pattern: SynthPattern, truth: SynthTruth, canvas: np.ndarray,
                 blob: np.ndarray, center, r0, amps, phases,
                 rng: np.random.Generator) -> None:
    mark_r = pattern.feature_size / 2.0
    mark_area = math.pi * mark_r * mark_r
    margin = mark_r + 2.0
    kind = pattern.kind

    if kind is PatternKind.LOCAL_CLUSTER:
        cluster_r = pattern.cluster_diameter / 2.0
        # confined to the inner half of the blob: a compact focus well inside
        # the tissue, away from both the rim and the image border
        ccx, ccy = _sample_in_blob(rng, center, r0, amps, phases,
                                   margin=cluster_r + margin,
                                   radial_range=(0.0, 0.5))
        truth.cluster = {"x": ccx, "y": ccy, "r": cluster_r}
        support = math.pi * cluster_r * cluster_r

        def place():
            ang = float(rng.uniform(0, 2 * np.pi))
            rad = math.sqrt(float(rng.uniform(0, 1))) * max(cluster_r - mark_r, 1.0)
            return ccx + rad * math.cos(ang), ccy + rad * math.sin(ang)

    elif kind is PatternKind.EDGE_BAND:
        support = math.pi * r0 * r0 * (0.95 ** 2 - 0.82 ** 2)

        def place():
            return _sample_in_blob(rng, center, r0, amps, phases, margin=margin,
                                   radial_range=(0.82, 0.95))

    elif kind is PatternKind.HALF_TISSUE:
        axis = float(rng.uniform(0, 2 * np.pi))
        truth.half_axis_deg = math.degrees(axis)
        nx, ny = math.cos(axis), math.sin(axis)
        support = math.pi * r0 * r0 / 2.0

        def place():
            return _sample_in_blob(
                rng, center, r0, amps, phases, margin=margin,
                predicate=lambda x, y: (x - center[0]) * nx + (y - center[1]) * ny >= 0)

    else:  # GLOBAL_DIFFUSE
        support = math.pi * r0 * r0

        def place():
            return _sample_in_blob(rng, center, r0, amps, phases, margin=margin)

    n_marks = max(1, round(pattern.density * support / mark_area))
    color = np.array(pattern.mark_rgb, dtype=np.float64)
    for _ in range(n_marks):
        x, y = place()
        mark = {
            "x": x, "y": y,
            "rx": mark_r * float(rng.uniform(0.75, 1.25)),
            "ry": mark_r * float(rng.uniform(0.75, 1.25)),
            "angle": float(rng.uniform(0, np.pi)),
        }
        _render_mark(canvas, blob, mark, color, rng)
        truth.marks.append(mark)


def _label_sequence(n: int, positive_fraction: float) -> list[Label]:
    # Bresenham-style interleaving keeps the class balance exact for any prefix
    labels = []
    for i in range(n):
        pos = math.floor((i + 1) * positive_fraction) > math.floor(i * positive_fraction)
        labels.append(Label.ACTIVE_EOE if pos else Label.NON_EOE)
    return labels


def iter_synth(pattern: SynthPattern, n: int, width: int, height: int, seed: int,
               positive_fraction: float = 0.5,
               id_prefix: str = "synth") -> Iterator[tuple[ManifestEntry, RasterImage, SynthTruth]]:
    """Generate images one at a time (per-image derived seeds, parallel-safe).

    Manifest entries carry an empty path; callers that persist images fill it
    in. Labels follow a deterministic interleaving with the requested
    positive fraction.
    """
    _check_geometry(pattern, width, height)
    if not 0.0 <= positive_fraction <= 1.0:
        raise ValueError(f"positive_fraction must be in [0, 1], got {positive_fraction}")
    labels = _label_sequence(n, positive_fraction)
    for i in range(n):
        image_id = f"{id_prefix}-{i:04d}"
        img, truth = generate_image(pattern, labels[i], width, height,
                                    child_seed(seed, "image", i), image_id)
        entry = ManifestEntry(image_id=image_id, path="", label=labels[i],
                              resolution_class=f"{width}x{height}")
        yield entry, img, truth


def synth_generate(pattern: SynthPattern, n: int, width: int, height: int, seed: int,
                   positive_fraction: float = 0.5, id_prefix: str = "synth"):
    """Materialized variant of :func:`iter_synth`.

    Returns (samples, entries, truths) where samples are (image, label) pairs.
    Prefer the iterator for large runs; images are ~3 MB each at 1024x1024.
    """
    samples, entries, truths = [], [], []
    for entry, img, truth in iter_synth(pattern, n, width, height, seed,
                                        positive_fraction, id_prefix):
        samples.append((img, entry.label))
        entries.append(entry)
        truths.append(truth)
    return samples, entries, truths


def truth_sidecar_path(image_path: str | Path) -> Path:
    return Path(image_path).with_suffix(".truth.json")


def write_synth_dataset(pattern: SynthPattern, n: int, width: int, height: int,
                        seed: int, out_dir: str | Path, positive_fraction: float = 0.5,
                        id_prefix: str = "synth") -> list[ManifestEntry]:
    """Write PNGs, per-image ground-truth sidecars, and a manifest.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for entry, img, truth in iter_synth(pattern, n, width, height, seed,
                                        positive_fraction, id_prefix):
        img_path = out / f"{entry.image_id}.png"
        write_png(img, img_path)
        truth_sidecar_path(img_path).write_text(json.dumps(truth.to_json_dict()))
        entries.append(ManifestEntry(entry.image_id, str(img_path), entry.label,
                                     entry.resolution_class))
    write_manifest(entries, out / "manifest.csv")
    return entries


def read_truth(image_path: str | Path) -> SynthTruth:
    return SynthTruth.from_json_dict(json.loads(truth_sidecar_path(image_path).read_text()))
