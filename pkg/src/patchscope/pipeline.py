"""End-to-end classification strategies and majority-vote aggregation.

A strategy either downscales the whole image to the classifier's input size
or tiles it into coverage-filtered patches (optionally downscaling each
patch). Patch hard labels vote on the whole-image label; a downscaled whole
image is simply a one-voter election. Images yielding no tissue patches are
surfaced as explicitly indeterminate, never silently defaulted.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

from .classifier import PatchClassifier
from .dataset import ManifestEntry
from .imaging import (
    DEFAULT_BG_THRESHOLD,
    RasterImage,
    Rect,
    TissueMask,
    coverage_fraction,
    crop,
    load_image,
    resize_bicubic,
    tissue_mask,
)
from .labels import Label
from .tiling import DEFAULT_COVERAGE_THRESHOLD, PatchRef, filter_patches, tile


class IndeterminateImageError(Exception):
    """No patch cleared the coverage filter, so the image has no voters."""

    def __init__(self, image_id: str):
        self.image_id = image_id
        super().__init__(f"image {image_id!r}: no patches above the tissue coverage "
                         f"threshold; prediction is indeterminate")


@dataclass(frozen=True)
class FullDownscale:
    """Resample the whole image to ``target x target``."""

    target: int = 1000


@dataclass(frozen=True)
class PatchCrop:
    """Tile into ``patch``-sized windows, classify each at ``classifier_input``."""

    patch: int = 224
    classifier_input: int = 224


@dataclass(frozen=True)
class StrategyConfig:
    kind: Union[FullDownscale, PatchCrop]
    vote_threshold: float = 0.5
    coverage_threshold: float = DEFAULT_COVERAGE_THRESHOLD
    mean_prob_vote: bool = False  # ablation switch; hard-label voting is the default

    @property
    def classifier_input(self) -> int:
        return self.kind.target if isinstance(self.kind, FullDownscale) else self.kind.classifier_input

    @property
    def name(self) -> str:
        if isinstance(self.kind, FullDownscale):
            return f"downscale-{self.kind.target}"
        if self.kind.classifier_input == 224:
            return f"patch-{self.kind.patch}"
        return f"patch-{self.kind.patch}-{self.kind.classifier_input}"


def parse_strategy(name: str, **options) -> StrategyConfig:
    """Inverse of ``StrategyConfig.name`` ("downscale-1000", "patch-448", ...)."""
    parts = name.strip().split("-")
    try:
        if parts[0] == "downscale" and len(parts) == 2:
            return StrategyConfig(kind=FullDownscale(int(parts[1])), **options)
        if parts[0] == "patch" and len(parts) == 2:
            return StrategyConfig(kind=PatchCrop(int(parts[1]), 224), **options)
        if parts[0] == "patch" and len(parts) == 3:
            return StrategyConfig(kind=PatchCrop(int(parts[1]), int(parts[2])), **options)
    except ValueError:
        pass
    raise ValueError(f"unrecognized strategy {name!r}; expected forms like "
                     f"'downscale-1000', 'patch-448', 'patch-224'")


TABLE_STRATEGIES = ("downscale-1000", "downscale-224", "patch-448", "patch-224")


@dataclass(frozen=True)
class ImagePrediction:
    """Vote outcome for one image under one strategy.

    ``label`` is None when the prediction is indeterminate or the image could
    not be processed; ``error`` then says why.
    """

    image_id: str
    strategy: str
    patch_probs: tuple[tuple[int, float], ...]
    votes_active: int
    votes_total: int
    label: Optional[Label]
    error: Optional[str] = None


def prepare_inputs(img: RasterImage, mask: TissueMask, strategy: StrategyConfig,
                   parent_id: str = "", label: Optional[Label] = None
                   ) -> list[tuple[PatchRef, RasterImage]]:
    """Classifier-ready inputs with their provenance.

    Whole-image strategies produce a single input resampled to the target
    size (aspect ratio is not preserved; the classifier has a fixed square
    input). Patch strategies tile, coverage-filter, crop, and resample each
    patch to the classifier input size when it differs from the window size.
    """
    if mask.width != img.width or mask.height != img.height:
        raise ValueError("mask dimensions do not match image")
    size = strategy.classifier_input

    if isinstance(strategy.kind, FullDownscale):
        rect = Rect(0, 0, img.width, img.height)
        ref = PatchRef(parent_id, rect, coverage_fraction(mask, rect), label, 0)
        return [(ref, resize_bicubic(img, size, size))]

    rects = tile(img.width, img.height, strategy.kind.patch)
    refs = filter_patches(rects, mask, strategy.coverage_threshold, parent_id, label)
    prepared = []
    for ref in refs:
        patch_img = crop(img, ref.rect)
        if patch_img.width != size or patch_img.height != size:
            patch_img = resize_bicubic(patch_img, size, size)
        prepared.append((ref, patch_img))
    return prepared


def classify_whole_image(model: PatchClassifier, img: RasterImage, mask: TissueMask,
                         strategy: StrategyConfig, image_id: str = "") -> ImagePrediction:
    """Score every prepared input and aggregate by majority vote.

    A patch votes active when its probability is >= 0.5; the image is active
    when the active fraction reaches ``vote_threshold`` (an exact tie counts
    as active, favouring sensitivity).
    """
    if model.input_size != strategy.classifier_input:
        raise ValueError(f"model input size {model.input_size} does not match "
                         f"strategy input {strategy.classifier_input}")
    prepared = prepare_inputs(img, mask, strategy, parent_id=image_id)
    if not prepared:
        raise IndeterminateImageError(image_id)

    probs = tuple((ref.patch_index, model.predict_proba(patch)) for ref, patch in prepared)
    votes_active = sum(1 for _, p in probs if p >= 0.5)
    votes_total = len(probs)
    if strategy.mean_prob_vote:
        active = (sum(p for _, p in probs) / votes_total) >= strategy.vote_threshold
    else:
        active = (votes_active / votes_total) >= strategy.vote_threshold
    return ImagePrediction(
        image_id=image_id, strategy=strategy.name, patch_probs=probs,
        votes_active=votes_active, votes_total=votes_total,
        label=Label.ACTIVE_EOE if active else Label.NON_EOE,
    )


def _classify_entry(model: PatchClassifier, entry: ManifestEntry,
                    strategy: StrategyConfig, bg_threshold: int) -> ImagePrediction:
    try:
        img = load_image(entry.path)
    except Exception as exc:
        return ImagePrediction(entry.image_id, strategy.name, (), 0, 0, None,
                               error=f"unreadable image: {exc}")
    return classify_loaded(model, img, entry.image_id, strategy, bg_threshold)


def classify_loaded(model: PatchClassifier, img: RasterImage, image_id: str,
                    strategy: StrategyConfig,
                    bg_threshold: int = DEFAULT_BG_THRESHOLD) -> ImagePrediction:
    """Mask + classify one in-memory image, mapping indeterminate outcomes to
    an error-bearing prediction rather than an exception."""
    mask = tissue_mask(img, bg_threshold)
    try:
        return classify_whole_image(model, img, mask, strategy, image_id)
    except IndeterminateImageError:
        return ImagePrediction(image_id, strategy.name, (), 0, 0, None,
                               error="indeterminate: no tissue patches")


def run_experiment(model: PatchClassifier, entries: Sequence[ManifestEntry],
                   strategy: StrategyConfig, workers: int = 1,
                   bg_threshold: int = DEFAULT_BG_THRESHOLD) -> list[ImagePrediction]:
    """Classify a manifest of images; output is sorted by image_id and
    independent of worker count or scheduling."""
    if workers <= 1:
        results = [_classify_entry(model, e, strategy, bg_threshold) for e in entries]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                lambda e: _classify_entry(model, e, strategy, bg_threshold), entries))
    return sorted(results, key=lambda r: r.image_id)


# --- JSON lines serialization -------------------------------------------------


def prediction_to_dict(pred: ImagePrediction) -> dict:
    d = {
        "image_id": pred.image_id,
        "strategy": pred.strategy,
        "label": pred.label.value if pred.label is not None else "Indeterminate",
        "votes_active": pred.votes_active,
        "votes_total": pred.votes_total,
        "patch_probs": [[i, p] for i, p in pred.patch_probs],
    }
    if pred.error is not None:
        d["error"] = pred.error
    return d


def prediction_from_dict(d: dict) -> ImagePrediction:
    label = None if d["label"] == "Indeterminate" else Label(d["label"])
    return ImagePrediction(
        image_id=d["image_id"], strategy=d["strategy"],
        patch_probs=tuple((int(i), float(p)) for i, p in d["patch_probs"]),
        votes_active=int(d["votes_active"]), votes_total=int(d["votes_total"]),
        label=label, error=d.get("error"),
    )


def write_predictions_jsonl(preds: Sequence[ImagePrediction], path: str | Path) -> None:
    with open(path, "w") as fh:
        for pred in preds:
            fh.write(json.dumps(prediction_to_dict(pred)) + "\n")


def read_predictions_jsonl(path: str | Path) -> list[ImagePrediction]:
    preds = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                preds.append(prediction_from_dict(json.loads(line)))
    return preds
