"""Multi-scale patch classification pipeline for whole-biopsy images.

Tiling with half-patch stride, tissue-coverage filtering, pluggable patch
classification, majority-vote aggregation, and the evaluation machinery to
compare downscale/crop strategies and probe whether the discriminative
signal is local or global.
"""

from .augment import AugmentSpec, augment
from .classifier import (
    PatchClassifier,
    ToyClassifier,
    TrainConfig,
    extract_features,
    load_model,
    predict_proba,
    save_model,
    train,
    train_on_features,
)
from .dataset import (
    ManifestEntry,
    PatternKind,
    SplitShortfallError,
    SplitSpec,
    SynthPattern,
    balanced_split,
    make_pattern,
    read_manifest,
    synth_generate,
    write_manifest,
    write_synth_dataset,
)
from .evaluation import (
    ConfusionCounts,
    Metrics,
    ProbHistogram,
    central_band_mass,
    compute_metrics,
    probability_histogram,
    random_label_control,
    roc_point,
)
from .imaging import (
    BoundsError,
    RasterImage,
    Rect,
    TissueMask,
    coverage_fraction,
    crop,
    read_png,
    read_ppm,
    resize_bicubic,
    tissue_mask,
    write_png,
    write_ppm,
)
from .labels import Label
from .pipeline import (
    FullDownscale,
    ImagePrediction,
    IndeterminateImageError,
    PatchCrop,
    StrategyConfig,
    classify_whole_image,
    parse_strategy,
    prepare_inputs,
    run_experiment,
)
from .tiling import PatchRef, filter_patches, tile

__version__ = "0.1.0"

__all__ = [
    "AugmentSpec", "augment",
    "PatchClassifier", "ToyClassifier", "TrainConfig", "extract_features",
    "load_model", "predict_proba", "save_model", "train", "train_on_features",
    "ManifestEntry", "PatternKind", "SplitShortfallError", "SplitSpec",
    "SynthPattern", "balanced_split", "make_pattern", "read_manifest",
    "synth_generate", "write_manifest", "write_synth_dataset",
    "ConfusionCounts", "Metrics", "ProbHistogram", "central_band_mass",
    "compute_metrics", "probability_histogram", "random_label_control", "roc_point",
    "BoundsError", "RasterImage", "Rect", "TissueMask", "coverage_fraction",
    "crop", "read_png", "read_ppm", "resize_bicubic", "tissue_mask",
    "write_png", "write_ppm",
    "Label",
    "FullDownscale", "ImagePrediction", "IndeterminateImageError", "PatchCrop",
    "StrategyConfig", "classify_whole_image", "parse_strategy", "prepare_inputs",
    "run_experiment",
    "PatchRef", "filter_patches", "tile",
]
