"""Experiment orchestration: config files, per-strategy training, evaluation,
and the random-label control.

A single master seed fans out to named sub-streams (split, per-strategy
training, control relabeling), so enabling one randomized feature never
perturbs another's draws. Reports are append-only JSON lines, each line a
self-contained block with a schema_version, and every artifact is written
deterministically so repeated runs produce byte-identical files.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ._rng import child_seed
from .augment import AugmentSpec
from .classifier import (
    TrainConfig,
    ToyClassifier,
    extract_features,
    labels_to_targets,
    save_model,
    train,
    train_on_features,
)
from .dataset import ManifestEntry, SplitSpec, balanced_split, read_manifest
from .evaluation import (
    REPORT_SCHEMA_VERSION,
    build_strategy_report,
    central_band_mass,
    compute_metrics,
    histogram_to_dict,
    metrics_to_dict,
    probability_histogram,
    random_label_control,
    roc_scatter_svg,
    histogram_pair_svg,
)
from .imaging import DEFAULT_BG_THRESHOLD, load_image, tissue_mask
from .labels import Label
from .pipeline import (
    ImagePrediction,
    PatchCrop,
    StrategyConfig,
    parse_strategy,
    prepare_inputs,
    run_experiment,
    write_predictions_jsonl,
)

CONFIG_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one run needs; loadable from JSON or TOML."""

    manifest: str
    out_dir: str
    strategies: tuple[str, ...]
    train: TrainConfig
    augment_spec: AugmentSpec
    split: SplitSpec
    workers: int = 0  # 0 defers to PATCHSCOPE_THREADS or 1
    master_seed: int = 0
    control: bool = False
    emit_svg: bool = False
    bg_threshold: int = DEFAULT_BG_THRESHOLD

    def __post_init__(self) -> None:
        if not self.strategies:
            raise ValueError("config must list at least one strategy")
        for name in self.strategies:
            parse_strategy(name)

    def to_dict(self) -> dict:
        return {
            "schema_version": CONFIG_SCHEMA_VERSION,
            "manifest": self.manifest,
            "out_dir": self.out_dir,
            "strategies": list(self.strategies),
            "train": self.train.to_dict(),
            "augment": augment_spec_to_dict(self.augment_spec),
            "split": split_spec_to_dict(self.split),
            "workers": self.workers,
            "master_seed": self.master_seed,
            "control": self.control,
            "emit_svg": self.emit_svg,
            "bg_threshold": self.bg_threshold,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        version = d.get("schema_version", CONFIG_SCHEMA_VERSION)
        if version != CONFIG_SCHEMA_VERSION:
            raise ValueError(f"unsupported config schema_version {version}")
        return cls(
            manifest=d["manifest"],
            out_dir=d["out_dir"],
            strategies=tuple(d["strategies"]),
            train=TrainConfig.from_dict(d["train"]),
            augment_spec=augment_spec_from_dict(d.get("augment", {})),
            split=split_spec_from_dict(d["split"]),
            workers=int(d.get("workers", 0)),
            master_seed=int(d.get("master_seed", 0)),
            control=bool(d.get("control", False)),
            emit_svg=bool(d.get("emit_svg", False)),
            bg_threshold=int(d.get("bg_threshold", DEFAULT_BG_THRESHOLD)),
        )


def augment_spec_to_dict(spec: AugmentSpec) -> dict:
    return {
        "rotations": list(spec.rotations),
        "extra_rotation": list(spec.extra_rotation) if spec.extra_rotation else None,
        "translation": spec.translation,
        "scale": list(spec.scale),
        "flip_h": spec.flip_h,
        "flip_v": spec.flip_v,
    }


def augment_spec_from_dict(d: dict) -> AugmentSpec:
    if not d:
        return AugmentSpec.identity()
    extra = d.get("extra_rotation")
    return AugmentSpec(
        rotations=tuple(int(r) for r in d.get("rotations", (0, 90, 180, 270))),
        extra_rotation=tuple(extra) if extra else None,
        translation=float(d.get("translation", 0.1)),
        scale=tuple(float(s) for s in d.get("scale", (0.9, 1.1))),
        flip_h=bool(d.get("flip_h", True)),
        flip_v=bool(d.get("flip_v", True)),
    )


def split_spec_to_dict(spec: SplitSpec) -> dict:
    return {
        "train_per_class": spec.train_per_class,
        "val_per_class": spec.val_per_class,
        "per_resolution_counts": dict(spec.per_resolution_counts),
    }


def split_spec_from_dict(d: dict) -> SplitSpec:
    return SplitSpec(
        train_per_class=int(d["train_per_class"]),
        val_per_class=int(d["val_per_class"]),
        per_resolution_counts={k: int(v) for k, v in d["per_resolution_counts"].items()},
    )


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse a JSON or TOML config and check referenced paths exist."""
    path = Path(path)
    if path.suffix.lower() == ".toml":
        try:
            import tomllib  # Python >= 3.11
        except ModuleNotFoundError:
            import tomli as tomllib
        doc = tomllib.loads(path.read_text())
    else:
        doc = json.loads(path.read_text())
    config = ExperimentConfig.from_dict(doc)
    if not Path(config.manifest).exists():
        raise FileNotFoundError(f"manifest {config.manifest!r} referenced by config "
                                f"does not exist")
    return config


def save_config(config: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2) + "\n")


# --- feature datasets -----------------------------------------------------------


def strategy_feature_dataset(entries: Sequence[ManifestEntry], strategy: StrategyConfig,
                             bg_threshold: int = DEFAULT_BG_THRESHOLD,
                             grid: int = 4, bins: int = 8, workers: int = 1):
    """Feature rows for every prepared input of every image.

    Returns (X, labels, provenance) where provenance rows are
    (image_id, patch_index). Row order follows the manifest order and the
    deterministic patch enumeration, independent of worker count.
    """
    def one(entry: ManifestEntry):
        img = load_image(entry.path)
        mask = tissue_mask(img, bg_threshold)
        prepared = prepare_inputs(img, mask, strategy, entry.image_id, entry.label)
        feats = [extract_features(p, grid, bins) for _, p in prepared]
        prov = [(entry.image_id, ref.patch_index) for ref, _ in prepared]
        return feats, prov, entry.label

    if workers <= 1:
        results = [one(e) for e in entries]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, entries))

    X_rows, labels, provenance = [], [], []
    for feats, prov, label in results:
        X_rows.extend(feats)
        provenance.extend(prov)
        labels.extend([label] * len(feats))
    if not X_rows:
        raise ValueError("no inputs survived preparation; cannot build a dataset")
    return np.stack(X_rows), labels, provenance


def train_for_strategy(train_entries: Sequence[ManifestEntry], strategy: StrategyConfig,
                       cfg: TrainConfig, aug_spec: Optional[AugmentSpec] = None,
                       bg_threshold: int = DEFAULT_BG_THRESHOLD,
                       workers: int = 1) -> ToyClassifier:
    """Train a fresh model for one strategy from a training manifest.

    With identity augmentation, features are extracted once and training runs
    on the fixed matrix; otherwise patch images are materialized and redrawn
    through the augmentation stream every epoch (memory scales with the patch
    count).
    """
    model = ToyClassifier(input_size=strategy.classifier_input)
    if aug_spec is None or aug_spec.is_identity:
        X, labels, _ = strategy_feature_dataset(train_entries, strategy, bg_threshold,
                                                model.grid, model.bins, workers)
        return train_on_features(model, X, labels_to_targets(labels), cfg)

    data = []
    for entry in train_entries:
        img = load_image(entry.path)
        mask = tissue_mask(img, bg_threshold)
        for _, patch_img in prepare_inputs(img, mask, strategy, entry.image_id, entry.label):
            data.append((patch_img, entry.label))
    return train(model, data, cfg, aug_spec)


def synthetic_strategy_datasets(pattern, n_train_per_class: int, n_val_per_class: int,
                                width: int, height: int, seed: int,
                                strategies: Sequence[StrategyConfig],
                                bg_threshold: int = DEFAULT_BG_THRESHOLD,
                                grid: int = 4, bins: int = 8):
    """Generate a synthetic corpus once and extract every strategy's feature
    dataset in the same pass, so nothing larger than one image is retained.

    The generator's label interleaving is balanced over any prefix, so the
    first ``2 * n_train_per_class`` images form the training set and the rest
    the validation set. Returns (datasets, truths) where
    ``datasets[strategy.name][split]`` is an (X, labels, provenance) triple
    and truths holds the generator ground truth for every image.
    """
    from .dataset import iter_synth

    n_train = 2 * n_train_per_class
    n_total = n_train + 2 * n_val_per_class
    datasets = {s.name: {"train": ([], [], []), "val": ([], [], [])} for s in strategies}
    truths = []
    for i, (entry, img, truth) in enumerate(
            iter_synth(pattern, n_total, width, height, seed)):
        truths.append(truth)
        split = "train" if i < n_train else "val"
        mask = tissue_mask(img, bg_threshold)
        for strategy in strategies:
            rows, labels, prov = datasets[strategy.name][split]
            for ref, patch_img in prepare_inputs(img, mask, strategy,
                                                 entry.image_id, entry.label):
                rows.append(extract_features(patch_img, grid, bins))
                labels.append(entry.label)
                prov.append((entry.image_id, ref.patch_index))
    return (
        {name: {split: (np.stack(rows), labels, prov)
                for split, (rows, labels, prov) in by_split.items()}
         for name, by_split in datasets.items()},
        truths,
    )


# --- full run --------------------------------------------------------------------


def _control_block(name: str, X_val: np.ndarray, val_labels: list[Label],
                   true_model: ToyClassifier, X_train: np.ndarray,
                   train_labels: list[Label], cfg: TrainConfig,
                   master_seed: int) -> dict:
    """Train on randomly relabeled patches and contrast probability spread
    against the true-label model on the same validation patches.

    Every patch, training and validation alike, is relabeled from one seeded
    stream; the control's accuracy is scored against the relabeled validation
    labels (against independent coins it is binomially bound around 0.5,
    which is the property the control is meant to exhibit). Histograms are
    still grouped by the true image provenance.
    """
    relabeled = random_label_control(list(enumerate(list(train_labels) + list(val_labels))),
                                     child_seed(master_seed, "control"))
    random_labels = [lab for _, lab in relabeled]
    y_random_train = labels_to_targets(random_labels[:len(train_labels)])
    random_val = random_labels[len(train_labels):]
    control_cfg = replace(cfg, seed=child_seed(master_seed, "train", "control"))
    control_model = train_on_features(
        ToyClassifier(input_size=true_model.input_size, grid=true_model.grid,
                      bins=true_model.bins), X_train, y_random_train, control_cfg)

    control_probs = control_model.score_features(X_val)
    true_probs = true_model.score_features(X_val)
    predicted = [Label.ACTIVE_EOE if p >= 0.5 else Label.NON_EOE for p in control_probs]
    counts, metrics = compute_metrics(list(zip(predicted, random_val)))
    acc_vs_true = float(np.mean([pred is lab for pred, lab in zip(predicted, val_labels)]))

    by_class = {cls: [float(p) for p, lab in zip(control_probs, val_labels) if lab is cls]
                for cls in (Label.NON_EOE, Label.ACTIVE_EOE)}
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "kind": "random_label_control",
        "strategy": name,
        "patch_eval_vs_random_labels": metrics_to_dict(counts, metrics),
        "accuracy_vs_true_labels": acc_vs_true,
        "central_band_mass_true": central_band_mass([float(p) for p in true_probs]),
        "central_band_mass_control": central_band_mass([float(p) for p in control_probs]),
        "histograms": [histogram_to_dict(probability_histogram(by_class[cls], cls))
                       for cls in (Label.NON_EOE, Label.ACTIVE_EOE)],
    }


def run_full_experiment(config: ExperimentConfig, workers: int = 1) -> tuple[Path, int]:
    """Split, train, and evaluate every configured strategy.

    Writes, under ``config.out_dir``: a ``report.jsonl`` of evaluation
    blocks, per-strategy prediction JSONL files and model checkpoints, and
    optional SVG plots. Returns the report path and the number of per-image
    error entries encountered.
    """
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = read_manifest(config.manifest)
    truth_by_id = {e.image_id: e.label for e in manifest}

    split = replace(config.split, seed=config.master_seed)
    train_entries, val_entries = balanced_split(manifest, split)

    blocks: list[dict] = [{
        "schema_version": REPORT_SCHEMA_VERSION,
        "kind": "run_header",
        "config": config.to_dict(),
        "n_train": len(train_entries),
        "n_val": len(val_entries),
    }]
    n_errors = 0
    roc_points: list[tuple[str, float, float]] = []

    control_strategy = next((s for s in config.strategies if s.startswith("patch")),
                            config.strategies[0])
    control_ctx = None

    for name in config.strategies:
        strategy = parse_strategy(name)
        cfg = replace(config.train, seed=child_seed(config.master_seed, "train", name))
        model = train_for_strategy(train_entries, strategy, cfg, config.augment_spec,
                                   config.bg_threshold, workers)
        save_model(model, out / f"model-{name}.json")

        predictions = run_experiment(model, val_entries, strategy, workers,
                                     config.bg_threshold)
        write_predictions_jsonl(predictions, out / f"predictions-{name}.jsonl")

        block = build_strategy_report(name, predictions, truth_by_id)
        blocks.append(block)
        n_errors += len(block.get("errors", {}))
        whole = block.get("whole_image")
        if whole and whole["roc"]["fpr"] is not None and whole["roc"]["tpr"] is not None:
            roc_points.append((name, whole["roc"]["fpr"], whole["roc"]["tpr"]))

        if config.control and name == control_strategy:
            X_train, train_labels, _ = strategy_feature_dataset(
                train_entries, strategy, config.bg_threshold,
                model.grid, model.bins, workers)
            X_val, val_labels, _ = strategy_feature_dataset(
                val_entries, strategy, config.bg_threshold,
                model.grid, model.bins, workers)
            control_ctx = (name, X_val, val_labels, model, X_train, train_labels, cfg)

    if control_ctx is not None:
        blocks.append(_control_block(control_ctx[0], control_ctx[1], control_ctx[2],
                                     control_ctx[3], control_ctx[4], control_ctx[5],
                                     control_ctx[6], config.master_seed))

    report_path = out / "report.jsonl"
    with open(report_path, "w") as fh:
        for block in blocks:
            fh.write(json.dumps(block) + "\n")

    if config.emit_svg:
        (out / "roc.svg").write_text(roc_scatter_svg(roc_points))
        for block in blocks:
            if block.get("kind") in ("strategy_eval", "random_label_control") \
                    and "histograms" in block:
                neg, pos = block["histograms"]
                suffix = block["strategy"] if block["kind"] == "strategy_eval" else "control"
                svg = histogram_pair_svg(
                    _hist_from_dict(neg), _hist_from_dict(pos),
                    title=f"{block['strategy']} patch probabilities"
                          + (" (random labels)" if suffix == "control" else ""))
                (out / f"hist-{suffix}.svg").write_text(svg)

    return report_path, n_errors


def _hist_from_dict(d: dict):
    from .evaluation import ProbHistogram
    return ProbHistogram(bin_edges=tuple(d["bin_edges"]), counts=tuple(d["counts"]),
                         truth_class=Label(d["truth_class"]))


# --- offline evaluation (cmd_eval) -------------------------------------------------


def evaluate_predictions(predictions: Sequence[ImagePrediction],
                         truth_entries: Sequence[ManifestEntry]) -> dict:
    """Recompute an evaluation report from stored predictions and a truth
    manifest. Prediction ids missing from the manifest are an error."""
    if not predictions:
        raise ValueError("predictions file contains no entries")
    truth_by_id = {e.image_id: e.label for e in truth_entries}
    orphans = sorted({p.image_id for p in predictions} - set(truth_by_id))
    if orphans:
        raise ValueError("predictions reference images missing from the truth "
                         f"manifest: {', '.join(orphans)}")
    by_strategy: dict[str, list[ImagePrediction]] = {}
    for p in predictions:
        by_strategy.setdefault(p.strategy, []).append(p)
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "kind": "eval_report",
        "strategies": {name: build_strategy_report(name, preds, truth_by_id)
                       for name, preds in sorted(by_strategy.items())},
    }
