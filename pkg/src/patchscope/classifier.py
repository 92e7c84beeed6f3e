"""Pluggable patch classifier contract and a trainable reference model.

The pipeline only requires an object with an ``input_size`` and a
``predict_proba`` method returning the probability of the positive class, so
a heavyweight network can be slotted in later. The built-in reference model
is deliberately transparent: grid-of-histograms features under logistic
regression, trained by mini-batch gradient descent. It is strong enough to
exercise every downstream stage on synthetic data at desk scale.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Optional, Protocol, Sequence, runtime_checkable

import numpy as np

from ._rng import child_rng
from .augment import AugmentSpec, augment
from .imaging import RasterImage
from .labels import Label

DEFAULT_GRID = 4
DEFAULT_BINS = 8

PROB_EPS = 1e-12


@runtime_checkable
class PatchClassifier(Protocol):
    """Anything that scores a conforming square RGB image."""

    input_size: int

    def predict_proba(self, img: RasterImage) -> float: ...


@dataclass(frozen=True)
class TrainConfig:
    """Mini-batch gradient descent hyperparameters.

    The default batch size of four mirrors the smallest batch the reference
    hardware setup supported for whole-image training.
    """

    epochs: int
    learning_rate: float
    batch_size: int = 4
    seed: int = 0
    l2: float = 0.0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.l2 < 0:
            raise ValueError(f"l2 must be non-negative, got {self.l2}")

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "learning_rate": self.learning_rate,
                "batch_size": self.batch_size, "seed": self.seed, "l2": self.l2}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(epochs=int(d["epochs"]), learning_rate=float(d["learning_rate"]),
                   batch_size=int(d.get("batch_size", 4)), seed=int(d.get("seed", 0)),
                   l2=float(d.get("l2", 0.0)))


def feature_dim(grid: int = DEFAULT_GRID, bins: int = DEFAULT_BINS) -> int:
    return grid * grid * 3 * bins


def _axis_cells(size: int, grid: int) -> np.ndarray:
    """Cell index per coordinate, from boundaries at floor(k * size / grid)."""
    bounds = [size * k // grid for k in range(grid + 1)]
    out = np.empty(size, dtype=np.int32)
    for k in range(grid):
        out[bounds[k]:bounds[k + 1]] = k
    return out


@lru_cache(maxsize=8)
def _cell_layout(height: int, width: int, grid: int, bins: int):
    """Per-pixel flat base index ((cell * 3 + channel) * bins) and per-feature
    normalizers (the owning cell's pixel count), cached per geometry."""
    cell = _axis_cells(height, grid)[:, None] * grid + _axis_cells(width, grid)[None, :]
    base = (cell[:, :, None] * 3 + np.arange(3, dtype=np.int32)[None, None, :]) * bins
    areas = np.bincount(cell.ravel(), minlength=grid * grid).astype(np.float64)
    norms = np.repeat(areas, 3 * bins)
    return np.ascontiguousarray(base.astype(np.int32)), norms


def extract_features(img: RasterImage, grid: int = DEFAULT_GRID,
                     bins: int = DEFAULT_BINS) -> np.ndarray:
    """Concatenated per-cell, per-channel normalized intensity histograms.

    The image is split into a ``grid x grid`` mesh of cells (boundaries at
    ``floor(k * size / grid)``); each cell contributes one ``bins``-bin
    histogram per RGB channel, normalized to sum to 1. Layout: cells in
    row-major order, channels R, G, B within a cell, bins ascending within a
    channel.
    """
    base, norms = _cell_layout(img.height, img.width, grid, bins)
    binned = (img.pixels.astype(np.int32) * bins) >> 8
    counts = np.bincount((base + binned).ravel(), minlength=feature_dim(grid, bins))
    return counts / norms


def _sigmoid(s: np.ndarray) -> np.ndarray:
    out = np.empty_like(s, dtype=np.float64)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    es = np.exp(s[~pos])
    out[~pos] = es / (1.0 + es)
    return out


@dataclass(frozen=True)
class ToyClassifier:
    """Histogram-feature logistic model over a fixed square input size."""

    input_size: int
    grid: int = DEFAULT_GRID
    bins: int = DEFAULT_BINS
    weights: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    bias: float = 0.0
    trained_with: Optional[TrainConfig] = None

    def __post_init__(self) -> None:
        dim = feature_dim(self.grid, self.bins)
        w = self.weights
        if w is None:
            w = np.zeros(dim, dtype=np.float64)
        else:
            w = np.asarray(w, dtype=np.float64)
            if w.shape != (dim,):
                raise ValueError(f"weights must have shape ({dim},), got {w.shape}")
        object.__setattr__(self, "weights", w)

    def check_input(self, img: RasterImage) -> None:
        if img.width != self.input_size or img.height != self.input_size:
            raise ValueError(
                f"classifier expects {self.input_size}x{self.input_size} input, "
                f"got {img.width}x{img.height}"
            )

    def features(self, img: RasterImage) -> np.ndarray:
        self.check_input(img)
        return extract_features(img, self.grid, self.bins)

    def predict_proba(self, img: RasterImage) -> float:
        return float(self.score_features(self.features(img)[None, :])[0])

    def score_features(self, X: np.ndarray) -> np.ndarray:
        """Probabilities for pre-extracted feature rows, clamped to (0, 1)."""
        p = _sigmoid(X @ self.weights + self.bias)
        return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def predict_proba(model: ToyClassifier, img: RasterImage) -> float:
    return model.predict_proba(img)


def labels_to_targets(labels: Sequence[Label]) -> np.ndarray:
    return np.array([1.0 if lab.is_positive else 0.0 for lab in labels])


def logistic_loss_and_grad(weights: np.ndarray, bias: float, X: np.ndarray,
                           y: np.ndarray, l2: float = 0.0):
    """Mean logistic loss with l2 weight penalty, plus its analytic gradient."""
    s = X @ weights + bias
    loss = float(np.mean(np.maximum(s, 0.0) - s * y + np.log1p(np.exp(-np.abs(s))))
                 + l2 * np.dot(weights, weights))
    p = _sigmoid(s)
    grad_w = X.T @ (p - y) / len(y) + 2.0 * l2 * weights
    grad_b = float(np.mean(p - y))
    return loss, grad_w, grad_b


def _sgd_epochs(X: np.ndarray, y: np.ndarray, weights: np.ndarray, bias: float,
                cfg: TrainConfig, epoch_range) -> tuple[np.ndarray, float]:
    n = len(y)
    w = weights.copy()
    b = bias
    for epoch in epoch_range:
        order = child_rng(cfg.seed, "shuffle", epoch).permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            Xb = X[idx]
            d = (_sigmoid(Xb @ w + b) - y[idx]) / len(idx)
            w = w - cfg.learning_rate * (Xb.T @ d + 2.0 * cfg.l2 * w)
            b = b - cfg.learning_rate * float(d.sum())
    return w, b


def _standardizer(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean and scale over the training set; constant features get
    scale 1 so they stay inert."""
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    return mu, np.where(sd > 0, sd, 1.0)


def _to_standard(weights: np.ndarray, bias: float, mu: np.ndarray,
                 scale: np.ndarray) -> tuple[np.ndarray, float]:
    return weights * scale, bias + float(weights @ mu)


def _from_standard(weights: np.ndarray, bias: float, mu: np.ndarray,
                   scale: np.ndarray) -> tuple[np.ndarray, float]:
    raw = weights / scale
    return raw, bias - float(raw @ mu)


def train_on_features(model: ToyClassifier, X: np.ndarray, y: np.ndarray,
                      cfg: TrainConfig) -> ToyClassifier:
    """Fit on a fixed feature matrix (no augmentation). Deterministic in cfg.

    Descent runs on features standardized over the training set (histogram
    masses vary by orders of magnitude between common and rare bins, which
    cripples a single global step size); the returned weights are folded back
    to raw feature space, so the stored model is always plain
    ``sigmoid(weights . features + bias)``.
    """
    if len(X) == 0:
        raise ValueError("training data must be non-empty")
    if X.shape[1] != feature_dim(model.grid, model.bins):
        raise ValueError(f"feature rows of length {X.shape[1]} do not match model "
                         f"dimension {feature_dim(model.grid, model.bins)}")
    X = np.asarray(X, dtype=np.float64)
    mu, scale = _standardizer(X)
    w0, b0 = _to_standard(model.weights, model.bias, mu, scale)
    w, b = _sgd_epochs((X - mu) / scale, np.asarray(y, dtype=np.float64),
                       w0, b0, cfg, range(cfg.epochs))
    w_raw, b_raw = _from_standard(w, b, mu, scale)
    return replace(model, weights=w_raw, bias=b_raw, trained_with=cfg)


def train(model: ToyClassifier, data: Sequence[tuple[RasterImage, Label]],
          cfg: TrainConfig, spec: Optional[AugmentSpec] = None) -> ToyClassifier:
    """Mini-batch gradient descent over (image, label) pairs.

    Augmentation, when enabled, is redrawn per sample per epoch from streams
    derived from ``cfg.seed``; the epoch shuffle uses its own stream, so
    disabling augmentation does not change the data order. Returns a new
    model; the input model supplies the starting weights.
    """
    if not data:
        raise ValueError("training data must be non-empty")
    for img, _ in data:
        model.check_input(img)
    if spec is None:
        spec = AugmentSpec.identity()
    y = labels_to_targets([lab for _, lab in data])

    if spec.is_identity:
        X = np.stack([extract_features(img, model.grid, model.bins) for img, _ in data])
        return train_on_features(model, X, y, cfg)

    # standardization statistics come from the unaugmented images so the
    # descent geometry stays fixed across epochs
    mu, scale = _standardizer(
        np.stack([extract_features(img, model.grid, model.bins) for img, _ in data]))
    w, b = _to_standard(model.weights, model.bias, mu, scale)
    for epoch in range(cfg.epochs):
        X = np.stack([
            extract_features(augment(img, spec, child_rng(cfg.seed, "augment", epoch, i)),
                             model.grid, model.bins)
            for i, (img, _) in enumerate(data)
        ])
        w, b = _sgd_epochs((X - mu) / scale, y, w, b, cfg, [epoch])
    w_raw, b_raw = _from_standard(w, b, mu, scale)
    return replace(model, weights=w_raw, bias=b_raw, trained_with=cfg)


MODEL_SCHEMA_VERSION = 1


def save_model(model: ToyClassifier, path: str | Path) -> None:
    doc = {
        "schema_version": MODEL_SCHEMA_VERSION,
        "kind": "toy_classifier",
        "input_size": model.input_size,
        "grid": model.grid,
        "bins": model.bins,
        "weights": model.weights.tolist(),
        "bias": model.bias,
        "train_config": model.trained_with.to_dict() if model.trained_with else None,
    }
    Path(path).write_text(json.dumps(doc))


def load_model(path: str | Path) -> ToyClassifier:
    doc = json.loads(Path(path).read_text())
    if doc.get("kind") != "toy_classifier":
        raise ValueError(f"not a classifier checkpoint: {path}")
    if doc.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise ValueError(f"unsupported checkpoint schema {doc.get('schema_version')}")
    cfg = TrainConfig.from_dict(doc["train_config"]) if doc.get("train_config") else None
    return ToyClassifier(input_size=int(doc["input_size"]), grid=int(doc["grid"]),
                         bins=int(doc["bins"]), weights=np.array(doc["weights"]),
                         bias=float(doc["bias"]), trained_with=cfg)
