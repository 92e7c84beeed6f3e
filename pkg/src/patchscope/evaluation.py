"""Confusion metrics, ROC-space points, probability histograms, and the
random-label control.

Rates are computed with exact integer arithmetic and only rounded for
display (one decimal for percentages, two for predicted prevalence). A rate
whose class is empty is reported as an explicit undefined marker (None),
never as a silent zero. The concentration of prediction probabilities near
0.5 is quantified as the mass inside a central band: a classifier with no
usable signal piles mass there, while a discriminating one pushes it to the
ends of the interval.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence, TypeVar

import numpy as np

from .labels import Label

T = TypeVar("T")

DEFAULT_CENTRAL_BAND = (0.4, 0.6)
DEFAULT_HISTOGRAM_BINS = 20


@dataclass(frozen=True)
class ConfusionCounts:
    """Binary confusion counts; the positive class is ActiveEoE."""

    tp: int
    fn: int
    tn: int
    fp: int

    def __post_init__(self) -> None:
        if min(self.tp, self.fn, self.tn, self.fp) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def positives(self) -> int:
        return self.tp + self.fn

    @property
    def negatives(self) -> int:
        return self.tn + self.fp

    @property
    def total(self) -> int:
        return self.positives + self.negatives


@dataclass(frozen=True)
class Metrics:
    """Rates in [0, 1]; None marks a rate whose class was empty."""

    tpr: Optional[float]
    tnr: Optional[float]
    accuracy: float
    pp: float


def counts_from_pairs(pairs: Sequence[tuple[Label, Label]]) -> ConfusionCounts:
    """Pairs are (predicted, truth)."""
    tp = fn = tn = fp = 0
    for predicted, truth in pairs:
        if truth.is_positive:
            if predicted.is_positive:
                tp += 1
            else:
                fn += 1
        else:
            if predicted.is_positive:
                fp += 1
            else:
                tn += 1
    return ConfusionCounts(tp=tp, fn=fn, tn=tn, fp=fp)


def metrics_from_counts(c: ConfusionCounts) -> Metrics:
    if c.total == 0:
        raise ValueError("cannot compute metrics over zero predictions")
    tpr = float(Fraction(c.tp, c.positives)) if c.positives else None
    tnr = float(Fraction(c.tn, c.negatives)) if c.negatives else None
    accuracy = float(Fraction(c.tp + c.tn, c.total))
    pp = float(Fraction(c.tp + c.fp, c.total))
    return Metrics(tpr=tpr, tnr=tnr, accuracy=accuracy, pp=pp)


def compute_metrics(pairs: Sequence[tuple[Label, Label]]) -> tuple[ConfusionCounts, Metrics]:
    """Confusion counts and rates from (predicted, truth) pairs.

    Indeterminate predictions must be excluded by the caller (and reported
    separately); this function requires a non-empty list of decided pairs.
    """
    if not pairs:
        raise ValueError("no decided predictions to score")
    counts = counts_from_pairs(pairs)
    return counts, metrics_from_counts(counts)


def roc_point(m: Metrics) -> tuple[Optional[float], Optional[float]]:
    """(1 - TNR, TPR); undefined rates propagate as None."""
    fpr = None if m.tnr is None else 1.0 - m.tnr
    return (fpr, m.tpr)


def format_pct(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value * 100:.1f}%"


def format_pp(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.2f}"


def format_metrics_row(m: Metrics) -> str:
    return (f"{format_pct(m.tpr)} {format_pct(m.tnr)} "
            f"{format_pct(m.accuracy)} {format_pp(m.pp)}")


@dataclass(frozen=True)
class ProbHistogram:
    """Uniform-bin histogram of prediction probabilities for one truth class."""

    bin_edges: tuple[float, ...]
    counts: tuple[int, ...]
    truth_class: Label

    @property
    def total(self) -> int:
        return sum(self.counts)


def probability_histogram(probs: Sequence[float], truth_class: Label,
                          bins: int = DEFAULT_HISTOGRAM_BINS) -> ProbHistogram:
    """Bin probabilities into ``bins`` uniform bins over [0, 1].

    Bins are left-closed; the last bin is closed on both ends so p = 1.0 is
    counted.
    """
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    counts = [0] * bins
    for p in probs:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"probability {p} outside [0, 1]")
        counts[min(int(p * bins), bins - 1)] += 1
    edges = tuple(k / bins for k in range(bins + 1))
    return ProbHistogram(bin_edges=edges, counts=tuple(counts), truth_class=truth_class)


def central_band_mass(probs: Sequence[float],
                      band: tuple[float, float] = DEFAULT_CENTRAL_BAND) -> float:
    """Fraction of probabilities inside the closed band around 0.5."""
    if len(probs) == 0:
        raise ValueError("central_band_mass requires at least one probability")
    lo, hi = band
    inside = sum(1 for p in probs if lo <= p <= hi)
    return inside / len(probs)


def random_label_control(dataset: Sequence[tuple[T, Label]], seed: int) -> list[tuple[T, Label]]:
    """Replace every label by an independent fair coin flip from ``seed``.

    Items are untouched and original labels are ignored, so two datasets
    differing only in labels relabel identically.
    """
    rng = np.random.default_rng(seed)
    draws = rng.integers(0, 2, size=len(dataset))
    return [(item, Label.ACTIVE_EOE if d else Label.NON_EOE)
            for (item, _), d in zip(dataset, draws)]


# --- report assembly ----------------------------------------------------------

REPORT_SCHEMA_VERSION = 1


def metrics_to_dict(c: ConfusionCounts, m: Metrics) -> dict:
    fpr, tpr = roc_point(m)
    return {
        "counts": {"tp": c.tp, "fn": c.fn, "tn": c.tn, "fp": c.fp},
        "metrics": {"tpr": m.tpr, "tnr": m.tnr, "accuracy": m.accuracy, "pp": m.pp},
        "display": format_metrics_row(m),
        "roc": {"fpr": fpr, "tpr": tpr},
    }


def histogram_to_dict(h: ProbHistogram) -> dict:
    return {"truth_class": h.truth_class.value, "bin_edges": list(h.bin_edges),
            "counts": list(h.counts)}


def split_scored_pairs(predictions) -> tuple[list, list]:
    """Separate decided predictions from indeterminate/error entries."""
    decided = [p for p in predictions if p.label is not None]
    undecided = [p for p in predictions if p.label is None]
    return decided, undecided


def build_strategy_report(strategy_name: str, predictions, truth_by_id: dict[str, Label],
                          bins: int = DEFAULT_HISTOGRAM_BINS,
                          band: tuple[float, float] = DEFAULT_CENTRAL_BAND) -> dict:
    """JSON-ready evaluation block for one strategy's image predictions."""
    decided, undecided = split_scored_pairs(predictions)
    block: dict = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "kind": "strategy_eval",
        "strategy": strategy_name,
        "n_images": len(predictions),
        "indeterminate": sorted(p.image_id for p in undecided if p.error and p.error.startswith("indeterminate")),
        "errors": {p.image_id: p.error for p in sorted(undecided, key=lambda q: q.image_id)
                   if p.error and not p.error.startswith("indeterminate")},
    }
    if decided:
        pairs = [(p.label, truth_by_id[p.image_id]) for p in decided]
        counts, metrics = compute_metrics(pairs)
        block["whole_image"] = metrics_to_dict(counts, metrics)

    patch_probs: dict[Label, list[float]] = {Label.ACTIVE_EOE: [], Label.NON_EOE: []}
    patch_pairs = []
    for p in decided:
        truth = truth_by_id[p.image_id]
        for _, prob in p.patch_probs:
            patch_probs[truth].append(prob)
            predicted = Label.ACTIVE_EOE if prob >= 0.5 else Label.NON_EOE
            patch_pairs.append((predicted, truth))
    all_probs = patch_probs[Label.ACTIVE_EOE] + patch_probs[Label.NON_EOE]
    if patch_pairs:
        counts, metrics = compute_metrics(patch_pairs)
        block["patch_level"] = metrics_to_dict(counts, metrics)
        block["histograms"] = [
            histogram_to_dict(probability_histogram(patch_probs[cls], cls, bins))
            for cls in (Label.NON_EOE, Label.ACTIVE_EOE)
        ]
        block["central_band"] = {"band": list(band),
                                 "mass": central_band_mass(all_probs, band)}
    return block


# --- SVG emission ---------------------------------------------------------------
#
# Hand-rolled SVG keeps report artifacts free of plotting-library state, so
# repeated runs emit byte-identical files.

_SVG_SIZE = 420
_SVG_MARGIN = 50


def _svg_header(width: int, height: int) -> str:
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">\n'
            f'<rect width="{width}" height="{height}" fill="white"/>\n')


def roc_scatter_svg(points: Sequence[tuple[str, float, float]]) -> str:
    """Scatter of (label, fpr, tpr) points in the ROC unit square."""
    size, m = _SVG_SIZE, _SVG_MARGIN
    span = size - 2 * m

    def sx(v: float) -> float:
        return m + v * span

    def sy(v: float) -> float:
        return size - m - v * span

    parts = [_svg_header(size, size)]
    parts.append(f'<rect x="{m}" y="{m}" width="{span}" height="{span}" '
                 f'fill="none" stroke="black"/>\n')
    parts.append(f'<line x1="{sx(0):.1f}" y1="{sy(0):.1f}" x2="{sx(1):.1f}" '
                 f'y2="{sy(1):.1f}" stroke="#bbbbbb" stroke-dasharray="4 3"/>\n')
    for k in (0.0, 0.5, 1.0):
        parts.append(f'<text x="{sx(k):.1f}" y="{size - m + 18}" font-size="11" '
                     f'text-anchor="middle">{k:.1f}</text>\n')
        parts.append(f'<text x="{m - 8}" y="{sy(k) + 4:.1f}" font-size="11" '
                     f'text-anchor="end">{k:.1f}</text>\n')
    parts.append(f'<text x="{size / 2:.1f}" y="{size - 12}" font-size="12" '
                 f'text-anchor="middle">1 - TNR</text>\n')
    parts.append(f'<text x="14" y="{size / 2:.1f}" font-size="12" text-anchor="middle" '
                 f'transform="rotate(-90 14 {size / 2:.1f})">TPR</text>\n')
    for label, fpr, tpr in points:
        parts.append(f'<circle cx="{sx(fpr):.2f}" cy="{sy(tpr):.2f}" r="5" '
                     f'fill="#2060c0" fill-opacity="0.8"/>\n')
        parts.append(f'<text x="{sx(fpr) + 8:.2f}" y="{sy(tpr) - 6:.2f}" '
                     f'font-size="11">{label}</text>\n')
    parts.append("</svg>\n")
    return "".join(parts)


def histogram_pair_svg(hist_neg: ProbHistogram, hist_pos: ProbHistogram,
                       title: str = "") -> str:
    """Side-by-side probability histograms for the two truth classes."""
    panel_w, panel_h, m = 320, 240, 40
    width, height = panel_w * 2 + m * 3, panel_h + 2 * m
    parts = [_svg_header(width, height)]
    for panel, (hist, color, sub) in enumerate([
        (hist_neg, "#c03020", hist_neg.truth_class.value),
        (hist_pos, "#2060c0", hist_pos.truth_class.value),
    ]):
        x0 = m + panel * (panel_w + m)
        y0 = m
        parts.append(f'<rect x="{x0}" y="{y0}" width="{panel_w}" height="{panel_h}" '
                     f'fill="none" stroke="black"/>\n')
        peak = max(max(hist.counts), 1)
        bw = panel_w / len(hist.counts)
        for i, count in enumerate(hist.counts):
            bh = panel_h * count / peak
            parts.append(f'<rect x="{x0 + i * bw:.2f}" y="{y0 + panel_h - bh:.2f}" '
                         f'width="{bw:.2f}" height="{bh:.2f}" fill="{color}" '
                         f'fill-opacity="0.75"/>\n')
        parts.append(f'<text x="{x0 + panel_w / 2:.1f}" y="{y0 + panel_h + 16}" '
                     f'font-size="11" text-anchor="middle">p(active), {sub}</text>\n')
    if title:
        parts.append(f'<text x="{width / 2:.1f}" y="{m - 16}" font-size="13" '
                     f'text-anchor="middle">{title}</text>\n')
    parts.append("</svg>\n")
    return "".join(parts)
