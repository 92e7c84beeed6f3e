import numpy as np
import pytest

from oracles import bin_probabilities_by_counting
from patchscope.evaluation import (
    ConfusionCounts,
    build_strategy_report,
    central_band_mass,
    compute_metrics,
    counts_from_pairs,
    format_metrics_row,
    histogram_pair_svg,
    metrics_from_counts,
    probability_histogram,
    random_label_control,
    roc_point,
    roc_scatter_svg,
)
from patchscope.labels import Label
from patchscope.pipeline import ImagePrediction

A, N = Label.ACTIVE_EOE, Label.NON_EOE


def pairs_from_counts(tp, fn, tn, fp):
    return ([(A, A)] * tp + [(N, A)] * fn + [(N, N)] * tn + [(A, N)] * fp)


class TestComputeMetrics:
    def test_whole_image_downscale_row(self):
        counts, metrics = compute_metrics(pairs_from_counts(tp=47, fn=16, tn=61, fp=2))
        assert counts == ConfusionCounts(tp=47, fn=16, tn=61, fp=2)
        assert format_metrics_row(metrics) == "74.6% 96.8% 85.7% 0.39"

    def test_whole_image_patch448_row(self):
        _, metrics = compute_metrics(pairs_from_counts(tp=52, fn=11, tn=55, fp=8))
        assert format_metrics_row(metrics) == "82.5% 87.3% 84.9% 0.48"

    def test_all_correct(self):
        _, metrics = compute_metrics(pairs_from_counts(tp=10, fn=0, tn=30, fp=0))
        assert metrics.tpr == 1.0 and metrics.tnr == 1.0 and metrics.accuracy == 1.0
        assert metrics.pp == 0.25  # equals prevalence

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            compute_metrics([])

    def test_undefined_rate_is_marker_not_zero(self):
        _, metrics = compute_metrics([(N, N)] * 5)
        assert metrics.tpr is None
        assert metrics.tnr == 1.0
        assert format_metrics_row(metrics).startswith("n/a")

    def test_pp_identity(self, rng):
        for _ in range(50):
            tp, fn, tn, fp = (int(v) for v in rng.integers(0, 40, size=4))
            if tp + fn == 0 or tn + fp == 0:
                continue
            m = metrics_from_counts(ConfusionCounts(tp, fn, tn, fp))
            pos, neg = tp + fn, tn + fp
            assert m.pp == pytest.approx(
                (m.tpr * pos + (1 - m.tnr) * neg) / (pos + neg), abs=1e-12)

    def test_counts_from_pairs(self):
        counts = counts_from_pairs([(A, A), (A, N), (N, A), (N, N), (A, A)])
        assert counts == ConfusionCounts(tp=2, fn=1, tn=1, fp=1)


class TestRocPoint:
    def test_perfect_classifier(self):
        _, m = compute_metrics(pairs_from_counts(tp=5, fn=0, tn=5, fp=0))
        assert roc_point(m) == (0.0, 1.0)

    def test_downscale_row_point(self):
        _, m = compute_metrics(pairs_from_counts(tp=47, fn=16, tn=61, fp=2))
        fpr, tpr = roc_point(m)
        assert round(fpr, 3) == 0.032
        assert round(tpr, 3) == 0.746

    def test_undefined_propagates(self):
        _, m = compute_metrics([(A, A)] * 3)
        assert roc_point(m) == (None, 1.0)

    def test_random_coin_near_diagonal(self):
        rng = np.random.default_rng(8)
        truths = [A] * 500 + [N] * 500
        preds = [A if rng.random() < 0.5 else N for _ in truths]
        _, m = compute_metrics(list(zip(preds, truths)))
        fpr, tpr = roc_point(m)
        assert abs(tpr - fpr) <= 0.1


class TestProbabilityHistogram:
    def test_point_mass_at_half(self):
        hist = probability_histogram([0.5] * 7, A, bins=20)
        assert hist.counts[10] == 7 and hist.total == 7

    def test_extremes_land_in_outer_bins(self):
        hist = probability_histogram([0.0, 0.0, 1.0], N, bins=20)
        assert hist.counts[0] == 2 and hist.counts[-1] == 1
        assert sum(hist.counts[1:-1]) == 0

    def test_matches_counting_oracle(self, rng):
        probs = rng.random(100).tolist() + [0.0, 1.0]
        hist = probability_histogram(probs, A, bins=20)
        assert list(hist.counts) == bin_probabilities_by_counting(probs, 20)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            probability_histogram([1.2], A)


class TestCentralBandMass:
    def test_all_at_half(self):
        assert central_band_mass([0.5, 0.5, 0.5]) == 1.0

    def test_extremes_have_no_central_mass(self):
        assert central_band_mass([0.1, 0.9]) == 0.0

    def test_band_is_closed(self):
        assert central_band_mass([0.4, 0.6, 0.39999, 0.60001]) == 0.5

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            central_band_mass([])

    def test_widening_never_decreases(self, rng):
        probs = rng.random(200).tolist()
        masses = [central_band_mass(probs, (0.5 - w, 0.5 + w))
                  for w in (0.05, 0.1, 0.2, 0.3, 0.5)]
        assert masses == sorted(masses)
        assert masses[-1] == 1.0


class TestRandomLabelControl:
    def test_deterministic(self):
        items = [(f"p{i}", A) for i in range(50)]
        assert random_label_control(items, 7) == random_label_control(items, 7)
        assert random_label_control(items, 7) != random_label_control(items, 8)

    def test_original_labels_ignored(self):
        a = [(f"p{i}", A) for i in range(50)]
        b = [(f"p{i}", N) for i in range(50)]
        ra = [lab for _, lab in random_label_control(a, 3)]
        rb = [lab for _, lab in random_label_control(b, 3)]
        assert ra == rb

    def test_items_unchanged(self):
        items = [(i, N) for i in range(20)]
        assert [x for x, _ in random_label_control(items, 1)] == list(range(20))

    def test_balance_concentration(self):
        items = [(i, N) for i in range(10_000)]
        relabeled = random_label_control(items, 123)
        frac = sum(1 for _, lab in relabeled if lab is A) / len(relabeled)
        assert abs(frac - 0.5) < 0.02  # ~3 sigma is 0.015


def prediction(image_id, probs, label, error=None):
    votes = sum(1 for p in probs if p >= 0.5)
    return ImagePrediction(image_id, "patch-224",
                           tuple(enumerate(probs)), votes, len(probs), label, error)


class TestStrategyReport:
    def test_structure_and_indeterminate_separation(self):
        truth = {"a": A, "b": N, "c": A, "d": N}
        preds = [
            prediction("a", [0.9, 0.8], A),
            prediction("b", [0.2, 0.1], N),
            prediction("c", [], None, error="indeterminate: no tissue patches"),
            prediction("d", [], None, error="unreadable image: boom"),
        ]
        block = build_strategy_report("patch-224", preds, truth)
        assert block["kind"] == "strategy_eval"
        assert block["n_images"] == 4
        assert block["indeterminate"] == ["c"]
        assert list(block["errors"]) == ["d"]
        whole = block["whole_image"]
        assert whole["counts"] == {"tp": 1, "fn": 0, "tn": 1, "fp": 0}
        assert whole["metrics"]["accuracy"] == 1.0
        patch = block["patch_level"]
        assert patch["counts"]["tp"] == 2 and patch["counts"]["tn"] == 2
        hists = block["histograms"]
        assert [h["truth_class"] for h in hists] == ["NonEoE", "ActiveEoE"]
        assert block["central_band"]["mass"] == 0.0


class TestSvg:
    def test_roc_scatter_contains_points(self):
        svg = roc_scatter_svg([("downscale-1000", 0.032, 0.746)])
        assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
        assert "downscale-1000" in svg and "circle" in svg

    def test_histogram_pair_deterministic(self):
        h1 = probability_histogram([0.1, 0.2, 0.9], N)
        h2 = probability_histogram([0.5, 0.6], A)
        assert histogram_pair_svg(h1, h2, "t") == histogram_pair_svg(h1, h2, "t")
