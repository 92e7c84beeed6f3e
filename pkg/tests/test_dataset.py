import itertools
import math

import numpy as np
import pytest

from patchscope.dataset import (
    ManifestEntry,
    PatternKind,
    SplitShortfallError,
    SplitSpec,
    balanced_split,
    generate_image,
    iter_synth,
    make_pattern,
    read_manifest,
    read_truth,
    synth_generate,
    write_manifest,
    write_synth_dataset,
)
from patchscope.imaging import Rect, tissue_mask
from patchscope.labels import Label
from patchscope.tiling import filter_patches, tile

R1, R2, R3 = "4140x3096", "2010x1548", "1360x1024"
STUDY_COUNTS = {R1: 29, R2: 126, R3: 55}


def study_manifest():
    entries = []
    i = 0
    for label in (Label.ACTIVE_EOE, Label.NON_EOE):
        for res, count in STUDY_COUNTS.items():
            for _ in range(count):
                entries.append(ManifestEntry(f"img-{i:04d}", f"/nowhere/{i}.png", label, res))
                i += 1
    return entries


class TestBalancedSplit:
    def test_study_configuration(self):
        spec = SplitSpec(train_per_class=147, val_per_class=63,
                         per_resolution_counts=STUDY_COUNTS, seed=11)
        train, val = balanced_split(study_manifest(), spec)
        assert len(train) == 294 and len(val) == 126
        for subset, per_class in ((train, 147), (val, 63)):
            for label in Label:
                assert sum(1 for e in subset if e.label is label) == per_class
        # per-resolution counts equal across classes within each set
        for subset in (train, val):
            for res in STUDY_COUNTS:
                counts = {label: sum(1 for e in subset
                                     if e.label is label and e.resolution_class == res)
                          for label in Label}
                assert counts[Label.ACTIVE_EOE] == counts[Label.NON_EOE]
        assert not {e.image_id for e in train} & {e.image_id for e in val}

    def test_reproducible(self):
        spec = SplitSpec(147, 63, STUDY_COUNTS, seed=5)
        a = balanced_split(study_manifest(), spec)
        b = balanced_split(study_manifest(), spec)
        assert a == b
        c = balanced_split(study_manifest(), SplitSpec(147, 63, STUDY_COUNTS, seed=6))
        assert a != c

    def test_zero_validation(self):
        spec = SplitSpec(train_per_class=210, val_per_class=0,
                         per_resolution_counts=STUDY_COUNTS, seed=0)
        train, val = balanced_split(study_manifest(), spec)
        assert len(train) == 420 and val == []

    def test_shortfall_names_cell(self):
        manifest = study_manifest()[:-1]  # drop one NON_EOE R3 image
        spec = SplitSpec(147, 63, STUDY_COUNTS, seed=0)
        with pytest.raises(SplitShortfallError) as err:
            balanced_split(manifest, spec)
        assert err.value.label is Label.NON_EOE
        assert err.value.resolution_class == R3
        assert err.value.needed == 55 and err.value.available == 54

    def test_spec_counts_must_sum(self):
        with pytest.raises(ValueError):
            SplitSpec(train_per_class=10, val_per_class=5,
                      per_resolution_counts={"a": 10})

    def test_small_manifest_exhaustive_over_seeds(self):
        res_counts = {"r1": 1, "r2": 1, "r3": 1}
        entries = [ManifestEntry(f"{lab.value}-{res}", "", lab, res)
                   for lab in Label for res in res_counts]
        spec_counts = dict(train_per_class=2, val_per_class=1,
                           per_resolution_counts=res_counts)
        seen_val = set()
        for seed in range(40):
            train, val = balanced_split(entries, SplitSpec(seed=seed, **spec_counts))
            assert len(train) == 4 and len(val) == 2
            assert not {e.image_id for e in train} & {e.image_id for e in val}
            seen_val.update(e.image_id for e in val)
        # across seeds every image shows up in validation eventually
        assert seen_val == {e.image_id for e in entries}


class TestManifestIO:
    def test_round_trip(self, tmp_path):
        entries = study_manifest()[:5]
        path = tmp_path / "manifest.csv"
        write_manifest(entries, path)
        assert read_manifest(path) == entries


class TestSynthGenerator:
    def test_n_zero(self):
        samples, entries, truths = synth_generate(make_pattern("global"), 0, 256, 256, 1)
        assert samples == [] and entries == [] and truths == []

    def test_deterministic(self):
        pat = make_pattern("local")
        a, _, _ = synth_generate(pat, 4, 256, 256, seed=9)
        b, _, _ = synth_generate(pat, 4, 256, 256, seed=9)
        for (ia, la), (ib, lb) in zip(a, b):
            assert ia == ib and la == lb

    def test_label_interleaving(self):
        _, entries, _ = synth_generate(make_pattern("global"), 10, 256, 256, 0)
        labels = [e.label for e in entries]
        assert labels.count(Label.ACTIVE_EOE) == 5
        assert labels[:2] == [Label.NON_EOE, Label.ACTIVE_EOE]

    def test_negatives_have_no_marks(self):
        _, entries, truths = synth_generate(make_pattern("half"), 6, 256, 256, 3)
        for entry, truth in zip(entries, truths):
            if entry.label is Label.NON_EOE:
                assert truth.marks == []
            else:
                assert len(truth.marks) >= 1

    def test_mark_centers_are_dark_tissue(self):
        for kind in ("local", "edge", "half", "global"):
            samples, entries, truths = synth_generate(make_pattern(kind), 4, 384, 384, 17)
            for (img, label), truth in zip(samples, truths):
                if not label.is_positive:
                    continue
                mask = tissue_mask(img)
                base_min = min(make_pattern(kind).base_rgb)
                for mark in truth.marks:
                    x, y = int(round(mark["x"])), int(round(mark["y"]))
                    assert mask.bits[y, x], f"{kind} mark centre off tissue"
                    assert img.pixels[y, x].min() < base_min - 20

    def test_global_density_band(self):
        pat = make_pattern("global")
        _, entries, truths = synth_generate(pat, 12, 512, 512, 23)
        mark_area = math.pi * (pat.feature_size / 2) ** 2
        for entry, truth in zip(entries, truths):
            if not entry.label.is_positive:
                continue
            support = math.pi * truth.blob_r0 ** 2
            expected = max(1, round(pat.density * support / mark_area))
            assert len(truth.marks) == expected
            nominal = pat.density * math.pi * (pat.blob_radius_frac * 512) ** 2 / mark_area
            assert 0.7 * nominal <= len(truth.marks) <= 1.3 * nominal

    def test_global_shift_recorded_and_applied(self):
        samples, entries, truths = synth_generate(make_pattern("global"), 4, 256, 256, 2)
        by_label = {e.label: (img, t) for (img, _), e, t in zip(samples, entries, truths)}
        pos_img, pos_truth = by_label[Label.ACTIVE_EOE]
        neg_img, neg_truth = by_label[Label.NON_EOE]
        assert pos_truth.global_shift_applied and not neg_truth.global_shift_applied
        pos_tissue = pos_img.pixels[tissue_mask(pos_img).bits]
        neg_tissue = neg_img.pixels[tissue_mask(neg_img).bits]
        assert pos_tissue[:, 1].mean() < neg_tissue[:, 1].mean() - 8

    def test_matched_base_texture_for_local_patterns(self):
        samples, entries, _ = synth_generate(make_pattern("local"), 8, 384, 384, 31)
        means = {Label.ACTIVE_EOE: [], Label.NON_EOE: []}
        for (img, _), entry in zip(samples, entries):
            tissue = img.pixels[tissue_mask(img).bits]
            means[entry.label].append(tissue.mean())
        diff = abs(np.mean(means[Label.ACTIVE_EOE]) - np.mean(means[Label.NON_EOE]))
        assert diff < 3.0  # marks cover well under 1% of the tissue

    def test_cluster_sparse_in_patch_grid(self):
        # with the default geometry a 64 px cluster touches under 15% of the
        # 224-tiling tissue patches of a 1024x1024 image
        pat = make_pattern("local", cluster_diameter=64)
        count = 0
        for entry, img, truth in iter_synth(pat, 8, 1024, 1024, seed=77):
            if not entry.label.is_positive:
                continue
            count += 1
            mask = tissue_mask(img)
            kept = filter_patches(tile(1024, 1024, 224), mask, 0.10)
            assert kept, "expected tissue patches"
            cx, cy, cr = truth.cluster["x"], truth.cluster["y"], truth.cluster["r"]

            def intersects(rect: Rect) -> bool:
                nx = min(max(cx, rect.x), rect.x + rect.w - 1)
                ny = min(max(cy, rect.y), rect.y + rect.h - 1)
                return (nx - cx) ** 2 + (ny - cy) ** 2 <= cr ** 2

            frac = sum(1 for p in kept if intersects(p.rect)) / len(kept)
            assert frac < 0.15, f"cluster touches {frac:.2%} of tissue patches"
        assert count >= 3

    def test_half_pattern_respects_half_plane(self):
        samples, entries, truths = synth_generate(make_pattern("half"), 8, 384, 384, 13)
        for (img, _), entry, truth in zip(samples, entries, truths):
            if not entry.label.is_positive:
                continue
            axis = math.radians(truth.half_axis_deg)
            nx, ny = math.cos(axis), math.sin(axis)
            cx, cy = truth.blob_center
            for mark in truth.marks:
                assert (mark["x"] - cx) * nx + (mark["y"] - cy) * ny >= 0

    def test_edge_pattern_marks_near_boundary(self):
        samples, entries, truths = synth_generate(make_pattern("edge"), 6, 384, 384, 19)
        for (img, _), entry, truth in zip(samples, entries, truths):
            if not entry.label.is_positive:
                continue
            cx, cy = truth.blob_center
            for mark in truth.marks:
                rad = math.hypot(mark["x"] - cx, mark["y"] - cy)
                assert rad >= 0.5 * truth.blob_r0

    def test_infeasible_geometry_rejected(self):
        with pytest.raises(ValueError):
            synth_generate(make_pattern("local", feature_size=2048,
                                        cluster_diameter=2048), 1, 512, 512, 0)
        with pytest.raises(ValueError):
            list(iter_synth(make_pattern("global", feature_size=400), 1, 512, 512, 0))

    def test_write_dataset_and_sidecars(self, tmp_path):
        entries = write_synth_dataset(make_pattern("global"), 4, 256, 256, 5,
                                      out_dir=tmp_path / "d")
        assert len(entries) == 4
        manifest = read_manifest(tmp_path / "d" / "manifest.csv")
        assert manifest == entries
        for e in entries:
            truth = read_truth(e.path)
            assert truth.image_id == e.image_id
            assert truth.label == e.label.value
            assert e.resolution_class == "256x256"


class TestPatternValidation:
    def test_kind_parsing(self):
        assert make_pattern("local").kind is PatternKind.LOCAL_CLUSTER
        assert make_pattern(PatternKind.GLOBAL_DIFFUSE).kind is PatternKind.GLOBAL_DIFFUSE
        with pytest.raises(ValueError):
            make_pattern("nope")

    def test_field_validation(self):
        with pytest.raises(ValueError):
            make_pattern("local", feature_size=0)
        with pytest.raises(ValueError):
            make_pattern("local", feature_density=1.5)
        with pytest.raises(ValueError):
            make_pattern("local", cluster_diameter=4, feature_size=12)
