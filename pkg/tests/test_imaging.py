import numpy as np
import pytest

from conftest import ramp_image, random_image
from oracles import (
    bicubic_reference,
    bicubic_reference_scalar,
    count_tissue_pixels,
    rect_coverage_by_counting,
)
from patchscope.imaging import (
    BoundsError,
    RasterImage,
    Rect,
    TissueMask,
    coverage_fraction,
    crop,
    read_pgm,
    read_png,
    read_ppm,
    resize_bicubic,
    tissue_mask,
    write_pgm,
    write_png,
    write_ppm,
)


class TestRasterImage:
    def test_shape_validation(self):
        with pytest.raises(ValueError):
            RasterImage(np.zeros((4, 4), dtype=np.uint8))
        with pytest.raises(ValueError):
            RasterImage(np.zeros((0, 4, 3), dtype=np.uint8))

    def test_range_validation(self):
        with pytest.raises(ValueError):
            RasterImage(np.full((2, 2, 3), 300, dtype=np.int32))

    def test_accepts_small_ints(self):
        img = RasterImage(np.full((2, 2, 3), 9, dtype=np.int64))
        assert img.pixels.dtype == np.uint8


class TestRect:
    def test_validation(self):
        with pytest.raises(ValueError):
            Rect(-1, 0, 4, 4)
        with pytest.raises(ValueError):
            Rect(0, 0, 0, 4)

    def test_bounds_check(self):
        Rect(4, 4, 4, 4).check_within(8, 8)
        with pytest.raises(BoundsError):
            Rect(5, 4, 4, 4).check_within(8, 8)


class TestTissueMask:
    def test_all_white_is_background(self):
        mask = tissue_mask(RasterImage.full(6, 5, (255, 255, 255)), 240)
        assert not mask.bits.any()

    def test_all_black_is_tissue(self):
        mask = tissue_mask(RasterImage.full(6, 5, (0, 0, 0)), 240)
        assert mask.bits.all()

    def test_half_and_half_matches_pixel_count(self):
        px = np.full((5, 8, 3), 255, dtype=np.uint8)
        px[:, :4] = 0
        img = RasterImage(px)
        mask = tissue_mask(img, 240)
        assert mask.bits[:, :4].all() and not mask.bits[:, 4:].any()
        assert int(mask.bits.sum()) == count_tissue_pixels(px, 240)

    def test_min_channel_rule(self):
        # one dark channel is enough to count as tissue
        img = RasterImage.full(2, 2, (250, 250, 100))
        assert tissue_mask(img, 240).bits.all()

    def test_threshold_validation(self):
        with pytest.raises(ValueError):
            tissue_mask(RasterImage.full(2, 2), 256)

    def test_random_images_match_enumeration(self, rng):
        for _ in range(5):
            img = random_image(rng, 9, 7)
            thr = int(rng.integers(0, 256))
            assert int(tissue_mask(img, thr).bits.sum()) == count_tissue_pixels(img.pixels, thr)

    def test_commutes_with_crop(self, rng):
        for _ in range(10):
            img = random_image(rng, 16, 12)
            rect = Rect(int(rng.integers(0, 8)), int(rng.integers(0, 6)),
                        int(rng.integers(1, 9)), int(rng.integers(1, 7)))
            mask_then_crop = tissue_mask(img).bits[rect.y:rect.y + rect.h,
                                                   rect.x:rect.x + rect.w]
            crop_then_mask = tissue_mask(crop(img, rect)).bits
            assert np.array_equal(mask_then_crop, crop_then_mask)


class TestCoverage:
    def test_extremes(self):
        empty = TissueMask(np.zeros((8, 8), dtype=bool))
        full = TissueMask(np.ones((8, 8), dtype=bool))
        assert coverage_fraction(empty, Rect(0, 0, 8, 8)) == 0.0
        assert coverage_fraction(full, Rect(2, 2, 4, 4)) == 1.0

    def test_half_covered_rect(self):
        bits = np.zeros((8, 8), dtype=bool)
        bits[2:4, 2:6] = True  # 8 pixels inside the 4x4 rect below
        assert coverage_fraction(TissueMask(bits), Rect(2, 2, 4, 4)) == 0.5

    def test_out_of_bounds(self):
        mask = TissueMask(np.zeros((4, 4), dtype=bool))
        with pytest.raises(BoundsError):
            coverage_fraction(mask, Rect(2, 2, 4, 4))

    def test_matches_counting_oracle(self, rng):
        bits = rng.random((10, 14)) < 0.4
        mask = TissueMask(bits)
        for _ in range(20):
            x, y = int(rng.integers(0, 10)), int(rng.integers(0, 6))
            w, h = int(rng.integers(1, 5)), int(rng.integers(1, 5))
            assert coverage_fraction(mask, Rect(x, y, w, h)) == pytest.approx(
                rect_coverage_by_counting(bits, x, y, w, h))

    def test_monotone_under_mask_growth(self, rng):
        bits = rng.random((12, 12)) < 0.3
        grown = bits | (rng.random((12, 12)) < 0.3)
        for _ in range(10):
            rect = Rect(int(rng.integers(0, 6)), int(rng.integers(0, 6)),
                        int(rng.integers(1, 7)), int(rng.integers(1, 7)))
            assert coverage_fraction(TissueMask(grown), rect) >= \
                coverage_fraction(TissueMask(bits), rect)


class TestCrop:
    def test_full_rect_is_identity(self, rng):
        img = random_image(rng, 7, 5)
        assert crop(img, Rect(0, 0, 7, 5)) == img

    def test_single_pixel(self, rng):
        img = random_image(rng, 7, 5)
        assert np.array_equal(crop(img, Rect(0, 0, 1, 1)).pixels[0, 0], img.pixels[0, 0])

    def test_known_gradient_by_indexing(self):
        img = ramp_image(4, 4)
        part = crop(img, Rect(1, 2, 2, 2))
        for j in range(2):
            for i in range(2):
                assert np.array_equal(part.pixels[j, i], img.pixels[2 + j, 1 + i])

    def test_out_of_bounds(self, rng):
        with pytest.raises(BoundsError):
            crop(random_image(rng, 4, 4), Rect(3, 0, 2, 2))


class TestResizeBicubic:
    def test_identity_is_byte_exact(self, rng):
        img = random_image(rng, 13, 9)
        assert resize_bicubic(img, 13, 9) == img

    def test_constant_image_stays_constant(self):
        img = RasterImage.full(32, 24, (3, 128, 254))
        for tw, th in [(32, 24), (16, 12), (11, 7), (1, 1), (40, 30)]:
            out = resize_bicubic(img, tw, th)
            assert np.all(out.pixels.reshape(-1, 3) == [3, 128, 254])

    def test_zero_target_rejected(self, rng):
        with pytest.raises(ValueError):
            resize_bicubic(random_image(rng, 8, 8), 0, 4)

    def test_deterministic(self, rng):
        img = random_image(rng, 40, 40)
        a = resize_bicubic(img, 17, 23)
        b = resize_bicubic(img, 17, 23)
        assert a == b

    def test_ramp_matches_scalar_oracle(self):
        img = ramp_image(8, 8)
        out = resize_bicubic(img, 4, 4)
        ref = bicubic_reference_scalar(img.pixels, 4, 4)
        assert np.max(np.abs(out.pixels.astype(int) - ref.astype(int))) <= 1

    def test_random_images_match_reference(self, rng):
        for _ in range(25):
            w, h = int(rng.integers(8, 65)), int(rng.integers(8, 65))
            img = random_image(rng, w, h)
            factor = int(rng.choice([2, 3, 4]))
            tw, th = max(1, w // factor), max(1, h // factor)
            out = resize_bicubic(img, tw, th)
            ref = bicubic_reference(img.pixels, tw, th)
            assert np.max(np.abs(out.pixels.astype(int) - ref.astype(int))) <= 1

    def test_upscale_degenerate_case(self, rng):
        # smaller-than-patch images are upscaled rather than dropped
        img = random_image(rng, 6, 6)
        out = resize_bicubic(img, 12, 12)
        assert out.width == 12 and out.height == 12


class TestFileFormats:
    def test_png_round_trip(self, rng, tmp_path):
        img = random_image(rng, 9, 6)
        write_png(img, tmp_path / "t.png")
        assert read_png(tmp_path / "t.png") == img

    def test_ppm_round_trip(self, rng, tmp_path):
        img = random_image(rng, 5, 7)
        write_ppm(img, tmp_path / "t.ppm")
        assert read_ppm(tmp_path / "t.ppm") == img

    def test_ppm_header_comments(self, rng, tmp_path):
        img = random_image(rng, 3, 2)
        raw = b"P6\n# comment line\n3 2\n255\n" + img.pixels.tobytes()
        (tmp_path / "c.ppm").write_bytes(raw)
        assert read_ppm(tmp_path / "c.ppm") == img

    def test_pgm_round_trip(self, rng, tmp_path):
        mask = TissueMask(rng.random((6, 9)) < 0.5)
        write_pgm(mask, tmp_path / "m.pgm")
        assert np.array_equal(read_pgm(tmp_path / "m.pgm").bits, mask.bits)
