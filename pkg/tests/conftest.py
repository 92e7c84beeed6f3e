import numpy as np
import pytest

from patchscope.imaging import RasterImage


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng, width, height):
    return RasterImage(rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8))


def ramp_image(width, height):
    """Deterministic gradient with distinct values per pixel and channel."""
    yy, xx = np.mgrid[0:height, 0:width]
    px = np.stack([
        (xx * 255 // max(width - 1, 1)),
        (yy * 255 // max(height - 1, 1)),
        ((xx + yy) * 255 // max(width + height - 2, 1)),
    ], axis=2).astype(np.uint8)
    return RasterImage(px)
