import numpy as np
import pytest

from railwatch.railgeom import CalibrationProfile


@pytest.fixture
def calib() -> CalibrationProfile:
    """Synthetic-scene calibration: 200x120 warped raster, gauge 60 +/- 10."""
    return CalibrationProfile.synthetic_default()


@pytest.fixture
def band_raster():
    """Factory for boolean rasters with vertical bands.

    Bands are (start, width) pixel spans applied to every row.
    """

    def make(bands, size=(200, 120)):
        w, h = size
        raster = np.zeros((h, w), dtype=bool)
        for start, width in bands:
            raster[:, start : start + width] = True
        return raster

    return make


@pytest.fixture
def rgb_frame():
    """Factory for a minimal frame-like object wrapping an RGB array."""

    class _FrameLike:
        def __init__(self, pixels, index=0):
            self.pixels = pixels
            self.index = index
            self.height, self.width = pixels.shape[:2]

    def make(pixels, index=0):
        return _FrameLike(np.asarray(pixels, dtype=np.uint8), index)

    return make
