"""Planar homography estimation and bird's-eye rectification of the track ROI.

A fixed four-point calibration maps the camera's view of the track bed onto a
rectified top-down raster in which the two rails appear as vertical parallel
bands. All downstream rail geometry (gauge checks, kink detection) operates in
that warped space, so the exact sampling rules here are part of the contract:
bilinear interpolation, luma grayscale, zero outside the source ROI.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, GeometryError, PointAtInfinityError

Point = tuple[float, float]

# Determinant cutoff below which a normalized 3x3 transform is treated as
# singular, and projective denominators as points at infinity.
_SINGULAR_EPS = 1e-12

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class Homography:
    """A 3x3 projective transform, normalized so ``m[2][2] == 1``."""

    m: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.m, dtype=float)
        if m.shape != (3, 3):
            raise GeometryError(f"homography must be 3x3, got {m.shape}")
        if abs(m[2, 2]) <= _SINGULAR_EPS:
            raise GeometryError("homography cannot be normalized (m[2][2] ~ 0)")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= _SINGULAR_EPS:
            raise GeometryError("homography is singular")
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.m))


def _collinearity_check(points: np.ndarray) -> None:
    """Raise if any 3 of the 4 points are (nearly) collinear."""
    scale = max(1.0, float(np.abs(points - points.mean(axis=0)).max()))
    for skip in range(4):
        tri = np.delete(points, skip, axis=0)
        area2 = abs(
            (tri[1, 0] - tri[0, 0]) * (tri[2, 1] - tri[0, 1])
            - (tri[2, 0] - tri[0, 0]) * (tri[1, 1] - tri[0, 1])
        )
        if area2 <= 1e-9 * scale * scale:
            raise GeometryError("degenerate correspondence set: 3 source points collinear")


def estimate_homography(correspondences: Sequence[tuple[Point, Point]]) -> Homography:
    """Estimate the 3x3 transform mapping 4 source points onto 4 targets.

    Uses the direct linear transform: each correspondence contributes two
    homogeneous linear equations in the nine matrix entries; the stacked 8x9
    system is solved via SVD and the result normalized so ``m[2][2] == 1``.

    Parameters
    ----------
    correspondences : sequence of ((x, y), (u, v))
        Exactly four source/target point pairs. Source points must be in
        general position (no three collinear).

    Returns
    -------
    Homography
        Transform ``H`` with ``project(H, (x, y)) == (u, v)`` for every pair.
    """
    if len(correspondences) != 4:
        raise GeometryError(f"need exactly 4 correspondences, got {len(correspondences)}")
    src = np.array([p for p, _ in correspondences], dtype=float)
    dst = np.array([q for _, q in correspondences], dtype=float)
    _collinearity_check(src)

    rows = []
    for (x, y), (u, v) in zip(src, dst):
        rows.append([-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u])
        rows.append([0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v])
    _, _, vt = np.linalg.svd(np.array(rows, dtype=float))
    flat = vt[-1]
    if abs(flat[8]) <= _SINGULAR_EPS:
        raise GeometryError("degenerate correspondence set: solution not normalizable")
    return Homography(flat.reshape(3, 3))


def project(h: Homography, p: Point) -> Point:
    """Apply ``h`` to a point, dividing out the projective scale."""
    x, y = float(p[0]), float(p[1])
    m = h.m
    w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    if abs(w) <= _SINGULAR_EPS:
        raise PointAtInfinityError(f"point {p} maps to infinity")
    return (
        (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / w,
        (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / w,
    )


@dataclass(frozen=True)
class BinarizeSpec:
    """Brightness thresholding parameters for the warped raster.

    ``fixed`` compares each pixel against ``threshold``; ``adaptive-mean``
    compares against the mean over an odd square ``window`` centered on the
    pixel (clamped at the borders) plus ``offset``.
    """

    method: str = "fixed"
    threshold: float = 128.0
    window: int = 31
    offset: float = 0.0

    def __post_init__(self) -> None:
        if self.method not in ("fixed", "adaptive-mean"):
            raise ConfigError(f"unknown binarization method {self.method!r}")
        if self.method == "adaptive-mean" and self.window % 2 == 0:
            raise ConfigError(f"adaptive-mean window must be odd, got {self.window}")


@dataclass(frozen=True)
class CalibrationProfile:
    """Four-point warp calibration plus gauge acceptance limits.

    ``src_quad`` are clicked image points, ``dst_rect`` the corners of the
    axis-aligned rectangle they map to in warped space (ordered consistently
    with ``src_quad``), ``roi`` the source-image rectangle (x, y, w, h)
    outside which samples read as 0.
    """

    src_quad: tuple[Point, Point, Point, Point]
    dst_rect: tuple[Point, Point, Point, Point]
    roi: tuple[int, int, int, int]
    warped_size: tuple[int, int]
    nominal_gauge_px: float
    gauge_tolerance_px: float
    binarize: BinarizeSpec = field(default_factory=BinarizeSpec)

    def __post_init__(self) -> None:
        src = np.array(self.src_quad, dtype=float)
        dst = np.array(self.dst_rect, dtype=float)
        if src.shape != (4, 2) or dst.shape != (4, 2):
            raise ConfigError("src_quad and dst_rect must each hold 4 (x, y) points")
        try:
            _collinearity_check(src)
        except GeometryError as exc:
            raise ConfigError(str(exc)) from exc
        if len(set(map(tuple, np.round(dst, 9)))) != 4 or (
            len(set(np.round(dst[:, 0], 9))) != 2 or len(set(np.round(dst[:, 1], 9))) != 2
        ):
            raise ConfigError("dst_rect must be an axis-aligned rectangle")
        if _quad_orientation(src) * _quad_orientation(dst) < 0:
            raise ConfigError("dst_rect corner order is inconsistent with src_quad")
        if self.nominal_gauge_px - self.gauge_tolerance_px <= 0:
            raise ConfigError("nominal gauge minus tolerance must stay positive")
        if self.gauge_tolerance_px <= 0 or self.nominal_gauge_px <= 0:
            raise ConfigError("gauge values must be positive")
        ww, wh = self.warped_size
        if ww <= 0 or wh <= 0:
            raise ConfigError(f"warped size must be positive, got {self.warped_size}")

    def homography(self) -> Homography:
        """Source-image to warped-space transform."""
        return estimate_homography(list(zip(self.src_quad, self.dst_rect)))

    @classmethod
    def synthetic_default(cls, frame_size: tuple[int, int] = (640, 360),
                          binarize: BinarizeSpec | None = None) -> "CalibrationProfile":
        """Calibration matching the synthetic scene generator's geometry.

        The quad is a trapezoid covering the track bed (rails converging
        toward the top of the frame) scaled to ``frame_size``; the warped
        raster is a fixed 200x120 so gauge thresholds stay portable across
        camera resolutions.
        """
        w, h = frame_size
        src_quad = (
            (0.40 * w, 0.33 * h),
            (0.60 * w, 0.33 * h),
            (0.72 * w, 0.94 * h),
            (0.28 * w, 0.94 * h),
        )
        ww, wh = 200, 120
        dst_rect = ((0.0, 0.0), (ww - 1.0, 0.0), (ww - 1.0, wh - 1.0), (0.0, wh - 1.0))
        roi = (int(0.26 * w), int(0.31 * h), int(0.48 * w), int(0.65 * h))
        return cls(
            src_quad=src_quad,
            dst_rect=dst_rect,
            roi=roi,
            warped_size=(ww, wh),
            nominal_gauge_px=60.0,
            gauge_tolerance_px=10.0,
            binarize=binarize or BinarizeSpec(),
        )


def _quad_orientation(pts: np.ndarray) -> float:
    """Signed shoelace area of a 4-point polygon."""
    x, y = pts[:, 0], pts[:, 1]
    return float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def luma(pixels: np.ndarray) -> np.ndarray:
    """Unrounded grayscale (float64) of an (h, w, 3) uint8 raster."""
    p = pixels.astype(np.float64)
    r, g, b = LUMA_WEIGHTS
    return r * p[..., 0] + g * p[..., 1] + b * p[..., 2]


def warp_roi(frame, calib: CalibrationProfile) -> np.ndarray:
    """Rectify the calibrated ROI of a frame into the warped grayscale raster.

    ``output(x, y)`` is the rounded luma of the bilinear sample of the frame
    at ``project(H_inv, (x, y))``; sample positions falling outside the
    calibrated ROI produce 0. ``frame`` may be an ingest Frame or a raw
    (h, w, 3) uint8 array.
    """
    pixels = getattr(frame, "pixels", frame)
    fh, fw = pixels.shape[:2]
    rx, ry, rw, rh = calib.roi
    if rx < 0 or ry < 0 or rw <= 0 or rh <= 0 or rx + rw > fw or ry + rh > fh:
        raise ConfigError(
            f"ROI {calib.roi} exceeds frame bounds {fw}x{fh}"
        )

    gray = luma(pixels[ry : ry + rh, rx : rx + rw])

    hinv = calib.homography().inverse().m
    ww, wh = calib.warped_size
    xs = np.arange(ww, dtype=np.float64)
    ys = np.arange(wh, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys)

    denom = hinv[2, 0] * gx + hinv[2, 1] * gy + hinv[2, 2]
    finite = np.abs(denom) > _SINGULAR_EPS
    denom = np.where(finite, denom, 1.0)
    sx = (hinv[0, 0] * gx + hinv[0, 1] * gy + hinv[0, 2]) / denom
    sy = (hinv[1, 0] * gx + hinv[1, 1] * gy + hinv[1, 2]) / denom

    # Snap coordinates that are within numerical noise of an integer so an
    # (estimated) identity transform reproduces pixels bit-exactly, and admit
    # the same noise at the ROI boundary.
    snap = 1e-9
    sx = np.where(np.abs(sx - np.rint(sx)) < snap, np.rint(sx), sx)
    sy = np.where(np.abs(sy - np.rint(sy)) < snap, np.rint(sy), sy)
    inside = (
        finite
        & (sx >= rx - snap) & (sx <= rx + rw - 1 + snap)
        & (sy >= ry - snap) & (sy <= ry + rh - 1 + snap)
    )

    # Shift into ROI-local coordinates for the bilinear gather.
    lx = np.clip(np.where(inside, sx - rx, 0.0), 0.0, rw - 1)
    ly = np.clip(np.where(inside, sy - ry, 0.0), 0.0, rh - 1)
    x0 = np.floor(lx).astype(np.intp)
    y0 = np.floor(ly).astype(np.intp)
    fx = lx - x0
    fy = ly - y0
    x1 = np.minimum(x0 + 1, rw - 1)
    y1 = np.minimum(y0 + 1, rh - 1)

    val = (
        gray[y0, x0] * (1.0 - fx) * (1.0 - fy)
        + gray[y0, x1] * fx * (1.0 - fy)
        + gray[y1, x0] * (1.0 - fx) * fy
        + gray[y1, x1] * fx * fy
    )
    out = np.where(inside, np.rint(val), 0.0)
    return np.clip(out, 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class GaugeReading:
    gauge_px: float
    valid: bool


def measure_gauge(left_x: float, right_x: float, nominal_px: float,
                  tolerance_px: float) -> GaugeReading:
    """Rail-pair separation and its acceptance against nominal +/- tolerance.

    A non-increasing pair (``left_x >= right_x``) is reported invalid rather
    than raising: callers mark the scan row unusable and move on.
    """
    if left_x >= right_x:
        return GaugeReading(gauge_px=right_x - left_x, valid=False)
    gauge = right_x - left_x
    return GaugeReading(gauge_px=gauge, valid=abs(gauge - nominal_px) <= tolerance_px)
