"""Classical geometry-based kink (sunkink) detection on warped track rasters.

Per frame: binarize the bird's-eye raster, find the rail pair on every scan
row as a pair of thick bright runs, validate each pair by gauge width,
stabilize candidate selection with the previous frame's rail positions, and
flag a kink when per-side residuals against a straight-line fit are both large
and alternating in sign (zig-zag), as opposed to the smooth one-sided drift a
benign curve produces.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .railgeom import BinarizeSpec, CalibrationProfile, measure_gauge, warp_roi


@dataclass(frozen=True)
class TrackScanParams:
    """Thresholds for rail extraction, temporal prediction, and kink flagging.

    Defaults are tuned on the synthetic corpus and config-overridable.
    """

    kink_threshold_px: float = 6.0
    noise_floor_px: float = 1.0
    min_alternations: int = 2
    min_support_rows: int = 20
    search_halfwidth_px: float = 15.0
    alpha: float = 0.5
    max_prediction_age: int = 5
    min_valid_fraction: float = 0.5
    min_rail_width_px: int = 4
    max_rail_width_px: int = 20


@dataclass(frozen=True)
class RailRow:
    y: int
    left_x: Optional[float]
    right_x: Optional[float]
    gauge_px: Optional[float]
    valid: bool


@dataclass
class RailObservation:
    """Per-scan-row rail coordinates in warped space, ordered by row."""

    frame_index: int
    rows: list[RailRow]

    def valid_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(ys, left_xs, right_xs) over valid rows only."""
        valid = [r for r in self.rows if r.valid]
        ys = np.array([r.y for r in valid], dtype=float)
        lx = np.array([r.left_x for r in valid], dtype=float)
        rx = np.array([r.right_x for r in valid], dtype=float)
        return ys, lx, rx

    @property
    def valid_count(self) -> int:
        return sum(1 for r in self.rows if r.valid)


@dataclass
class TrackState:
    """Per-row rail-position predictions carried between frames.

    Predictions are NaN where absent. ``age_frames`` counts frames since the
    last well-supported observation; past ``max_prediction_age`` the state is
    stale and cleared.
    """

    last_left: Optional[np.ndarray] = None
    last_right: Optional[np.ndarray] = None
    age_frames: int = 0
    search_halfwidth_px: float = 15.0
    last_frame_index: Optional[int] = None

    @classmethod
    def empty(cls, params: TrackScanParams | None = None) -> "TrackState":
        hw = (params or TrackScanParams()).search_halfwidth_px
        return cls(search_halfwidth_px=hw)

    @property
    def has_predictions(self) -> bool:
        return self.last_left is not None and bool(np.any(np.isfinite(self.last_left)))

    def cleared(self) -> "TrackState":
        return TrackState(
            last_left=None,
            last_right=None,
            age_frames=0,
            search_halfwidth_px=self.search_halfwidth_px,
            last_frame_index=self.last_frame_index,
        )


@dataclass(frozen=True)
class KinkVerdict:
    frame_index: int
    flagged: bool
    amplitude_px: float
    side: str  # "left" | "right" | "both" | "none"
    affected_rows: Optional[tuple[int, int]]
    confidence: float
    insufficient_data: bool = False


@dataclass(frozen=True)
class ScanResult:
    verdict: KinkVerdict
    observation: RailObservation
    state: TrackState
    warped: np.ndarray
    binary: np.ndarray


def binarize(warped: np.ndarray, spec: BinarizeSpec) -> np.ndarray:
    """Threshold the warped grayscale raster to a boolean rail mask."""
    img = np.asarray(warped)
    if spec.method == "fixed":
        return img >= spec.threshold
    # adaptive-mean: pixel >= mean over a clamped square window + offset
    k = spec.window // 2
    h, w = img.shape
    integral = np.zeros((h + 1, w + 1), dtype=np.float64)
    integral[1:, 1:] = np.cumsum(np.cumsum(img, axis=0), axis=1)
    ys = np.arange(h)
    xs = np.arange(w)
    y0 = np.clip(ys - k, 0, h)
    y1 = np.clip(ys + k + 1, 0, h)
    x0 = np.clip(xs - k, 0, w)
    x1 = np.clip(xs + k + 1, 0, w)
    sums = (
        integral[np.ix_(y1, x1)]
        - integral[np.ix_(y0, x1)]
        - integral[np.ix_(y1, x0)]
        + integral[np.ix_(y0, x0)]
    )
    counts = (y1 - y0)[:, None] * (x1 - x0)[None, :]
    means = sums / counts
    return img >= means + spec.offset


def row_runs(row: np.ndarray, min_width: int, max_width: int) -> list[tuple[int, int]]:
    """Maximal True runs of acceptable width in one boolean scan row.

    Returns half-open (start, end) pixel spans.
    """
    padded = np.concatenate(([0], row.astype(np.int8), [0]))
    diff = np.diff(padded)
    starts = np.nonzero(diff == 1)[0]
    ends = np.nonzero(diff == -1)[0]
    return [(int(s), int(e)) for s, e in zip(starts, ends) if min_width <= e - s <= max_width]


def run_centroid(span: tuple[int, int]) -> float:
    s, e = span
    return (s + e - 1) / 2.0


def _select_pair(
    centroids: list[float],
    pred_left: float,
    pred_right: float,
    halfwidth: float,
    nominal: float,
) -> Optional[tuple[float, float]]:
    """Pick the (left, right) centroid pair for one row.

    With finite predictions, prefer the distinct pair closest to them with
    both members inside the search halfwidth; if no pair qualifies (or there
    is no prediction), fall back to the pair whose gauge is nearest nominal.
    The prior constrains candidate selection only; it never fabricates
    coordinates.
    """
    n = len(centroids)
    if n < 2:
        return None
    have_prior = np.isfinite(pred_left) and np.isfinite(pred_right)
    if have_prior:
        best = None
        best_cost = np.inf
        for i in range(n):
            dl = abs(centroids[i] - pred_left)
            if dl > halfwidth:
                continue
            for j in range(n):
                if i == j or centroids[j] <= centroids[i]:
                    continue
                dr = abs(centroids[j] - pred_right)
                if dr > halfwidth:
                    continue
                cost = dl + dr
                if cost < best_cost:
                    best_cost = cost
                    best = (centroids[i], centroids[j])
        if best is not None:
            return best
    best = None
    best_err = np.inf
    for i in range(n):
        for j in range(i + 1, n):
            err = abs((centroids[j] - centroids[i]) - nominal)
            if err < best_err:
                best_err = err
                best = (centroids[i], centroids[j])
    return best


def extract_rails(
    binary: np.ndarray,
    prior: Optional[TrackState],
    calib: CalibrationProfile,
    params: TrackScanParams | None = None,
    frame_index: int = -1,
) -> RailObservation:
    """Locate the rail pair on every scan row of a binary warped raster.

    Candidate rails are bright runs of acceptable width; the pair is chosen
    nearest the prior prediction when one is available, else nearest nominal
    gauge. Rows fail softly: a row with no acceptable, gauge-valid pair is
    simply marked invalid.
    """
    params = params or TrackScanParams()
    h, w = binary.shape
    ww, wh = calib.warped_size
    if (w, h) != (ww, wh):
        raise ValueError(f"raster size {(w, h)} does not match warped size {(ww, wh)}")

    use_prior = prior is not None and prior.has_predictions
    rows: list[RailRow] = []
    for y in range(h):
        spans = row_runs(binary[y], params.min_rail_width_px, params.max_rail_width_px)
        cents = [run_centroid(s) for s in spans]
        pl = prior.last_left[y] if use_prior else np.nan
        pr = prior.last_right[y] if use_prior else np.nan
        pair = _select_pair(cents, pl, pr, prior.search_halfwidth_px if use_prior else 0.0,
                            calib.nominal_gauge_px)
        if pair is None:
            rows.append(RailRow(y=y, left_x=None, right_x=None, gauge_px=None, valid=False))
            continue
        left, right = pair
        reading = measure_gauge(left, right, calib.nominal_gauge_px, calib.gauge_tolerance_px)
        rows.append(
            RailRow(y=y, left_x=left, right_x=right, gauge_px=reading.gauge_px,
                    valid=reading.valid)
        )
    return RailObservation(frame_index=frame_index, rows=rows)


def update_state(prev: TrackState, obs: RailObservation,
                 params: TrackScanParams | None = None) -> TrackState:
    """Blend a new observation into the per-row rail predictions.

    Valid rows move the prediction by ``alpha`` toward the observation (or
    seed it outright); invalid rows keep the previous prediction. The age
    resets when at least ``min_valid_fraction`` of rows are valid, otherwise
    increments; a stale state loses all predictions.
    """
    params = params or TrackScanParams()
    n = len(obs.rows)
    left = np.full(n, np.nan) if prev.last_left is None else prev.last_left.copy()
    right = np.full(n, np.nan) if prev.last_right is None else prev.last_right.copy()
    if left.shape[0] != n or right.shape[0] != n:
        left = np.full(n, np.nan)
        right = np.full(n, np.nan)

    a = params.alpha
    valid = 0
    for row in obs.rows:
        if not row.valid:
            continue
        valid += 1
        y = row.y
        left[y] = row.left_x if np.isnan(left[y]) else (1 - a) * left[y] + a * row.left_x
        right[y] = row.right_x if np.isnan(right[y]) else (1 - a) * right[y] + a * row.right_x

    fraction = valid / n if n else 0.0
    age = 0 if fraction >= params.min_valid_fraction else prev.age_frames + 1
    state = TrackState(
        last_left=left,
        last_right=right,
        age_frames=age,
        search_halfwidth_px=params.search_halfwidth_px,
        last_frame_index=prev.last_frame_index,
    )
    if age > params.max_prediction_age:
        return state.cleared()
    return state


@dataclass(frozen=True)
class _SideFit:
    amplitude: float
    alternations: int
    flagged: bool
    region: Optional[tuple[int, int]]


def _fit_side(ys: np.ndarray, xs: np.ndarray, params: TrackScanParams) -> _SideFit:
    n = len(ys)
    if n < 2:
        return _SideFit(0.0, 0, False, None)
    slope, intercept = np.polyfit(ys, xs, 1)
    residuals = xs - (slope * ys + intercept)
    amplitude = float(np.abs(residuals).max())
    above = np.abs(residuals) > params.noise_floor_px
    signs = np.sign(residuals[above])
    alternations = int(np.sum(signs[1:] != signs[:-1])) if signs.size > 1 else 0
    region = None
    if np.any(above):
        region_ys = ys[above]
        region = (int(region_ys.min()), int(region_ys.max()))
    flagged = (
        n >= params.min_support_rows
        and amplitude >= params.kink_threshold_px
        and alternations >= params.min_alternations
    )
    return _SideFit(amplitude, alternations, flagged, region)


def detect_kink(obs: RailObservation, params: TrackScanParams | None = None) -> KinkVerdict:
    """Flag zig-zag lateral deviation of either rail.

    Each side is fit with a least-squares line over the valid rows; a kink
    requires large residual amplitude AND repeated sign alternation of the
    above-noise residuals AND enough supporting rows. Both rails are checked
    independently and the worse one is reported.
    """
    params = params or TrackScanParams()
    ys, lx, rx = obs.valid_arrays()
    if len(ys) < params.min_support_rows:
        amplitude = 0.0
        if len(ys) >= 2:
            amplitude = max(_fit_side(ys, lx, params).amplitude,
                            _fit_side(ys, rx, params).amplitude)
        return KinkVerdict(
            frame_index=obs.frame_index,
            flagged=False,
            amplitude_px=amplitude,
            side="none",
            affected_rows=None,
            confidence=0.0,
            insufficient_data=True,
        )
    fits = {"left": _fit_side(ys, lx, params), "right": _fit_side(ys, rx, params)}
    flagged_sides = [s for s, f in fits.items() if f.flagged]
    if flagged_sides:
        amplitude = max(fits[s].amplitude for s in flagged_sides)
        regions = [fits[s].region for s in flagged_sides if fits[s].region is not None]
        affected = (min(r[0] for r in regions), max(r[1] for r in regions)) if regions else None
        side = "both" if len(flagged_sides) == 2 else flagged_sides[0]
        flagged = True
    else:
        amplitude = max(f.amplitude for f in fits.values())
        affected = None
        side = "none"
        flagged = False
    confidence = float(np.clip(amplitude / (2.0 * params.kink_threshold_px), 0.0, 1.0))
    return KinkVerdict(
        frame_index=obs.frame_index,
        flagged=flagged,
        amplitude_px=amplitude,
        side=side,
        affected_rows=affected,
        confidence=confidence,
    )


def advance_for_gap(state: TrackState, frame_index: int,
                    params: TrackScanParams | None = None) -> TrackState:
    """Age the state across skipped frame indices before it is used as prior."""
    params = params or TrackScanParams()
    if state.last_frame_index is None:
        return state
    gap = frame_index - state.last_frame_index - 1
    if gap <= 0:
        return state
    aged = replace(state, age_frames=state.age_frames + gap)
    if aged.age_frames > params.max_prediction_age:
        return aged.cleared()
    return aged


def scan_frame(frame, calib: CalibrationProfile, state: TrackState,
               params: TrackScanParams | None = None) -> ScanResult:
    """Run the full per-frame chain: warp, binarize, extract, detect, update."""
    params = params or TrackScanParams()
    state = advance_for_gap(state, frame.index, params)
    warped = warp_roi(frame, calib)
    mask = binarize(warped, calib.binarize)
    prior = state if state.has_predictions else None
    obs = extract_rails(mask, prior, calib, params, frame_index=frame.index)
    verdict = detect_kink(obs, params)
    new_state = update_state(state, obs, params)
    new_state.last_frame_index = frame.index
    return ScanResult(verdict=verdict, observation=obs, state=new_state,
                      warped=warped, binary=mask)
