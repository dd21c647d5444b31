"""Signal color determination and multi-frame asset association.

Signal bounding boxes come from a detector plugin; here the crop inside each
box is classified red/green/unknown by hue-saturation-value masks, colorless
detections are dropped (a signal with no readable aspect is ignored rather
than guessed), and per-frame detections of signals and switches are chained
into one deduplicated record per physical asset: a sighting joins the open
track it overlaps best, and one record is emitted per track because seeing the
asset in any one frame is sufficient.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

from .geo import GeoPoint


class SignalState(str, Enum):
    RED = "red"
    GREEN = "green"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class SignalParams:
    """Hue/saturation/value mask bounds and association thresholds.

    Hue is in degrees [0, 360); saturation and value in [0, 1]. The red and
    green hue ranges are disjoint by construction.
    """

    min_color_fraction: float = 0.05
    red_hue_below: float = 20.0
    red_hue_above: float = 340.0
    red_min_saturation: float = 0.5
    red_min_value: float = 0.3
    green_hue_low: float = 90.0
    green_hue_high: float = 160.0
    green_min_saturation: float = 0.4
    green_min_value: float = 0.3
    iou_min: float = 0.3
    max_gap_frames: int = 3


@dataclass(frozen=True)
class SignalObservation:
    frame_index: int
    bbox: tuple[int, int, int, int]
    state: SignalState
    red_fraction: float
    green_fraction: float


def rgb_to_hsv(pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized RGB -> (hue deg [0,360), saturation [0,1], value [0,1])."""
    p = pixels.astype(np.float64) / 255.0
    r, g, b = p[..., 0], p[..., 1], p[..., 2]
    mx = np.max(p, axis=-1)
    mn = np.min(p, axis=-1)
    delta = mx - mn
    safe_delta = np.where(delta == 0, 1.0, delta)
    h = np.where(
        mx == r,
        ((g - b) / safe_delta) % 6.0,
        np.where(mx == g, (b - r) / safe_delta + 2.0, (r - g) / safe_delta + 4.0),
    )
    h = np.where(delta == 0, 0.0, h * 60.0) % 360.0
    s = np.where(mx == 0, 0.0, delta / np.where(mx == 0, 1.0, mx))
    return h, s, mx


def color_masks(pixels: np.ndarray, params: SignalParams) -> tuple[np.ndarray, np.ndarray]:
    """Boolean (red, green) masks over an RGB pixel array."""
    h, s, v = rgb_to_hsv(pixels)
    red = (
        ((h < params.red_hue_below) | (h > params.red_hue_above))
        & (s > params.red_min_saturation)
        & (v > params.red_min_value)
    )
    green = (
        (h >= params.green_hue_low)
        & (h <= params.green_hue_high)
        & (s > params.green_min_saturation)
        & (v > params.green_min_value)
    )
    return red, green


def classify_signal_color(frame, bbox: tuple[int, int, int, int],
                          params: SignalParams | None = None) -> SignalObservation:
    """Classify the crop inside a detection box as red, green, or unknown.

    A state is assigned only when the winning color covers at least
    ``min_color_fraction`` of the box and strictly beats the other color;
    everything else is Unknown (and later ignored).
    """
    params = params or SignalParams()
    pixels = getattr(frame, "pixels", frame)
    frame_index = getattr(frame, "index", -1)
    x, y, w, h = (int(v) for v in bbox)
    if w <= 0 or h <= 0:
        return SignalObservation(frame_index, (x, y, w, h), SignalState.UNKNOWN, 0.0, 0.0)
    fh, fw = pixels.shape[:2]
    if x < 0 or y < 0 or x + w > fw or y + h > fh:
        raise ValueError(f"bbox {bbox} outside frame bounds {fw}x{fh}")
    crop = pixels[y : y + h, x : x + w]
    red, green = color_masks(crop, params)
    total = w * h
    red_fraction = float(np.count_nonzero(red)) / total
    green_fraction = float(np.count_nonzero(green)) / total
    state = SignalState.UNKNOWN
    if red_fraction >= params.min_color_fraction and red_fraction > green_fraction:
        state = SignalState.RED
    elif green_fraction >= params.min_color_fraction and green_fraction > red_fraction:
        state = SignalState.GREEN
    return SignalObservation(frame_index, (x, y, w, h), state, red_fraction, green_fraction)


def filter_colorless(observations: Iterable[SignalObservation]) -> list[SignalObservation]:
    """Drop Unknown-state observations, preserving order."""
    return [obs for obs in observations if obs.state is not SignalState.UNKNOWN]


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    """Intersection over union of two (x, y, w, h) boxes."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(ax, bx)
    iy = max(ay, by)
    ix2 = min(ax + aw, bx + bw)
    iy2 = min(ay + ah, by + bh)
    inter = max(0.0, ix2 - ix) * max(0.0, iy2 - iy)
    union = aw * ah + bw * bh - inter
    if union <= 0:
        return 0.0
    return inter / union


@dataclass(frozen=True)
class Sighting:
    """One per-frame observation of a physical asset, ready for association."""

    frame_index: int
    asset_type: str  # "signal" | "switch"
    bbox: tuple[int, int, int, int]
    confidence: float
    state: Optional[SignalState] = None
    geo: Optional[GeoPoint] = None


@dataclass
class AssetRecord:
    """One deduplicated physical asset, aggregated over its member frames."""

    asset_id: int
    asset_type: str
    first_frame: int
    last_frame: int
    geo: Optional[GeoPoint]
    peak_confidence: float
    state: Optional[SignalState]


class _Track:
    __slots__ = ("track_id", "asset_type", "last_bbox", "last_frame", "members")

    def __init__(self, track_id: int, sighting: Sighting):
        self.track_id = track_id
        self.asset_type = sighting.asset_type
        self.last_bbox = sighting.bbox
        self.last_frame = sighting.frame_index
        self.members: list[Sighting] = [sighting]

    def absorb(self, sighting: Sighting) -> None:
        self.members.append(sighting)
        self.last_bbox = sighting.bbox
        self.last_frame = sighting.frame_index


class AssetAssociator:
    """Greedy overlap-chaining of sightings into per-asset tracks.

    Streaming and deterministic: feeding the same sightings in the same order,
    in any chunking, yields identical records. A sighting joins the
    most-overlapping same-type track whose last member is at most
    ``max_gap_frames`` behind; otherwise it opens a new track.
    """

    def __init__(self, params: SignalParams | None = None):
        self.params = params or SignalParams()
        self._tracks: list[_Track] = []
        self._next_id = 0
        self._last_frame: Optional[int] = None

    def add(self, sighting: Sighting) -> None:
        if self._last_frame is not None and sighting.frame_index < self._last_frame:
            raise ValueError(
                f"sightings must arrive in frame order "
                f"(got {sighting.frame_index} after {self._last_frame})"
            )
        self._last_frame = sighting.frame_index
        best: Optional[_Track] = None
        best_iou = 0.0
        for track in self._tracks:
            if track.asset_type != sighting.asset_type:
                continue
            gap = sighting.frame_index - track.last_frame
            if gap > self.params.max_gap_frames:
                continue
            overlap = iou(sighting.bbox, track.last_bbox)
            if overlap >= self.params.iou_min and overlap > best_iou:
                best_iou = overlap
                best = track
        if best is not None:
            best.absorb(sighting)
        else:
            self._tracks.append(_Track(self._next_id, sighting))
            self._next_id += 1

    def extend(self, sightings: Iterable[Sighting]) -> None:
        for s in sightings:
            self.add(s)

    def finish(self) -> list[AssetRecord]:
        """Close all tracks and emit one record per qualifying asset."""
        records = []
        for track in self._tracks:
            record = self._emit(track)
            if record is not None:
                records.append(record)
        return records

    def _emit(self, track: _Track) -> Optional[AssetRecord]:
        members = track.members
        if track.asset_type == "signal":
            stated = [m for m in members if m.state not in (None, SignalState.UNKNOWN)]
            if not stated:
                return None
            reds = sum(1 for m in stated if m.state is SignalState.RED)
            greens = len(stated) - reds
            # Ties resolve to red: the fail-safe reading for an assistance system.
            state: Optional[SignalState] = (
                SignalState.RED if reds >= greens else SignalState.GREEN
            )
        else:
            state = None
        geo = next((m.geo for m in members if m.geo is not None), None)
        return AssetRecord(
            asset_id=track.track_id,
            asset_type=track.asset_type,
            first_frame=members[0].frame_index,
            last_frame=members[-1].frame_index,
            geo=geo,
            peak_confidence=max(m.confidence for m in members),
            state=state,
        )


def associate_assets(sightings: Iterable[Sighting],
                     params: SignalParams | None = None) -> list[AssetRecord]:
    """One-shot association of a frame-ordered sighting sequence."""
    associator = AssetAssociator(params)
    associator.extend(sightings)
    return associator.finish()
