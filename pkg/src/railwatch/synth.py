"""Synthetic track-scene generation with exact ground truth, plus evaluation.

Scenes are defined analytically in warped (bird's-eye) space: bright rail
bands over speckled ballast, an optional zig-zag kink displacement, a
diverging switch branch, distractor bands, and a lineside signal box drawn in
camera space. The camera view is produced by pushing the warped scene through
the same calibration homography the pipeline inverts, so detector output can
be checked against ground truth that comes from the scene parameters, never
from rendered pixels.

The evaluation half scores prediction reports against ground truth at frame
level (same frame + class) and asset level (overlapping frame range + type).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import imgio
from .errors import ConfigError, EvalError
from .geo import GeoPoint
from .ingest import Frame
from .railgeom import CalibrationProfile

BACKGROUND_GRAY = 90.0
BALLAST_BASE_GRAY = 70.0
BALLAST_BRIGHT_GRAY = 115.0
BALLAST_DARK_GRAY = 10.0
RAIL_GRAY = 230.0

SIGNAL_HOUSING_RGB = (25, 25, 28)
SIGNAL_LAMP_RGB = {"red": (230, 20, 20), "green": (20, 200, 60)}

FRAME_PERIOD_MS = 100


@dataclass(frozen=True)
class KinkSpec:
    start_frame: int
    duration: int
    amplitude_px: float
    start_row: int = 40
    span_rows: int = 40
    shape: str = "s-curve"

    def __post_init__(self) -> None:
        if self.shape != "s-curve":
            raise ConfigError(f"unsupported kink shape {self.shape!r}")
        if self.duration < 0 or self.amplitude_px < 0:
            raise ConfigError("kink duration and amplitude must be nonnegative")

    def active(self, frame_index: int) -> bool:
        return (
            self.amplitude_px > 0
            and self.start_frame <= frame_index < self.start_frame + self.duration
        )


@dataclass(frozen=True)
class SwitchSpec:
    diverge_row: int = 20
    start_offset_px: float = 40.0
    px_per_row: float = 0.5
    side: str = "left"
    band_width_px: float = 4.0

    def __post_init__(self) -> None:
        if self.side not in ("left", "right"):
            raise ConfigError(f"switch side must be left or right, got {self.side!r}")


@dataclass(frozen=True)
class SignalSpec:
    start_frame: int
    end_frame: int
    start_bbox: tuple[int, int, int, int]
    end_bbox: tuple[int, int, int, int]
    color: str = "green"
    lamp_fraction: float = 0.3

    def __post_init__(self) -> None:
        if self.color not in SIGNAL_LAMP_RGB:
            raise ConfigError(f"signal color must be red or green, got {self.color!r}")
        if self.end_frame < self.start_frame:
            raise ConfigError("signal end_frame before start_frame")

    def bbox_at(self, frame_index: int) -> Optional[tuple[int, int, int, int]]:
        if not self.start_frame <= frame_index <= self.end_frame:
            return None
        span = self.end_frame - self.start_frame
        t = 0.0 if span == 0 else (frame_index - self.start_frame) / span
        return tuple(
            int(round(a + t * (b - a)))
            for a, b in zip(self.start_bbox, self.end_bbox)
        )


@dataclass(frozen=True)
class DistractorSpec:
    support_rail_offset_px: Optional[float] = None  # relative to the left rail
    bright_line_x: Optional[float] = None  # absolute warped x


@dataclass
class SceneSpec:
    """Full parametric description of one synthetic scene."""

    frames: int
    seed: int
    width: int = 640
    height: int = 360
    rail_left_x: float = 70.0
    rail_right_x: float = 130.0
    rail_band_width_px: float = 8.0
    ballast_density: float = 0.7
    brightness_offset: int = 0
    noise_sigma: float = 0.0
    kink: Optional[KinkSpec] = None
    switch: Optional[SwitchSpec] = None
    signal: Optional[SignalSpec] = None
    distractors: Optional[DistractorSpec] = None
    gps_start: Optional[tuple[float, float]] = None
    gps_step: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        if self.frames <= 0:
            raise ConfigError("scene needs at least one frame")
        if not 0.0 <= self.ballast_density <= 1.0:
            raise ConfigError("ballast_density must be in [0, 1]")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be nonnegative")

    def calibration(self) -> CalibrationProfile:
        return CalibrationProfile.synthetic_default((self.width, self.height))

    def geo_at(self, frame_index: int) -> Optional[GeoPoint]:
        if self.gps_start is None:
            return None
        lat0, lon0 = self.gps_start
        dlat, dlon = self.gps_step
        return GeoPoint(lat0 + frame_index * dlat, lon0 + frame_index * dlon)


LOOSE_BALLAST_DENSITY_CUTOFF = 0.3


@dataclass(frozen=True)
class FrameTruth:
    frame_index: int
    kink: bool
    kink_amplitude_px: float
    loose_ballast: bool
    switch_present: bool
    signal_bbox: Optional[tuple[int, int, int, int]]
    signal_color: Optional[str]

    def defect_classes(self) -> dict[str, bool]:
        return {"sunkink": self.kink, "loose_ballast": self.loose_ballast}


@dataclass(frozen=True)
class AssetTruth:
    asset_type: str
    first_frame: int
    last_frame: int
    color: Optional[str] = None


@dataclass
class GroundTruth:
    """Analytic per-frame and per-asset truth, derived from scene parameters only."""

    frames: list[FrameTruth] = field(default_factory=list)
    assets: list[AssetTruth] = field(default_factory=list)

    def asset_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for asset in self.assets:
            counts[asset.asset_type] = counts.get(asset.asset_type, 0) + 1
        return counts

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for ft in self.frames:
                fh.write(json.dumps({
                    "kind": "truth_frame",
                    "frame_index": ft.frame_index,
                    "classes": ft.defect_classes(),
                    "kink_amplitude_px": ft.kink_amplitude_px,
                    "switch_present": ft.switch_present,
                    "signal_bbox": list(ft.signal_bbox) if ft.signal_bbox else None,
                    "signal_color": ft.signal_color,
                }, sort_keys=True, separators=(",", ":")) + "\n")
            for at in self.assets:
                fh.write(json.dumps({
                    "kind": "truth_asset",
                    "asset_type": at.asset_type,
                    "first_frame": at.first_frame,
                    "last_frame": at.last_frame,
                    "color": at.color,
                }, sort_keys=True, separators=(",", ":")) + "\n")
            fh.write(json.dumps({
                "kind": "truth_run",
                "frame_count": len(self.frames),
                "asset_counts": self.asset_counts(),
            }, sort_keys=True, separators=(",", ":")) + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "GroundTruth":
        truth = cls()
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(),
                                      start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                kind = rec["kind"]
                if kind == "truth_frame":
                    classes = rec["classes"]
                    truth.frames.append(FrameTruth(
                        frame_index=rec["frame_index"],
                        kink=bool(classes.get("sunkink", False)),
                        kink_amplitude_px=rec.get("kink_amplitude_px", 0.0),
                        loose_ballast=bool(classes.get("loose_ballast", False)),
                        switch_present=rec.get("switch_present", False),
                        signal_bbox=tuple(rec["signal_bbox"]) if rec.get("signal_bbox") else None,
                        signal_color=rec.get("signal_color"),
                    ))
                elif kind == "truth_asset":
                    truth.assets.append(AssetTruth(
                        asset_type=rec["asset_type"],
                        first_frame=rec["first_frame"],
                        last_frame=rec["last_frame"],
                        color=rec.get("color"),
                    ))
                elif kind != "truth_run":
                    raise KeyError(f"unknown kind {kind!r}")
            except (KeyError, ValueError, TypeError) as exc:
                raise EvalError(f"{path}:{lineno}: malformed truth record: {exc}") from exc
        return truth


def ground_truth_for(spec: SceneSpec) -> GroundTruth:
    loose = spec.ballast_density < LOOSE_BALLAST_DENSITY_CUTOFF
    frames = []
    for i in range(spec.frames):
        kink_active = spec.kink.active(i) if spec.kink else False
        bbox = spec.signal.bbox_at(i) if spec.signal else None
        frames.append(FrameTruth(
            frame_index=i,
            kink=kink_active,
            kink_amplitude_px=spec.kink.amplitude_px if kink_active else 0.0,
            loose_ballast=loose,
            switch_present=spec.switch is not None,
            signal_bbox=bbox,
            signal_color=spec.signal.color if bbox else None,
        ))
    assets = []
    if spec.switch is not None:
        assets.append(AssetTruth("switch", 0, spec.frames - 1))
    if spec.signal is not None:
        first = max(0, spec.signal.start_frame)
        last = min(spec.frames - 1, spec.signal.end_frame)
        if last >= first:
            assets.append(AssetTruth("signal", first, last, spec.signal.color))
    return GroundTruth(frames=frames, assets=assets)


# ---------------------------------------------------------------------------
# Rendering


def kink_displacement(height: int, start_row: int, span_rows: int,
                      amplitude_px: float) -> np.ndarray:
    """Per-row lateral rail displacement for a kink of the given peak.

    A smooth zig-zag (one and a half sine periods) supported on
    ``[start_row, start_row + span_rows)``, made orthogonal to every straight
    line over the full row range and rescaled so that both the peak
    displacement and the maximum least-squares line residual equal
    ``amplitude_px`` exactly. That orthogonality is what lets tests compare a
    detector's measured residual amplitude directly against this curve.
    """
    d = np.zeros(height, dtype=float)
    span = min(span_rows, height - start_row)
    if span <= 0 or amplitude_px <= 0:
        return d
    u = np.arange(span, dtype=float)
    d[start_row : start_row + span] = np.sin(3.0 * np.pi * (u + 0.5) / span)
    ys = np.arange(height, dtype=float)
    basis = np.stack([np.ones(height), ys], axis=1)
    coef, *_ = np.linalg.lstsq(basis, d, rcond=None)
    d -= basis @ coef
    peak = np.abs(d).max()
    if peak <= 0:
        return np.zeros(height, dtype=float)
    return d * (amplitude_px / peak)


def _band_coverage(width: int, centers: np.ndarray, band_width: float) -> np.ndarray:
    """Fractional column coverage of a band per row: (rows, width) in [0, 1]."""
    xs = np.arange(width, dtype=float)
    lo = centers[:, None] - band_width / 2.0
    hi = centers[:, None] + band_width / 2.0
    return np.clip(np.minimum(hi, xs + 1.0) - np.maximum(lo, xs), 0.0, 1.0)


def _ballast_texture(spec: SceneSpec, size: tuple[int, int]) -> np.ndarray:
    ww, wh = size
    rng = np.random.default_rng([spec.seed, 17])
    u = rng.random((wh, ww))
    d = spec.ballast_density
    return np.where(
        u < d / 2.0, BALLAST_BRIGHT_GRAY, np.where(u < d, BALLAST_DARK_GRAY, BALLAST_BASE_GRAY)
    )


def render_warped_scene(spec: SceneSpec, frame_index: int,
                        texture: Optional[np.ndarray] = None,
                        calib: Optional[CalibrationProfile] = None) -> np.ndarray:
    """Analytic warped-space grayscale scene for one frame (float array)."""
    calib = calib or spec.calibration()
    ww, wh = calib.warped_size
    scene = (texture if texture is not None else _ballast_texture(spec, (ww, wh))).copy()

    disp = np.zeros(wh)
    if spec.kink and spec.kink.active(frame_index):
        disp = kink_displacement(wh, spec.kink.start_row, spec.kink.span_rows,
                                 spec.kink.amplitude_px)

    def paint(centers: np.ndarray, width: float, value: float) -> None:
        cov = _band_coverage(ww, centers, width)
        np.copyto(scene, scene * (1.0 - cov) + value * cov)

    if spec.distractors:
        if spec.distractors.bright_line_x is not None:
            paint(np.full(wh, spec.distractors.bright_line_x), spec.rail_band_width_px, 240.0)
        if spec.distractors.support_rail_offset_px is not None:
            centers = spec.rail_left_x + spec.distractors.support_rail_offset_px + disp
            paint(centers, spec.rail_band_width_px, 210.0)

    if spec.switch:
        sw = spec.switch
        rows = np.arange(wh, dtype=float)
        offsets = sw.start_offset_px - sw.px_per_row * (rows - sw.diverge_row)
        anchor = spec.rail_left_x if sw.side == "left" else spec.rail_right_x
        direction = -1.0 if sw.side == "left" else 1.0
        centers = anchor + direction * offsets + disp
        active = (rows >= sw.diverge_row) & (offsets > 0)
        cov = _band_coverage(ww, centers, sw.band_width_px) * active[:, None]
        np.copyto(scene, scene * (1.0 - cov) + RAIL_GRAY * cov)

    paint(spec.rail_left_x + disp, spec.rail_band_width_px, RAIL_GRAY)
    paint(spec.rail_right_x + disp, spec.rail_band_width_px, RAIL_GRAY)
    return scene


def _paint_signal(pixels: np.ndarray, bbox: tuple[int, int, int, int], color: str,
                  lamp_fraction: float) -> None:
    x, y, w, h = bbox
    fh, fw = pixels.shape[:2]
    x0, y0 = max(0, x), max(0, y)
    x1, y1 = min(fw, x + w), min(fh, y + h)
    if x1 <= x0 or y1 <= y0:
        return
    pixels[y0:y1, x0:x1] = SIGNAL_HOUSING_RGB
    radius = math.sqrt(lamp_fraction * w * h / math.pi)
    cy, cx = y + (h - 1) / 2.0, x + (w - 1) / 2.0
    ys, xs = np.mgrid[y0:y1, x0:x1]
    lamp = (xs - cx) ** 2 + (ys - cy) ** 2 <= radius * radius
    pixels[y0:y1, x0:x1][lamp] = SIGNAL_LAMP_RGB[color]


def render_frame(spec: SceneSpec, frame_index: int,
                 calib: Optional[CalibrationProfile] = None,
                 texture: Optional[np.ndarray] = None) -> Frame:
    """Render one camera-view frame of the scene, deterministically."""
    calib = calib or spec.calibration()
    scene = render_warped_scene(spec, frame_index, texture=texture, calib=calib)
    ww, wh = calib.warped_size
    w, h = spec.width, spec.height
    hm = calib.homography().m

    # Only the calibrated ROI can map into the warped rectangle; everything
    # else is flat background.
    rx, ry, rw, rh = calib.roi
    ys, xs = np.mgrid[ry : ry + rh, rx : rx + rw].astype(np.float64)
    acc = np.zeros((rh, rw))
    # 2x2 supersampling keeps thresholded band edges accurate to a fraction
    # of a pixel after the pipeline warps this view back.
    for oy in (-0.25, 0.25):
        for ox in (-0.25, 0.25):
            px, py = xs + ox, ys + oy
            denom = hm[2, 0] * px + hm[2, 1] * py + hm[2, 2]
            qx = (hm[0, 0] * px + hm[0, 1] * py + hm[0, 2]) / denom
            qy = (hm[1, 0] * px + hm[1, 1] * py + hm[1, 2]) / denom
            ix = np.floor(qx + 0.5).astype(np.intp)
            iy = np.floor(qy + 0.5).astype(np.intp)
            inside = (ix >= 0) & (ix < ww) & (iy >= 0) & (iy < wh)
            vals = np.where(
                inside, scene[np.clip(iy, 0, wh - 1), np.clip(ix, 0, ww - 1)],
                BACKGROUND_GRAY,
            )
            acc += vals
    gray = np.full((h, w), BACKGROUND_GRAY)
    gray[ry : ry + rh, rx : rx + rw] = acc / 4.0
    pixels = np.repeat(gray[:, :, None], 3, axis=2)

    if spec.signal:
        bbox = spec.signal.bbox_at(frame_index)
        if bbox:
            _paint_signal(pixels, bbox, spec.signal.color, spec.signal.lamp_fraction)

    if spec.brightness_offset:
        pixels = pixels + spec.brightness_offset
    if spec.noise_sigma > 0:
        rng = np.random.default_rng([spec.seed, 1000 + frame_index])
        pixels = pixels + rng.normal(0.0, spec.noise_sigma, pixels.shape)

    pixels = np.clip(np.rint(pixels), 0, 255).astype(np.uint8)
    return Frame(
        index=frame_index,
        timestamp_ms=frame_index * FRAME_PERIOD_MS,
        width=w,
        height=h,
        pixels=pixels,
        geo=spec.geo_at(frame_index),
    )


def render_frames(spec: SceneSpec) -> tuple[CalibrationProfile, list[Frame], GroundTruth]:
    """Render the whole scene in memory."""
    calib = spec.calibration()
    texture = _ballast_texture(spec, calib.warped_size)
    frames = [render_frame(spec, i, calib=calib, texture=texture)
              for i in range(spec.frames)]
    return calib, frames, ground_truth_for(spec)


TRUTH_FILENAME = "truth.jsonl"
MANIFEST_FILENAME = "manifest.txt"


def render_scene(spec: SceneSpec, out_dir: str | Path) -> dict[str, Path]:
    """Render the scene to disk: frame pixmaps, a manifest, and ground truth.

    Byte-identical for a fixed spec and seed.
    """
    out = Path(out_dir)
    frames_dir = out / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    calib = spec.calibration()
    texture = _ballast_texture(spec, calib.warped_size)

    manifest_lines = ["# <index> <relative-image-path> <timestamp_ms> [<lat> <lon>]"]
    for i in range(spec.frames):
        frame = render_frame(spec, i, calib=calib, texture=texture)
        rel = f"frames/{i:06d}.ppm"
        imgio.write_ppm(out / rel, frame.pixels)
        line = f"{i} {rel} {frame.timestamp_ms}"
        if frame.geo is not None:
            line += f" {frame.geo.lat:.9f} {frame.geo.lon:.9f}"
        manifest_lines.append(line)

    manifest_path = out / MANIFEST_FILENAME
    manifest_path.write_text("\n".join(manifest_lines) + "\n", encoding="utf-8")
    truth_path = out / TRUTH_FILENAME
    ground_truth_for(spec).write(truth_path)
    return {"manifest": manifest_path, "truth": truth_path, "frames_dir": frames_dir}


_SCENE_KEYS = {
    "frames", "seed", "width", "height", "rail_left_x", "rail_right_x",
    "rail_band_width_px", "ballast_density", "brightness_offset", "noise_sigma",
    "kink", "switch", "signal", "distractors", "gps",
}


def load_scene_spec(path: str | Path) -> SceneSpec:
    """Parse a scene-spec JSON file (strict keys; seed mandatory)."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read scene spec {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scene spec {path} is not valid JSON: {exc}") from exc
    unknown = sorted(set(raw) - _SCENE_KEYS)
    if unknown:
        raise ConfigError(f"unknown scene spec key(s): {', '.join(unknown)}")
    if "frames" not in raw or "seed" not in raw:
        raise ConfigError("scene spec needs 'frames' and 'seed'")
    try:
        kink = KinkSpec(**raw["kink"]) if raw.get("kink") else None
        switch = SwitchSpec(**raw["switch"]) if raw.get("switch") else None
        signal = None
        if raw.get("signal"):
            sig = dict(raw["signal"])
            sig["start_bbox"] = tuple(sig["start_bbox"])
            sig["end_bbox"] = tuple(sig["end_bbox"])
            signal = SignalSpec(**sig)
        distractors = DistractorSpec(**raw["distractors"]) if raw.get("distractors") else None
        gps = raw.get("gps") or {}
        gps_start = (gps["lat"], gps["lon"]) if gps else None
        gps_step = (gps.get("dlat", 0.0), gps.get("dlon", 0.0)) if gps else (0.0, 0.0)
        return SceneSpec(
            frames=int(raw["frames"]),
            seed=int(raw["seed"]),
            width=int(raw.get("width", 640)),
            height=int(raw.get("height", 360)),
            rail_left_x=float(raw.get("rail_left_x", 70.0)),
            rail_right_x=float(raw.get("rail_right_x", 130.0)),
            rail_band_width_px=float(raw.get("rail_band_width_px", 8.0)),
            ballast_density=float(raw.get("ballast_density", 0.7)),
            brightness_offset=int(raw.get("brightness_offset", 0)),
            noise_sigma=float(raw.get("noise_sigma", 0.0)),
            kink=kink,
            switch=switch,
            signal=signal,
            distractors=distractors,
            gps_start=gps_start,
            gps_step=gps_step,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad scene spec {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Evaluation metrics


def truncate_pct(fraction: float) -> float:
    """Percentage truncated (not rounded) to one decimal place."""
    return math.floor(fraction * 1000.0 + 1e-9) / 10.0


@dataclass
class EvalReport:
    frame_tp: int
    frame_fp: int
    frame_fn: int
    frame_tn: int
    precision: Optional[float]
    recall: Optional[float]
    assets_detected: int
    assets_total: int
    asset_level_accuracy_pct: Optional[float]

    def to_dict(self) -> dict:
        return {
            "frame_level": {
                "tp": self.frame_tp,
                "fp": self.frame_fp,
                "fn": self.frame_fn,
                "tn": self.frame_tn,
                "precision": self.precision,
                "recall": self.recall,
            },
            "asset_level": {
                "detected": self.assets_detected,
                "total": self.assets_total,
                "accuracy_pct": self.asset_level_accuracy_pct,
            },
        }

    def summary(self) -> str:
        prec = "undefined" if self.precision is None else f"{self.precision:.3f}"
        rec = "undefined" if self.recall is None else f"{self.recall:.3f}"
        acc = ("undefined" if self.asset_level_accuracy_pct is None
               else f"{self.asset_level_accuracy_pct:.1f}%")
        return (
            f"frame-level: tp={self.frame_tp} fp={self.frame_fp} fn={self.frame_fn} "
            f"tn={self.frame_tn} precision={prec} recall={rec}; "
            f"asset-level: {self.assets_detected}/{self.assets_total} detected, "
            f"accuracy {acc}"
        )


def _load_predictions(events_path: Path) -> tuple[set[tuple[int, str]], list[dict]]:
    defects: set[tuple[int, str]] = set()
    assets: list[dict] = []
    for lineno, line in enumerate(events_path.read_text(encoding="utf-8").splitlines(),
                                  start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            kind = rec["kind"]
            if kind == "defect":
                defects.add((int(rec["frame_index"]), rec["class_name"]))
            elif kind == "asset":
                assets.append({
                    "asset_type": rec["asset_type"],
                    "first_frame": int(rec["first_frame"]),
                    "last_frame": int(rec["last_frame"]),
                })
            elif kind not in ("flag",):
                raise KeyError(f"unknown kind {kind!r}")
        except (KeyError, ValueError, TypeError) as exc:
            raise EvalError(f"{events_path}:{lineno}: malformed record: {exc}") from exc
    return defects, assets


def evaluate(predictions: str | Path, truth: str | Path | GroundTruth) -> EvalReport:
    """Score a prediction report against ground truth.

    ``predictions`` is an events file or the report directory containing one.
    Frame-level counts use (frame, class) matches over defect classes;
    asset-level detection requires same type and overlapping frame ranges.
    Undefined ratios (0/0) are reported as None, never coerced to 0 or 1.
    """
    pred_path = Path(predictions)
    if pred_path.is_dir():
        pred_path = pred_path / "events.jsonl"
    if not pred_path.is_file():
        raise EvalError(f"prediction file {pred_path} does not exist")
    defects, pred_assets = _load_predictions(pred_path)
    gt = truth if isinstance(truth, GroundTruth) else GroundTruth.read(truth)

    truth_by_frame = {ft.frame_index: ft.defect_classes() for ft in gt.frames}
    classes = set()
    for class_map in truth_by_frame.values():
        classes.update(class_map)
    classes.update(name for _, name in defects)

    frame_indices = set(truth_by_frame) | {i for i, _ in defects}
    tp = fp = fn = tn = 0
    for frame_index in frame_indices:
        class_map = truth_by_frame.get(frame_index, {})
        for name in classes:
            actual = bool(class_map.get(name, False))
            predicted = (frame_index, name) in defects
            if predicted and actual:
                tp += 1
            elif predicted:
                fp += 1
            elif actual:
                fn += 1
            else:
                tn += 1

    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None

    detected = 0
    for at in gt.assets:
        for pa in pred_assets:
            if (pa["asset_type"] == at.asset_type
                    and pa["first_frame"] <= at.last_frame
                    and pa["last_frame"] >= at.first_frame):
                detected += 1
                break
    total = len(gt.assets)
    accuracy = truncate_pct(detected / total) if total else None

    return EvalReport(
        frame_tp=tp, frame_fp=fp, frame_fn=fn, frame_tn=tn,
        precision=precision, recall=recall,
        assets_detected=detected, assets_total=total,
        asset_level_accuracy_pct=accuracy,
    )
