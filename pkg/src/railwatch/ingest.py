"""Frame-stream loading and run configuration.

Frame sources are directories of numbered images or plain-text manifests; a
manifest line is ``<index> <relative-image-path> <timestamp_ms> [<lat> <lon>]``
with '#' comments. Video containers are out of scope: a recording is exploded
to frames by external tooling before ingest.

The run configuration is a strict JSON document: unknown keys anywhere are
fatal so a typo cannot silently disable a threshold.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from . import imgio
from .detecthub import HeuristicParams
from .errors import ConfigError, ImageDecodeError
from .geo import GeoPoint
from .health import (
    CATEGORY_MAINTENANCE,
    CATEGORY_SAFETY_CRITICAL,
    DEFAULT_CLASS_TABLE,
    ClassWeight,
    ClassWeightTable,
)
from .railgeom import BinarizeSpec, CalibrationProfile
from .signalstate import SignalParams
from .trackscan import TrackScanParams

logger = logging.getLogger(__name__)


@dataclass
class Frame:
    """One raster image: the pipeline's unit of work.

    ``pixels`` is (height, width, 3) uint8, red-green-blue.
    """

    index: int
    timestamp_ms: int
    width: int
    height: int
    pixels: np.ndarray
    geo: Optional[GeoPoint] = None
    source_path: Optional[str] = None

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError(f"frame index must be nonnegative, got {self.index}")
        if self.timestamp_ms < 0:
            raise ValueError(f"timestamp must be nonnegative, got {self.timestamp_ms}")
        if self.pixels.shape != (self.height, self.width, 3):
            raise ValueError(
                f"pixel buffer shape {self.pixels.shape} does not match "
                f"{self.height}x{self.width}x3"
            )
        if self.pixels.dtype != np.uint8:
            raise ValueError(f"pixels must be uint8, got {self.pixels.dtype}")


@dataclass(frozen=True)
class _Entry:
    index: int
    path: Path
    timestamp_ms: int
    geo: Optional[GeoPoint]


class FrameStream:
    """Ordered, single-consumer frame iterator with skip accounting.

    A corrupt image is skipped with a logged warning, leaving a gap in the
    index sequence (downstream temporal logic treats gaps as staleness).
    ``yielded + skipped`` always equals the number of source entries consumed
    so far.
    """

    def __init__(self, entries: list[_Entry], source: str):
        self._entries = entries
        self.source = source
        self.skipped = 0
        self.yielded = 0

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[Frame]:
        for entry in self._entries:
            try:
                pixels = imgio.read_image(entry.path)
            except (ImageDecodeError, OSError) as exc:
                logger.warning("skipping frame %d (%s): %s", entry.index, entry.path, exc)
                self.skipped += 1
                continue
            h, w = pixels.shape[:2]
            self.yielded += 1
            yield Frame(
                index=entry.index,
                timestamp_ms=entry.timestamp_ms,
                width=w,
                height=h,
                pixels=pixels,
                geo=entry.geo,
                source_path=str(entry.path),
            )


def _entries_from_directory(directory: Path) -> list[_Entry]:
    files = sorted(
        p for p in directory.iterdir()
        if p.is_file() and p.suffix.lower() in imgio.SUPPORTED_SUFFIXES
    )
    numeric = all(p.stem.isdigit() for p in files)
    entries = []
    for position, path in enumerate(files):
        index = int(path.stem) if numeric else position
        # Directories carry no clock; use the index as a monotone placeholder.
        entries.append(_Entry(index=index, path=path, timestamp_ms=index, geo=None))
    entries.sort(key=lambda e: e.index)
    return entries


def _entries_from_manifest(manifest: Path) -> list[_Entry]:
    base = manifest.parent
    entries = []
    try:
        lines = manifest.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read manifest {manifest}: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) not in (3, 5):
            raise ConfigError(
                f"{manifest}:{lineno}: expected 3 or 5 fields, got {len(parts)}"
            )
        try:
            index = int(parts[0])
            timestamp_ms = int(parts[2])
            geo = None
            if len(parts) == 5:
                geo = GeoPoint(float(parts[3]), float(parts[4]))
        except ValueError as exc:
            raise ConfigError(f"{manifest}:{lineno}: {exc}") from exc
        if index < 0 or timestamp_ms < 0:
            raise ConfigError(f"{manifest}:{lineno}: negative index or timestamp")
        entries.append(_Entry(index=index, path=base / parts[1],
                              timestamp_ms=timestamp_ms, geo=geo))
    return entries


def open_frame_stream(source: str | Path) -> FrameStream:
    """Open a directory of numbered images or a frame manifest.

    Frames are yielded in strictly ascending index order with nondecreasing
    timestamps; violations in a manifest are fatal configuration errors.
    """
    source = Path(source)
    if source.is_dir():
        entries = _entries_from_directory(source)
    elif source.is_file():
        entries = _entries_from_manifest(source)
    else:
        raise ConfigError(f"frame source {source} does not exist")
    for prev, cur in zip(entries, entries[1:]):
        if cur.index <= prev.index:
            raise ConfigError(
                f"{source}: frame indices must strictly increase "
                f"({prev.index} then {cur.index})"
            )
        if cur.timestamp_ms < prev.timestamp_ms:
            raise ConfigError(
                f"{source}: timestamps must be nondecreasing "
                f"({prev.timestamp_ms} then {cur.timestamp_ms})"
            )
    return FrameStream(entries, source=str(source))


# ---------------------------------------------------------------------------
# Run configuration


@dataclass
class RunConfig:
    """Validated, fully-defaulted pipeline configuration."""

    calibration: CalibrationProfile
    thi_weights: ClassWeightTable
    trackscan: TrackScanParams = field(default_factory=TrackScanParams)
    signals: SignalParams = field(default_factory=SignalParams)
    heuristics: HeuristicParams = field(default_factory=HeuristicParams)
    ballast_heuristic_enabled: bool = True
    switch_heuristic_enabled: bool = True
    cat1_flag_threshold: float = 0.5
    min_event_confidence: float = 0.25
    segment_length_m: float = 100.0
    segment_length_frames: int = 1000
    plugins: list[dict] = field(default_factory=list)
    output_dir: Optional[str] = None

    @classmethod
    def default(cls, frame_size: tuple[int, int] = (640, 360)) -> "RunConfig":
        return cls(
            calibration=CalibrationProfile.synthetic_default(frame_size),
            thi_weights=ClassWeightTable.default(),
        )

    def canonical_dict(self) -> dict:
        """JSON-serializable form, used for the run manifest's config hash."""
        calib = self.calibration
        return {
            "calibration": {
                "src_quad": [list(p) for p in calib.src_quad],
                "dst_rect": [list(p) for p in calib.dst_rect],
                "roi": list(calib.roi),
                "warped_size": list(calib.warped_size),
                "nominal_gauge_px": calib.nominal_gauge_px,
                "gauge_tolerance_px": calib.gauge_tolerance_px,
                "binarize": {
                    "method": calib.binarize.method,
                    "threshold": calib.binarize.threshold,
                    "window": calib.binarize.window,
                    "offset": calib.binarize.offset,
                },
            },
            "thi_weights": self.thi_weights.to_dict(),
            "trackscan": vars(self.trackscan).copy(),
            "signals": vars(self.signals).copy(),
            "heuristics": vars(self.heuristics).copy(),
            "ballast_heuristic_enabled": self.ballast_heuristic_enabled,
            "switch_heuristic_enabled": self.switch_heuristic_enabled,
            "cat1_flag_threshold": self.cat1_flag_threshold,
            "min_event_confidence": self.min_event_confidence,
            "segment_length_m": self.segment_length_m,
            "segment_length_frames": self.segment_length_frames,
            "plugins": self.plugins,
        }


_TOP_LEVEL_KEYS = {
    "frame_size", "calibration", "thi_weights", "class_categories",
    "trackscan", "signals", "detectors", "plugins",
    "cat1_flag_threshold", "min_event_confidence",
    "segment_length_m", "segment_length_frames", "output_dir",
}

_CALIBRATION_KEYS = {
    "src_quad", "dst_rect", "roi", "warped_size",
    "nominal_gauge_px", "gauge_tolerance_px", "binarize",
}

_BINARIZE_KEYS = {"method", "threshold", "window", "offset"}

_TRACKSCAN_KEYS = set(TrackScanParams.__dataclass_fields__)
_SIGNAL_KEYS = set(SignalParams.__dataclass_fields__)
_HEURISTIC_KEYS = set(HeuristicParams.__dataclass_fields__) | {
    "ballast_heuristic", "switch_heuristic",
}
_PLUGIN_KEYS = {"kind", "path", "command", "classes", "id"}


def _check_keys(section: str, data: dict, allowed: set[str]) -> None:
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown {section} key(s): {', '.join(unknown)}")


def _build_weights(raw: dict) -> ClassWeightTable:
    categories = {name: cat for name, (_, cat) in DEFAULT_CLASS_TABLE.items()}
    for name, cat in raw.get("class_categories", {}).items():
        if cat not in (CATEGORY_SAFETY_CRITICAL, CATEGORY_MAINTENANCE):
            raise ConfigError(f"class_categories[{name!r}] must be 1 or 2, got {cat}")
        categories[name] = cat
    weights = {name: w for name, (w, _) in DEFAULT_CLASS_TABLE.items()}
    for name, w in raw.get("thi_weights", {}).items():
        if name not in categories:
            raise ConfigError(
                f"thi_weights names unknown class {name!r}; add it to class_categories"
            )
        if not isinstance(w, (int, float)) or not 0.0 < float(w) <= 1.0:
            raise ConfigError(f"thi_weights[{name!r}] must be in (0, 1], got {w}")
        weights[name] = float(w)
    return ClassWeightTable(
        {name: ClassWeight(weights[name], categories[name]) for name in weights}
    )


def _build_calibration(raw: dict, frame_size: tuple[int, int]) -> CalibrationProfile:
    base = CalibrationProfile.synthetic_default(frame_size)
    block = raw.get("calibration")
    if block is None:
        return base
    _check_keys("calibration", block, _CALIBRATION_KEYS)
    bin_block = block.get("binarize")
    if bin_block is None:
        binarize = base.binarize
    else:
        _check_keys("calibration.binarize", bin_block, _BINARIZE_KEYS)
        binarize = BinarizeSpec(
            method=bin_block.get("method", "fixed"),
            threshold=float(bin_block.get("threshold", 128.0)),
            window=int(bin_block.get("window", 31)),
            offset=float(bin_block.get("offset", 0.0)),
        )

    def points(key, fallback):
        value = block.get(key)
        if value is None:
            return fallback
        return tuple((float(x), float(y)) for x, y in value)

    return CalibrationProfile(
        src_quad=points("src_quad", base.src_quad),
        dst_rect=points("dst_rect", base.dst_rect),
        roi=tuple(int(v) for v in block.get("roi", base.roi)),
        warped_size=tuple(int(v) for v in block.get("warped_size", base.warped_size)),
        nominal_gauge_px=float(block.get("nominal_gauge_px", base.nominal_gauge_px)),
        gauge_tolerance_px=float(block.get("gauge_tolerance_px", base.gauge_tolerance_px)),
        binarize=binarize,
    )


def _build_section(raw_block: dict | None, section: str, allowed: set[str], cls):
    if raw_block is None:
        return cls()
    _check_keys(section, raw_block, allowed)
    fields = {k: v for k, v in raw_block.items() if k in cls.__dataclass_fields__}
    try:
        return cls(**fields)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {section} block: {exc}") from exc


def load_config(path: str | Path) -> RunConfig:
    """Load, default-fill, and eagerly validate a run configuration file."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    return build_config(raw)


def build_config(raw: dict) -> RunConfig:
    """Build a RunConfig from an already-parsed JSON object (strict keys)."""
    _check_keys("config", raw, _TOP_LEVEL_KEYS)
    frame_size = tuple(int(v) for v in raw.get("frame_size", (640, 360)))

    detectors_block = raw.get("detectors", {})
    _check_keys("detectors", detectors_block, _HEURISTIC_KEYS)
    heuristic_fields = {
        k: v for k, v in detectors_block.items()
        if k in HeuristicParams.__dataclass_fields__
    }

    plugins = raw.get("plugins", [])
    if not isinstance(plugins, list):
        raise ConfigError("plugins must be a list of bindings")
    for binding in plugins:
        _check_keys("plugin binding", binding, _PLUGIN_KEYS)
        if binding.get("kind") not in ("replay", "exec"):
            raise ConfigError(f"plugin kind must be replay or exec, got {binding.get('kind')!r}")

    cat1_flag_threshold = float(raw.get("cat1_flag_threshold", 0.5))
    if not 0.0 <= cat1_flag_threshold <= 1.0:
        raise ConfigError(f"cat1_flag_threshold must be in [0, 1], got {cat1_flag_threshold}")
    min_event_confidence = float(raw.get("min_event_confidence", 0.25))
    if not 0.0 <= min_event_confidence <= 1.0:
        raise ConfigError(f"min_event_confidence must be in [0, 1], got {min_event_confidence}")
    segment_length_m = float(raw.get("segment_length_m", 100.0))
    segment_length_frames = int(raw.get("segment_length_frames", 1000))
    if segment_length_m <= 0 or segment_length_frames <= 0:
        raise ConfigError("segment lengths must be positive")

    return RunConfig(
        calibration=_build_calibration(raw, frame_size),
        thi_weights=_build_weights(raw),
        trackscan=_build_section(raw.get("trackscan"), "trackscan",
                                 _TRACKSCAN_KEYS, TrackScanParams),
        signals=_build_section(raw.get("signals"), "signals", _SIGNAL_KEYS, SignalParams),
        heuristics=HeuristicParams(**heuristic_fields),
        ballast_heuristic_enabled=bool(detectors_block.get("ballast_heuristic", True)),
        switch_heuristic_enabled=bool(detectors_block.get("switch_heuristic", True)),
        cat1_flag_threshold=cat1_flag_threshold,
        min_event_confidence=min_event_confidence,
        segment_length_m=segment_length_m,
        segment_length_frames=segment_length_frames,
        plugins=list(plugins),
        output_dir=raw.get("output_dir"),
    )
