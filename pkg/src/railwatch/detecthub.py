"""Pluggable per-frame detector boundary, reference heuristics, augmentation.

Trained models stay out of process: a plugin either replays a recorded
detections file or talks to an external process over a line protocol, so the
pipeline itself carries no ML runtime. Two deterministic reference heuristics
(loose ballast by inter-rail texture coverage, switch by a converging extra
rail run) let the full pipeline run and be tested with zero model assets.
"""

from __future__ import annotations

import logging
import math
import shlex
import subprocess
import tempfile
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import imgio
from .errors import ConfigError
from .railgeom import CalibrationProfile, warp_roi
from .trackscan import (
    RailObservation,
    TrackScanParams,
    binarize,
    extract_rails,
    row_runs,
    run_centroid,
)

logger = logging.getLogger(__name__)

BALLAST_CLASS = "loose_ballast"
SWITCH_CLASS = "switch"
SIGNAL_CLASS = "signal"


@dataclass(frozen=True)
class Detection:
    """One per-frame detector output at the plugin boundary."""

    class_name: str
    confidence: float
    bbox: Optional[tuple[int, int, int, int]] = None
    source: str = ""


class DetectorPlugin(ABC):
    """Behavioral contract for per-frame detectors.

    Plugins are pure with respect to the frame: no hidden temporal state
    (association and any cross-frame logic live downstream), and every emitted
    class name must be declared up front.
    """

    identifier: str
    class_names: frozenset[str]

    @abstractmethod
    def evaluate(self, frame) -> list[Detection]:
        """Detections for one frame."""

    def close(self) -> None:
        """Release any external resources; default is a no-op."""

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def parse_detection_line(line: str, source: str = "") -> tuple[int, Detection]:
    """Parse ``<frame_index> <class> <confidence> [<x> <y> <w> <h>]``."""
    parts = line.split()
    if len(parts) not in (3, 7):
        raise ValueError(f"expected 3 or 7 fields, got {len(parts)}: {line!r}")
    frame_index = int(parts[0])
    confidence = float(parts[2])
    bbox = None
    if len(parts) == 7:
        x, y, w, h = (int(round(float(v))) for v in parts[3:7])
        bbox = (x, y, w, h)
    return frame_index, Detection(
        class_name=parts[1], confidence=confidence, bbox=bbox, source=source
    )


class FileReplayPlugin(DetectorPlugin):
    """Replays a recorded detections file keyed by frame index.

    The canonical test plugin: line format
    ``<frame_index> <class_name> <confidence> [<x> <y> <w> <h>]``,
    '#' comment lines ignored.
    """

    def __init__(self, path: str | Path, identifier: str | None = None,
                 class_names: Iterable[str] | None = None):
        path = Path(path)
        self.identifier = identifier or f"replay:{path.name}"
        self._by_frame: dict[int, list[Detection]] = {}
        seen: set[str] = set()
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read detections file {path}: {exc}") from exc
        for lineno, line in enumerate(text.splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            try:
                frame_index, det = parse_detection_line(stripped, source=self.identifier)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from exc
            self._by_frame.setdefault(frame_index, []).append(det)
            seen.add(det.class_name)
        self.class_names = frozenset(class_names) if class_names else frozenset(seen)

    def evaluate(self, frame) -> list[Detection]:
        return list(self._by_frame.get(frame.index, []))


class ExternalProcessPlugin(DetectorPlugin):
    """Drives a detector child process over standard streams.

    Protocol: the pipeline writes one ``<frame_index> <image-path>`` line per
    frame; the child answers with zero or more detection lines in the replay
    format, terminated by one blank line. Frames without a backing file are
    written to a temporary pixmap for the child.
    """

    def __init__(self, command: Sequence[str] | str, class_names: Iterable[str],
                 identifier: str | None = None):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.command:
            raise ConfigError("external plugin command is empty")
        self.class_names = frozenset(class_names)
        self.identifier = identifier or f"exec:{Path(self.command[0]).name}"
        self._proc: Optional[subprocess.Popen] = None
        self._tmpdir: Optional[tempfile.TemporaryDirectory] = None

    def _ensure_started(self) -> None:
        if self._proc is None:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )

    def _frame_path(self, frame) -> str:
        source = getattr(frame, "source_path", None)
        if source:
            return str(source)
        if self._tmpdir is None:
            self._tmpdir = tempfile.TemporaryDirectory(prefix="railwatch-plugin-")
        path = Path(self._tmpdir.name) / f"frame_{frame.index:06d}.ppm"
        imgio.write_ppm(path, frame.pixels)
        return str(path)

    def evaluate(self, frame) -> list[Detection]:
        self._ensure_started()
        assert self._proc is not None and self._proc.stdin and self._proc.stdout
        self._proc.stdin.write(f"{frame.index} {self._frame_path(frame)}\n")
        self._proc.stdin.flush()
        detections = []
        while True:
            line = self._proc.stdout.readline()
            if line == "":
                raise RuntimeError(f"plugin {self.identifier} closed its output early")
            if not line.strip():
                break
            frame_index, det = parse_detection_line(line.strip(), source=self.identifier)
            if frame_index != frame.index:
                raise RuntimeError(
                    f"plugin {self.identifier} answered for frame {frame_index}, "
                    f"expected {frame.index}"
                )
            detections.append(det)
        return detections

    def close(self) -> None:
        if self._proc is not None:
            try:
                if self._proc.stdin:
                    self._proc.stdin.close()
                self._proc.wait(timeout=5)
            except Exception:
                self._proc.kill()
            self._proc = None
        if self._tmpdir is not None:
            self._tmpdir.cleanup()
            self._tmpdir = None


def _valid_detection(det: Detection, frame) -> Optional[str]:
    if not 0.0 <= det.confidence <= 1.0:
        return f"confidence {det.confidence} outside [0, 1]"
    if det.bbox is not None:
        x, y, w, h = det.bbox
        if w < 0 or h < 0 or x < 0 or y < 0 or x + w > frame.width or y + h > frame.height:
            return f"bbox {det.bbox} outside frame bounds {frame.width}x{frame.height}"
    return None


def evaluate_detectors(frame, plugins: Sequence[DetectorPlugin],
                       warnings: Optional[list[str]] = None) -> list[Detection]:
    """Run every plugin on one frame and concatenate validated outputs.

    Order is plugin registration order, then per-plugin output order. A plugin
    emitting an out-of-range confidence, an undeclared class, or an
    out-of-bounds box has its whole output for the frame dropped, with an
    integrity warning recorded.
    """
    results: list[Detection] = []
    for plugin in plugins:
        try:
            detections = plugin.evaluate(frame)
        except Exception as exc:
            message = f"plugin {plugin.identifier} failed on frame {frame.index}: {exc}"
            logger.warning(message)
            if warnings is not None:
                warnings.append(message)
            continue
        problem = None
        for det in detections:
            if det.class_name not in plugin.class_names:
                problem = f"undeclared class {det.class_name!r}"
                break
            problem = _valid_detection(det, frame)
            if problem:
                break
        if problem:
            message = (f"plugin {plugin.identifier} output dropped for frame "
                       f"{frame.index}: {problem}")
            logger.warning(message)
            if warnings is not None:
                warnings.append(message)
            continue
        results.extend(detections)
    return results


@dataclass(frozen=True)
class HeuristicParams:
    """Tunables for the built-in reference detectors."""

    texture_delta: int = 20
    coverage_ref: float = 0.5
    rail_clearance_px: float = 12.0
    merge_distance_px: float = 6.0
    min_support_rows: int = 20
    noise_floor_px: float = 1.0


def _local_range(gray: np.ndarray) -> np.ndarray:
    """Max minus min over each pixel's 3x3 neighborhood (edges clamped)."""
    padded = np.pad(gray.astype(np.int16), 1, mode="edge")
    stacks = [
        padded[dy : dy + gray.shape[0], dx : dx + gray.shape[1]]
        for dy in range(3)
        for dx in range(3)
    ]
    stacked = np.stack(stacks)
    return stacked.max(axis=0) - stacked.min(axis=0)


def ballast_heuristic(
    frame,
    calib: CalibrationProfile,
    params: HeuristicParams | None = None,
    *,
    warped: Optional[np.ndarray] = None,
    rail_obs: Optional[RailObservation] = None,
    scan_params: TrackScanParams | None = None,
) -> Optional[Detection]:
    """Loose-ballast reference detector.

    Healthy ballast is gravel, which reads as dense fine texture between the
    rails in the warped view; bare crossties read smooth. Confidence rises as
    the textured-pixel fraction falls below the reference coverage. Returns
    None when no valid rail pair bounds the region.
    """
    params = params or HeuristicParams()
    if warped is None:
        warped = warp_roi(frame, calib)
    if rail_obs is None:
        mask = binarize(warped, calib.binarize)
        rail_obs = extract_rails(mask, None, calib, scan_params)
    clearance = params.rail_clearance_px
    selected: list[np.ndarray] = []
    ranges = _local_range(warped)
    for row in rail_obs.rows:
        if not row.valid:
            continue
        x0 = int(math.ceil(row.left_x + clearance))
        x1 = int(math.floor(row.right_x - clearance))
        if x1 < x0:
            continue
        selected.append(ranges[row.y, x0 : x1 + 1])
    if not selected:
        return None
    values = np.concatenate(selected)
    coverage = float(np.count_nonzero(values > params.texture_delta)) / values.size
    confidence = float(np.clip((params.coverage_ref - coverage) / params.coverage_ref, 0.0, 1.0))
    return Detection(
        class_name=BALLAST_CLASS,
        confidence=confidence,
        bbox=tuple(calib.roi),
        source="builtin:ballast",
    )


def switch_heuristic(
    frame,
    calib: CalibrationProfile,
    rail_obs: RailObservation,
    params: HeuristicParams | None = None,
    *,
    binary: Optional[np.ndarray] = None,
    scan_params: TrackScanParams | None = None,
) -> Optional[Detection]:
    """Switch (turnout) reference detector.

    Looks for a third validated rail run whose distance to the nearer main
    rail shrinks monotonically (within the noise floor) down the rows and ends
    within merge distance: the signature of a diverging branch meeting the
    running rail. Parallel support rails keep a constant offset and never
    merge, so they do not qualify.
    """
    params = params or HeuristicParams()
    scan_params = scan_params or TrackScanParams()
    if binary is None:
        binary = binarize(warp_roi(frame, calib), calib.binarize)

    observed: list[tuple[int, float]] = []
    for row in rail_obs.rows:
        if not row.valid:
            continue
        spans = row_runs(binary[row.y], scan_params.min_rail_width_px,
                         scan_params.max_rail_width_px)
        if len(spans) < 3:
            continue
        cents = [run_centroid(s) for s in spans]
        # Drop the two runs acting as the main pair, then take the extra
        # run closest to either rail as the branch candidate.
        left_i = min(range(len(cents)), key=lambda i: abs(cents[i] - row.left_x))
        right_i = min(range(len(cents)), key=lambda i: abs(cents[i] - row.right_x))
        extras = [c for i, c in enumerate(cents) if i not in (left_i, right_i)]
        if not extras:
            continue
        distance = min(
            min(abs(c - row.left_x), abs(c - row.right_x)) for c in extras
        )
        observed.append((row.y, distance))

    if not observed:
        return None

    best_len = 0
    start = 0
    while start < len(observed):
        end = start
        while (
            end + 1 < len(observed)
            and observed[end + 1][1] <= observed[end][1] + params.noise_floor_px
        ):
            end += 1
        length = end - start + 1
        if (
            length >= params.min_support_rows
            and observed[end][1] <= params.merge_distance_px
            and length > best_len
        ):
            best_len = length
        start = end + 1

    if best_len == 0:
        return None
    confidence = best_len / len(observed)
    return Detection(
        class_name=SWITCH_CLASS,
        confidence=float(min(1.0, confidence)),
        bbox=tuple(calib.roi),
        source="builtin:switch",
    )


# ---------------------------------------------------------------------------
# Training-data augmentation operations


def mirror(image: np.ndarray) -> np.ndarray:
    """Horizontal flip. Applying it twice restores the input exactly."""
    return np.ascontiguousarray(image[:, ::-1])


def brightness(image: np.ndarray, delta: int) -> np.ndarray:
    """Saturating per-channel brightness shift."""
    shifted = image.astype(np.int16) + int(delta)
    return np.clip(shifted, 0, 255).astype(np.uint8)


def shift(image: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Integer translation; vacated pixels are zero."""
    h, w = image.shape[:2]
    dx, dy = int(dx), int(dy)
    if abs(dx) >= w or abs(dy) >= h:
        raise ValueError(f"shift ({dx}, {dy}) exceeds image bounds {w}x{h}")
    out = np.zeros_like(image)
    src_x0, src_x1 = max(0, -dx), min(w, w - dx)
    src_y0, src_y1 = max(0, -dy), min(h, h - dy)
    out[src_y0 + dy : src_y1 + dy, src_x0 + dx : src_x1 + dx] = image[
        src_y0:src_y1, src_x0:src_x1
    ]
    return out


def rotate(image: np.ndarray, degrees: float) -> np.ndarray:
    """Rotation about the image center, bilinear, zero outside the source."""
    if not -180.0 <= degrees <= 180.0:
        raise ValueError(f"rotation angle must be in [-180, 180], got {degrees}")
    h, w = image.shape[:2]
    flat = image.reshape(h, w, -1)
    channels = flat.shape[2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = math.radians(degrees)
    cos_t, sin_t = math.cos(theta), math.sin(theta)

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    # Inverse mapping: rotate destination coordinates back into the source.
    rel_x = xs - cx
    rel_y = ys - cy
    sx = cos_t * rel_x + sin_t * rel_y + cx
    sy = -sin_t * rel_x + cos_t * rel_y + cy

    inside = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    sx = np.where(inside, sx, 0.0)
    sy = np.where(inside, sy, 0.0)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)

    src = flat.astype(np.float64)
    val = (
        src[y0, x0] * (1 - fx) * (1 - fy)
        + src[y0, x1] * fx * (1 - fy)
        + src[y1, x0] * (1 - fx) * fy
        + src[y1, x1] * fx * fy
    )
    val = np.where(inside[..., None], np.rint(val), 0.0)
    out = np.clip(val, 0, 255).astype(np.uint8).reshape(h, w, channels)
    return out.reshape(image.shape)


def augment(image: np.ndarray, op: str, **params) -> np.ndarray:
    """Dispatch by operation name: mirror | rotate | shift | brightness."""
    if op == "mirror":
        return mirror(image)
    if op == "rotate":
        return rotate(image, params["degrees"])
    if op == "shift":
        return shift(image, params["dx"], params["dy"])
    if op == "brightness":
        return brightness(image, params["delta"])
    raise ValueError(f"unknown augmentation {op!r}")


def load_plugin(spec: dict) -> DetectorPlugin:
    """Build a plugin from a config binding.

    ``{"kind": "replay", "path": ...}`` or
    ``{"kind": "exec", "command": [...], "classes": [...]}``,
    each with an optional ``"id"``.
    """
    kind = spec.get("kind")
    if kind == "replay":
        if "path" not in spec:
            raise ConfigError("replay plugin binding needs a 'path'")
        return FileReplayPlugin(spec["path"], identifier=spec.get("id"),
                                class_names=spec.get("classes"))
    if kind == "exec":
        if "command" not in spec or "classes" not in spec:
            raise ConfigError("exec plugin binding needs 'command' and 'classes'")
        return ExternalProcessPlugin(spec["command"], spec["classes"],
                                     identifier=spec.get("id"))
    raise ConfigError(f"unknown plugin kind {kind!r}")


def parse_plugin_arg(arg: str) -> dict:
    """Parse a command-line plugin spec.

    ``replay:PATH`` or ``exec:CLASS[,CLASS...]:COMMAND LINE``.
    """
    kind, _, rest = arg.partition(":")
    if kind == "replay" and rest:
        return {"kind": "replay", "path": rest}
    if kind == "exec":
        classes, _, command = rest.partition(":")
        if classes and command:
            return {"kind": "exec", "classes": classes.split(","), "command": command}
    raise ConfigError(
        f"bad plugin spec {arg!r}; use replay:PATH or exec:CLASSES:COMMAND"
    )
