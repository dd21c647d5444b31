"""End-to-end analysis run: ingest, scan, detect, associate, aggregate, report.

Per frame, the classical track scanner and the configured detectors run
side by side; their outputs become defect events (health index input,
immediate category-1 flags) or asset sightings (association input). After the
stream ends, assets are deduplicated, segments aggregated, and the report
files written. A fatal error mid-stream still writes a run manifest marked
partial before propagating.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from . import detecthub, health, signalstate, trackscan
from .detecthub import Detection, DetectorPlugin
from .ingest import Frame, RunConfig, open_frame_stream

logger = logging.getLogger(__name__)

SUNKINK_CLASS = "sunkink"


@dataclass
class AnalysisResult:
    result: health.RunResult
    out_dir: Path
    report_paths: dict[str, Path]
    geojson_path: Optional[Path]

    @property
    def flag_count(self) -> int:
        return len(self.result.flags)


def _route_detection(
    det: Detection,
    frame: Frame,
    config: RunConfig,
    frame_events: list[health.DefectEvent],
    associator: signalstate.AssetAssociator,
    warnings: list[str],
) -> None:
    if det.class_name in config.thi_weights:
        frame_events.append(health.DefectEvent(
            frame_index=frame.index,
            class_name=det.class_name,
            confidence=det.confidence,
            category=config.thi_weights.category(det.class_name),
            geo=frame.geo,
            origin=det.source or "plugin",
        ))
        return
    if det.class_name == detecthub.SIGNAL_CLASS:
        if det.bbox is None:
            warnings.append(
                f"signal detection without a box on frame {frame.index} ignored"
            )
            return
        obs = signalstate.classify_signal_color(frame, det.bbox, config.signals)
        if obs.state is signalstate.SignalState.UNKNOWN:
            return  # colorless signals are ignored, not guessed
        associator.add(signalstate.Sighting(
            frame_index=frame.index,
            asset_type="signal",
            bbox=obs.bbox,
            confidence=det.confidence,
            state=obs.state,
            geo=frame.geo,
        ))
        return
    if det.class_name == detecthub.SWITCH_CLASS:
        bbox = det.bbox if det.bbox is not None else tuple(config.calibration.roi)
        associator.add(signalstate.Sighting(
            frame_index=frame.index,
            asset_type="switch",
            bbox=bbox,
            confidence=det.confidence,
            geo=frame.geo,
        ))
        return
    message = f"no route for detection class {det.class_name!r} on frame {frame.index}"
    logger.warning(message)
    warnings.append(message)


def run_analysis(
    frames_source: str | Path,
    config: RunConfig,
    out_dir: str | Path,
    extra_plugin_bindings: Sequence[dict] = (),
) -> AnalysisResult:
    """Analyze a frame source and write the report files into ``out_dir``."""
    out_dir = Path(out_dir)
    digest = health.config_digest(config.canonical_dict())
    stream = open_frame_stream(frames_source)

    plugins: list[DetectorPlugin] = [
        detecthub.load_plugin(binding)
        for binding in list(config.plugins) + list(extra_plugin_bindings)
    ]

    warnings: list[str] = []
    recorded_events: list[health.DefectEvent] = []
    flags: list[health.Category1Flag] = []
    frame_health: list[health.FrameHealth] = []
    associator = signalstate.AssetAssociator(config.signals)
    state = trackscan.TrackState.empty(config.trackscan)
    frame_count = 0

    try:
        for frame in stream:
            frame_count += 1
            scan = trackscan.scan_frame(frame, config.calibration, state, config.trackscan)
            state = scan.state

            frame_events: list[health.DefectEvent] = []
            if scan.verdict.flagged:
                frame_events.append(health.DefectEvent(
                    frame_index=frame.index,
                    class_name=SUNKINK_CLASS,
                    confidence=scan.verdict.confidence,
                    category=config.thi_weights.category(SUNKINK_CLASS),
                    geo=frame.geo,
                    origin="trackscan",
                ))

            if config.ballast_heuristic_enabled:
                det = detecthub.ballast_heuristic(
                    frame, config.calibration, config.heuristics,
                    warped=scan.warped, rail_obs=scan.observation,
                    scan_params=config.trackscan,
                )
                if det is not None:
                    _route_detection(det, frame, config, frame_events, associator, warnings)
            if config.switch_heuristic_enabled:
                det = detecthub.switch_heuristic(
                    frame, config.calibration, scan.observation, config.heuristics,
                    binary=scan.binary, scan_params=config.trackscan,
                )
                if det is not None:
                    _route_detection(det, frame, config, frame_events, associator, warnings)

            for det in detecthub.evaluate_detectors(frame, plugins, warnings):
                _route_detection(det, frame, config, frame_events, associator, warnings)

            # All confidences shape the frame's health index; only events at
            # or above the recording threshold land in the report.
            thi = health.compute_thi(frame_events, config.thi_weights)
            frame_health.append(health.FrameHealth(frame.index, thi, frame.geo))
            for event in frame_events:
                flag = health.flag_category1(event, config.cat1_flag_threshold)
                if flag is not None:
                    flags.append(flag)
                if event.confidence >= config.min_event_confidence:
                    recorded_events.append(event)
    except Exception as exc:
        partial = health.RunResult(
            config_sha256=digest,
            frame_count=frame_count,
            skipped_frames=stream.skipped,
            integrity_warnings=len(warnings),
            events=recorded_events,
            flags=flags,
            partial_run=True,
            error=str(exc),
        )
        health.emit_report(partial, out_dir)
        raise
    finally:
        for plugin in plugins:
            plugin.close()

    assets = associator.finish()
    segments = health.aggregate_segments(
        frame_health,
        recorded_events,
        segment_length_m=config.segment_length_m,
        segment_length_frames=config.segment_length_frames,
    )
    result = health.RunResult(
        config_sha256=digest,
        frame_count=frame_count,
        skipped_frames=stream.skipped,
        integrity_warnings=len(warnings),
        events=recorded_events,
        flags=flags,
        assets=assets,
        segments=segments,
    )
    report_paths = health.emit_report(result, out_dir)

    geojson_path: Optional[Path] = None
    has_geo = any(s.geo_start for s in segments) or any(a.geo for a in assets)
    if has_geo:
        geojson_path = out_dir / health.GEOJSON_FILENAME
        health.export_geojson(segments, assets, geojson_path)

    return AnalysisResult(
        result=result,
        out_dir=out_dir,
        report_paths=report_paths,
        geojson_path=geojson_path,
    )
