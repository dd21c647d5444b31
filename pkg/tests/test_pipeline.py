import json

import numpy as np
import pytest

from railwatch import imgio
from railwatch.errors import ConfigError
from railwatch.ingest import RunConfig, build_config
from railwatch.pipeline import run_analysis
from railwatch.synth import (
    KinkSpec,
    SceneSpec,
    SignalSpec,
    SwitchSpec,
    render_scene,
)


def analyze(tmp_path, spec, config=None, out="out", plugins=()):
    paths = render_scene(spec, tmp_path / "corpus")
    config = config or RunConfig.default()
    return run_analysis(paths["manifest"], config, tmp_path / out,
                        extra_plugin_bindings=list(plugins))


class TestEventFlow:
    def test_loose_ballast_drives_segment_health(self, tmp_path):
        spec = SceneSpec(frames=4, seed=91, ballast_density=0.0)
        analysis = analyze(tmp_path, spec)
        result = analysis.result
        ballast = [e for e in result.events if e.class_name == "loose_ballast"]
        assert len(ballast) == 4
        assert all(e.confidence > 0.9 for e in ballast)
        assert result.flags == []  # category 2 never flags
        assert len(result.segments) == 1
        # weight 0.5 at confidence ~1 -> frame health ~0.5
        assert result.segments[0].mean_thi == pytest.approx(0.5, abs=0.05)

    def test_healthy_scene_produces_no_events(self, tmp_path):
        spec = SceneSpec(frames=3, seed=92, ballast_density=0.9, noise_sigma=2.0)
        analysis = analyze(tmp_path, spec)
        assert analysis.result.events == []
        assert analysis.result.segments[0].mean_thi == 1.0

    def test_kink_event_and_flag_and_exit_state(self, tmp_path):
        spec = SceneSpec(frames=3, seed=93,
                         kink=KinkSpec(start_frame=1, duration=2, amplitude_px=14.0))
        analysis = analyze(tmp_path, spec)
        result = analysis.result
        sunkinks = [e for e in result.events if e.class_name == "sunkink"]
        assert len(sunkinks) == 2
        assert len(result.flags) == 2
        assert all(f.class_name == "sunkink" for f in result.flags)
        # flagged verdicts imply confidence >= 0.5, the flag threshold
        assert all(e.confidence >= 0.5 for e in sunkinks)
        assert result.segments[0].category1_flags

    def test_min_event_confidence_gates_recording(self, tmp_path):
        # Mid ballast density: some texture, low heuristic confidence.
        spec = SceneSpec(frames=2, seed=94, ballast_density=0.35)
        config = build_config({"min_event_confidence": 0.999})
        analysis = analyze(tmp_path, spec, config=config)
        assert analysis.result.events == []

    def test_switch_heuristic_becomes_asset(self, tmp_path):
        spec = SceneSpec(
            frames=4, seed=95, rail_band_width_px=4.0,
            switch=SwitchSpec(diverge_row=15, start_offset_px=40.0,
                              px_per_row=0.45, band_width_px=4.0),
        )
        analysis = analyze(tmp_path, spec)
        switches = [a for a in analysis.result.assets if a.asset_type == "switch"]
        assert len(switches) == 1
        assert switches[0].first_frame == 0
        assert switches[0].last_frame == 3

    def test_signal_plugin_to_asset(self, tmp_path):
        spec = SceneSpec(
            frames=5, seed=96,
            signal=SignalSpec(start_frame=0, end_frame=4,
                              start_bbox=(480, 30, 30, 60),
                              end_bbox=(500, 20, 36, 70), color="green"),
        )
        paths = render_scene(spec, tmp_path / "corpus")
        dets = tmp_path / "dets.txt"
        dets.write_text("\n".join(
            "{} signal 0.85 {} {} {} {}".format(i, *spec.signal.bbox_at(i))
            for i in range(5)
        ) + "\n")
        analysis = run_analysis(
            paths["manifest"], RunConfig.default(), tmp_path / "out",
            extra_plugin_bindings=[{"kind": "replay", "path": str(dets)}],
        )
        signals = [a for a in analysis.result.assets if a.asset_type == "signal"]
        assert len(signals) == 1
        assert signals[0].state.value == "green"
        assert signals[0].peak_confidence == 0.85

    def test_geojson_skipped_without_gps(self, tmp_path):
        analysis = analyze(tmp_path, SceneSpec(frames=2, seed=97))
        assert analysis.geojson_path is None

    def test_geojson_written_with_gps(self, tmp_path):
        analysis = analyze(tmp_path, SceneSpec(frames=2, seed=98,
                                               gps_start=(12.9, 77.6)))
        assert analysis.geojson_path is not None
        doc = json.loads(analysis.geojson_path.read_text())
        assert doc["type"] == "FeatureCollection"


class TestIntegrityAndFailure:
    def test_invalid_plugin_output_counted_in_manifest(self, tmp_path):
        spec = SceneSpec(frames=2, seed=99)
        paths = render_scene(spec, tmp_path / "corpus")
        dets = tmp_path / "dets.txt"
        dets.write_text("0 signal 1.5 1 1 4 4\n")  # confidence out of range
        analysis = run_analysis(
            paths["manifest"], RunConfig.default(), tmp_path / "out",
            extra_plugin_bindings=[{"kind": "replay", "path": str(dets)}],
        )
        assert analysis.result.integrity_warnings == 1
        manifest = json.loads((tmp_path / "out" / "run.json").read_text())
        assert manifest["integrity_warnings"] == 1

    def test_partial_run_manifest_on_mid_stream_failure(self, tmp_path):
        spec = SceneSpec(frames=2, seed=100)
        paths = render_scene(spec, tmp_path / "corpus")
        # Replace the second frame with one too small for the calibrated ROI.
        tiny = np.zeros((40, 40, 3), dtype=np.uint8)
        imgio.write_ppm(tmp_path / "corpus" / "frames" / "000001.ppm", tiny)
        with pytest.raises(ConfigError):
            run_analysis(paths["manifest"], RunConfig.default(), tmp_path / "out")
        manifest = json.loads((tmp_path / "out" / "run.json").read_text())
        assert manifest["partial_run"] is True
        assert manifest["error"]

    def test_skipped_frames_counted(self, tmp_path):
        spec = SceneSpec(frames=3, seed=101)
        paths = render_scene(spec, tmp_path / "corpus")
        (tmp_path / "corpus" / "frames" / "000001.ppm").write_bytes(b"garbage")
        analysis = run_analysis(paths["manifest"], RunConfig.default(),
                                tmp_path / "out")
        assert analysis.result.skipped_frames == 1
        assert analysis.result.frame_count == 2


class TestCrashingPlugin:
    def test_plugin_exception_is_warning_not_fatal(self):
        from railwatch.detecthub import DetectorPlugin, evaluate_detectors
        from railwatch.synth import render_frames

        class Exploding(DetectorPlugin):
            identifier = "boom"
            class_names = frozenset({"signal"})

            def evaluate(self, frame):
                raise RuntimeError("detector crashed")

        _, frames, _ = render_frames(SceneSpec(frames=1, seed=102))
        warnings = []
        assert evaluate_detectors(frames[0], [Exploding()], warnings) == []
        assert len(warnings) == 1
