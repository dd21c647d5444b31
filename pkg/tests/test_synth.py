import json

import numpy as np
import pytest

from railwatch.errors import ConfigError, EvalError
from railwatch.synth import (
    GroundTruth,
    KinkSpec,
    SceneSpec,
    SignalSpec,
    SwitchSpec,
    evaluate,
    ground_truth_for,
    kink_displacement,
    load_scene_spec,
    render_frames,
    render_scene,
    truncate_pct,
)
from railwatch.trackscan import TrackState, scan_frame


class TestKinkDisplacement:
    def test_peak_equals_amplitude_exactly(self):
        d = kink_displacement(120, 40, 40, 12.0)
        assert np.abs(d).max() == pytest.approx(12.0, abs=1e-12)

    def test_orthogonal_to_straight_lines(self):
        d = kink_displacement(120, 40, 40, 12.0)
        ys = np.arange(120, dtype=float)
        assert abs(d.sum()) < 1e-9
        assert abs((d * ys).sum()) < 1e-6

    def test_least_squares_residual_equals_peak(self):
        # Because the curve is orthogonal to {1, y}, the best-fit line on
        # baseline + curve is the baseline and the residual IS the curve.
        d = kink_displacement(120, 40, 40, 9.5)
        ys = np.arange(120, dtype=float)
        slope, intercept = np.polyfit(ys, 100.0 + d, 1)
        residuals = (100.0 + d) - (slope * ys + intercept)
        assert np.abs(residuals).max() == pytest.approx(9.5, abs=1e-9)

    def test_zero_amplitude_is_flat(self):
        assert not kink_displacement(120, 40, 40, 0.0).any()


class TestGroundTruth:
    def test_zero_amplitude_kink_never_present(self):
        spec = SceneSpec(frames=4, seed=1,
                         kink=KinkSpec(start_frame=0, duration=4, amplitude_px=0.0))
        truth = ground_truth_for(spec)
        assert all(not ft.kink for ft in truth.frames)

    def test_kink_window(self):
        spec = SceneSpec(frames=6, seed=1,
                         kink=KinkSpec(start_frame=2, duration=3, amplitude_px=12.0))
        truth = ground_truth_for(spec)
        assert [ft.kink for ft in truth.frames] == [False, False, True, True, True, False]
        assert truth.frames[2].kink_amplitude_px == 12.0

    def test_bare_ballast_is_loose(self):
        truth = ground_truth_for(SceneSpec(frames=2, seed=1, ballast_density=0.0))
        assert all(ft.loose_ballast for ft in truth.frames)

    def test_dense_ballast_is_healthy(self):
        truth = ground_truth_for(SceneSpec(frames=2, seed=1, ballast_density=0.5))
        assert not any(ft.loose_ballast for ft in truth.frames)

    def test_asset_counts(self):
        spec = SceneSpec(
            frames=6, seed=1,
            switch=SwitchSpec(),
            signal=SignalSpec(start_frame=1, end_frame=4,
                              start_bbox=(400, 40, 30, 60), end_bbox=(420, 30, 40, 80)),
        )
        truth = ground_truth_for(spec)
        assert truth.asset_counts() == {"switch": 1, "signal": 1}
        signal_truth = [a for a in truth.assets if a.asset_type == "signal"][0]
        assert (signal_truth.first_frame, signal_truth.last_frame) == (1, 4)

    def test_truth_file_round_trip(self, tmp_path):
        spec = SceneSpec(frames=3, seed=2, ballast_density=0.1,
                         kink=KinkSpec(start_frame=1, duration=1, amplitude_px=14.0),
                         switch=SwitchSpec())
        truth = ground_truth_for(spec)
        path = tmp_path / "truth.jsonl"
        truth.write(path)
        loaded = GroundTruth.read(path)
        assert loaded.frames == truth.frames
        assert loaded.assets == truth.assets


class TestRenderScene:
    def test_byte_identical_for_fixed_seed(self, tmp_path):
        spec = SceneSpec(frames=3, seed=9, noise_sigma=2.0,
                         kink=KinkSpec(start_frame=1, duration=2, amplitude_px=13.0),
                         gps_start=(12.9, 77.6), gps_step=(1e-5, 1e-5))
        paths_a = render_scene(spec, tmp_path / "a")
        paths_b = render_scene(spec, tmp_path / "b")
        for name in ("manifest", "truth"):
            assert paths_a[name].read_bytes() == paths_b[name].read_bytes()
        for i in range(spec.frames):
            fa = (tmp_path / "a" / "frames" / f"{i:06d}.ppm").read_bytes()
            fb = (tmp_path / "b" / "frames" / f"{i:06d}.ppm").read_bytes()
            assert fa == fb

    def test_different_seed_differs(self, tmp_path):
        a = render_scene(SceneSpec(frames=1, seed=1, noise_sigma=2.0), tmp_path / "a")
        b = render_scene(SceneSpec(frames=1, seed=2, noise_sigma=2.0), tmp_path / "b")
        fa = (tmp_path / "a" / "frames" / "000000.ppm").read_bytes()
        fb = (tmp_path / "b" / "frames" / "000000.ppm").read_bytes()
        assert fa != fb

    def test_manifest_is_loadable(self, tmp_path):
        from railwatch.ingest import open_frame_stream
        spec = SceneSpec(frames=2, seed=3, gps_start=(10.0, 20.0))
        paths = render_scene(spec, tmp_path)
        frames = list(open_frame_stream(paths["manifest"]))
        assert len(frames) == 2
        assert frames[0].geo is not None
        assert abs(frames[0].geo.lat - 10.0) < 1e-9

    def test_measured_amplitude_tracks_analytic_truth(self):
        spec = SceneSpec(frames=1, seed=4, noise_sigma=1.0,
                         kink=KinkSpec(start_frame=0, duration=1, amplitude_px=12.0))
        calib, frames, truth = render_frames(spec)
        result = scan_frame(frames[0], calib, TrackState.empty())
        assert result.verdict.flagged
        assert abs(result.verdict.amplitude_px - truth.frames[0].kink_amplitude_px) <= 0.5

    def test_warped_rails_are_vertical_and_parallel(self):
        # The camera view renders the rails converging in perspective; after
        # rectification their per-row centroids must be constant to 1 px.
        from railwatch.railgeom import warp_roi
        from railwatch.trackscan import binarize, extract_rails

        spec = SceneSpec(frames=1, seed=5)
        calib, frames, _ = render_frames(spec)
        cam = frames[0].pixels.astype(float).mean(axis=2)
        col_span = cam[:, : spec.width // 2].std(axis=1)
        assert col_span.max() > 0  # rails really do slant in camera space

        warped = warp_roi(frames[0], calib)
        obs = extract_rails(binarize(warped, calib.binarize), None, calib)
        lefts = np.array([r.left_x for r in obs.rows if r.valid])
        rights = np.array([r.right_x for r in obs.rows if r.valid])
        assert len(lefts) == 120
        assert np.ptp(lefts) <= 1.0 and np.ptp(rights) <= 1.0
        gauges = rights - lefts
        assert np.all(np.abs(gauges - 60.0) <= 1.0)


class TestSceneSpecFile:
    def test_load_full_spec(self, tmp_path):
        raw = {
            "frames": 4, "seed": 7, "width": 320, "height": 200,
            "ballast_density": 0.2, "noise_sigma": 1.5,
            "kink": {"start_frame": 1, "duration": 2, "amplitude_px": 12.5},
            "distractors": {"support_rail_offset_px": 30.0},
            "gps": {"lat": 12.9, "lon": 77.6, "dlat": 1e-5, "dlon": 0.0},
        }
        path = tmp_path / "scene.json"
        path.write_text(json.dumps(raw))
        spec = load_scene_spec(path)
        assert spec.frames == 4 and spec.seed == 7
        assert spec.kink.amplitude_px == 12.5
        assert spec.distractors.support_rail_offset_px == 30.0
        assert spec.geo_at(2).lat == pytest.approx(12.9 + 2e-5)

    def test_unknown_key_fatal(self, tmp_path):
        path = tmp_path / "scene.json"
        path.write_text(json.dumps({"frames": 1, "seed": 1, "wibble": 2}))
        with pytest.raises(ConfigError):
            load_scene_spec(path)

    def test_seed_mandatory(self, tmp_path):
        path = tmp_path / "scene.json"
        path.write_text(json.dumps({"frames": 1}))
        with pytest.raises(ConfigError):
            load_scene_spec(path)

    def test_bad_kink_shape_fatal(self, tmp_path):
        path = tmp_path / "scene.json"
        path.write_text(json.dumps({
            "frames": 1, "seed": 1,
            "kink": {"start_frame": 0, "duration": 1, "amplitude_px": 5, "shape": "step"},
        }))
        with pytest.raises(ConfigError):
            load_scene_spec(path)


def write_events(path, records):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def defect(frame, name):
    return {"kind": "defect", "frame_index": frame, "class_name": name,
            "confidence": 0.9, "category": 1, "origin": "t", "lat": None, "lon": None}


def asset(first, last, kind="signal"):
    return {"kind": "asset", "asset_id": 0, "asset_type": kind,
            "first_frame": first, "last_frame": last, "peak_confidence": 0.9,
            "state": "red", "lat": None, "lon": None}


class TestEvaluate:
    def test_47_of_51_assets_is_92_1_percent(self, tmp_path):
        from railwatch.synth import AssetTruth
        truth = GroundTruth(assets=[
            AssetTruth("signal", i * 10, i * 10 + 5) for i in range(51)
        ])
        events = tmp_path / "events.jsonl"
        write_events(events, [asset(i * 10, i * 10 + 5) for i in range(47)])
        report = evaluate(events, truth)
        assert report.assets_detected == 47
        assert report.assets_total == 51
        assert report.asset_level_accuracy_pct == 92.1
        assert "92.1%" in report.summary()

    def test_zero_predictions_recall_zero_precision_undefined(self, tmp_path):
        from railwatch.synth import AssetTruth, FrameTruth
        truth = GroundTruth(
            frames=[FrameTruth(i, True, 12.0, False, False, None, None)
                    for i in range(5)],
            assets=[AssetTruth("signal", 0, 4)],
        )
        events = tmp_path / "events.jsonl"
        write_events(events, [])
        report = evaluate(events, truth)
        assert report.recall == 0.0
        assert report.precision is None
        assert report.asset_level_accuracy_pct == 0.0

    def test_hand_counted_tp_fp_fn(self, tmp_path):
        from railwatch.synth import FrameTruth
        # 10 frames; sunkink true on 0-4; predicted on 0,1,2 (TP) and 7 (FP).
        truth = GroundTruth(frames=[
            FrameTruth(i, i < 5, 12.0 if i < 5 else 0.0, False, False, None, None)
            for i in range(10)
        ])
        events = tmp_path / "events.jsonl"
        write_events(events, [defect(i, "sunkink") for i in (0, 1, 2, 7)])
        report = evaluate(events, truth)
        assert (report.frame_tp, report.frame_fp, report.frame_fn) == (3, 1, 2)
        assert report.precision == pytest.approx(0.75)
        assert report.recall == pytest.approx(0.6)

    def test_self_evaluation_is_perfect(self, tmp_path):
        from railwatch.synth import AssetTruth, FrameTruth
        truth = GroundTruth(
            frames=[FrameTruth(i, i in (2, 3), 12.0, i == 5, False, None, None)
                    for i in range(8)],
            assets=[AssetTruth("switch", 0, 7)],
        )
        events = tmp_path / "events.jsonl"
        records = [defect(i, "sunkink") for i in (2, 3)]
        records.append(defect(5, "loose_ballast"))
        records.append(asset(0, 7, kind="switch"))
        write_events(events, records)
        report = evaluate(events, truth)
        assert report.precision == 1.0
        assert report.recall == 1.0
        assert report.asset_level_accuracy_pct == 100.0

    def test_malformed_record_fatal_with_line(self, tmp_path):
        events = tmp_path / "events.jsonl"
        events.write_text('{"kind": "defect"}\n')
        with pytest.raises(EvalError) as err:
            evaluate(events, GroundTruth())
        assert ":1" in str(err.value)

    def test_report_dir_accepted(self, tmp_path):
        from railwatch.synth import AssetTruth
        write_events(tmp_path / "events.jsonl", [asset(0, 3)])
        report = evaluate(tmp_path, GroundTruth(assets=[AssetTruth("signal", 1, 2)]))
        assert report.assets_detected == 1

    def test_truncation_not_rounding(self):
        assert truncate_pct(47 / 51) == 92.1
        assert truncate_pct(11 / 51) == 21.5
        assert truncate_pct(1.0) == 100.0
        assert truncate_pct(0.0) == 0.0
