import json

import pytest
from hypothesis import given, settings, strategies as st

from railwatch.errors import ConfigError, GeoExportError
from railwatch.geo import GeoPoint, haversine_m
from railwatch.health import (
    Category1Flag,
    ClassWeight,
    ClassWeightTable,
    DefectEvent,
    FrameHealth,
    RunResult,
    SegmentHealth,
    aggregate_segments,
    compute_thi,
    emit_report,
    export_geojson,
    flag_category1,
    load_report,
)
from railwatch.signalstate import AssetRecord, SignalState


def event(class_name="loose_ballast", confidence=0.8, frame=0, category=None):
    table = ClassWeightTable.default()
    return DefectEvent(
        frame_index=frame,
        class_name=class_name,
        confidence=confidence,
        category=category if category is not None else table.category(class_name),
    )


class TestComputeThi:
    def test_worked_example(self):
        # 80% sure of loose ballast at weight 0.5 -> health index 60%.
        thi = compute_thi([event("loose_ballast", 0.8)], ClassWeightTable.default())
        assert abs(thi - 0.60) < 1e-9

    def test_no_events_full_health(self):
        assert compute_thi([], ClassWeightTable.default()) == 1.0

    def test_saturation_exact_zero(self):
        thi = compute_thi(
            [event("sunkink", 0.9), event("loose_ballast", 0.6)],
            ClassWeightTable.default(),
        )
        assert thi == 0.0

    def test_per_class_maximum(self):
        weights = ClassWeightTable.default()
        dup = compute_thi(
            [event("loose_ballast", 0.3), event("loose_ballast", 0.8)], weights
        )
        single = compute_thi([event("loose_ballast", 0.8)], weights)
        assert dup == pytest.approx(single, abs=1e-12)

    def test_unknown_class_rejected(self):
        with pytest.raises(ConfigError):
            compute_thi([event("vegetation", 0.5, category=2)],
                        ClassWeightTable.default())

    @settings(max_examples=300)
    @given(
        conf=st.floats(0.0, 1.0),
        bump=st.floats(0.0, 1.0),
        weight=st.floats(0.001, 1.0),
    )
    def test_bounds_and_monotonicity(self, conf, bump, weight):
        table = ClassWeightTable({
            "sunkink": ClassWeight(1.0, 1),
            "loose_ballast": ClassWeight(weight, 2),
        })
        thi = compute_thi([event("loose_ballast", conf)], table)
        assert 0.0 <= thi <= 1.0
        higher = compute_thi([event("loose_ballast", min(1.0, conf + bump))], table)
        assert higher <= thi + 1e-12


class TestClassWeightTable:
    def test_defaults(self):
        table = ClassWeightTable.default()
        assert table.weight("sunkink") == 1.0 and table.category("sunkink") == 1
        assert table.weight("loose_ballast") == 0.5 and table.category("loose_ballast") == 2

    def test_zero_weight_rejected_naming_class(self):
        with pytest.raises(ConfigError) as err:
            ClassWeightTable({"sunkink": ClassWeight(0.0, 1)})
        assert "sunkink" in str(err.value)


class TestFlagCategory1:
    def test_confident_sunkink_flagged(self):
        flag = flag_category1(event("sunkink", 0.9, frame=12))
        assert flag == Category1Flag(12, "sunkink", 0.9, None)

    def test_below_threshold_not_flagged_but_event_counts(self):
        ev = event("sunkink", 0.3, frame=3)
        assert flag_category1(ev, threshold=0.5) is None
        thi = compute_thi([ev], ClassWeightTable.default())
        assert thi == pytest.approx(0.7, abs=1e-9)

    def test_threshold_boundary_inclusive(self):
        assert flag_category1(event("sunkink", 0.5), threshold=0.5) is not None

    def test_category2_never_flags(self):
        assert flag_category1(event("loose_ballast", 1.0)) is None


class TestAggregateSegments:
    def test_three_frame_mean(self):
        frames = [FrameHealth(i, thi, None) for i, thi in enumerate([1.0, 0.6, 0.8])]
        segments = aggregate_segments(frames, segment_length_frames=10)
        assert len(segments) == 1
        assert segments[0].mean_thi == pytest.approx(0.8, abs=1e-12)
        assert segments[0].frame_count == 3

    def test_all_healthy(self):
        frames = [FrameHealth(i, 1.0, None) for i in range(50)]
        segments = aggregate_segments(frames, segment_length_frames=20)
        assert all(s.mean_thi == 1.0 for s in segments)

    def test_frame_partition_arithmetic(self):
        frames = [FrameHealth(i, 1.0, None) for i in range(2500)]
        segments = aggregate_segments(frames, segment_length_frames=1000)
        assert [s.frame_count for s in segments] == [1000, 1000, 500]
        assert [s.first_frame for s in segments] == [0, 1000, 2000]

    def test_distance_partition_matches_oracle(self):
        # Fixes 0.0006 deg of latitude apart (~66.7 m): independent
        # accumulation says segments close every second hop.
        frames = [
            FrameHealth(i, 1.0, GeoPoint(10.0 + 0.0006 * i, 20.0)) for i in range(9)
        ]
        hop = haversine_m(frames[0].geo, frames[1].geo)
        assert 60 < hop < 70
        segments = aggregate_segments(frames, segment_length_m=100.0)
        assert [s.frame_count for s in segments] == [3, 2, 2, 2]
        assert segments[0].geo_start == frames[0].geo
        assert segments[0].geo_end == frames[2].geo

    def test_weighted_mean_consistency(self):
        import numpy as np
        rng = np.random.default_rng(8)
        this = rng.uniform(0.0, 1.0, size=137)
        frames = [FrameHealth(i, float(t), None) for i, t in enumerate(this)]
        segments = aggregate_segments(frames, segment_length_frames=25)
        weighted = sum(s.mean_thi * s.frame_count for s in segments)
        assert weighted / len(frames) == pytest.approx(float(this.mean()), abs=1e-12)

    def test_category1_events_listed_in_range(self):
        frames = [FrameHealth(i, 1.0, None) for i in range(20)]
        events = [event("sunkink", 0.9, frame=4), event("sunkink", 0.2, frame=15),
                  event("loose_ballast", 0.9, frame=5)]
        segments = aggregate_segments(frames, events, segment_length_frames=10)
        assert segments[0].category1_flags == [(4, "sunkink", 0.9)]
        assert segments[1].category1_flags == [(15, "sunkink", 0.2)]

    def test_empty_input(self):
        assert aggregate_segments([]) == []


def _result(**kwargs):
    defaults = dict(
        config_sha256="0" * 64, frame_count=0, skipped_frames=0, integrity_warnings=0,
    )
    defaults.update(kwargs)
    return RunResult(**defaults)


class TestEmitReport:
    def test_empty_run(self, tmp_path):
        paths = emit_report(_result(), tmp_path)
        assert paths["events"].read_text() == ""
        assert paths["segments"].read_text() == ""
        manifest = json.loads(paths["manifest"].read_text())
        assert manifest["frame_count"] == 0
        assert manifest["partial_run"] is False

    def test_single_flag_record(self, tmp_path):
        result = _result(
            frame_count=5,
            events=[event("sunkink", 0.9, frame=2)],
            flags=[Category1Flag(2, "sunkink", 0.9)],
        )
        emit_report(result, tmp_path)
        lines = [json.loads(l) for l in
                 (tmp_path / "events.jsonl").read_text().splitlines()]
        kinds = [l["kind"] for l in lines]
        assert kinds.count("flag") == 1
        assert kinds.count("defect") == 1

    def test_deterministic_bytes(self, tmp_path):
        result = _result(
            frame_count=3,
            events=[event("loose_ballast", 0.7, frame=1)],
            assets=[AssetRecord(0, "signal", 1, 2, GeoPoint(1.0, 2.0), 0.9,
                                SignalState.GREEN)],
            segments=[SegmentHealth(0, 0, 2, 3, 0.9,
                                    GeoPoint(1.0, 2.0), GeoPoint(1.1, 2.1), [])],
        )
        emit_report(result, tmp_path / "a")
        emit_report(result, tmp_path / "b")
        for name in ("events.jsonl", "segments.jsonl", "run.json"):
            assert (tmp_path / "a" / name).read_bytes() == \
                   (tmp_path / "b" / name).read_bytes()


class TestExportGeojson:
    def test_segment_line_string(self, tmp_path):
        segment = SegmentHealth(0, 0, 99, 100, 0.8,
                                GeoPoint(12.97, 77.59), GeoPoint(12.98, 77.60), [])
        out = tmp_path / "map.geojson"
        export_geojson([segment], [], out)
        doc = json.loads(out.read_text())  # independent parser
        assert doc["type"] == "FeatureCollection"
        feature = doc["features"][0]
        assert feature["geometry"]["type"] == "LineString"
        assert feature["geometry"]["coordinates"] == [[77.59, 12.97], [77.60, 12.98]]
        assert feature["properties"]["mean_thi"] == 0.8

    def test_asset_point_lon_lat_order(self):
        asset = AssetRecord(0, "signal", 0, 3, GeoPoint(1.0, 2.0), 0.9, SignalState.RED)
        doc = export_geojson([], [asset])
        point = doc["features"][0]
        assert point["geometry"]["type"] == "Point"
        assert point["geometry"]["coordinates"] == [2.0, 1.0]
        assert point["properties"]["state"] == "red"

    def test_round_trip_feature_count(self, tmp_path):
        segments = [
            SegmentHealth(i, i * 10, i * 10 + 9, 10, 0.9,
                          GeoPoint(10.0 + i, 20.0), GeoPoint(10.1 + i, 20.1), [])
            for i in range(3)
        ]
        assets = [AssetRecord(i, "switch", 0, 5, GeoPoint(5.0, 6.0 + i), 0.5, None)
                  for i in range(2)]
        out = tmp_path / "m.geojson"
        export_geojson(segments, assets, out)
        doc = json.loads(out.read_text())
        assert len(doc["features"]) == len(segments) + len(assets)

    def test_no_geo_anywhere_errors_with_advice(self):
        segment = SegmentHealth(0, 0, 9, 10, 1.0, None, None, [])
        asset = AssetRecord(0, "signal", 0, 1, None, 0.9, SignalState.RED)
        with pytest.raises(GeoExportError) as err:
            export_geojson([segment], [asset])
        assert "frame-index" in str(err.value)


class TestLoadReport:
    def test_round_trip(self, tmp_path):
        result = _result(
            frame_count=10,
            assets=[AssetRecord(0, "signal", 1, 4, GeoPoint(1.5, 2.5), 0.9,
                                SignalState.GREEN),
                    AssetRecord(1, "switch", 2, 6, None, 0.7, None)],
            segments=[SegmentHealth(0, 0, 9, 10, 0.75,
                                    GeoPoint(1.0, 2.0), GeoPoint(1.2, 2.2),
                                    [(3, "sunkink", 0.9)])],
        )
        emit_report(result, tmp_path)
        segments, assets = load_report(tmp_path)
        assert segments == result.segments
        assert assets == result.assets


class TestHaversine:
    def test_zero_distance(self):
        p = GeoPoint(12.0, 77.0)
        assert haversine_m(p, p) == 0.0

    def test_one_degree_latitude(self):
        d = haversine_m(GeoPoint(0.0, 0.0), GeoPoint(1.0, 0.0))
        assert d == pytest.approx(111_195, rel=1e-3)

    def test_symmetry(self):
        a, b = GeoPoint(12.9, 77.6), GeoPoint(13.1, 77.8)
        assert haversine_m(a, b) == pytest.approx(haversine_m(b, a), abs=1e-9)

    def test_latitude_bounds_validated(self):
        with pytest.raises(ValueError):
            GeoPoint(91.0, 0.0)
        with pytest.raises(ValueError):
            GeoPoint(0.0, 181.0)
