"""Track health index aggregation and report emission.

Every frame gets a health index in [0, 1]: 1 minus the (capped) weighted sum
of per-class defect confidences. Safety-critical (category 1) defects are
flagged the moment they are seen; maintenance-priority (category 2) defects
act through the per-segment average. Reports are line-delimited records with
sorted keys so identical runs produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import ConfigError, GeoExportError
from .geo import GeoPoint, haversine_m
from .signalstate import AssetRecord, SignalState

CATEGORY_SAFETY_CRITICAL = 1
CATEGORY_MAINTENANCE = 2

EVENTS_FILENAME = "events.jsonl"
SEGMENTS_FILENAME = "segments.jsonl"
MANIFEST_FILENAME = "run.json"
GEOJSON_FILENAME = "map.geojson"

DEFAULT_CLASS_TABLE = {
    "sunkink": (1.0, CATEGORY_SAFETY_CRITICAL),
    "loose_ballast": (0.5, CATEGORY_MAINTENANCE),
}


@dataclass(frozen=True)
class ClassWeight:
    weight: float
    category: int


class ClassWeightTable:
    """Defect class -> (severity weight in (0, 1], category 1 or 2)."""

    def __init__(self, mapping: dict[str, ClassWeight]):
        for name, cw in mapping.items():
            if not 0.0 < cw.weight <= 1.0:
                raise ConfigError(
                    f"weight for class {name!r} must be in (0, 1], got {cw.weight}"
                )
            if cw.category not in (CATEGORY_SAFETY_CRITICAL, CATEGORY_MAINTENANCE):
                raise ConfigError(f"category for class {name!r} must be 1 or 2")
        self._mapping = dict(mapping)

    @classmethod
    def default(cls) -> "ClassWeightTable":
        return cls({name: ClassWeight(w, c) for name, (w, c) in DEFAULT_CLASS_TABLE.items()})

    def __contains__(self, class_name: str) -> bool:
        return class_name in self._mapping

    def __iter__(self):
        return iter(self._mapping)

    def weight(self, class_name: str) -> float:
        self._require(class_name)
        return self._mapping[class_name].weight

    def category(self, class_name: str) -> int:
        self._require(class_name)
        return self._mapping[class_name].category

    def items(self):
        return self._mapping.items()

    def _require(self, class_name: str) -> None:
        if class_name not in self._mapping:
            raise ConfigError(f"unknown defect class {class_name!r}")

    def to_dict(self) -> dict:
        return {
            name: {"weight": cw.weight, "category": cw.category}
            for name, cw in sorted(self._mapping.items())
        }


@dataclass(frozen=True)
class DefectEvent:
    frame_index: int
    class_name: str
    confidence: float
    category: int
    geo: Optional[GeoPoint] = None
    origin: str = ""


@dataclass(frozen=True)
class Category1Flag:
    frame_index: int
    class_name: str
    confidence: float
    geo: Optional[GeoPoint] = None


def compute_thi(events: Iterable[DefectEvent], weights: ClassWeightTable) -> float:
    """Track health index for one frame: ``1 - min(1, sum(conf * weight))``.

    When a class is reported more than once in the frame, only its strongest
    confidence enters the sum.
    """
    strongest: dict[str, float] = {}
    for event in events:
        if event.class_name not in weights:
            raise ConfigError(f"unknown defect class {event.class_name!r}")
        prev = strongest.get(event.class_name, 0.0)
        strongest[event.class_name] = max(prev, event.confidence)
    total = sum(conf * weights.weight(name) for name, conf in strongest.items())
    return 1.0 - min(1.0, total)


def flag_category1(event: DefectEvent, threshold: float = 0.5) -> Optional[Category1Flag]:
    """Immediate flag for a safety-critical event at or above the threshold.

    Category 2 events never flag; they are handled through segment averaging.
    """
    if event.category != CATEGORY_SAFETY_CRITICAL or event.confidence < threshold:
        return None
    return Category1Flag(
        frame_index=event.frame_index,
        class_name=event.class_name,
        confidence=event.confidence,
        geo=event.geo,
    )


@dataclass(frozen=True)
class FrameHealth:
    frame_index: int
    thi: float
    geo: Optional[GeoPoint] = None


@dataclass
class SegmentHealth:
    segment_id: int
    first_frame: int
    last_frame: int
    frame_count: int
    mean_thi: float
    geo_start: Optional[GeoPoint]
    geo_end: Optional[GeoPoint]
    category1_flags: list[tuple[int, str, float]] = field(default_factory=list)


def aggregate_segments(
    frames: Sequence[FrameHealth],
    events: Iterable[DefectEvent] = (),
    segment_length_m: float = 100.0,
    segment_length_frames: int = 1000,
) -> list[SegmentHealth]:
    """Partition the frame sequence into consecutive segments and average.

    Segments are cut by accumulated haversine distance when any frame carries
    a GPS fix, otherwise by frame count. The trailing partial segment is
    emitted with its actual frame count. Every category-1 event in a segment's
    frame range is listed on that segment.
    """
    frames = list(frames)
    if not frames:
        return []
    by_distance = any(f.geo is not None for f in frames)
    cat1 = sorted(
        ((e.frame_index, e.class_name, e.confidence)
         for e in events if e.category == CATEGORY_SAFETY_CRITICAL),
        key=lambda t: (t[0], t[1]),
    )

    segments: list[SegmentHealth] = []
    members: list[FrameHealth] = []
    distance = 0.0
    prev_geo: Optional[GeoPoint] = None

    def close() -> None:
        nonlocal members, distance, prev_geo
        geos = [f.geo for f in members if f.geo is not None]
        first, last = members[0].frame_index, members[-1].frame_index
        segments.append(
            SegmentHealth(
                segment_id=len(segments),
                first_frame=first,
                last_frame=last,
                frame_count=len(members),
                mean_thi=sum(f.thi for f in members) / len(members),
                geo_start=geos[0] if geos else None,
                geo_end=geos[-1] if geos else None,
                category1_flags=[t for t in cat1 if first <= t[0] <= last],
            )
        )
        members = []
        distance = 0.0

    for fh in frames:
        members.append(fh)
        if by_distance:
            if fh.geo is not None:
                if prev_geo is not None:
                    distance += haversine_m(prev_geo, fh.geo)
                prev_geo = fh.geo
            if distance >= segment_length_m:
                close()
        else:
            if len(members) >= segment_length_frames:
                close()
    if members:
        close()
    return segments


def config_digest(canonical: dict) -> str:
    """Stable sha256 over a canonical (JSON-serializable) config dict."""
    payload = json.dumps(canonical, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class RunResult:
    """Everything one analysis run produced, ready for report emission."""

    config_sha256: str
    frame_count: int
    skipped_frames: int
    integrity_warnings: int
    events: list[DefectEvent] = field(default_factory=list)
    flags: list[Category1Flag] = field(default_factory=list)
    assets: list[AssetRecord] = field(default_factory=list)
    segments: list[SegmentHealth] = field(default_factory=list)
    partial_run: bool = False
    error: Optional[str] = None


def _geo_fields(geo: Optional[GeoPoint]) -> dict:
    return {"lat": geo.lat if geo else None, "lon": geo.lon if geo else None}


def _dump(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n"


def event_record(event: DefectEvent) -> dict:
    rec = {
        "kind": "defect",
        "frame_index": event.frame_index,
        "class_name": event.class_name,
        "confidence": event.confidence,
        "category": event.category,
        "origin": event.origin,
    }
    rec.update(_geo_fields(event.geo))
    return rec


def flag_record(flag: Category1Flag) -> dict:
    rec = {
        "kind": "flag",
        "frame_index": flag.frame_index,
        "class_name": flag.class_name,
        "confidence": flag.confidence,
    }
    rec.update(_geo_fields(flag.geo))
    return rec


def asset_record(asset: AssetRecord) -> dict:
    rec = {
        "kind": "asset",
        "asset_id": asset.asset_id,
        "asset_type": asset.asset_type,
        "first_frame": asset.first_frame,
        "last_frame": asset.last_frame,
        "peak_confidence": asset.peak_confidence,
        "state": asset.state.value if asset.state is not None else None,
    }
    rec.update(_geo_fields(asset.geo))
    return rec


def segment_record(segment: SegmentHealth) -> dict:
    return {
        "kind": "segment",
        "segment_id": segment.segment_id,
        "first_frame": segment.first_frame,
        "last_frame": segment.last_frame,
        "frame_count": segment.frame_count,
        "mean_thi": segment.mean_thi,
        "start_lat": segment.geo_start.lat if segment.geo_start else None,
        "start_lon": segment.geo_start.lon if segment.geo_start else None,
        "end_lat": segment.geo_end.lat if segment.geo_end else None,
        "end_lon": segment.geo_end.lon if segment.geo_end else None,
        "category1_flags": [
            {"frame_index": f, "class_name": c, "confidence": conf}
            for f, c, conf in segment.category1_flags
        ],
    }


def emit_report(result: RunResult, out_dir: str | Path) -> dict[str, Path]:
    """Write the events, segments, and run-manifest files.

    Output is deterministic: fixed record order (defects by frame then class,
    flags by frame, assets by id), sorted JSON keys, no timestamps.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    events_path = out / EVENTS_FILENAME
    with open(events_path, "w", encoding="utf-8") as fh:
        for event in sorted(result.events,
                            key=lambda e: (e.frame_index, e.class_name, e.origin)):
            fh.write(_dump(event_record(event)))
        for flag in sorted(result.flags, key=lambda f: (f.frame_index, f.class_name)):
            fh.write(_dump(flag_record(flag)))
        for asset in sorted(result.assets, key=lambda a: a.asset_id):
            fh.write(_dump(asset_record(asset)))

    segments_path = out / SEGMENTS_FILENAME
    with open(segments_path, "w", encoding="utf-8") as fh:
        for segment in result.segments:
            fh.write(_dump(segment_record(segment)))

    manifest = {
        "config_sha256": result.config_sha256,
        "frame_count": result.frame_count,
        "skipped_frames": result.skipped_frames,
        "integrity_warnings": result.integrity_warnings,
        "event_count": len(result.events),
        "flag_count": len(result.flags),
        "asset_count": len(result.assets),
        "segment_count": len(result.segments),
        "partial_run": result.partial_run,
        "error": result.error,
    }
    manifest_path = out / MANIFEST_FILENAME
    manifest_path.write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return {"events": events_path, "segments": segments_path, "manifest": manifest_path}


def export_geojson(segments: Sequence[SegmentHealth], assets: Sequence[AssetRecord],
                   out_path: str | Path | None = None) -> dict:
    """Build (and optionally write) the network map as a FeatureCollection.

    Segments with GPS extent become LineString features carrying their mean
    health index; assets with a fix become Point features. GeoJSON coordinate
    order is longitude first.
    """
    features = []
    for segment in segments:
        if segment.geo_start is None or segment.geo_end is None:
            continue
        features.append({
            "type": "Feature",
            "geometry": {
                "type": "LineString",
                "coordinates": [
                    [segment.geo_start.lon, segment.geo_start.lat],
                    [segment.geo_end.lon, segment.geo_end.lat],
                ],
            },
            "properties": {
                "segment_id": segment.segment_id,
                "mean_thi": segment.mean_thi,
                "frame_count": segment.frame_count,
                "flags": [
                    {"frame_index": f, "class_name": c, "confidence": conf}
                    for f, c, conf in segment.category1_flags
                ],
            },
        })
    for asset in assets:
        if asset.geo is None:
            continue
        features.append({
            "type": "Feature",
            "geometry": {
                "type": "Point",
                "coordinates": [asset.geo.lon, asset.geo.lat],
            },
            "properties": {
                "asset_type": asset.asset_type,
                "state": asset.state.value if asset.state is not None else None,
                "peak_confidence": asset.peak_confidence,
            },
        })
    if not features:
        raise GeoExportError(
            "no GPS data on any segment or asset; use the frame-index fields of the "
            "events and segments reports instead"
        )
    collection = {"type": "FeatureCollection", "features": features}
    if out_path is not None:
        Path(out_path).write_text(
            json.dumps(collection, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
    return collection


def load_report(report_dir: str | Path) -> tuple[list[SegmentHealth], list[AssetRecord]]:
    """Reload segments and assets from an emitted report directory."""
    report_dir = Path(report_dir)
    segments: list[SegmentHealth] = []
    seg_path = report_dir / SEGMENTS_FILENAME
    if seg_path.exists():
        for line in seg_path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            geo_start = (GeoPoint(rec["start_lat"], rec["start_lon"])
                         if rec.get("start_lat") is not None else None)
            geo_end = (GeoPoint(rec["end_lat"], rec["end_lon"])
                       if rec.get("end_lat") is not None else None)
            segments.append(SegmentHealth(
                segment_id=rec["segment_id"],
                first_frame=rec["first_frame"],
                last_frame=rec["last_frame"],
                frame_count=rec["frame_count"],
                mean_thi=rec["mean_thi"],
                geo_start=geo_start,
                geo_end=geo_end,
                category1_flags=[
                    (f["frame_index"], f["class_name"], f["confidence"])
                    for f in rec.get("category1_flags", [])
                ],
            ))
    assets: list[AssetRecord] = []
    events_path = report_dir / EVENTS_FILENAME
    if events_path.exists():
        for line in events_path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("kind") != "asset":
                continue
            geo = GeoPoint(rec["lat"], rec["lon"]) if rec.get("lat") is not None else None
            assets.append(AssetRecord(
                asset_id=rec["asset_id"],
                asset_type=rec["asset_type"],
                first_frame=rec["first_frame"],
                last_frame=rec["last_frame"],
                geo=geo,
                peak_confidence=rec["peak_confidence"],
                state=SignalState(rec["state"]) if rec.get("state") else None,
            ))
    return segments, assets
