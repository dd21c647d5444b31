"""Command-line entry point.

Commands: analyze (full pipeline), synth (render a synthetic corpus), eval
(score predictions against ground truth), map-export (GeoJSON from a report),
validate-config. Exit codes: 0 success, 1 error; analyze exits 2 when the run
completed but emitted at least one safety-critical flag, so operational
alerting can key off the status alone.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigError, EvalError, GeoExportError, GeometryError
from .detecthub import parse_plugin_arg
from .health import export_geojson, load_report
from .ingest import load_config
from .pipeline import run_analysis
from .synth import evaluate, load_scene_spec, render_scene

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FLAGGED = 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="railwatch",
        description="Track monitoring pipeline for locomotive-camera frame sequences.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="run the full pipeline over a frame source")
    p.add_argument("--frames", required=True,
                   help="image directory or frame manifest file")
    p.add_argument("--config", required=True, help="run configuration JSON file")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--plugins", action="append", default=[],
                   metavar="SPEC",
                   help="extra detector plugin: replay:PATH or exec:CLASSES:COMMAND "
                        "(repeatable)")

    p = sub.add_parser("synth", help="render a synthetic scene corpus")
    p.add_argument("--spec", required=True, help="scene spec JSON file")
    p.add_argument("--out", required=True, help="corpus output directory")

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True,
                   help="report directory or events file with predictions")
    p.add_argument("--truth", required=True, help="ground truth file")
    p.add_argument("--out", help="write the evaluation report JSON here")

    p = sub.add_parser("map-export", help="export a report as GeoJSON")
    p.add_argument("--report", required=True, help="report directory")
    p.add_argument("--out", required=True, help="GeoJSON output path")

    p = sub.add_parser("validate-config", help="check a configuration file")
    p.add_argument("--config", required=True, help="run configuration JSON file")

    return parser


def _cmd_analyze(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    bindings = [parse_plugin_arg(spec) for spec in args.plugins]
    analysis = run_analysis(args.frames, config, args.out,
                            extra_plugin_bindings=bindings)
    r = analysis.result
    print(
        f"analyzed {r.frame_count} frames ({r.skipped_frames} skipped): "
        f"{len(r.events)} events, {len(r.flags)} flags, {len(r.assets)} assets, "
        f"{len(r.segments)} segments -> {analysis.out_dir}"
    )
    return EXIT_FLAGGED if r.flags else EXIT_OK


def _cmd_synth(args: argparse.Namespace) -> int:
    spec = load_scene_spec(args.spec)
    paths = render_scene(spec, args.out)
    print(f"rendered {spec.frames} frames -> {paths['manifest']}")
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace) -> int:
    report = evaluate(args.pred, args.truth)
    if args.out:
        Path(args.out).write_text(
            json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
    print(report.summary())
    return EXIT_OK


def _cmd_map_export(args: argparse.Namespace) -> int:
    segments, assets = load_report(args.report)
    collection = export_geojson(segments, assets, args.out)
    print(f"wrote {len(collection['features'])} features -> {args.out}")
    return EXIT_OK


def _cmd_validate_config(args: argparse.Namespace) -> int:
    load_config(args.config)
    print(f"{args.config}: ok")
    return EXIT_OK


_COMMANDS = {
    "analyze": _cmd_analyze,
    "synth": _cmd_synth,
    "eval": _cmd_eval,
    "map-export": _cmd_map_export,
    "validate-config": _cmd_validate_config,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, GeometryError, GeoExportError, EvalError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
