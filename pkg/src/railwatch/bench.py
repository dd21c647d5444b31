"""Throughput harness for the classical scan path.

Measures sustained frames per second of warp + binarize + extract + detect +
state update over pre-rendered HD frames on a single core. Rendering is
excluded from the timing. This is an engineering target for this
implementation, separate from any published model benchmark.

Run directly: ``python -m railwatch.bench``
"""

from __future__ import annotations

import time

from .ingest import Frame
from .railgeom import CalibrationProfile
from .synth import SceneSpec, render_frames
from .trackscan import TrackScanParams, TrackState, scan_frame

DEFAULT_SIZE = (1280, 720)
DEFAULT_FRAMES = 30


def build_bench_frames(
    n_frames: int = DEFAULT_FRAMES,
    size: tuple[int, int] = DEFAULT_SIZE,
    seed: int = 424242,
) -> tuple[CalibrationProfile, list[Frame]]:
    spec = SceneSpec(
        frames=n_frames,
        seed=seed,
        width=size[0],
        height=size[1],
        noise_sigma=2.0,
    )
    calib, frames, _ = render_frames(spec)
    return calib, frames


def measure_fps(
    n_frames: int = DEFAULT_FRAMES,
    size: tuple[int, int] = DEFAULT_SIZE,
    params: TrackScanParams | None = None,
) -> float:
    """Frames per second of the scan loop at the given frame size."""
    params = params or TrackScanParams()
    calib, frames = build_bench_frames(n_frames, size)
    state = TrackState.empty(params)
    # Warm-up pass so one-time numpy setup does not skew the timing.
    scan_frame(frames[0], calib, TrackState.empty(params), params)
    start = time.perf_counter()
    for frame in frames:
        result = scan_frame(frame, calib, state, params)
        state = result.state
    elapsed = time.perf_counter() - start
    return n_frames / elapsed


def main() -> None:
    fps = measure_fps()
    w, h = DEFAULT_SIZE
    print(f"trackscan throughput at {w}x{h}: {fps:.1f} frames/s "
          f"({DEFAULT_FRAMES} frames, single core)")


if __name__ == "__main__":
    main()
