"""Per-frame orchestration: shift -> update -> (inflate) -> pool -> segment
-> detect.

Map updates always run on the calling thread. With ``threads=2`` the pooled
snapshot of each frame is handed to a single worker thread that runs
segmentation and detection while the next frame is being fused, mirroring an
on-board real-time/backend split. Results are collected in frame order, so
the outputs are identical in both threading modes.
"""

from __future__ import annotations

from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .config import RunConfig
from .detection import DetectionResult, run_detection
from .pyramid import PooledPyramid, PyramidMap
from .segmentation import SafetyMaps, segment
from .synth import FrameData

__all__ = ["FrameOutput", "RunSummary", "run_stream"]


@dataclass
class FrameOutput:
    frame_id: int
    detection: DetectionResult
    maps: SafetyMaps
    pooled: PooledPyramid


@dataclass
class RunSummary:
    frames: int = 0
    measurements: int = 0
    dropped_out_of_bounds: int = 0
    dropped_invalid: int = 0
    selections: int = 0
    rejections: int = 0
    # (frame_id, detection) per frame; rasters are kept for the final frame only
    records: list[tuple[int, DetectionResult]] = field(default_factory=list)
    final: FrameOutput | None = None


def _analyze(frame_id: int, snapshot: PyramidMap, cfg: RunConfig) -> FrameOutput:
    pooled = snapshot.pool()
    maps = segment(pooled, cfg.seg)
    detection = run_detection(maps, pooled, cfg.detect, cfg.seg.landing_radius)
    return FrameOutput(frame_id, detection, maps, pooled)


def run_stream(
    frames: Iterable[FrameData],
    cfg: RunConfig,
    on_frame: Callable[[FrameOutput], None] | None = None,
) -> RunSummary:
    """Run the full pipeline over a frame stream.

    ``on_frame`` is invoked in frame order (regardless of threading mode)
    after each frame's analysis completes. Only the final frame's rasters are
    retained on the summary; earlier distance rasters are released as the run
    progresses.
    """
    summary = RunSummary()
    pyramid: PyramidMap | None = None
    executor = ThreadPoolExecutor(max_workers=1) if cfg.threads == 2 else None
    pending: list[Future] = []

    def drain(future: Future) -> None:
        output: FrameOutput = future.result()
        if summary.records:
            summary.records[-1][1].distance = None  # free the superseded raster
        summary.records.append((output.frame_id, output.detection))
        summary.final = output
        if output.detection.selected is None:
            summary.rejections += 1
        else:
            summary.selections += 1
        if on_frame is not None:
            on_frame(output)

    try:
        for frame in frames:
            if pyramid is None:
                pyramid = PyramidMap(cfg.pyramid, center=(frame.camera_x, frame.camera_y))
            pyramid.shift_to((frame.camera_x, frame.camera_y))
            pyramid.update_batch(np.asarray(frame.points, np.float64), cfg.camera)
            if cfg.inflation_enabled:
                pyramid.apply_inflation(cfg.inflation_k)
            summary.frames += 1
            summary.measurements += int(frame.points.shape[0])

            if executor is None:
                immediate: Future = Future()
                immediate.set_result(_analyze(frame.frame_id, pyramid, cfg))
                drain(immediate)
            else:
                pending.append(executor.submit(_analyze, frame.frame_id, pyramid.snapshot(), cfg))
                # keep at most one analysis in flight behind the mapper
                while len(pending) > 1:
                    drain(pending.pop(0))
        for future in pending:
            drain(future)
    finally:
        if executor is not None:
            executor.shutdown(wait=True)

    if pyramid is not None:
        summary.dropped_out_of_bounds = pyramid.dropped_out_of_bounds
        summary.dropped_invalid = pyramid.dropped_invalid
    return summary
