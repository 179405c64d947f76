"""Evaluation and benchmark harnesses.

Everything here compares two routes to the same answer (pooled vs direct
updates, rolling vs naive roughness, mixture vs Kalman fusion, estimated vs
true DEM) and reports counts, errors and wall times. Output equivalence is
always verified before any timing is reported; wall times are informational
and never asserted.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .detection import DetectConfig, distance_transform, run_detection
from .pyramid import CameraModel, PooledPyramid, PyramidConfig, PyramidMap
from .segmentation import (
    SegConfig,
    compute_roughness_naive,
    compute_roughness_rolling,
    segment,
)
from .synth import FrameData, Terrain

__all__ = [
    "FailureReport",
    "KalmanGrid",
    "OverwriteGrid",
    "SegBenchRow",
    "UpdateBenchReport",
    "bench_segmentation",
    "bench_updates",
    "eval_landing_failures",
    "eval_rmse",
    "fusion_compare",
    "pooled_max_rel_diff",
    "truth_raster",
]


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------


class OverwriteGrid:
    """No-fusion baseline: the last measurement in a cell wins."""

    def __init__(self, resolution: float, size: float, center: tuple[float, float]):
        self.resolution = resolution
        n = int(round(size / resolution))
        self.n = n
        self.origin = (center[0] - size / 2.0, center[1] - size / 2.0)
        self.height = np.full((n, n), np.nan)

    def update_batch(self, points: np.ndarray) -> None:
        cols = np.floor((points[:, 0] - self.origin[0]) / self.resolution).astype(np.int64)
        rows = np.floor((points[:, 1] - self.origin[1]) / self.resolution).astype(np.int64)
        ok = (rows >= 0) & (rows < self.n) & (cols >= 0) & (cols < self.n)
        self.height[rows[ok], cols[ok]] = points[ok, 2]


class KalmanGrid:
    """Per-cell scalar Kalman fusion (precision form) on a single grid."""

    def __init__(self, resolution: float, size: float, center: tuple[float, float]):
        self.resolution = resolution
        n = int(round(size / resolution))
        self.n = n
        self.origin = (center[0] - size / 2.0, center[1] - size / 2.0)
        self.precision = np.zeros((n, n))
        self.weighted = np.zeros((n, n))

    def update_batch(self, points: np.ndarray) -> None:
        cols = np.floor((points[:, 0] - self.origin[0]) / self.resolution).astype(np.int64)
        rows = np.floor((points[:, 1] - self.origin[1]) / self.resolution).astype(np.int64)
        ok = (rows >= 0) & (rows < self.n) & (cols >= 0) & (cols < self.n)
        w = 1.0 / points[ok, 4]
        np.add.at(self.precision, (rows[ok], cols[ok]), w)
        np.add.at(self.weighted, (rows[ok], cols[ok]), w * points[ok, 2])

    @property
    def mean(self) -> np.ndarray:
        return np.where(self.precision > 0, self.weighted / np.maximum(self.precision, 1e-300), np.nan)

    @property
    def variance(self) -> np.ndarray:
        return np.where(self.precision > 0, 1.0 / np.maximum(self.precision, 1e-300), np.nan)


# ---------------------------------------------------------------------------
# DEM accuracy
# ---------------------------------------------------------------------------


def truth_raster(
    terrain: Terrain, origin: tuple[float, float], resolution: float, shape: tuple[int, int]
) -> np.ndarray:
    """Ground-truth heights sampled at the cell centers of an aligned grid."""
    rows, cols = shape
    xs = origin[0] + (np.arange(cols) + 0.5) * resolution
    ys = origin[1] + (np.arange(rows) + 0.5) * resolution
    xg, yg = np.meshgrid(xs, ys)
    return terrain.sample(xg, yg)


def eval_rmse(estimate: np.ndarray, truth: np.ndarray) -> tuple[float, int, int]:
    """RMSE over cells defined in both rasters.

    Returns (rmse, overlap_cells, estimate_empty_cells); rmse is NaN when the
    overlap is empty.
    """
    if estimate.shape != truth.shape:
        raise ValueError(f"raster shapes differ: {estimate.shape} vs {truth.shape}")
    both = np.isfinite(estimate) & np.isfinite(truth)
    n = int(both.sum())
    empty = int(np.size(estimate) - np.isfinite(estimate).sum())
    if n == 0:
        return math.nan, 0, empty
    err = estimate[both] - truth[both]
    return float(np.sqrt(np.mean(err * err))), n, empty


# ---------------------------------------------------------------------------
# update-count benchmark
# ---------------------------------------------------------------------------


@dataclass
class UpdateBenchReport:
    measurements: int
    direct_writes: int
    indirect_update_writes: int
    pooling_fusions: int
    direct_seconds: float
    indirect_seconds: float
    max_rel_diff: float

    @property
    def indirect_total_writes(self) -> int:
        return self.indirect_update_writes + self.pooling_fusions


def pooled_max_rel_diff(a: PooledPyramid, b: PooledPyramid) -> float:
    """Largest relative per-cell difference between two pooled pyramids.

    Raises when the non-empty cell sets differ; compares mean, variance and
    precision sum on the shared cells.
    """
    worst = 0.0
    for layer in range(a.cfg.num_layers):
        fa = a.count[layer] > 0
        fb = b.count[layer] > 0
        if not np.array_equal(fa, fb):
            raise AssertionError(f"layer {layer}: non-empty cell sets differ")
        if not np.array_equal(a.count[layer], b.count[layer]):
            raise AssertionError(f"layer {layer}: measurement counts differ")
        for field_a, field_b in (
            (a.mean[layer], b.mean[layer]),
            (a.variance[layer], b.variance[layer]),
            (a.precision_sum[layer], b.precision_sum[layer]),
        ):
            va, vb = field_a[fa], field_b[fa]
            scale = np.maximum(np.maximum(np.abs(va), np.abs(vb)), 1e-12)
            diff = np.abs(va - vb) / scale
            if diff.size:
                worst = max(worst, float(diff.max()))
    return worst


def bench_updates(
    points: np.ndarray, cfg: PyramidConfig, camera: CameraModel, center=(0.0, 0.0)
) -> UpdateBenchReport:
    """Feed one stream through direct multi-layer updates and through
    single-layer updates plus pooling; verify both pyramids agree, then
    report write counts and times."""
    direct = PyramidMap(cfg, center)
    t0 = time.perf_counter()
    direct.update_batch_direct(points, camera)
    direct_pooled = direct_pyramid_snapshot(direct)
    t_direct = time.perf_counter() - t0

    indirect = PyramidMap(cfg, center)
    t0 = time.perf_counter()
    indirect.update_batch(points, camera)
    update_writes = indirect.cell_writes
    pooled = indirect.pool()
    t_indirect = time.perf_counter() - t0

    diff = pooled_max_rel_diff(pooled, direct_pooled)
    return UpdateBenchReport(
        measurements=int(points.shape[0]),
        direct_writes=direct.cell_writes,
        indirect_update_writes=update_writes,
        pooling_fusions=pooled.fusion_writes,
        direct_seconds=t_direct,
        indirect_seconds=t_indirect,
        max_rel_diff=diff,
    )


def direct_pyramid_snapshot(direct: PyramidMap) -> PooledPyramid:
    """Logical-order view of a directly updated map, for comparisons."""
    return PooledPyramid(
        direct.cfg,
        direct.origin,
        [direct.logical_raster(l, "mean") for l in range(direct.cfg.num_layers)],
        [direct.logical_raster(l, "variance") for l in range(direct.cfg.num_layers)],
        [direct.logical_raster(l, "precision_sum") for l in range(direct.cfg.num_layers)],
        [direct.logical_raster(l, "count") for l in range(direct.cfg.num_layers)],
    )


# ---------------------------------------------------------------------------
# segmentation benchmark
# ---------------------------------------------------------------------------


@dataclass
class SegBenchRow:
    size: int
    radius: int
    naive_reads: int
    rolling_reads: int
    naive_seconds: float
    rolling_seconds: float
    equal: bool


def bench_segmentation(
    sizes: list[int], radius: int = 10, seed: int = 0, smooth: bool = True
) -> list[SegBenchRow]:
    """Time the naive vs rolling roughness scan on random rasters, asserting
    output equality first."""
    rng = np.random.default_rng(seed)
    rows = []
    for size in sizes:
        h = rng.standard_normal((size, size))
        if smooth:
            h = ndimage.gaussian_filter(h, sigma=radius / 2.0)
        t0 = time.perf_counter()
        out_naive, reads_naive = compute_roughness_naive(h, radius)
        t_naive = time.perf_counter() - t0
        t0 = time.perf_counter()
        out_roll, reads_roll = compute_roughness_rolling(h, radius)
        t_roll = time.perf_counter() - t0
        equal = np.array_equal(out_naive, out_roll, equal_nan=True)
        if not equal:
            raise AssertionError(f"rolling roughness diverged from naive at size {size}")
        rows.append(
            SegBenchRow(size, radius, reads_naive, reads_roll, t_naive, t_roll, equal)
        )
    return rows


# ---------------------------------------------------------------------------
# fusion comparison
# ---------------------------------------------------------------------------


@dataclass
class FusionCompareReport:
    mean_abs_diff_max: float
    omg_variance: np.ndarray
    kalman_variance: np.ndarray
    cells: int


def fusion_compare(
    points: np.ndarray, resolution: float, size: float, center=(0.0, 0.0)
) -> FusionCompareReport:
    """Fuse one stream into a mixture grid and a Kalman grid at the same
    resolution; the means must agree, the mixture variance is never below the
    Kalman variance."""
    cfg = PyramidConfig(num_layers=1, base_resolution=resolution, map_size=size,
                        first_measurement_inflation=1.0)
    camera = CameraModel()
    omg = PyramidMap(cfg, center)
    omg.update_batch(points, camera)
    pooled = omg.pool()
    kalman = KalmanGrid(resolution, size, center)
    kalman.update_batch(points)

    omg_mean = pooled.height_raster(0)
    both = np.isfinite(omg_mean) & np.isfinite(kalman.mean)
    diff = np.abs(omg_mean[both] - kalman.mean[both])
    scale = np.maximum(np.abs(kalman.mean[both]), 1.0)
    return FusionCompareReport(
        mean_abs_diff_max=float((diff / scale).max()) if diff.size else 0.0,
        omg_variance=pooled.variance_raster(0),
        kalman_variance=kalman.variance,
        cells=int(both.sum()),
    )


# ---------------------------------------------------------------------------
# landing failure counting
# ---------------------------------------------------------------------------


@dataclass
class FailureReport:
    resolution: float
    method: str
    selections: int
    rejections: int
    failures: int
    failures_with_margin: int


def _dt_max_site(maps, dist, min_distance) -> tuple[float, float] | None:
    """Plain distance-transform maximum (the single-peak baseline)."""
    gmax = float(dist.max(initial=0.0))
    if gmax < min_distance or gmax <= 0.0:
        return None
    row, col = np.unravel_index(int(np.argmax(dist)), dist.shape)
    return (
        maps.origin[0] + (col + 0.5) * maps.resolution,
        maps.origin[1] + (row + 0.5) * maps.resolution,
    )


def eval_landing_failures(
    frames: list[FrameData],
    terrain: Terrain,
    resolutions: list[float],
    map_size: float,
    camera: CameraModel,
    seg_cfg: SegConfig,
    det_cfg: DetectConfig,
    num_layers: int = 3,
    first_measurement_inflation: float = 25.0,
) -> list[FailureReport]:
    """Continuous landing selection over a flight at several resolutions,
    with the plain distance-transform maximum and the full shifted-peaks
    method; a selection fails when it lands on the ground-truth rock mask.

    ``failures_with_margin`` additionally counts selections within one cell
    of a rock.
    """
    reports = []
    for res in resolutions:
        cfg = PyramidConfig(
            num_layers=num_layers,
            base_resolution=res,
            map_size=map_size,
            first_measurement_inflation=first_measurement_inflation,
        )
        pyramid = PyramidMap(cfg, center=(frames[0].camera_x, frames[0].camera_y))
        counters = {m: [0, 0, 0, 0] for m in ("dt_max", "shifted_peaks")}  # sel, rej, fail, margin
        for frame in frames:
            pyramid.shift_to((frame.camera_x, frame.camera_y))
            pyramid.update_batch(frame.points, camera)
            pooled = pyramid.pool()
            maps = segment(pooled, seg_cfg)
            dist = distance_transform(maps.landing_mask, maps.resolution)

            def check(site, key):
                sel, rej, fail, margin = counters[key]
                if site is None:
                    counters[key] = [sel, rej + 1, fail, margin]
                    return
                on_rock = bool(terrain.rock_mask_at(site[0], site[1]))
                near = on_rock or any(
                    bool(terrain.rock_mask_at(site[0] + dx * res, site[1] + dy * res))
                    for dx in (-1, 0, 1)
                    for dy in (-1, 0, 1)
                )
                counters[key] = [sel + 1, rej, fail + int(on_rock), margin + int(near)]

            check(_dt_max_site(maps, dist, det_cfg.min_distance), "dt_max")
            det = run_detection(maps, pooled, det_cfg, seg_cfg.landing_radius)
            if det.selected is None:
                site = None
            else:
                cand = det.candidates[det.selected]
                site = (cand.shifted_x, cand.shifted_y)
            check(site, "shifted_peaks")
        for method, (sel, rej, fail, margin) in counters.items():
            reports.append(FailureReport(res, method, sel, rej, fail, margin))
    return reports
