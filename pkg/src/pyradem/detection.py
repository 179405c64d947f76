"""Landing site selection on top of the segmentation products.

Pipeline: chamfer distance transform of the landing mask -> non-maximum
suppressed peaks -> per-peak mean shift over a roughness/clearance/
uncertainty feature kernel -> pick the candidate whose landing-area fused
state has the smallest variance, or reject when no peak clears the minimum
hazard distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import ndimage

from .fusion import COUNT_MAX, CellState
from .pyramid import PooledPyramid
from .segmentation import SafetyMaps

__all__ = [
    "DetectConfig",
    "DetectionResult",
    "LandingCandidate",
    "detect_peaks",
    "distance_transform",
    "euclidean_distance_exact",
    "fit_landing_area",
    "mean_shift",
    "run_detection",
    "select_site",
]


@dataclass(frozen=True)
class DetectConfig:
    max_peaks: int = 5
    shift_iterations: int = 5
    weight_roughness: float = 100.0
    weight_distance: float = 10.0
    weight_uncertainty: float = 100.0
    peak_factor: float = 0.5
    min_distance: float = 0.5  # meters; rejection floor, defaults to the landing radius

    def __post_init__(self) -> None:
        if self.max_peaks < 1:
            raise ValueError("max_peaks must be >= 1")
        if self.shift_iterations < 0:
            raise ValueError("shift_iterations must be >= 0")
        if min(self.weight_roughness, self.weight_distance, self.weight_uncertainty) < 0:
            raise ValueError("kernel weights must be >= 0")
        if not (0.0 < self.peak_factor <= 1.0):
            raise ValueError("peak_factor must be in (0, 1]")


@dataclass
class LandingCandidate:
    peak_row: int
    peak_col: int
    clearance: float  # meters, distance-transform value at the peak
    shifted_x: float = math.nan
    shifted_y: float = math.nan
    area_fit: CellState | None = None
    degenerate: bool = False

    @property
    def area_variance(self) -> float:
        return self.area_fit.variance if self.area_fit is not None else math.nan


@dataclass
class DetectionResult:
    candidates: list[LandingCandidate] = field(default_factory=list)
    selected: int | None = None
    distance: np.ndarray | None = None

    @property
    def rejected(self) -> bool:
        return self.selected is None


# ---------------------------------------------------------------------------
# distance transform
# ---------------------------------------------------------------------------

_CHAMFER_BIG = np.int32(2**30)


@njit(cache=True)
def _chamfer_pass(g):  # pragma: no cover - jitted
    rows, cols = g.shape
    for i in range(1, rows):
        for j in range(1, cols - 1):
            best = g[i, j]
            if g[i, j - 1] + 3 < best:
                best = g[i, j - 1] + 3
            if g[i - 1, j] + 3 < best:
                best = g[i - 1, j] + 3
            if g[i - 1, j - 1] + 4 < best:
                best = g[i - 1, j - 1] + 4
            if g[i - 1, j + 1] + 4 < best:
                best = g[i - 1, j + 1] + 4
            g[i, j] = best


def distance_transform(safe_mask: np.ndarray, resolution: float) -> np.ndarray:
    """Chamfer 3-4 distance (meters) to the nearest unsafe cell.

    Unsafe or undefined cells read 0; the map boundary counts as a hazard.
    The integer weights 3 (axial) and 4 (diagonal) are normalized by 3 and
    scaled by the cell size, which approximates the Euclidean distance within
    about 6 percent.
    """
    safe = np.asarray(safe_mask, bool)
    g = np.where(safe, _CHAMFER_BIG, np.int32(0)).astype(np.int32)
    # one-cell hazard ring: the world outside the map is unsafe
    g = np.pad(g, 1, constant_values=0)
    _chamfer_pass(g)
    _chamfer_pass(g[::-1, ::-1])
    out = g[1:-1, 1:-1].astype(np.float64) * (resolution / 3.0)
    return out


def euclidean_distance_exact(safe_mask: np.ndarray, resolution: float) -> np.ndarray:
    """Exact Euclidean distance to the nearest unsafe cell (test oracle)."""
    safe = np.pad(np.asarray(safe_mask, bool), 1, constant_values=False)
    d = ndimage.distance_transform_edt(safe)
    return d[1:-1, 1:-1] * resolution


# ---------------------------------------------------------------------------
# peaks
# ---------------------------------------------------------------------------


def detect_peaks(
    distance: np.ndarray, cfg: DetectConfig, resolution: float, landing_radius: float
) -> list[LandingCandidate]:
    """Non-maximum-suppressed distance peaks, strongest first.

    The suppression window is a square of side 2*ceil(landing_radius/res)+1.
    Peaks below ``peak_factor`` times the strongest peak are discarded and at
    most ``max_peaks`` survive. Ties break row-major for determinism.
    """
    gmax = float(distance.max(initial=0.0))
    if gmax <= 0.0:
        return []
    half = max(1, int(math.ceil(landing_radius / resolution)))
    local_max = distance == ndimage.maximum_filter(
        distance, size=2 * half + 1, mode="constant", cval=0.0
    )
    cand = local_max & (distance >= cfg.peak_factor * gmax) & (distance > 0)
    rows, cols = np.nonzero(cand)
    values = distance[rows, cols]
    order = np.lexsort((cols, rows, -values))
    kept: list[LandingCandidate] = []
    for k in order:
        r, c, v = int(rows[k]), int(cols[k]), float(values[k])
        if any(abs(p.peak_row - r) <= half and abs(p.peak_col - c) <= half for p in kept):
            continue
        kept.append(LandingCandidate(r, c, v))
        if len(kept) >= cfg.max_peaks:
            break
    return kept


# ---------------------------------------------------------------------------
# mean shift
# ---------------------------------------------------------------------------


def mean_shift(
    start_xy: tuple[float, float],
    maps: SafetyMaps,
    distance_norm: np.ndarray,
    cfg: DetectConfig,
    landing_radius: float,
) -> tuple[float, float, bool]:
    """Kernel-weighted centroid iteration over the cells within the landing
    radius of the current location.

    Feature vector per cell: f = [roughness, 1 - normalized distance,
    variance]; kernel K = exp(-f^T diag(w_r, w_d, w_s) f). Cells with
    undefined features are excluded from the sample set; the distance raster
    is held fixed across iterations. Returns (x, y, degenerate); degenerate
    means an iteration saw no usable cell and the location froze there.
    """
    res = maps.resolution
    ox, oy = maps.origin
    rough = maps.feature_roughness
    sigma = maps.uncertainty
    n_rows, n_cols = rough.shape
    x_min, x_max = ox, ox + n_cols * res
    y_min, y_max = oy, oy + n_rows * res

    ux = min(max(float(start_xy[0]), x_min), x_max)
    uy = min(max(float(start_xy[1]), y_min), y_max)
    degenerate = False
    reach = int(math.ceil(landing_radius / res)) + 1
    for _ in range(cfg.shift_iterations):
        row_c = int(math.floor((uy - oy) / res))
        col_c = int(math.floor((ux - ox) / res))
        r0, r1 = max(0, row_c - reach), min(n_rows, row_c + reach + 1)
        c0, c1 = max(0, col_c - reach), min(n_cols, col_c + reach + 1)
        if r0 >= r1 or c0 >= c1:
            return ux, uy, True
        rr, cc = np.meshgrid(np.arange(r0, r1), np.arange(c0, c1), indexing="ij")
        px = ox + (cc + 0.5) * res
        py = oy + (rr + 0.5) * res
        inside = (px - ux) ** 2 + (py - uy) ** 2 <= landing_radius * landing_radius
        r_f = rough[r0:r1, c0:c1]
        s_f = sigma[r0:r1, c0:c1]
        d_f = distance_norm[r0:r1, c0:c1]
        usable = inside & np.isfinite(r_f) & np.isfinite(s_f)
        if not usable.any():
            return ux, uy, True
        q = (
            cfg.weight_roughness * r_f[usable] ** 2
            + cfg.weight_distance * (1.0 - d_f[usable]) ** 2
            + cfg.weight_uncertainty * s_f[usable] ** 2
        )
        w = np.exp(-(q - q.min()))  # shift cancels in the ratio; avoids underflow
        denom = w.sum()
        ux = float(np.sum(w * px[usable]) / denom)
        uy = float(np.sum(w * py[usable]) / denom)
        ux = min(max(ux, x_min), x_max)
        uy = min(max(uy, y_min), y_max)
    return ux, uy, degenerate


# ---------------------------------------------------------------------------
# candidate ranking
# ---------------------------------------------------------------------------


def fit_landing_area(
    pooled: PooledPyramid, x: float, y: float, landing_radius: float
) -> CellState | None:
    """Fuse all non-empty finest-layer cells within the landing radius of
    (x, y) into one state; None when the area holds no data."""
    res = pooled.cfg.resolution(0)
    ox, oy = pooled.origin
    n = pooled.cfg.cells_per_side(0)
    reach = int(math.ceil(landing_radius / res)) + 1
    row_c = int(math.floor((y - oy) / res))
    col_c = int(math.floor((x - ox) / res))
    r0, r1 = max(0, row_c - reach), min(n, row_c + reach + 1)
    c0, c1 = max(0, col_c - reach), min(n, col_c + reach + 1)
    if r0 >= r1 or c0 >= c1:
        return None
    rr, cc = np.meshgrid(np.arange(r0, r1), np.arange(c0, c1), indexing="ij")
    px = ox + (cc + 0.5) * res
    py = oy + (rr + 0.5) * res
    inside = (px - x) ** 2 + (py - y) ** 2 <= landing_radius * landing_radius
    s_arr = pooled.precision_sum[0][r0:r1, c0:c1]
    use = inside & (pooled.count[0][r0:r1, c0:c1] > 0)
    if not use.any():
        return None
    s_sel = s_arr[use]
    mu_sel = pooled.mean[0][r0:r1, c0:c1][use]
    var_sel = pooled.variance[0][r0:r1, c0:c1][use]
    s = float(s_sel.sum())
    mean = float(np.sum(s_sel * mu_sel) / s)
    moment = float(np.sum(s_sel * (var_sel + mu_sel * mu_sel)))
    count = min(int(pooled.count[0][r0:r1, c0:c1][use].astype(np.int64).sum()), COUNT_MAX)
    return CellState(mean, moment / s - mean * mean, s, count)


def select_site(
    candidates: list[LandingCandidate],
    maps: SafetyMaps,
    pooled: PooledPyramid,
    cfg: DetectConfig,
    landing_radius: float,
) -> int | None:
    """Fill in each candidate's landing-area fit and return the index of the
    eligible candidate with the smallest area variance, or None (rejection)
    when no candidate has clearance >= min_distance or data under it."""
    best: int | None = None
    for idx, cand in enumerate(candidates):
        fit = fit_landing_area(pooled, cand.shifted_x, cand.shifted_y, landing_radius)
        cand.area_fit = fit
        if fit is None:
            cand.degenerate = True
            continue
        if cand.clearance < cfg.min_distance:
            continue
        if best is None or fit.variance < candidates[best].area_fit.variance:
            best = idx
    return best


def run_detection(
    maps: SafetyMaps, pooled: PooledPyramid, cfg: DetectConfig, landing_radius: float
) -> DetectionResult:
    """Distance transform -> peaks -> mean shift -> ranking, end to end."""
    dist = distance_transform(maps.landing_mask, maps.resolution)
    result = DetectionResult(distance=dist)
    gmax = float(dist.max(initial=0.0))
    if gmax <= 0.0:
        return result
    result.candidates = detect_peaks(dist, cfg, maps.resolution, landing_radius)
    if not result.candidates:
        return result
    dist_norm = dist / gmax
    for cand in result.candidates:
        start = (
            maps.origin[0] + (cand.peak_col + 0.5) * maps.resolution,
            maps.origin[1] + (cand.peak_row + 0.5) * maps.resolution,
        )
        cand.shifted_x, cand.shifted_y, cand.degenerate = mean_shift(
            start, maps, dist_norm, cfg, landing_radius
        )
    result.selected = select_site(result.candidates, maps, pooled, cfg, landing_radius)
    return result
