"""Coarse-to-fine hazard segmentation.

The top layer is checked for slope (plane fit over a circular neighborhood)
and roughness; lower layers re-check roughness only, and only where the
coarser layer passed. A cell of the final mask is safe when the maximum
roughness within the landing radius stays below the threshold.

Roughness is max minus min height within a rasterized disk. Two
implementations are provided: a brute-force scan (the oracle) and a rolling
variant that stores, per column of the current row band, the extrema of the
last processed disk together with their locations. When a stored location
still falls inside the current disk, only the uncovered rim sub-regions need
scanning. Both produce bit-identical rasters; the rolling one just reads
fewer cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit
from scipy import ndimage

from .pyramid import PooledPyramid

__all__ = [
    "SafetyMaps",
    "SegConfig",
    "compute_roughness_naive",
    "compute_roughness_rolling",
    "compute_slope_top",
    "segment",
]


@dataclass(frozen=True)
class SegConfig:
    roughness_threshold: float = 0.1
    landing_radius: float = 0.5
    roughness_search_radius: float = 0.5
    slope_threshold: float = 10.0  # degrees

    def __post_init__(self) -> None:
        if min(
            self.roughness_threshold,
            self.landing_radius,
            self.roughness_search_radius,
            self.slope_threshold,
        ) <= 0:
            raise ValueError(f"all segmentation parameters must be > 0: {self}")


@dataclass
class SafetyMaps:
    """Segmentation products at the finest resolution (plus per-layer rasters).

    ``landing_mask`` is True where landing is safe; ``mask_known`` is False
    where the verdict came from missing data rather than a failed check.
    ``feature_roughness`` fills finest-layer holes with the value of the
    closest coarser layer so the detector can see hazards inside regions the
    cascade culled early.
    """

    landing_mask: np.ndarray
    mask_known: np.ndarray
    roughness: list[np.ndarray]
    feature_roughness: np.ndarray
    slope: np.ndarray
    uncertainty: np.ndarray
    resolution: float
    origin: tuple[float, float]


# ---------------------------------------------------------------------------
# disk offset tables
# ---------------------------------------------------------------------------


@lru_cache(maxsize=32)
def _disk_tables(radius: int) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Row-major offset lists for the disk and its rim sub-regions.

    ``bottom``: cells of the disk not covered by the disk one row up;
    ``right``: not covered by the disk one column left; ``corner``: covered
    by neither; ``bottom_right``: union of bottom and right.
    """
    r2 = radius * radius
    full, bottom, right, corner, union = [], [], [], [], []
    for di in range(-radius, radius + 1):
        for dj in range(-radius, radius + 1):
            if di * di + dj * dj > r2:
                continue
            full.append((di, dj))
            b = (di + 1) ** 2 + dj * dj > r2
            rr = di * di + (dj + 1) ** 2 > r2
            if b:
                bottom.append((di, dj))
            if rr:
                right.append((di, dj))
            if b and rr:
                corner.append((di, dj))
            if b or rr:
                union.append((di, dj))

    def pack(pairs):
        a = np.asarray(pairs, np.int64).reshape(-1, 2)
        return np.ascontiguousarray(a[:, 0]), np.ascontiguousarray(a[:, 1])

    return {
        "full": pack(full),
        "bottom": pack(bottom),
        "right": pack(right),
        "corner": pack(corner),
        "bottom_right": pack(union),
    }


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def _naive_kernel(h, active, radius, d_i, d_j, out):  # pragma: no cover - jitted
    rows, cols = h.shape
    reads = 0
    for i in range(rows):
        for j in range(cols):
            if active[i, j] == 0:
                out[i, j] = np.nan
                continue
            if i < radius or i >= rows - radius or j < radius or j >= cols - radius:
                out[i, j] = np.nan
                continue
            mx = -np.inf
            mn = np.inf
            ok = True
            for k in range(d_i.size):
                v = h[i + d_i[k], j + d_j[k]]
                reads += 1
                if not v == v:  # NaN: hole inside the disk
                    ok = False
                    break
                if v > mx:
                    mx = v
                if v < mn:
                    mn = v
            out[i, j] = mx - mn if ok else np.nan
    return reads


@njit(cache=True)
def _rolling_kernel(
    h,
    active,
    radius,
    full_i,
    full_j,
    bot_i,
    bot_j,
    rgt_i,
    rgt_j,
    cor_i,
    cor_j,
    uni_i,
    uni_j,
    out,
):  # pragma: no cover - jitted
    rows, cols = h.shape
    r2 = radius * radius
    # per-column buffer: extrema of the disk of the last processed cell
    b_row = np.full(cols, -2, np.int64)  # row of the cell the entry belongs to
    b_clean = np.zeros(cols, np.uint8)  # 1 when that disk had no holes
    b_maxv = np.zeros(cols, np.float64)
    b_maxr = np.zeros(cols, np.int64)
    b_maxc = np.zeros(cols, np.int64)
    b_minv = np.zeros(cols, np.float64)
    b_minr = np.zeros(cols, np.int64)
    b_minc = np.zeros(cols, np.int64)
    reads = 0
    for i in range(rows):
        for j in range(cols):
            if active[i, j] == 0:
                out[i, j] = np.nan
                b_row[j] = i
                b_clean[j] = 0
                continue
            if i < radius or i >= rows - radius or j < radius or j >= cols - radius:
                out[i, j] = np.nan
                b_row[j] = i
                b_clean[j] = 0
                continue

            top_ok = b_row[j] == i - 1 and b_clean[j] == 1
            left_ok = j >= 1 and b_row[j - 1] == i and b_clean[j - 1] == 1
            t_max = (
                top_ok
                and (b_maxr[j] - i) ** 2 + (b_maxc[j] - j) ** 2 <= r2
            )
            t_min = (
                top_ok
                and (b_minr[j] - i) ** 2 + (b_minc[j] - j) ** 2 <= r2
            )
            l_max = (
                left_ok
                and (b_maxr[j - 1] - i) ** 2 + (b_maxc[j - 1] - j) ** 2 <= r2
            )
            l_min = (
                left_ok
                and (b_minr[j - 1] - i) ** 2 + (b_minc[j - 1] - j) ** 2 <= r2
            )

            # sub-region still to scan: 0 corner, 1 bottom, 2 right, 3 full
            if t_max and l_max:
                set_max = 0
            elif t_max:
                set_max = 1
            elif l_max:
                set_max = 2
            else:
                set_max = 3
            if t_min and l_min:
                set_min = 0
            elif t_min:
                set_min = 1
            elif l_min:
                set_min = 2
            else:
                set_min = 3
            if set_max == 3 or set_min == 3:
                sel_i, sel_j = full_i, full_j
            elif set_max == set_min:
                if set_max == 0:
                    sel_i, sel_j = cor_i, cor_j
                elif set_max == 1:
                    sel_i, sel_j = bot_i, bot_j
                else:
                    sel_i, sel_j = rgt_i, rgt_j
            elif set_max == 0 or set_min == 0:
                k = set_max if set_min == 0 else set_min
                if k == 1:
                    sel_i, sel_j = bot_i, bot_j
                else:
                    sel_i, sel_j = rgt_i, rgt_j
            else:
                sel_i, sel_j = uni_i, uni_j

            # seed candidates from the reusable stored extrema
            mx = -np.inf
            mxr = -1
            mxc = -1
            mn = np.inf
            mnr = -1
            mnc = -1
            if t_max:
                mx, mxr, mxc = b_maxv[j], b_maxr[j], b_maxc[j]
            if l_max and b_maxv[j - 1] >= mx:
                mx, mxr, mxc = b_maxv[j - 1], b_maxr[j - 1], b_maxc[j - 1]
            if t_min:
                mn, mnr, mnc = b_minv[j], b_minr[j], b_minc[j]
            if l_min and b_minv[j - 1] <= mn:
                mn, mnr, mnc = b_minv[j - 1], b_minr[j - 1], b_minc[j - 1]

            ok = True
            for k in range(sel_i.size):
                rr = i + sel_i[k]
                cc = j + sel_j[k]
                v = h[rr, cc]
                reads += 1
                if not v == v:
                    ok = False
                    break
                # >= / <= so ties prefer the latest (bottom-right-most) cell,
                # which keeps stored locations reusable on flat terrain
                if v >= mx:
                    mx, mxr, mxc = v, rr, cc
                if v <= mn:
                    mn, mnr, mnc = v, rr, cc
            if not ok:
                out[i, j] = np.nan
                b_row[j] = i
                b_clean[j] = 0
                continue
            out[i, j] = mx - mn
            b_row[j] = i
            b_clean[j] = 1
            b_maxv[j] = mx
            b_maxr[j] = mxr
            b_maxc[j] = mxc
            b_minv[j] = mn
            b_minr[j] = mnr
            b_minc[j] = mnc
    return reads


def _prepare(heights: np.ndarray, radius: int, active: np.ndarray | None):
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    h = np.ascontiguousarray(heights, np.float64)
    if active is None:
        act = np.ones(h.shape, np.uint8)
    else:
        act = np.ascontiguousarray(active.astype(np.uint8))
        if act.shape != h.shape:
            raise ValueError("active mask shape mismatch")
    return h, act


def compute_roughness_naive(
    heights: np.ndarray, radius: int, active: np.ndarray | None = None
) -> tuple[np.ndarray, int]:
    """Brute-force roughness: full disk scan per cell (the oracle).

    A cell is undefined (NaN) when its disk leaves the raster, contains a
    hole, or the cell is masked out by ``active``. Returns the raster and the
    number of height reads performed.
    """
    h, act = _prepare(heights, radius, active)
    d_i, d_j = _disk_tables(radius)["full"]
    out = np.empty(h.shape, np.float64)
    reads = _naive_kernel(h, act, radius, d_i, d_j, out)
    return out, int(reads)


def compute_roughness_rolling(
    heights: np.ndarray, radius: int, active: np.ndarray | None = None
) -> tuple[np.ndarray, int]:
    """Rolling-buffer roughness: bit-identical to the naive scan, fewer reads.

    Reuses the stored min/max (and their locations) of the top and left
    neighbors' disks whenever those locations still fall inside the current
    disk, so only the uncovered rim needs scanning.
    """
    h, act = _prepare(heights, radius, active)
    t = _disk_tables(radius)
    out = np.empty(h.shape, np.float64)
    reads = _rolling_kernel(
        h,
        act,
        radius,
        *t["full"],
        *t["bottom"],
        *t["right"],
        *t["corner"],
        *t["bottom_right"],
        out,
    )
    return out, int(reads)


# ---------------------------------------------------------------------------
# slope
# ---------------------------------------------------------------------------


def compute_slope_top(
    top_heights: np.ndarray, resolution: float, landing_radius: float
) -> np.ndarray:
    """Per-cell slope (degrees) of the least-squares plane fitted to the
    defined heights within the circular landing-radius neighborhood.

    The neighborhood never collapses below the immediate cell ring (radius of
    one cell), so coarse layers whose cells exceed the landing radius still
    get a usable fit. Cells with fewer than 3 defined neighbors, or a
    degenerate (collinear) fit, are NaN.
    """
    rc = max(landing_radius / resolution, 1.0)
    ri = int(math.floor(rc))
    dj, di = np.meshgrid(np.arange(-ri, ri + 1), np.arange(-ri, ri + 1))
    disk = (di * di + dj * dj) <= rc * rc
    kx = np.where(disk, dj * resolution, 0.0)
    ky = np.where(disk, di * resolution, 0.0)
    k1 = disk.astype(np.float64)

    defined = np.isfinite(top_heights)
    mask = defined.astype(np.float64)
    z = np.where(defined, top_heights, 0.0)

    def corr(img, kern):
        return ndimage.correlate(img, kern, mode="constant", cval=0.0)

    n = corr(mask, k1)
    sx = corr(mask, kx)
    sy = corr(mask, ky)
    sxx = corr(mask, kx * kx)
    sxy = corr(mask, kx * ky)
    syy = corr(mask, ky * ky)
    sz = corr(z, k1)
    sxz = corr(z, kx)
    syz = corr(z, ky)

    # solve [[sxx sxy sx] [sxy syy sy] [sx sy n]] [a b c]^T = [sxz syz sz]
    det = (
        sxx * (syy * n - sy * sy)
        - sxy * (sxy * n - sy * sx)
        + sx * (sxy * sy - syy * sx)
    )
    scale = np.maximum(n, 1.0) * resolution**4
    good = (n >= 3) & (np.abs(det) > 1e-9 * scale)
    det_safe = np.where(good, det, 1.0)
    a = (
        sxz * (syy * n - sy * sy)
        - sxy * (syz * n - sy * sz)
        + sx * (syz * sy - syy * sz)
    ) / det_safe
    b = (
        sxx * (syz * n - sz * sy)
        - sxz * (sxy * n - sy * sx)
        + sx * (sxy * sz - syz * sx)
    ) / det_safe
    slope = np.degrees(np.arctan(np.hypot(a, b)))
    return np.where(good, slope, np.nan)


# ---------------------------------------------------------------------------
# cascade
# ---------------------------------------------------------------------------


def _expand2(a: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(a, 2, axis=0), 2, axis=1)


def _landing_disk(radius_cells: int) -> np.ndarray:
    r = radius_cells
    dj, di = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1))
    return (di * di + dj * dj) <= r * r


def segment(pooled: PooledPyramid, cfg: SegConfig) -> SafetyMaps:
    """Run the coarse-to-fine cascade on a pooled pyramid snapshot."""
    pcfg = pooled.cfg
    top = pcfg.num_layers - 1
    heights = [pooled.height_raster(l) for l in range(pcfg.num_layers)]
    roughness: list[np.ndarray | None] = [None] * pcfg.num_layers

    def cells_radius(layer: int) -> int:
        return max(1, int(math.ceil(cfg.roughness_search_radius / pcfg.resolution(layer))))

    slope = compute_slope_top(heights[top], pcfg.resolution(top), cfg.landing_radius)
    r_top, _ = compute_roughness_rolling(heights[top], cells_radius(top))
    roughness[top] = r_top

    rough_fail = np.isfinite(r_top) & (r_top >= cfg.roughness_threshold)
    dead = np.isnan(slope) | (slope > cfg.slope_threshold) | rough_fail
    known_unsafe = (np.isfinite(slope) & (slope > cfg.slope_threshold)) | rough_fail

    for layer in range(top - 1, -1, -1):
        dead = _expand2(dead)
        known_unsafe = _expand2(known_unsafe)
        r_l, _ = compute_roughness_rolling(heights[layer], cells_radius(layer), active=~dead)
        roughness[layer] = r_l
        fail = np.isfinite(r_l) & (r_l >= cfg.roughness_threshold)
        dead |= fail
        known_unsafe |= fail

    # final verdict: max roughness within the landing radius must stay below
    # the threshold; anything undefined inside that disk is disqualifying
    r0 = roughness[0]
    land_r = max(1, int(math.ceil(cfg.landing_radius / pcfg.resolution(0))))
    poisoned = np.where(np.isfinite(r0), r0, np.inf)
    max_rough = ndimage.maximum_filter(
        poisoned, footprint=_landing_disk(land_r), mode="constant", cval=np.inf
    )
    rough_ok = np.isfinite(max_rough) & (max_rough < cfg.roughness_threshold)
    safe = ~dead & rough_ok
    known_unsafe |= np.isfinite(max_rough) & (max_rough >= cfg.roughness_threshold)
    mask_known = safe | known_unsafe

    # feature roughness: finest value where defined, else closest coarser
    feature = r0.copy()
    for layer in range(1, pcfg.num_layers):
        expanded = roughness[layer]
        for _ in range(layer):
            expanded = _expand2(expanded)
        hole = np.isnan(feature)
        feature[hole] = expanded[hole]

    return SafetyMaps(
        landing_mask=safe,
        mask_known=mask_known,
        roughness=[np.asarray(r) for r in roughness],
        feature_roughness=feature,
        slope=slope,
        uncertainty=pooled.variance_raster(0),
        resolution=pcfg.resolution(0),
        origin=pooled.origin,
    )
