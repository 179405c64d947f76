"""Multi-resolution elevation-map pyramid with a rolling origin.

Layer 0 is the finest grid; every layer above halves the resolution, so one
cell at layer l+1 covers exactly the 2x2 block of cells below it. Each point
measurement updates a single cell on the layer whose cell footprint best
matches the measurement footprint (depth / focal_length); a separate pooling
pass then makes every layer consistent with all measurements, which is
equivalent to having updated every covering cell directly.

The grids use toroidal (ring-buffer) addressing so the map can follow the
vehicle without moving memory: ``storage_index = (logical + offset) mod n``.
Shifts happen in multiples of the top-layer cell size, which keeps the
parent/child alignment intact in storage space (``child = 2 * parent + d``
holds for storage indices too), so pooling can work on the raw arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .fusion import COUNT_MAX, CellState

__all__ = [
    "CameraModel",
    "Measurement",
    "PooledPyramid",
    "PyramidConfig",
    "PyramidMap",
    "measurement_variance",
    "select_layer",
]

# Column order of the flat measurement array used on the hot path.
MCOL_X, MCOL_Y, MCOL_HEIGHT, MCOL_DEPTH, MCOL_VARIANCE = range(5)


@dataclass(frozen=True)
class CameraModel:
    """Stereo camera constants: focal length f [px], baseline b [m],
    disparity noise sigma_d [px]."""

    focal_length: float = 320.0
    baseline: float = 0.25
    disparity_noise: float = 0.5

    def __post_init__(self) -> None:
        if self.focal_length <= 0 or self.baseline <= 0 or self.disparity_noise < 0:
            raise ValueError(f"invalid camera model {self!r}")


@dataclass(frozen=True)
class Measurement:
    """One 3D point: ground-plane position, height, camera depth and the
    height variance derived from that depth."""

    world_x: float
    world_y: float
    height: float
    depth: float
    variance: float


@dataclass(frozen=True)
class PyramidConfig:
    num_layers: int = 3
    base_resolution: float = 0.05
    map_size: float = 24.0
    first_measurement_inflation: float = 25.0

    def __post_init__(self) -> None:
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.base_resolution <= 0 or self.map_size <= 0:
            raise ValueError("base_resolution and map_size must be > 0")
        if self.first_measurement_inflation < 1.0:
            raise ValueError("first_measurement_inflation must be >= 1")
        top = self.map_size / (self.base_resolution * 2 ** (self.num_layers - 1))
        if abs(top - round(top)) > 1e-9 or round(top) < 1:
            raise ValueError(
                "map_size must be a whole number of top-layer cells "
                f"(got {top} cells of {self.base_resolution * 2 ** (self.num_layers - 1)} m)"
            )

    def resolution(self, layer: int) -> float:
        return self.base_resolution * (2**layer)

    def cells_per_side(self, layer: int) -> int:
        return int(round(self.map_size / self.resolution(layer)))


def select_layer(depth: float, camera: CameraModel, cfg: PyramidConfig) -> int:
    """Lowest layer whose cell footprint strictly exceeds the measurement
    footprint depth/f; clamped to the top layer when none qualifies."""
    footprint = depth / camera.focal_length
    for layer in range(cfg.num_layers):
        if cfg.resolution(layer) > footprint:
            return layer
    return cfg.num_layers - 1


def measurement_variance(depth: float, camera: CameraModel) -> float:
    """Height variance of a stereo point: sigma_z = depth^2 * sigma_d / (f b)."""
    sigma_z = depth * depth * camera.disparity_noise / (camera.focal_length * camera.baseline)
    return sigma_z * sigma_z


@dataclass
class _Layer:
    """Storage arrays of one pyramid layer (64-bit state, row-major)."""

    mean: np.ndarray
    variance: np.ndarray
    precision_sum: np.ndarray
    count: np.ndarray  # uint32
    assigned: np.ndarray  # uint32, counts direct routing hits (inflation bookkeeping)

    @classmethod
    def empty(cls, n: int) -> "_Layer":
        return cls(
            mean=np.zeros((n, n), np.float64),
            variance=np.zeros((n, n), np.float64),
            precision_sum=np.zeros((n, n), np.float64),
            count=np.zeros((n, n), np.uint32),
            assigned=np.zeros((n, n), np.uint32),
        )

    def copy(self) -> "_Layer":
        return _Layer(
            self.mean.copy(),
            self.variance.copy(),
            self.precision_sum.copy(),
            self.count.copy(),
            self.assigned.copy(),
        )

    def clear_rows(self, rows: np.ndarray) -> None:
        for arr in (self.mean, self.variance, self.precision_sum, self.count, self.assigned):
            arr[rows, :] = 0

    def clear_cols(self, cols: np.ndarray) -> None:
        for arr in (self.mean, self.variance, self.precision_sum, self.count, self.assigned):
            arr[:, cols] = 0


def _fuse_into(
    mean_a: np.ndarray,
    var_a: np.ndarray,
    s_a: np.ndarray,
    cnt_a: np.ndarray,
    mean_b: np.ndarray,
    var_b: np.ndarray,
    s_b: np.ndarray,
    cnt_b: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Element-wise state fusion (A fused with B); empty cells (S == 0) act
    as the identity. Returns new arrays."""
    s = s_a + s_b
    safe = s > 0.0
    denom = np.where(safe, s, 1.0)
    mean = (s_a * mean_a + s_b * mean_b) / denom
    moment = s_a * (var_a + mean_a * mean_a) + s_b * (var_b + mean_b * mean_b)
    variance = moment / denom - mean * mean
    # single-sided cells keep their exact state (avoids rounding drift)
    only_a = (s_b == 0.0) & safe
    only_b = (s_a == 0.0) & safe
    mean = np.where(only_a, mean_a, np.where(only_b, mean_b, mean))
    variance = np.where(only_a, var_a, np.where(only_b, var_b, variance))
    mean = np.where(safe, mean, 0.0)
    variance = np.where(safe, variance, 0.0)
    cnt = np.minimum(cnt_a.astype(np.int64) + cnt_b.astype(np.int64), COUNT_MAX).astype(np.uint32)
    return mean, variance, s, cnt


@dataclass
class PooledPyramid:
    """Pooling product: per-layer rasters in logical (world-aligned) order.

    Every cell state equals the fusion of all measurements whose assigned
    cell footprint overlaps that cell, i.e. what a direct all-layer update
    would have produced.
    """

    cfg: PyramidConfig
    origin: tuple[float, float]
    mean: list[np.ndarray]
    variance: list[np.ndarray]
    precision_sum: list[np.ndarray]
    count: list[np.ndarray]
    fusion_writes: int = 0

    def height_raster(self, layer: int) -> np.ndarray:
        """Mean raster with empty cells as NaN."""
        return np.where(self.count[layer] > 0, self.mean[layer], np.nan)

    def variance_raster(self, layer: int) -> np.ndarray:
        return np.where(self.count[layer] > 0, self.variance[layer], np.nan)

    def state_at(self, layer: int, x: float, y: float) -> CellState:
        res = self.cfg.resolution(layer)
        col = int(math.floor((x - self.origin[0]) / res))
        row = int(math.floor((y - self.origin[1]) / res))
        n = self.cfg.cells_per_side(layer)
        if not (0 <= row < n and 0 <= col < n):
            raise IndexError(f"({x}, {y}) outside map")
        return CellState(
            float(self.mean[layer][row, col]),
            float(self.variance[layer][row, col]),
            float(self.precision_sum[layer][row, col]),
            int(self.count[layer][row, col]),
        )


class PyramidMap:
    """N stacked ring-buffer grids of fused cell states.

    Single-writer: updates, shifts and inflation mutate the map on one thread
    of control; :meth:`snapshot` hands an independent deep copy to a consumer
    thread. :meth:`pool` never mutates the map.
    """

    def __init__(self, cfg: PyramidConfig, center: Sequence[float] = (0.0, 0.0)):
        self.cfg = cfg
        half = cfg.map_size / 2.0
        self.origin = (float(center[0]) - half, float(center[1]) - half)
        self._top_off_row = 0
        self._top_off_col = 0
        self.layers = [_Layer.empty(cfg.cells_per_side(l)) for l in range(cfg.num_layers)]
        self.dropped_out_of_bounds = 0
        self.dropped_invalid = 0
        self.cell_writes = 0

    # ---- geometry -------------------------------------------------------

    @property
    def center(self) -> tuple[float, float]:
        half = self.cfg.map_size / 2.0
        return (self.origin[0] + half, self.origin[1] + half)

    def layer_offsets(self, layer: int) -> tuple[int, int]:
        n = self.cfg.cells_per_side(layer)
        f = 2 ** (self.cfg.num_layers - 1 - layer)
        return (self._top_off_row * f) % n, (self._top_off_col * f) % n

    def world_to_cell(self, layer: int, x: float, y: float) -> tuple[int, int]:
        """Logical (row, col) of the cell containing the world point."""
        res = self.cfg.resolution(layer)
        return (
            int(math.floor((y - self.origin[1]) / res)),
            int(math.floor((x - self.origin[0]) / res)),
        )

    def state_at(self, layer: int, x: float, y: float) -> CellState:
        row, col = self.world_to_cell(layer, x, y)
        n = self.cfg.cells_per_side(layer)
        if not (0 <= row < n and 0 <= col < n):
            raise IndexError(f"({x}, {y}) outside map bounds")
        off_r, off_c = self.layer_offsets(layer)
        lay = self.layers[layer]
        r, c = (row + off_r) % n, (col + off_c) % n
        return CellState(
            float(lay.mean[r, c]),
            float(lay.variance[r, c]),
            float(lay.precision_sum[r, c]),
            int(lay.count[r, c]),
        )

    def logical_raster(self, layer: int, channel: str) -> np.ndarray:
        """World-aligned copy of one storage array (row 0 = lowest y)."""
        lay = self.layers[layer]
        arr = {
            "mean": lay.mean,
            "variance": lay.variance,
            "precision_sum": lay.precision_sum,
            "count": lay.count,
        }[channel]
        off_r, off_c = self.layer_offsets(layer)
        return np.roll(arr, (-off_r, -off_c), axis=(0, 1))

    # ---- measurement routing ---------------------------------------------

    def _route(
        self, measurements: np.ndarray, camera: CameraModel
    ) -> list[tuple[int, np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
        """Split a (n, 5) measurement array into per-layer update batches.

        Returns (layer, storage_rows, storage_cols, heights, variances)
        tuples. The variance of the first measurement ever routed to a cell
        is inflated by ``first_measurement_inflation``; that decision is tied
        to the assigned cell so direct and indirect update modes see the same
        effective measurement stream. Out-of-bounds and non-finite
        measurements are dropped and counted.
        """
        m = np.asarray(measurements, np.float64)
        if m.ndim == 1:
            m = m.reshape(1, -1)
        finite = np.isfinite(m).all(axis=1) & (m[:, MCOL_DEPTH] > 0) & (m[:, MCOL_VARIANCE] > 0)
        self.dropped_invalid += int(m.shape[0] - finite.sum())
        m = m[finite]
        if m.shape[0] == 0:
            return []

        # layer selection: lowest layer with resolution > depth/f
        footprint = m[:, MCOL_DEPTH] / camera.focal_length
        layer_idx = np.full(m.shape[0], self.cfg.num_layers - 1, np.int64)
        for layer in range(self.cfg.num_layers - 1, -1, -1):
            layer_idx[self.cfg.resolution(layer) > footprint] = layer

        out = []
        for layer in range(self.cfg.num_layers):
            sel = layer_idx == layer
            if not sel.any():
                continue
            res = self.cfg.resolution(layer)
            n = self.cfg.cells_per_side(layer)
            rows = np.floor((m[sel, MCOL_Y] - self.origin[1]) / res).astype(np.int64)
            cols = np.floor((m[sel, MCOL_X] - self.origin[0]) / res).astype(np.int64)
            inside = (rows >= 0) & (rows < n) & (cols >= 0) & (cols < n)
            self.dropped_out_of_bounds += int(inside.size - inside.sum())
            if not inside.any():
                continue
            rows, cols = rows[inside], cols[inside]
            heights = m[sel, MCOL_HEIGHT][inside]
            variances = m[sel, MCOL_VARIANCE][inside].copy()

            off_r, off_c = self.layer_offsets(layer)
            rows = (rows + off_r) % n
            cols = (cols + off_c) % n

            # first-hit inflation, decided on the assigned cell
            lay = self.layers[layer]
            flat = rows * n + cols
            first_pos = np.unique(flat, return_index=True)[1]
            never_hit = lay.assigned.reshape(-1)[flat[first_pos]] == 0
            variances[first_pos[never_hit]] *= self.cfg.first_measurement_inflation
            np.add.at(lay.assigned.reshape(-1), flat, np.uint32(1))

            out.append((layer, rows, cols, heights, variances))
        return out

    def _scatter_fuse(
        self,
        layer: int,
        rows: np.ndarray,
        cols: np.ndarray,
        heights: np.ndarray,
        variances: np.ndarray,
    ) -> None:
        """Fuse a batch of measurements into cells of one layer.

        Measurements are first accumulated per cell (weight, weighted value,
        second moment) and the per-cell group is then fused with the stored
        state, which matches folding the cumulative update one by one.
        """
        lay = self.layers[layer]
        n = lay.mean.shape[0]
        w = 1.0 / variances
        flat = rows * n + cols
        s_g = np.zeros(n * n, np.float64)
        m1_g = np.zeros(n * n, np.float64)
        t_g = np.zeros(n * n, np.float64)
        c_g = np.zeros(n * n, np.int64)
        np.add.at(s_g, flat, w)
        np.add.at(m1_g, flat, w * heights)
        np.add.at(t_g, flat, (variances + heights * heights) / variances)
        np.add.at(c_g, flat, 1)

        touched = np.flatnonzero(c_g)
        s_a = lay.precision_sum.reshape(-1)[touched]
        mu_a = lay.mean.reshape(-1)[touched]
        var_a = lay.variance.reshape(-1)[touched]
        t_a = s_a * (var_a + mu_a * mu_a)
        s = s_a + s_g[touched]
        mu = (s_a * mu_a + m1_g[touched]) / s
        var = (t_a + t_g[touched]) / s - mu * mu
        lay.precision_sum.reshape(-1)[touched] = s
        lay.mean.reshape(-1)[touched] = mu
        lay.variance.reshape(-1)[touched] = var
        cnt = lay.count.reshape(-1)
        cnt[touched] = np.minimum(cnt[touched].astype(np.int64) + c_g[touched], COUNT_MAX).astype(
            np.uint32
        )
        self.cell_writes += int(rows.size)

    # ---- update modes -----------------------------------------------------

    def update_batch(self, measurements: np.ndarray, camera: CameraModel) -> None:
        """Single-layer update: each measurement writes exactly one cell on
        its selected layer."""
        for layer, rows, cols, heights, variances in self._route(measurements, camera):
            self._scatter_fuse(layer, rows, cols, heights, variances)

    def update_single_layer(self, m: Measurement, camera: CameraModel) -> None:
        self.update_batch(
            np.array([[m.world_x, m.world_y, m.height, m.depth, m.variance]]), camera
        )

    def update_batch_direct(self, measurements: np.ndarray, camera: CameraModel) -> None:
        """Direct multi-layer update (baseline / pooling oracle).

        Every cell whose footprint overlaps the assigned cell footprint is
        updated: the ancestor chain up to the top plus, below the assigned
        layer, the whole block of descendant cells. A bottom-routed
        measurement therefore writes num_layers cells; a top-routed one
        writes the full 1 + 4 + ... + 4^(N-1) cell pyramid.
        """
        for layer, rows, cols, heights, variances in self._route(measurements, camera):
            for target in range(self.cfg.num_layers):
                if target >= layer:
                    # one covering ancestor cell (storage indices halve upward)
                    shift = target - layer
                    self._scatter_fuse(
                        target, rows >> shift, cols >> shift, heights, variances
                    )
                else:
                    # all descendants of the assigned cell
                    f = 2 ** (layer - target)
                    dr, dc = np.meshgrid(np.arange(f), np.arange(f), indexing="ij")
                    dr, dc = dr.reshape(-1), dc.reshape(-1)
                    rr = (rows[:, None] * f + dr[None, :]).reshape(-1)
                    cc = (cols[:, None] * f + dc[None, :]).reshape(-1)
                    self._scatter_fuse(
                        target,
                        rr,
                        cc,
                        np.repeat(heights, f * f),
                        np.repeat(variances, f * f),
                    )

    def update_direct_all_layers(self, m: Measurement, camera: CameraModel) -> None:
        self.update_batch_direct(
            np.array([[m.world_x, m.world_y, m.height, m.depth, m.variance]]), camera
        )

    # ---- pooling ----------------------------------------------------------

    def pool(self) -> PooledPyramid:
        """Build the fully consistent pyramid from the single-layer states.

        Up-pooling fuses every filled cell into its parent bottom-to-top;
        down-pooling then fuses the pre-pooling ancestor states (from this
        map, which stays untouched) into all descendants top-to-bottom, with
        empty targets receiving plain copies. The result equals a direct
        all-layer update of the same measurement stream up to fusion order.
        """
        cfg = self.cfg
        n_layers = cfg.num_layers
        mean = [lay.mean.copy() for lay in self.layers]
        var = [lay.variance.copy() for lay in self.layers]
        psum = [lay.precision_sum.copy() for lay in self.layers]
        cnt = [lay.count.copy() for lay in self.layers]
        writes = 0

        def block4(a: np.ndarray) -> tuple[np.ndarray, ...]:
            h = a.shape[0] // 2
            b = a.reshape(h, 2, h, 2)
            return b[:, 0, :, 0], b[:, 0, :, 1], b[:, 1, :, 0], b[:, 1, :, 1]

        # up-pooling: children into parents
        for l in range(n_layers - 1):
            writes += int(np.count_nonzero(cnt[l]))
            parts = [block4(a) for a in (mean[l], var[l], psum[l], cnt[l])]
            m0, v0, s0, c0 = (p[0] for p in parts)
            m1, v1, s1, c1 = (p[1] for p in parts)
            m2, v2, s2, c2 = (p[2] for p in parts)
            m3, v3, s3, c3 = (p[3] for p in parts)
            fa = _fuse_into(m0, v0, s0, c0, m1, v1, s1, c1)
            fb = _fuse_into(m2, v2, s2, c2, m3, v3, s3, c3)
            fc = _fuse_into(*fa, *fb)
            up = _fuse_into(mean[l + 1], var[l + 1], psum[l + 1], cnt[l + 1], *fc)
            mean[l + 1], var[l + 1], psum[l + 1], cnt[l + 1] = up

        # down-pooling: raw ancestor states (this map's untouched arrays)
        # accumulate top-down and fuse into every descendant
        anc: tuple[np.ndarray, ...] | None = None
        for l in range(n_layers - 2, -1, -1):
            raw = self.layers[l + 1]
            if anc is None:
                parent_total = (
                    raw.mean.astype(np.float64),
                    raw.variance.astype(np.float64),
                    raw.precision_sum.astype(np.float64),
                    raw.count.copy(),
                )
            else:
                writes += int(np.count_nonzero(raw.count))
                parent_total = _fuse_into(*anc, raw.mean, raw.variance, raw.precision_sum, raw.count)
            expanded = tuple(np.repeat(np.repeat(a, 2, axis=0), 2, axis=1) for a in parent_total)
            writes += 4 * int(np.count_nonzero(parent_total[3]))
            down = _fuse_into(mean[l], var[l], psum[l], cnt[l], *expanded)
            mean[l], var[l], psum[l], cnt[l] = down
            anc = expanded

        # unroll ring offsets into logical order
        for l in range(n_layers):
            off_r, off_c = self.layer_offsets(l)
            if off_r or off_c:
                for arrs in (mean, var, psum, cnt):
                    arrs[l] = np.roll(arrs[l], (-off_r, -off_c), axis=(0, 1))

        return PooledPyramid(cfg, self.origin, mean, var, psum, cnt, fusion_writes=writes)

    # ---- shifting / inflation / snapshots ----------------------------------

    def shift_to(self, new_center: Sequence[float]) -> tuple[int, int]:
        """Re-center the map on ``new_center``, rounded to whole top-layer
        cells. Surviving cells keep their state bit-exactly (only the ring
        offsets change); cells whose footprint leaves the map are reset.
        Returns the applied (row, col) shift in top-layer cells."""
        top_res = self.cfg.resolution(self.cfg.num_layers - 1)
        cx, cy = self.center
        d_col = int(round((float(new_center[0]) - cx) / top_res))
        d_row = int(round((float(new_center[1]) - cy) / top_res))
        if d_row == 0 and d_col == 0:
            return (0, 0)
        self.origin = (self.origin[0] + d_col * top_res, self.origin[1] + d_row * top_res)
        self._top_off_row += d_row
        self._top_off_col += d_col
        for l, lay in enumerate(self.layers):
            n = self.cfg.cells_per_side(l)
            f = 2 ** (self.cfg.num_layers - 1 - l)
            off_r, off_c = self.layer_offsets(l)
            for d, axis_clear, off in (
                (d_row * f, lay.clear_rows, off_r),
                (d_col * f, lay.clear_cols, off_c),
            ):
                if d == 0:
                    continue
                if abs(d) >= n:
                    axis_clear(np.arange(n))
                    continue
                if d > 0:
                    entering = np.arange(n - d, n)
                else:
                    entering = np.arange(-d)
                axis_clear((entering + off) % n)
        return (d_row, d_col)

    def apply_inflation(self, k: float) -> None:
        """Inflate every non-empty cell of every layer by factor k >= 1."""
        if k < 1.0:
            raise ValueError(f"inflation factor must be >= 1, got {k}")
        if k == 1.0:
            return
        for lay in self.layers:
            filled = lay.count > 0
            lay.variance[filled] += (lay.count[filled].astype(np.float64) + 1.0) * (k - 1.0)
            lay.precision_sum[filled] /= k

    def snapshot(self) -> "PyramidMap":
        """Independent deep copy safe to hand to another thread."""
        dup = PyramidMap.__new__(PyramidMap)
        dup.cfg = self.cfg
        dup.origin = self.origin
        dup._top_off_row = self._top_off_row
        dup._top_off_col = self._top_off_col
        dup.layers = [lay.copy() for lay in self.layers]
        dup.dropped_out_of_bounds = self.dropped_out_of_bounds
        dup.dropped_invalid = self.dropped_invalid
        dup.cell_writes = self.cell_writes
        return dup
