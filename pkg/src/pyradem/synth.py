"""Deterministic synthetic terrain and descending-flight point clouds.

The terrain is an analytic height function (sinusoidal undulation, optional
ramp regions, spherical-cap rocks) so ground truth is exact at any sample
point. Point clouds are rendered by casting a nadir pixel grid from an
interpolated camera trajectory and perturbing each depth with zero-mean
Gaussian noise matching the stereo quantization model sigma_z = z^2 sigma_d
/ (f b). Everything is a pure function of (spec, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .pyramid import CameraModel

__all__ = [
    "FrameData",
    "Ramp",
    "Rock",
    "Terrain",
    "TerrainSpec",
    "TrajectorySpec",
    "generate_terrain",
    "render_pointcloud",
]

# variance floor so zero-noise data still satisfies variance > 0
_VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class Rock:
    x: float
    y: float
    radius: float
    height: float


@dataclass(frozen=True)
class Ramp:
    """Adds gradient * (position - corner) inside an axis-aligned box."""

    x0: float
    y0: float
    x1: float
    y1: float
    gx: float
    gy: float


@dataclass(frozen=True)
class TerrainSpec:
    seed: int = 0
    extent: float = 24.0
    amplitude: float = 0.15
    wavelength: float = 6.0
    rocks: tuple[Rock, ...] | None = None  # explicit list wins over sampling
    rock_count: int = 0
    rock_density: float = 0.0  # rocks per m^2, used when rock_count == 0
    rock_radius: tuple[float, float] = (0.1, 0.3)
    rock_height: tuple[float, float] = (0.12, 0.28)
    ramps: tuple[Ramp, ...] = ()
    resolution: float = 0.05  # ground-truth raster cell size


@dataclass(frozen=True)
class TrajectorySpec:
    """Straight descending flight with a nadir stereo camera."""

    start: tuple[float, float] = (10.0, 40.0)
    end: tuple[float, float] = (70.0, 40.0)
    start_agl: float = 20.0
    end_agl: float = 10.0
    frame_count: int = 60
    camera: CameraModel = field(default_factory=CameraModel)
    sensor_width_px: int = 640
    sensor_height_px: int = 512
    grid_cols: int = 48
    grid_rows: int = 40
    pitch_deg: float = 0.0
    seed: int = 0


@dataclass
class FrameData:
    frame_id: int
    camera_x: float
    camera_y: float
    camera_z: float
    # columns: world_x, world_y, height, depth, variance
    points: np.ndarray


class Terrain:
    """Analytic height field with exact point queries."""

    def __init__(self, spec: TerrainSpec, rocks: tuple[Rock, ...], phases: tuple[float, float]):
        self.spec = spec
        self.rocks = rocks
        self._phases = phases

    def sample(self, x, y) -> np.ndarray:
        """Ground height at arbitrary world points (vectorized)."""
        x = np.asarray(x, np.float64)
        y = np.asarray(y, np.float64)
        s = self.spec
        if s.amplitude != 0.0:
            k = 2.0 * math.pi / s.wavelength
            h = s.amplitude * np.sin(k * x + self._phases[0]) * np.sin(k * y + self._phases[1])
        else:
            h = np.zeros(np.broadcast(x, y).shape, np.float64)
        for ramp in s.ramps:
            box = (x >= ramp.x0) & (x < ramp.x1) & (y >= ramp.y0) & (y < ramp.y1)
            h = h + np.where(box, ramp.gx * (x - ramp.x0) + ramp.gy * (y - ramp.y0), 0.0)
        if self.rocks:
            bump = np.zeros_like(h)
            for rock in self.rocks:
                d2 = (x - rock.x) ** 2 + (y - rock.y) ** 2
                inside = d2 <= rock.radius * rock.radius
                if not np.any(inside):
                    continue
                # spherical cap of base radius a and apex height hr
                sphere_r = (rock.radius**2 + rock.height**2) / (2.0 * rock.height)
                cap = np.sqrt(np.maximum(sphere_r * sphere_r - d2, 0.0)) - (sphere_r - rock.height)
                bump = np.maximum(bump, np.where(inside, cap, 0.0))
            h = h + bump
        return h

    def rock_mask_at(self, x, y) -> np.ndarray:
        x = np.asarray(x, np.float64)
        y = np.asarray(y, np.float64)
        mask = np.zeros(np.broadcast(x, y).shape, bool)
        for rock in self.rocks:
            mask |= (x - rock.x) ** 2 + (y - rock.y) ** 2 <= rock.radius * rock.radius
        return mask

    def raster(self) -> tuple[np.ndarray, np.ndarray, tuple[float, float], float]:
        """(heights, rock_mask, origin, resolution) sampled at cell centers."""
        res = self.spec.resolution
        n = int(round(self.spec.extent / res))
        coord = (np.arange(n) + 0.5) * res
        xg, yg = np.meshgrid(coord, coord)  # row-major: row <-> y
        return (
            self.sample(xg, yg).astype(np.float64),
            self.rock_mask_at(xg, yg),
            (0.0, 0.0),
            res,
        )


def generate_terrain(spec: TerrainSpec) -> Terrain:
    """Resolve the spec (sampling rocks and phases) deterministically."""
    rng = np.random.default_rng(spec.seed)
    phases = (float(rng.uniform(0, 2 * math.pi)), float(rng.uniform(0, 2 * math.pi)))
    if spec.rocks is not None:
        rocks = tuple(spec.rocks)
    else:
        count = spec.rock_count
        if count == 0 and spec.rock_density > 0:
            count = int(round(spec.rock_density * spec.extent * spec.extent))
        rocks = []
        margin = spec.rock_radius[1]
        for _ in range(count):
            rocks.append(
                Rock(
                    x=float(rng.uniform(margin, spec.extent - margin)),
                    y=float(rng.uniform(margin, spec.extent - margin)),
                    radius=float(rng.uniform(*spec.rock_radius)),
                    height=float(rng.uniform(*spec.rock_height)),
                )
            )
        rocks = tuple(rocks)
    for rock in rocks:
        if not (0 <= rock.x <= spec.extent and 0 <= rock.y <= spec.extent):
            raise ValueError(f"rock outside terrain extent: {rock}")
        if not (math.isfinite(rock.height) and rock.height > 0 and rock.radius > 0):
            raise ValueError(f"invalid rock geometry: {rock}")
    return Terrain(spec, rocks, phases)


def render_pointcloud(terrain: Terrain, traj: TrajectorySpec, frame_id: int) -> FrameData:
    """Render one frame of noisy nadir point measurements.

    Rays sample the sensor uniformly; each hits the ground truth at its
    lateral offset, the depth (vertical camera-to-ground distance) is
    perturbed by the quadratic stereo noise and the measured height is taken
    along the same vertical ray. Rays leaving the terrain extent are dropped.
    Deterministic per (trajectory seed, frame id).
    """
    if traj.frame_count < 1:
        raise ValueError("frame_count must be >= 1")
    t = frame_id / (traj.frame_count - 1) if traj.frame_count > 1 else 0.0
    cam_x = traj.start[0] + t * (traj.end[0] - traj.start[0])
    cam_y = traj.start[1] + t * (traj.end[1] - traj.start[1])
    agl = traj.start_agl + t * (traj.end_agl - traj.start_agl)
    ground_under = float(terrain.sample(cam_x, cam_y))
    cam_z = ground_under + agl
    cam = traj.camera

    # ray tangents across the sensor (+ optional forward pitch along x)
    ucols = ((np.arange(traj.grid_cols) + 0.5) / traj.grid_cols - 0.5) * traj.sensor_width_px
    urows = ((np.arange(traj.grid_rows) + 0.5) / traj.grid_rows - 0.5) * traj.sensor_height_px
    tan_x = ucols / cam.focal_length + math.tan(math.radians(traj.pitch_deg))
    tan_y = urows / cam.focal_length
    tx, ty = np.meshgrid(tan_x, tan_y)

    # lateral hit position from the nominal height below the camera
    px = (cam_x + tx * agl).reshape(-1)
    py = (cam_y + ty * agl).reshape(-1)
    inside = (px >= 0) & (px < terrain.spec.extent) & (py >= 0) & (py < terrain.spec.extent)
    px, py = px[inside], py[inside]
    h_true = terrain.sample(px, py)
    depth_true = cam_z - h_true
    keep = depth_true > 0
    px, py, depth_true = px[keep], py[keep], depth_true[keep]

    rng = np.random.default_rng([traj.seed, frame_id])
    sigma_z = depth_true**2 * cam.disparity_noise / (cam.focal_length * cam.baseline)
    depth_meas = depth_true + rng.standard_normal(depth_true.size) * sigma_z
    depth_meas = np.maximum(depth_meas, 1e-6)
    height_meas = cam_z - depth_meas
    # vectorized measurement_variance()
    sigma_meas = depth_meas**2 * cam.disparity_noise / (cam.focal_length * cam.baseline)
    variance = np.maximum(sigma_meas * sigma_meas, _VARIANCE_FLOOR)
    points = np.column_stack([px, py, height_meas, depth_meas, variance])
    return FrameData(frame_id, cam_x, cam_y, cam_z, points)
