"""Command-line interface: simulate | run | bench | eval.

Exit codes: 0 success, 2 configuration error, 3 input format error,
4 assertion-class check failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from .config import ConfigError, RunConfig, dump_run_config, resolve_run_config
from .detection import DetectConfig
from .frames import (
    FrameFormatError,
    detection_report_lines,
    read_frame,
    read_frames_dir,
    write_frame_bin,
    write_frame_csv,
)
from .pipeline import FrameOutput, run_stream
from .pyramid import CameraModel, PyramidConfig
from .raster import read_raster, write_raster
from .segmentation import SegConfig
from .synth import TerrainSpec, TrajectorySpec, generate_terrain, render_pointcloud

__all__ = ["main"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_ASSERTION = 4


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

_SIM_KEYS: dict[str, tuple[str, type]] = {
    "extent": ("extent", float),
    "gt_resolution": ("gt_resolution", float),
    "amplitude": ("amplitude", float),
    "wavelength": ("wavelength", float),
    "rock_count": ("rock_count", int),
    "rock_density": ("rock_density", float),
    "rock_radius_min": ("rock_radius_min", float),
    "rock_radius_max": ("rock_radius_max", float),
    "rock_height_min": ("rock_height_min", float),
    "rock_height_max": ("rock_height_max", float),
    "seed": ("seed", int),
    "frames": ("frames", int),
    "start_x": ("start_x", float),
    "start_y": ("start_y", float),
    "end_x": ("end_x", float),
    "end_y": ("end_y", float),
    "start_agl": ("start_agl", float),
    "end_agl": ("end_agl", float),
    "sensor_width": ("sensor_width", int),
    "sensor_height": ("sensor_height", int),
    "grid_cols": ("grid_cols", int),
    "grid_rows": ("grid_rows", int),
    "pitch": ("pitch", float),
    "focal_length": ("focal_length", float),
    "baseline": ("baseline", float),
    "disparity_noise": ("disparity_noise", float),
}

_SIM_DEFAULTS = {
    "extent": 80.0,
    "gt_resolution": 0.05,
    "amplitude": 0.15,
    "wavelength": 7.0,
    "rock_count": 60,
    "rock_density": 0.0,
    "rock_radius_min": 0.1,
    "rock_radius_max": 0.3,
    "rock_height_min": 0.12,
    "rock_height_max": 0.28,
    "seed": 0,
    "frames": 60,
    "start_x": 10.0,
    "start_y": 40.0,
    "end_x": 70.0,
    "end_y": 40.0,
    "start_agl": 20.0,
    "end_agl": 10.0,
    "sensor_width": 640,
    "sensor_height": 512,
    "grid_cols": 48,
    "grid_rows": 40,
    "pitch": 0.0,
    "focal_length": 320.0,
    "baseline": 0.25,
    "disparity_noise": 0.5,
}


def _load_sim_spec(path: str | None, overrides: list[tuple[str, str]]) -> dict:
    values = dict(_SIM_DEFAULTS)
    entries: list[tuple[str, str, str]] = []
    if path is not None:
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
            key, _, value = line.partition("=")
            entries.append((key.strip(), value.strip(), f"{path}:{lineno}"))
    entries.extend((k, v, f"flag --{k.replace('_', '-')}") for k, v in overrides)
    for key, value, source in entries:
        if key not in _SIM_KEYS:
            raise ConfigError(f"{source}: unknown key {key!r}")
        name, parser = _SIM_KEYS[key]
        try:
            values[name] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"{source}: bad value for {key!r}: {exc}") from exc
    return values


def _cmd_simulate(args: argparse.Namespace) -> int:
    overrides = []
    for key in ("seed", "frames", "extent"):
        value = getattr(args, key)
        if value is not None:
            overrides.append((key, str(value)))
    if args.rocks is not None:
        overrides.append(("rock_count", str(args.rocks)))
    spec = _load_sim_spec(args.spec, overrides)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    camera = CameraModel(spec["focal_length"], spec["baseline"], spec["disparity_noise"])
    terrain = generate_terrain(
        TerrainSpec(
            seed=spec["seed"],
            extent=spec["extent"],
            amplitude=spec["amplitude"],
            wavelength=spec["wavelength"],
            rock_count=spec["rock_count"],
            rock_density=spec["rock_density"],
            rock_radius=(spec["rock_radius_min"], spec["rock_radius_max"]),
            rock_height=(spec["rock_height_min"], spec["rock_height_max"]),
            resolution=spec["gt_resolution"],
        )
    )
    traj = TrajectorySpec(
        start=(spec["start_x"], spec["start_y"]),
        end=(spec["end_x"], spec["end_y"]),
        start_agl=spec["start_agl"],
        end_agl=spec["end_agl"],
        frame_count=spec["frames"],
        camera=camera,
        sensor_width_px=spec["sensor_width"],
        sensor_height_px=spec["sensor_height"],
        grid_cols=spec["grid_cols"],
        grid_rows=spec["grid_rows"],
        pitch_deg=spec["pitch"],
        seed=spec["seed"],
    )

    writer = write_frame_bin if args.binary else write_frame_csv
    ext = "bin" if args.binary else "csv"
    total_points = 0
    for k in range(traj.frame_count):
        frame = render_pointcloud(terrain, traj, k)
        writer(out / f"frame_{k:04d}.{ext}", frame)
        total_points += frame.points.shape[0]

    heights, rocks, origin, res = terrain.raster()
    write_raster(out / "truth_height.demr", heights, res, origin, 0, "mean")
    write_raster(out / "truth_rocks.demr", rocks.astype(np.float32), res, origin, 0, "mask")
    echo = "\n".join(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in spec.items())
    (out / "spec_resolved.cfg").write_text(echo + "\n")
    print(f"simulate: {traj.frame_count} frames, {total_points} points, "
          f"{len(terrain.rocks)} rocks -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

_RUN_FLAGS = [
    # (flag, config key)
    ("--layers", "layers"),
    ("--base-res", "base_res"),
    ("--map-size", "map_size"),
    ("--first-meas-inflation", "first_meas_inflation"),
    ("--roughness-thresh", "roughness_thresh"),
    ("--landing-radius", "landing_radius"),
    ("--search-radius", "search_radius"),
    ("--slope-thresh", "slope_thresh"),
    ("--max-peaks", "max_peaks"),
    ("--shift-iters", "shift_iters"),
    ("--w-rough", "w_rough"),
    ("--w-dist", "w_dist"),
    ("--w-sigma", "w_sigma"),
    ("--peak-factor", "peak_factor"),
    ("--min-distance", "min_distance"),
    ("--focal-length", "focal_length"),
    ("--baseline", "baseline"),
    ("--disparity-noise", "disparity_noise"),
    ("--inflation", "inflation"),
    ("--inflation-k", "inflation_k"),
    ("--seed", "seed"),
    ("--threads", "threads"),
    ("--strict", "strict"),
    ("--export-every", "export_every"),
]


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value configuration file")
    for flag, _key in _RUN_FLAGS:
        parser.add_argument(flag, dest=_key.replace("-", "_"), default=None, metavar="V")


def _collect_config(args: argparse.Namespace) -> RunConfig:
    overrides = []
    for _flag, key in _RUN_FLAGS:
        value = getattr(args, key, None)
        if value is not None:
            overrides.append((key, str(value)))
    return resolve_run_config(getattr(args, "config", None), overrides)


def _export_frame(out_dir: Path, output: FrameOutput) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    pooled = output.pooled
    cfg = pooled.cfg
    for layer in range(cfg.num_layers):
        res = cfg.resolution(layer)
        empty = pooled.count[layer] == 0
        for channel, data in (
            ("mean", np.where(empty, np.nan, pooled.mean[layer])),
            ("variance", np.where(empty, np.nan, pooled.variance[layer])),
            ("precision_sum", np.where(empty, np.nan, pooled.precision_sum[layer])),
            ("count", np.where(empty, np.nan, pooled.count[layer].astype(np.float64))),
        ):
            write_raster(
                out_dir / f"layer{layer}_{channel}.demr",
                data, res, pooled.origin, layer, channel,
            )
        write_raster(
            out_dir / f"layer{layer}_roughness.demr",
            output.maps.roughness[layer], res, pooled.origin, layer, "roughness",
        )
    maps = output.maps
    mask = np.where(maps.mask_known, maps.landing_mask.astype(np.float32), np.nan)
    write_raster(out_dir / "mask.demr", mask, maps.resolution, maps.origin, 0, "mask")
    if output.detection.distance is not None:
        write_raster(
            out_dir / "distance.demr",
            output.detection.distance, maps.resolution, maps.origin, 0, "distance",
        )
    top = cfg.num_layers - 1
    write_raster(
        out_dir / "slope.demr", maps.slope, cfg.resolution(top), maps.origin, top, "slope"
    )


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _collect_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config_resolved.cfg").write_text(dump_run_config(cfg))

    paths = read_frames_dir(args.frames)

    def frames():
        for path in paths:
            try:
                yield read_frame(path)
            except FrameFormatError:
                if cfg.strict:
                    raise
                print(f"warning: skipping malformed frame {path}", file=sys.stderr)

    report: list[str] = []
    export_dirs: list[tuple[Path, int]] = []

    def on_frame(output: FrameOutput) -> None:
        report.extend(detection_report_lines(output.frame_id, output.detection))
        if cfg.export_every > 0 and output.frame_id % cfg.export_every == 0:
            _export_frame(out / f"frame_{output.frame_id:04d}", output)

    t0 = time.perf_counter()
    summary = run_stream(frames(), cfg, on_frame)
    elapsed = time.perf_counter() - t0
    if summary.frames == 0:
        print("error: no readable frames", file=sys.stderr)
        return EXIT_INPUT

    (out / "report.csv").write_text("\n".join(report) + "\n")
    _export_frame(out / "final", summary.final)
    print(
        f"run: {summary.frames} frames, {summary.measurements} points "
        f"({summary.dropped_out_of_bounds} out-of-bounds, {summary.dropped_invalid} invalid), "
        f"{summary.selections} selections, {summary.rejections} rejections"
    )
    print(f"run: wall time {elapsed:.2f} s", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def _bench_stream(args: argparse.Namespace, cfg: RunConfig) -> np.ndarray:
    paths = read_frames_dir(args.frames)
    chunks = [read_frame(p).points for p in paths]
    return np.concatenate(chunks, axis=0)


def _cmd_bench(args: argparse.Namespace) -> int:
    cfg = _collect_config(args)
    if args.mode == "updates":
        points = _bench_stream(args, cfg)
        report = bench_mod.bench_updates(points, cfg.pyramid, cfg.camera,
                                         center=(float(points[:, 0].mean()), float(points[:, 1].mean())))
        print("mode,resolution,measurements,cell_writes,seconds")
        print(f"direct,{cfg.pyramid.base_resolution},{report.measurements},"
              f"{report.direct_writes},{report.direct_seconds:.4f}")
        print(f"indirect,{cfg.pyramid.base_resolution},{report.measurements},"
              f"{report.indirect_total_writes},{report.indirect_seconds:.4f}")
        print(f"# indirect = {report.indirect_update_writes} updates "
              f"+ {report.pooling_fusions} pooling fusions; max rel diff {report.max_rel_diff:.3e}")
        if report.max_rel_diff > 1e-6:
            print("error: pooled and direct pyramids diverged", file=sys.stderr)
            return EXIT_ASSERTION
    elif args.mode == "seg":
        sizes = [int(s) for s in args.sizes.split(",")]
        rows = bench_mod.bench_segmentation(sizes, radius=args.radius, seed=cfg.seed)
        print("size,radius,naive_reads,rolling_reads,naive_s,rolling_s")
        for row in rows:
            print(f"{row.size},{row.radius},{row.naive_reads},{row.rolling_reads},"
                  f"{row.naive_seconds:.4f},{row.rolling_seconds:.4f}")
    elif args.mode == "fusion":
        points = _bench_stream(args, cfg)
        report = bench_mod.fusion_compare(
            points, cfg.pyramid.base_resolution, cfg.pyramid.map_size,
            center=(float(points[:, 0].mean()), float(points[:, 1].mean())))
        both = np.isfinite(report.omg_variance) & np.isfinite(report.kalman_variance)
        print(f"cells,{report.cells}")
        print(f"mean_max_rel_diff,{report.mean_abs_diff_max:.3e}")
        print(f"omg_variance_median,{np.median(report.omg_variance[both]):.6g}")
        print(f"kalman_variance_median,{np.median(report.kalman_variance[both]):.6g}")
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            res = cfg.pyramid.base_resolution
            write_raster(out / "omg_variance.demr", report.omg_variance, res, (0, 0), 0, "variance")
            write_raster(out / "kalman_variance.demr", report.kalman_variance, res, (0, 0), 0, "variance")
        if report.mean_abs_diff_max > 1e-9:
            print("error: mixture and Kalman means diverged", file=sys.stderr)
            return EXIT_ASSERTION
        if np.any(report.omg_variance[both] < report.kalman_variance[both] - 1e-12):
            print("error: mixture variance fell below Kalman variance", file=sys.stderr)
            return EXIT_ASSERTION
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _resample_truth(
    truth: np.ndarray, truth_meta, origin: tuple[float, float], resolution: float, shape
) -> np.ndarray:
    rows, cols = shape
    xs = origin[0] + (np.arange(cols) + 0.5) * resolution
    ys = origin[1] + (np.arange(rows) + 0.5) * resolution
    ci = np.floor((xs - truth_meta.origin_x) / truth_meta.resolution).astype(np.int64)
    ri = np.floor((ys - truth_meta.origin_y) / truth_meta.resolution).astype(np.int64)
    out = np.full((rows, cols), np.nan)
    ok_c = (ci >= 0) & (ci < truth_meta.width)
    ok_r = (ri >= 0) & (ri < truth_meta.height)
    rr, cc = np.meshgrid(ri[ok_r], ci[ok_c], indexing="ij")
    block = truth[rr, cc]
    out[np.ix_(ok_r, ok_c)] = block
    return out


def _cmd_eval(args: argparse.Namespace) -> int:
    if args.mode == "rmse":
        est, meta = read_raster(Path(args.run) / "final" / "layer0_mean.demr")
        truth, tmeta = read_raster(Path(args.truth) / "truth_height.demr")
        aligned = _resample_truth(truth, tmeta, (meta.origin_x, meta.origin_y),
                                  meta.resolution, est.shape)
        rmse, overlap, empty = bench_mod.eval_rmse(est.astype(np.float64), aligned)
        out = Path(args.out) if args.out else Path(args.run)
        out.mkdir(parents=True, exist_ok=True)
        (out / "rmse.csv").write_text(
            "rmse_m,overlap_cells,estimate_empty_cells\n"
            f"{rmse!r},{overlap},{empty}\n"
        )
        print(f"rmse,{rmse!r},overlap,{overlap},empty,{empty}")
        if overlap == 0:
            print("error: estimate and truth do not overlap", file=sys.stderr)
            return EXIT_ASSERTION
    elif args.mode == "failures":
        cfg = _collect_config(args)
        paths = read_frames_dir(args.frames)
        frames = [read_frame(p) for p in paths]
        spec = _load_sim_spec(str(Path(args.truth) / "spec_resolved.cfg"), [])
        terrain = generate_terrain(
            TerrainSpec(
                seed=spec["seed"], extent=spec["extent"], amplitude=spec["amplitude"],
                wavelength=spec["wavelength"], rock_count=spec["rock_count"],
                rock_density=spec["rock_density"],
                rock_radius=(spec["rock_radius_min"], spec["rock_radius_max"]),
                rock_height=(spec["rock_height_min"], spec["rock_height_max"]),
                resolution=spec["gt_resolution"],
            )
        )
        resolutions = [float(r) for r in args.resolutions.split(",")]
        reports = bench_mod.eval_landing_failures(
            frames, terrain, resolutions, cfg.pyramid.map_size, cfg.camera,
            cfg.seg, cfg.detect, cfg.pyramid.num_layers,
            cfg.pyramid.first_measurement_inflation,
        )
        out = Path(args.out) if args.out else Path(args.frames).parent
        out.mkdir(parents=True, exist_ok=True)
        lines = ["resolution_m,method,selections,rejections,failures,failures_with_margin"]
        for r in reports:
            lines.append(f"{r.resolution!r},{r.method},{r.selections},{r.rejections},"
                         f"{r.failures},{r.failures_with_margin}")
        (out / "failures.csv").write_text("\n".join(lines) + "\n")
        print("\n".join(lines))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pyradem",
        description="Multi-resolution elevation mapping and landing site detection",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a synthetic flight dataset")
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--spec", help="terrain/flight key=value spec file")
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--frames", type=int, default=None)
    p_sim.add_argument("--extent", type=float, default=None)
    p_sim.add_argument("--rocks", type=int, default=None, help="override rock_count")
    p_sim.add_argument("--binary", action="store_true", help="write packed binary frames")
    p_sim.set_defaults(func=_cmd_simulate)

    p_run = sub.add_parser("run", help="run the mapping/detection pipeline on frames")
    p_run.add_argument("--frames", required=True)
    p_run.add_argument("--out", required=True)
    _add_run_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_bench = sub.add_parser("bench", help="benchmarks (updates | seg | fusion)")
    p_bench.add_argument("--mode", choices=("updates", "seg", "fusion"), required=True)
    p_bench.add_argument("--frames", help="frame directory (updates/fusion modes)")
    p_bench.add_argument("--sizes", default="256,480", help="raster sizes (seg mode)")
    p_bench.add_argument("--radius", type=int, default=10, help="search radius in cells (seg mode)")
    p_bench.add_argument("--out", help="optional raster output directory (fusion mode)")
    _add_run_flags(p_bench)
    p_bench.set_defaults(func=_cmd_bench)

    p_eval = sub.add_parser("eval", help="evaluate a run against ground truth")
    p_eval.add_argument("--mode", choices=("rmse", "failures"), default="rmse")
    p_eval.add_argument("--run", help="run output directory (rmse mode)")
    p_eval.add_argument("--truth", required=True, help="simulate output directory")
    p_eval.add_argument("--frames", help="frame directory (failures mode)")
    p_eval.add_argument("--resolutions", default="0.05,0.1,0.2")
    p_eval.add_argument("--out", help="report directory")
    _add_run_flags(p_eval)
    p_eval.set_defaults(func=_cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FrameFormatError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
