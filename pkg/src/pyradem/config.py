"""Flat key=value run configuration with CLI-flag overrides (last wins)."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .detection import DetectConfig
from .pyramid import CameraModel, PyramidConfig
from .segmentation import SegConfig

__all__ = ["ConfigError", "RunConfig", "load_run_config", "resolve_run_config"]


class ConfigError(ValueError):
    """A configuration file or flag is invalid; message carries the source."""


@dataclass
class RunConfig:
    pyramid: PyramidConfig = field(default_factory=PyramidConfig)
    seg: SegConfig = field(default_factory=SegConfig)
    detect: DetectConfig = field(default_factory=DetectConfig)
    camera: CameraModel = field(default_factory=CameraModel)
    inflation_enabled: bool = False
    inflation_k: float = 1.05
    seed: int = 0
    threads: int = 1
    strict: bool = False
    export_every: int = 0  # 0: final frame only


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (section attribute or None for top level, field name, parser)
_KEYS: dict[str, tuple[str | None, str, type | object]] = {
    "layers": ("pyramid", "num_layers", int),
    "base_res": ("pyramid", "base_resolution", float),
    "map_size": ("pyramid", "map_size", float),
    "first_meas_inflation": ("pyramid", "first_measurement_inflation", float),
    "roughness_thresh": ("seg", "roughness_threshold", float),
    "landing_radius": ("seg", "landing_radius", float),
    "search_radius": ("seg", "roughness_search_radius", float),
    "slope_thresh": ("seg", "slope_threshold", float),
    "max_peaks": ("detect", "max_peaks", int),
    "shift_iters": ("detect", "shift_iterations", int),
    "w_rough": ("detect", "weight_roughness", float),
    "w_dist": ("detect", "weight_distance", float),
    "w_sigma": ("detect", "weight_uncertainty", float),
    "peak_factor": ("detect", "peak_factor", float),
    "min_distance": ("detect", "min_distance", float),
    "focal_length": ("camera", "focal_length", float),
    "baseline": ("camera", "baseline", float),
    "disparity_noise": ("camera", "disparity_noise", float),
    "inflation": (None, "inflation_enabled", _parse_bool),
    "inflation_k": (None, "inflation_k", float),
    "seed": (None, "seed", int),
    "threads": (None, "threads", int),
    "strict": (None, "strict", _parse_bool),
    "export_every": (None, "export_every", int),
}


def _read_pairs(path: str | Path) -> list[tuple[str, str, str]]:
    pairs = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        pairs.append((key.strip(), value.strip(), f"{path}:{lineno}"))
    return pairs


def resolve_run_config(
    config_path: str | Path | None = None,
    overrides: list[tuple[str, str]] | None = None,
) -> RunConfig:
    """Build a RunConfig from an optional file plus (key, value) overrides.

    Violated invariants raise :class:`ConfigError` naming the offending
    source line or flag.
    """
    entries: list[tuple[str, str, str]] = []
    if config_path is not None:
        entries.extend(_read_pairs(config_path))
    for key, value in overrides or []:
        entries.append((key, value, f"flag --{key.replace('_', '-')}"))

    sections: dict[str | None, dict[str, object]] = {
        "pyramid": {},
        "seg": {},
        "detect": {},
        "camera": {},
        None: {},
    }
    for key, value, source in entries:
        if key not in _KEYS:
            raise ConfigError(f"{source}: unknown key {key!r}")
        section, attr, parser = _KEYS[key]
        try:
            sections[section][attr] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"{source}: bad value for {key!r}: {exc}") from exc

    try:
        cfg = RunConfig(
            pyramid=PyramidConfig(**sections["pyramid"]),
            seg=SegConfig(**sections["seg"]),
            detect=DetectConfig(**sections["detect"]),
            camera=CameraModel(**sections["camera"]),
            **sections[None],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.threads not in (1, 2):
        raise ConfigError(f"threads must be 1 or 2, got {cfg.threads}")
    if cfg.inflation_k < 1.0:
        raise ConfigError(f"inflation_k must be >= 1, got {cfg.inflation_k}")
    if cfg.export_every < 0:
        raise ConfigError("export_every must be >= 0")
    return cfg


def load_run_config(path: str | Path) -> RunConfig:
    return resolve_run_config(config_path=path)


def dump_run_config(cfg: RunConfig) -> str:
    """Serialize the fully resolved configuration as stable key=value text."""
    lines = []
    for key, (section, attr, _parser) in _KEYS.items():
        obj = cfg if section is None else getattr(cfg, section)
        value = getattr(obj, attr)
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def config_field_names() -> list[str]:
    return list(_KEYS)
