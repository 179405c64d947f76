"""DEMR1 raster container: a small text header followed by row-major
little-endian float32 data, NaN for empty cells. One file per channel per
layer."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["RasterMeta", "read_raster", "write_raster"]

_MAGIC = "DEMR1"
_CHANNELS = {
    "mean",
    "variance",
    "precision_sum",
    "count",
    "mask",
    "distance",
    "roughness",
    "slope",
}


@dataclass(frozen=True)
class RasterMeta:
    width: int
    height: int
    resolution: float
    origin_x: float
    origin_y: float
    layer: int
    channel: str


def write_raster(
    path: str | Path,
    data: np.ndarray,
    resolution: float,
    origin: tuple[float, float],
    layer: int,
    channel: str,
) -> None:
    if channel not in _CHANNELS:
        raise ValueError(f"unknown channel {channel!r}")
    arr = np.ascontiguousarray(np.asarray(data, np.float32))
    if arr.ndim != 2:
        raise ValueError("raster data must be 2-D")
    header = (
        f"{_MAGIC}\n"
        f"width {arr.shape[1]}\n"
        f"height {arr.shape[0]}\n"
        f"resolution {resolution!r}\n"
        f"origin_x {origin[0]!r}\n"
        f"origin_y {origin[1]!r}\n"
        f"layer {layer}\n"
        f"channel {channel}\n"
        "data\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(arr.astype("<f4").tobytes())


def read_raster(path: str | Path) -> tuple[np.ndarray, RasterMeta]:
    with open(path, "rb") as fh:
        blob = fh.read()
    try:
        head_end = blob.index(b"data\n") + len(b"data\n")
    except ValueError:
        raise ValueError(f"{path}: missing data marker") from None
    lines = blob[:head_end].decode("ascii").splitlines()
    if not lines or lines[0] != _MAGIC:
        raise ValueError(f"{path}: not a {_MAGIC} raster")
    fields: dict[str, str] = {}
    for line in lines[1:-1]:
        key, _, value = line.partition(" ")
        fields[key] = value
    meta = RasterMeta(
        width=int(fields["width"]),
        height=int(fields["height"]),
        resolution=float(fields["resolution"]),
        origin_x=float(fields["origin_x"]),
        origin_y=float(fields["origin_y"]),
        layer=int(fields["layer"]),
        channel=fields["channel"],
    )
    expected = meta.width * meta.height * 4
    payload = blob[head_end:]
    if len(payload) != expected:
        raise ValueError(f"{path}: expected {expected} data bytes, found {len(payload)}")
    data = np.frombuffer(payload, dtype="<f4").reshape(meta.height, meta.width)
    return data.copy(), meta
