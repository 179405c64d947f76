"""Point-cloud frame files and the per-frame detection report.

Frames exist in two equivalent forms: a CSV with a small key,value header
(readable, diff-friendly) and a packed binary (magic ``PCB1``, little-endian
float64 fields in fixed order) for throughput tests. A directory of frames is
read in sorted filename order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .detection import DetectionResult
from .synth import FrameData

__all__ = [
    "FrameFormatError",
    "detection_report_lines",
    "read_frame",
    "read_frames_dir",
    "write_frame_bin",
    "write_frame_csv",
]

_BIN_MAGIC = b"PCB1"
_CSV_COLUMNS = "world_x,world_y,height,depth,variance"


class FrameFormatError(ValueError):
    """A frame file does not parse."""


def write_frame_csv(path: str | Path, frame: FrameData) -> None:
    lines = [
        f"frame,{frame.frame_id}",
        f"pose,{frame.camera_x!r},{frame.camera_y!r},{frame.camera_z!r}",
        f"count,{frame.points.shape[0]}",
        _CSV_COLUMNS,
    ]
    for row in frame.points:
        lines.append(",".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def write_frame_bin(path: str | Path, frame: FrameData) -> None:
    pts = np.ascontiguousarray(frame.points, np.float64)
    header = _BIN_MAGIC + struct.pack(
        "<qdddq",
        frame.frame_id,
        frame.camera_x,
        frame.camera_y,
        frame.camera_z,
        pts.shape[0],
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(pts.astype("<f8").tobytes())


def _read_frame_csv(path: Path) -> FrameData:
    try:
        lines = path.read_text(encoding="ascii").splitlines()
        if not lines[0].startswith("frame,"):
            raise ValueError("missing frame header")
        frame_id = int(lines[0].split(",", 1)[1])
        pose = lines[1].split(",")
        if pose[0] != "pose":
            raise ValueError("missing pose header")
        cx, cy, cz = (float(v) for v in pose[1:4])
        count = int(lines[2].split(",", 1)[1])
        if lines[3] != _CSV_COLUMNS:
            raise ValueError(f"unexpected column header {lines[3]!r}")
        data = np.loadtxt(lines[4 : 4 + count], delimiter=",", ndmin=2, dtype=np.float64)
        if data.shape != (count, 5):
            raise ValueError(f"expected {count} rows of 5 fields, got {data.shape}")
    except (IndexError, ValueError) as exc:
        raise FrameFormatError(f"{path}: {exc}") from exc
    return FrameData(frame_id, cx, cy, cz, data)


def _read_frame_bin(path: Path) -> FrameData:
    blob = path.read_bytes()
    header_size = len(_BIN_MAGIC) + struct.calcsize("<qdddq")
    if len(blob) < header_size or blob[:4] != _BIN_MAGIC:
        raise FrameFormatError(f"{path}: not a PCB1 frame")
    frame_id, cx, cy, cz, count = struct.unpack_from("<qdddq", blob, 4)
    expected = header_size + count * 5 * 8
    if len(blob) != expected:
        raise FrameFormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    pts = np.frombuffer(blob, dtype="<f8", offset=header_size).reshape(count, 5)
    return FrameData(int(frame_id), cx, cy, cz, pts.copy())


def read_frame(path: str | Path) -> FrameData:
    path = Path(path)
    if path.suffix == ".csv":
        return _read_frame_csv(path)
    if path.suffix in (".bin", ".pcb"):
        return _read_frame_bin(path)
    raise FrameFormatError(f"{path}: unknown frame extension")


def read_frames_dir(directory: str | Path) -> list[Path]:
    """Frame file paths in sorted (frame order) sequence."""
    directory = Path(directory)
    paths = sorted(
        p for p in directory.iterdir() if p.suffix in (".csv", ".bin", ".pcb") and p.stem.startswith("frame_")
    )
    if not paths:
        raise FrameFormatError(f"{directory}: no frame_*.csv|bin files")
    return paths


def detection_report_lines(frame_id: int, det: DetectionResult) -> list[str]:
    """Stable comma-separated report: one line per candidate, then the
    selection line (index or REJECT)."""
    lines = []
    for idx, cand in enumerate(det.candidates):
        lines.append(
            f"{frame_id},{idx},{cand.peak_row},{cand.peak_col},"
            f"{cand.clearance!r},{cand.shifted_x!r},{cand.shifted_y!r},"
            f"{cand.area_variance!r}"
        )
    verdict = "REJECT" if det.selected is None else str(det.selected)
    lines.append(f"{frame_id},selected,{verdict}")
    return lines
