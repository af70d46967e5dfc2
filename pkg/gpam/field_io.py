import csv
import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Union

import numpy as np
from pydantic import BaseModel

from gpam.fields import Field, FieldError, Grid2D, GridError
from gpam.spde_solver import Trajectory

logger = logging.getLogger(__name__)

MAGIC = b"GPF1"
HEADER = struct.Struct("<4sII")
MANIFEST = "manifest.json"

PathLike = Union[str, Path]


class FieldFormatError(Exception):
    pass


def encode_field(field: Field) -> bytes:
    return HEADER.pack(MAGIC, field.grid.n, 0) + field.values.astype("<f8").tobytes(order="C")


def decode_field(data: bytes) -> Field:
    if len(data) < HEADER.size:
        raise FieldFormatError(f"Truncated field file ({len(data)} bytes)")
    magic, n, _ = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FieldFormatError(f"Bad magic {magic!r}, expected {MAGIC!r}")
    expected = HEADER.size + 8 * n * n
    if len(data) != expected:
        raise FieldFormatError(f"Field of size {n} needs {expected} bytes, got {len(data)}")
    try:
        values = np.frombuffer(data, dtype="<f8", offset=HEADER.size).reshape(n, n)
        return Field(Grid2D(n), values)
    except (GridError, FieldError) as e:
        raise FieldFormatError(str(e)) from e


def write_field(path: PathLike, field: Field) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_field(field))
    logger.debug(f"Wrote {field.grid.n}x{field.grid.n} field to {path}")
    return path


def read_field(path: PathLike) -> Field:
    path = Path(path)
    if not path.is_file():
        raise FieldFormatError(f"Field file not found: {path}")
    return decode_field(path.read_bytes())


def write_field_csv(path: PathLike, field: Field) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    x1, x2 = field.grid.coords
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x1", "x2", "value"])
        writer.writerows(zip(x1.ravel().tolist(), x2.ravel().tolist(), field.values.ravel().tolist()))
    return path


def write_table_csv(path: PathLike, rows: Iterable[Mapping[str, Any]]) -> Path:
    rows = list(rows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        if rows:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
    return path


def write_report(path: PathLike, report: Union[BaseModel, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(report, BaseModel):
        text = report.model_dump_json(indent=2)
    else:
        text = json.dumps(report, indent=2, sort_keys=True)
    path.write_text(text + "\n", encoding="utf-8")
    logger.info(f"Report written to {path}")
    return path


def save_trajectory(directory: PathLike, traj: Trajectory, params: Optional[Dict[str, Any]] = None, seed: Optional[int] = None) -> Path:
    """Frames as frame_0000.gpf, ... plus a JSON manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for idx, frame in enumerate(traj.frames):
        name = f"frame_{idx:04d}.gpf"
        write_field(directory / name, frame)
        files.append(name)
    manifest = {
        "times": list(traj.times),
        "steps": list(traj.steps),
        "dt": traj.dt,
        "files": files,
        "params": {**traj.meta, **(params or {})},
        "seed": seed,
        "blowup": traj.blowup,
        "blowup_time": traj.blowup_time,
    }
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"Saved {len(files)} frames to {directory}")
    return directory


def load_trajectory(directory: PathLike) -> Trajectory:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / MANIFEST).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise FieldFormatError(f"Cannot read trajectory manifest in {directory}: {e}") from e
    frames = tuple(read_field(directory / name) for name in manifest["files"])
    return Trajectory(
        times=tuple(manifest["times"]),
        frames=frames,
        steps=tuple(manifest["steps"]),
        dt=manifest["dt"],
        blowup=manifest["blowup"],
        blowup_time=manifest["blowup_time"],
        meta=manifest.get("params", {}),
    )
