"""
Artifact persistence: fields and tables as CSV, reports and manifests as JSON.
"""

import json
import logging
from pathlib import Path
from typing import Any, List, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel

from app.lab.barriers import Modulus
from app.lab.exceptions import ConfigError
from app.lab.fields import Field, Grid, TailModel

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
HEADER_PREFIX = "# "


def _field_frame(u: Field, indices: np.ndarray) -> pd.DataFrame:
    points = u.grid.points
    columns = {"t": np.repeat(u.times[indices], points.shape[0])}
    for d in range(u.n):
        columns[f"x{d + 1}"] = np.tile(points[:, d], indices.size)
    columns["u"] = u.values[indices].reshape(-1)
    return pd.DataFrame(columns)


def save_field(u: Field, path: Union[str, Path], stride: int = 1) -> Path:
    """
    Long-format CSV (t, x1[, x2], u) after a one-line JSON header with the grid,
    the time samples kept and the tail description.
    """
    path = Path(path)
    indices = np.arange(0, u.times.size, max(1, stride))
    if indices[-1] != u.times.size - 1:
        indices = np.append(indices, u.times.size - 1)
    header = {
        "n": u.n,
        "h": u.grid.h,
        "R": u.grid.R,
        "times": int(indices.size),
        "tail": u.tail.describe(),
    }
    with path.open("w", encoding="utf-8", newline="") as f:
        f.write(HEADER_PREFIX + json.dumps(header, sort_keys=True) + "\n")
        _field_frame(u, indices).to_csv(f, index=False, float_format=FLOAT_FORMAT)
    return path


def load_field(path: Union[str, Path]) -> Field:
    """Inverse of save_field; explicit tails come back as zero tails."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as f:
        first = f.readline()
        if not first.startswith(HEADER_PREFIX):
            raise ConfigError(f"{path} has no field header", {"path": str(path)})
        header = json.loads(first[len(HEADER_PREFIX):])
        frame = pd.read_csv(f)
    grid = Grid(int(header["n"]), float(header["h"]), float(header["R"]))
    times = frame["t"].drop_duplicates().to_numpy()
    values = frame["u"].to_numpy().reshape((times.size,) + grid.shape)
    tail_info = header.get("tail", {})
    if tail_info.get("kind") == "even":
        tail = TailModel.even(tail_info["growth"], tail_info["coefficient"])
    else:
        tail = TailModel.zero()
    return Field(grid, values, times, tail)


class ArtifactWriter:
    """Writes artifacts into one run directory and remembers their names."""

    def __init__(self, output_dir: Union[str, Path]):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.artifacts: List[str] = []

    def _path(self, name: str) -> Path:
        self.artifacts.append(name)
        return self.output_dir / name

    def write_json(self, name: str, payload: Any) -> Path:
        if isinstance(payload, BaseModel):
            payload = payload.model_dump(mode="json")
        path = self._path(name)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=float) + "\n", encoding="utf-8")
        logger.debug(f"wrote {path}")
        return path

    def write_frame(self, name: str, frame: pd.DataFrame) -> Path:
        path = self._path(name)
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
        logger.debug(f"wrote {path} ({len(frame)} rows)")
        return path

    def write_modulus(self, name: str, modulus: Modulus) -> Path:
        return self.write_frame(name, modulus.to_frame())

    def write_field(self, name: str, u: Field, max_slices: Optional[int] = 64) -> Path:
        stride = 1 if max_slices is None else max(1, int(np.ceil(u.times.size / max_slices)))
        path = save_field(u, self._path(name), stride)
        logger.debug(f"wrote {path} with stride {stride}")
        return path

    def write_slices(self, prefix: str, u: Field, max_slices: Optional[int] = 64) -> List[Path]:
        """One field CSV per kept time slice plus `<prefix>_index.csv` mapping slice number to time."""
        stride = 1 if max_slices is None else max(1, int(np.ceil(u.times.size / max_slices)))
        indices = np.arange(0, u.times.size, stride)
        if indices[-1] != u.times.size - 1:
            indices = np.append(indices, u.times.size - 1)
        paths, rows = [], []
        for k, i in enumerate(indices):
            name = f"{prefix}_{k:04d}.csv"
            piece = Field(u.grid, u.values[i : i + 1], u.times[i : i + 1], u.tail)
            paths.append(save_field(piece, self._path(name)))
            rows.append({"slice": k, "t": float(u.times[i]), "file": name})
        self.write_frame(f"{prefix}_index.csv", pd.DataFrame(rows))
        logger.debug(f"wrote {len(paths)} slices of {prefix} with stride {stride}")
        return paths
