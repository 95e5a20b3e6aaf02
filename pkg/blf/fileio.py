"""File formats for blf-py: matrix CSV, 16-bit PGM, JSON and run manifests."""

from __future__ import annotations

import json
import logging
import platform
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, TextIO, Union

import numpy as np
import scipy

from . import __version__
from .models import (
    CHANNEL_FILE,
    META_FILE,
    RATER_INTENSITY_FILE,
    RATER_LABELS_FILE,
    TARGET_INTENSITY_FILE,
    TRUTH_FILE,
    FusionInputs,
)
from .utils import stable_hash

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass(eq=False)
class MatrixParseError(Exception):
    """Raised when a matrix CSV file does not match its header."""

    path: str
    line: int
    reason: str

    def __post_init__(self):
        super().__init__(f"{self.path}:{self.line}: {self.reason}")


def _format_row(values: np.ndarray) -> str:
    if np.issubdtype(values.dtype, np.integer) or values.dtype == bool:
        return ",".join(str(int(x)) for x in values)
    return ",".join(format(float(x), ".17g") for x in values)


def write_matrix_csv(matrix: np.ndarray, path: PathLike) -> None:
    """Write a matrix as "rows,cols" followed by one comma-separated line per row

    Integer and boolean matrices are written as integers, floats with 17
    significant digits so that reading them back is exact.
    """
    matrix = np.asarray(matrix)
    if matrix.ndim == 1:
        matrix = matrix[:, None]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{matrix.shape[0]},{matrix.shape[1]}\n")
        for row in matrix:
            fh.write(_format_row(row) + "\n")


def read_matrix_csv(path: PathLike, dtype: Any = float) -> np.ndarray:
    """
    Read a matrix written by write_matrix_csv

    Raises:
        FileNotFoundError: If the file does not exist
        MatrixParseError: If the header is malformed or a row disagrees with it
    """
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].strip():
        raise MatrixParseError(str(path), 1, "missing 'rows,cols' header")
    try:
        n_rows, n_cols = (int(x) for x in lines[0].split(","))
    except ValueError:
        raise MatrixParseError(str(path), 1, f"malformed header '{lines[0]}'") from None
    if n_rows < 0 or n_cols < 0:
        raise MatrixParseError(str(path), 1, "negative dimensions in header")

    body = lines[1:]
    while body and not body[-1].strip():
        body.pop()
    if len(body) != n_rows:
        raise MatrixParseError(str(path), len(body) + 1, f"expected {n_rows} rows, found {len(body)}")

    matrix = np.empty((n_rows, n_cols), dtype=dtype)
    for i, line in enumerate(body):
        fields = line.split(",") if n_cols else []
        if len(fields) != n_cols:
            raise MatrixParseError(str(path), i + 2, f"expected {n_cols} values, found {len(fields)}")
        try:
            matrix[i] = [float(x) for x in fields]
        except ValueError as e:
            raise MatrixParseError(str(path), i + 2, str(e)) from None
    return matrix


class MatrixRowWriter:
    """Streams rows of a matrix CSV whose shape is known in advance"""

    def __init__(self, path: PathLike, n_rows: int, n_cols: int):
        self.path = Path(path)
        self.n_rows = n_rows
        self.n_cols = n_cols
        self.rows_written = 0
        self._fh: Optional[TextIO] = self.path.open("w", encoding="utf-8", newline="\n")
        self._fh.write(f"{n_rows},{n_cols}\n")

    def write_row(self, row: np.ndarray) -> None:
        row = np.asarray(row).reshape(-1)
        if row.shape[0] != self.n_cols:
            raise ValueError(f"row has {row.shape[0]} values, expected {self.n_cols}")
        self._fh.write(_format_row(row) + "\n")
        self.rows_written += 1

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None
            if self.rows_written != self.n_rows:
                logger.warning(f"{self.path}: wrote {self.rows_written} of {self.n_rows} rows")

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def write_pgm(values: np.ndarray, path: PathLike) -> None:
    """Write a [0,1] map as a binary 16-bit PGM (P5, big-endian)"""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    height, width = values.shape
    pixels = np.round(65535.0 * np.clip(values, 0.0, 1.0)).astype(">u2")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(f"P5\n{width} {height}\n65535\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path: PathLike) -> np.ndarray:
    """Read a 16-bit P5 PGM written by write_pgm as raw integer levels"""
    data = Path(path).read_bytes()
    header, offset = [], 0
    while len(header) < 4:
        while data[offset:offset + 1].isspace():
            offset += 1
        end = offset
        while not data[end:end + 1].isspace():
            end += 1
        header.append(data[offset:end].decode("ascii"))
        offset = end
    offset += 1
    if header[0] != "P5" or header[3] != "65535":
        raise ValueError(f"{path}: not a 16-bit binary PGM")
    width, height = int(header[1]), int(header[2])
    return np.frombuffer(data[offset:offset + 2 * width * height], dtype=">u2").reshape(height, width)


def write_json(data: Any, path: PathLike) -> None:
    """Write JSON through a temporary file and an atomic rename"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = path.with_suffix(path.suffix + ".tmp")
    with tmp_path.open("w", encoding="utf-8") as fh:
        json.dump(data, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")
    tmp_path.replace(path)


def read_json(path: PathLike) -> Any:
    with Path(path).open("r", encoding="utf-8") as fh:
        return json.load(fh)


def package_versions() -> Dict[str, str]:
    return {
        "blf": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def write_manifest(out_dir: PathLike, command: str, seed: Optional[int], config: Dict[str, Any],
                   extra: Optional[Dict[str, Any]] = None) -> Path:
    """Write run.json with the seed, a hash of the effective configuration and versions"""
    manifest = {
        "command": command,
        "seed": seed,
        "config_hash": stable_hash(config),
        "config": config,
        "versions": package_versions(),
    }
    if extra:
        manifest.update(extra)
    path = Path(out_dir) / "run.json"
    write_json(manifest, path)
    return path


def _require_file(path: Path) -> Path:
    if not path.is_file():
        raise FileNotFoundError(f"missing input file: {path}")
    return path


def read_data_dir(data_dir: PathLike) -> FusionInputs:
    """
    Load a fusion problem laid out as written by simgen.export_instance

    Rater files are numbered from 1 and read until the first missing index.
    truth.csv, channel.csv and meta.json are optional.

    Raises:
        FileNotFoundError: Naming the first missing required file
        MatrixParseError: If a file is malformed or shapes disagree
    """
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise FileNotFoundError(f"missing data directory: {data_dir}")
    target_path = _require_file(data_dir / TARGET_INTENSITY_FILE)
    target = read_matrix_csv(target_path)
    height, width = target.shape

    labels, intensities = [], []
    r = 1
    while (data_dir / RATER_LABELS_FILE.format(r=r)).is_file():
        label_path = data_dir / RATER_LABELS_FILE.format(r=r)
        intensity_path = _require_file(data_dir / RATER_INTENSITY_FILE.format(r=r))
        for path, matrix, store in ((label_path, read_matrix_csv(label_path, dtype=np.int8), labels),
                                    (intensity_path, read_matrix_csv(intensity_path), intensities)):
            if matrix.shape != (height, width):
                raise MatrixParseError(str(path), 1, f"shape {matrix.shape} differs from target {height}x{width}")
            store.append(matrix.reshape(-1))
        r += 1
    if not labels:
        _require_file(data_dir / RATER_LABELS_FILE.format(r=1))

    def optional(name: str, dtype: Any) -> Optional[np.ndarray]:
        path = data_dir / name
        if not path.is_file():
            return None
        matrix = read_matrix_csv(path, dtype=dtype)
        if matrix.shape != (height, width):
            raise MatrixParseError(str(path), 1, f"shape {matrix.shape} differs from target {height}x{width}")
        return matrix.reshape(-1)

    meta_path = data_dir / META_FILE
    metadata = read_json(meta_path) if meta_path.is_file() else {}
    inputs = FusionInputs(
        height=height,
        width=width,
        labels=np.column_stack(labels),
        rater_intensity=np.column_stack(intensities),
        target_intensity=target.reshape(-1),
        truth=optional(TRUTH_FILE, np.int8),
        channel=optional(CHANNEL_FILE, float),
        metadata=metadata,
    )
    logger.info(f"Loaded {data_dir}: {height}x{width} lattice, {inputs.n_raters} raters")
    return inputs


__all__ = [
    "MatrixParseError",
    "MatrixRowWriter",
    "read_data_dir",
    "read_json",
    "read_matrix_csv",
    "read_pgm",
    "write_json",
    "write_manifest",
    "write_matrix_csv",
    "write_pgm",
]
