"""
File writing utilities

CSV tables, header-less matrices and atomic text writes used by the run
directory and the CLI.
"""

import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from ..errors import DataFormatError

PathLike = Union[str, Path]

FLOAT_FORMAT = "%.6g"


def ensure_parent(path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def format_float(value: float) -> str:
    """Render a float with 6 significant digits"""
    return FLOAT_FORMAT % value


def atomic_write_text(path: PathLike, text: str) -> None:
    """
    Write text through a temporary file and rename it into place.

    Args:
        path: Destination file
        text: File contents
    """
    target = ensure_parent(path)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", dir=str(target.parent))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp_name, target)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def write_table(
    path: PathLike,
    rows: Iterable[Dict[str, Any]],
    columns: Optional[Sequence[str]] = None,
) -> Path:
    """
    Write dict rows as a CSV table with a header.

    Args:
        path: Destination CSV
        rows: Row dictionaries
        columns: Column order; inferred from the first row when omitted

    Returns:
        The written path
    """
    frame = pd.DataFrame(list(rows), columns=list(columns) if columns else None)
    target = ensure_parent(path)
    atomic_write_text(target, frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n"))
    return target


def append_table(path: PathLike, rows: List[Dict[str, Any]], columns: Sequence[str]) -> Path:
    """Append rows to a CSV table, writing the header on first use"""
    target = ensure_parent(path)
    frame = pd.DataFrame(rows, columns=list(columns))
    header = not target.exists()
    frame.to_csv(target, mode="a", header=header, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return target


def write_matrix(path: PathLike, matrix: np.ndarray) -> Path:
    """Write a 2-D array as a header-less CSV"""
    target = ensure_parent(path)
    frame = pd.DataFrame(np.atleast_2d(np.asarray(matrix, dtype=float)))
    atomic_write_text(
        target, frame.to_csv(index=False, header=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    )
    return target


def read_matrix(path: PathLike) -> np.ndarray:
    """
    Read a header-less numeric CSV into a 2-D float array.

    Raises:
        DataFormatError: If the file is missing, empty or not numeric
    """
    source = Path(path)
    if not source.exists():
        raise DataFormatError(f"Matrix file not found: {source}")
    try:
        frame = pd.read_csv(source, header=None)
    except pd.errors.EmptyDataError as e:
        raise DataFormatError(f"Matrix file is empty: {source}") from e
    try:
        values = frame.to_numpy(dtype=float)
    except ValueError as e:
        raise DataFormatError(f"Matrix file is not numeric: {source}") from e
    if values.size == 0:
        raise DataFormatError(f"Matrix file is empty: {source}")
    return values


def read_table(path: PathLike) -> pd.DataFrame:
    """Read a CSV table with a header"""
    source = Path(path)
    if not source.exists():
        raise DataFormatError(f"Table not found: {source}")
    try:
        return pd.read_csv(source)
    except pd.errors.EmptyDataError as e:
        raise DataFormatError(f"Table is empty: {source}") from e
