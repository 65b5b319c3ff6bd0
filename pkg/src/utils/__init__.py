"""
Shared utilities: logging setup, seeded streams and file writing.
"""

from .helpers import derive_rng, derive_seed, setup_logging
from .file_utils import (
    append_table,
    atomic_write_text,
    format_float,
    read_matrix,
    read_table,
    write_matrix,
    write_table,
)

__all__ = [
    "derive_rng",
    "derive_seed",
    "setup_logging",
    "append_table",
    "atomic_write_text",
    "format_float",
    "read_matrix",
    "read_table",
    "write_matrix",
    "write_table",
]
