"""
CLI utilities

Console output helpers shared by the subcommands: emoji status lines,
headers and tabulate tables with 6-significant-digit floats.
"""

import math
from typing import Any, Dict, Iterable, List, Optional, Sequence

from tabulate import tabulate

from .utils.file_utils import format_float


def print_header(title: str, width: int = 60) -> None:
    """
    Print an emphasized header.

    Args:
        title: Header text
        width: Total header width
    """
    print("\n" + "=" * width)
    padding = max((width - len(title)) // 2, 0)
    print(" " * padding + title)
    print("=" * width + "\n")


def print_step(step: str, description: str) -> None:
    print(f"\n[{step}] {description}")
    print("-" * 60)


def print_info(message: str) -> None:
    print(f"ℹ️  {message}")


def print_success(message: str) -> None:
    print(f"✅ {message}")


def print_warning(message: str) -> None:
    print(f"⚠️  {message}")


def print_error(message: str) -> None:
    print(f"❌ {message}")


def format_value(value: Any) -> str:
    """Floats with 6 significant digits, None and NaN as '-'"""
    if value is None:
        return "-"
    if isinstance(value, float):
        return "-" if math.isnan(value) else format_float(value)
    return str(value)


def print_table(rows: Iterable[Dict[str, Any]], columns: Optional[Sequence[str]] = None) -> None:
    """
    Print dict rows as a console table.

    Args:
        rows: Row dictionaries
        columns: Column order; keys of the first row when omitted
    """
    row_list: List[Dict[str, Any]] = list(rows)
    if not row_list:
        print_info("(no rows)")
        return
    headers = list(columns) if columns else list(row_list[0].keys())
    body = [[format_value(row.get(h)) for h in headers] for row in row_list]
    print(tabulate(body, headers=headers, tablefmt="simple"))


def summary_line(summary: Dict[str, Any]) -> str:
    """One-line run summary: final accuracy, cluster count and α*"""
    return (
        f"final mean balanced accuracy {format_value(summary.get('final_mean_accuracy'))}, "
        f"Z={summary.get('num_clusters')}, alpha*={format_value(summary.get('alpha_star'))}"
    )
