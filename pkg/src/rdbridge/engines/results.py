"""ResultSet plus the value conventions both engines share."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Any, Sequence

from ..schema import format_cell

REL_TOL = 1e-9
ABS_TOL = 1e-12


@dataclass(frozen=True)
class ResultSet:
    columns: tuple[str, ...]
    rows: tuple[tuple[Any, ...], ...]
    ordered: bool = False

    def __post_init__(self):
        for row in self.rows:
            if len(row) != len(self.columns):
                raise ValueError(f"row {row!r} has {len(row)} values for {len(self.columns)} columns")

    def __len__(self) -> int:
        return len(self.rows)

    def to_csv(self) -> str:
        """Header row, then one line per row; nulls are empty fields."""
        buf = io.StringIO(newline="")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([format_cell(v) for v in row])
        return buf.getvalue()


def is_number(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def sort_key(v: Any) -> tuple:
    """Total order over result values: null < boolean < number < text < other."""
    if v is None:
        return (0,)
    if isinstance(v, bool):
        return (1, v)
    if is_number(v):
        if isinstance(v, float) and math.isnan(v):
            return (2, -math.inf, 1)
        return (2, v, 0)
    if isinstance(v, str):
        return (3, v)
    return (4, str(v))


def row_key(row: Sequence[Any]) -> tuple:
    return tuple(sort_key(v) for v in row)


def value_key(v: Any) -> tuple:
    """Hashable equality key: 1 and 1.0 coincide, True and 1 do not."""
    if v is None:
        return ("null",)
    if isinstance(v, bool):
        return ("bool", v)
    if is_number(v):
        return ("num", v)
    return (type(v).__name__, v)


def values_equal(a: Any, b: Any) -> bool:
    """Result-value equality with the shared 1e-9 relative numeric tolerance."""
    if a is None or b is None:
        return a is None and b is None
    if isinstance(a, bool) or isinstance(b, bool):
        return isinstance(a, bool) and isinstance(b, bool) and a == b
    if is_number(a) and is_number(b):
        if a == b:
            return True
        return math.isclose(a, b, rel_tol=REL_TOL, abs_tol=ABS_TOL)
    if is_number(a) or is_number(b):
        return False
    return a == b
