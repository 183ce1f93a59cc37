"""Incidence files, result serialisation and atomic output directories.

Incidence files are comma-separated with header ``season,day,group,count``.
Counts are written with ``repr`` so a read after a write is bit-exact; result
files use 12 significant digits and a fixed key order.
"""
from __future__ import annotations

import csv
import json
import math
import os
import shutil
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .epi import IncidenceSeries
from .observe import smooth

HEADER = ("season", "day", "group", "count")
SIG_DIGITS = 12


class IngestError(ValueError):
    """Invalid incidence file; ``kind`` names the failed check."""

    def __init__(self, kind: str, message: str, rows: Sequence[int] = ()):
        super().__init__(message)
        self.kind = kind
        self.rows = list(rows)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "rows": self.rows}


@dataclass
class IncidenceData:
    """Validated series, one ``(m, T_y)`` block per season."""

    seasons: list[str]
    groups: list[str]
    series: list[IncidenceSeries]
    first_day: list[int]

    @property
    def m(self) -> int:
        return len(self.groups)

    @property
    def L(self) -> int:
        return len(self.seasons)

    def values(self) -> list[np.ndarray]:
        return [np.asarray(s.values) for s in self.series]


def ingest(
    path,
    *,
    groups: Sequence[str] | None = None,
    window: int = 1,
    start_day: int | None = None,
    end_day: int | None = None,
    negative_floor: float | None = None,
) -> IncidenceData:
    """Read and validate an incidence file.

    Parameters
    ----------
    path
        CSV file with header ``season,day,group,count``.
    groups
        Expected group names in model order; defaults to order of appearance.
    window
        Odd moving-average window applied after validation (1 = none).
    start_day, end_day
        Inclusive day window kept from every season.
    negative_floor
        Counts below ``-negative_floor`` are rejected.  ``None`` accepts any
        finite count, since noisy observations may dip below zero.

    Raises
    ------
    IngestError
        With ``kind`` one of ``header``, ``parse``, ``duplicate``, ``negative``,
        ``groups``, ``gap`` or ``empty``, and the offending line numbers.
    """
    records: dict[tuple[str, str], dict[int, tuple[float, int]]] = {}
    season_order: list[str] = []
    group_order: list[str] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != HEADER:
            raise IngestError("header", f"expected header {','.join(HEADER)}, got {header}", [1])
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise IngestError("parse", f"line {line}: expected 4 fields, got {len(row)}", [line])
            season, day_s, group, count_s = (c.strip() for c in row)
            try:
                day = int(day_s)
                count = float(count_s)
            except ValueError:
                raise IngestError("parse", f"line {line}: cannot parse day {day_s!r} or count {count_s!r}", [line])
            if day < 0 or not math.isfinite(count):
                raise IngestError("parse", f"line {line}: day must be >= 0 and count finite", [line])
            if negative_floor is not None and count < -negative_floor:
                raise IngestError("negative", f"line {line}: count {count} below -{negative_floor}", [line])
            if season not in season_order:
                season_order.append(season)
            if group not in group_order:
                group_order.append(group)
            days = records.setdefault((season, group), {})
            if day in days:
                first = days[day][1]
                raise IngestError(
                    "duplicate", f"lines {first} and {line}: duplicate (season={season}, day={day}, group={group})",
                    [first, line],
                )
            days[day] = (count, line)
    if not records:
        raise IngestError("empty", "no data rows")

    if groups is None:
        groups = group_order
    groups = list(groups)
    for s in season_order:
        present = [g for g in group_order if (s, g) in records]
        if sorted(present) != sorted(groups):
            rows = [ln for g in present for _, ln in records[(s, g)].values()][:1]
            raise IngestError(
                "groups", f"season {s}: groups {present} differ from expected {groups}", rows,
            )

    series, first_days = [], []
    for s in season_order:
        lo = hi = None
        for g in groups:
            days = records[(s, g)]
            d_sorted = sorted(days)
            missing = sorted(set(range(d_sorted[0], d_sorted[-1] + 1)) - set(days))
            if missing:
                after = days[max(d for d in d_sorted if d < missing[0])][1]
                raise IngestError(
                    "gap", f"season {s}, group {g}: missing day {missing[0]}"
                    + (f" (and {len(missing) - 1} more)" if len(missing) > 1 else ""), [after],
                )
            if lo is None:
                lo, hi = d_sorted[0], d_sorted[-1]
            elif (d_sorted[0], d_sorted[-1]) != (lo, hi):
                edge = d_sorted[0] if d_sorted[0] != lo else d_sorted[-1]
                raise IngestError(
                    "gap", f"season {s}, group {g}: covers days {d_sorted[0]}..{d_sorted[-1]},"
                    f" other groups {lo}..{hi}", [days[edge][1]],
                )
        a = lo if start_day is None else max(lo, start_day)
        b = hi if end_day is None else min(hi, end_day)
        if b < a:
            raise IngestError("empty", f"season {s}: no days inside the window {start_day}..{end_day}")
        vals = np.array([[records[(s, g)][d][0] for d in range(a, b + 1)] for g in groups])
        if window > 1:
            vals = smooth(vals, window)
        series.append(IncidenceSeries(vals))
        first_days.append(a)
    return IncidenceData(season_order, groups, series, first_days)


def export_incidence(path, series: Iterable, groups: Sequence[str], seasons: Sequence[str] | None = None,
                     first_day: Sequence[int] | None = None) -> None:
    """Write series in the ingest format; counts use ``repr`` for exact round trips."""
    series = [np.asarray(getattr(s, "values", s)) for s in series]
    seasons = list(seasons) if seasons is not None else [str(y + 1) for y in range(len(series))]
    first_day = list(first_day) if first_day is not None else [0] * len(series)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for season, vals, a in zip(seasons, series, first_day):
            for t in range(vals.shape[1]):
                for j, g in enumerate(groups):
                    w.writerow((season, a + t, g, repr(float(vals[j, t]))))


def fmt(x: float) -> str:
    """12-significant-digit text for a float."""
    return f"{float(x):.{SIG_DIGITS}g}"


def to_jsonable(obj):
    """Recursively convert to JSON types, rounding floats to 12 digits."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return float(fmt(x)) if math.isfinite(x) else None
    return obj


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(to_jsonable(obj), fh, indent=2)
        fh.write("\n")


def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Column-oriented CSV; floats at 12 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


@contextmanager
def atomic_dir(target):
    """Yield a scratch directory that replaces ``target`` only on success.

    On any exception the scratch directory is deleted and ``target`` is left
    as it was.
    """
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if target.exists():
        old = target.with_name(f".{target.name}.old")
        shutil.rmtree(old, ignore_errors=True)
        os.replace(target, old)
        os.replace(tmp, target)
        shutil.rmtree(old, ignore_errors=True)
    else:
        os.replace(tmp, target)
