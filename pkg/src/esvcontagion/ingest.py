"""Loading, validating and date-aligning daily return series.

All returns are carried in percent per day. Dates are ``numpy.datetime64[D]``
values with no time zone; a trading day is only an ordered key.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyFile, EmptyIntersection, NonPositivePrice, ParseError, ValidationError

KINDS = ("return", "price", "risk_free_rate")


@dataclass(frozen=True)
class RawSeries:
    ticker: str
    dates: np.ndarray
    values: np.ndarray
    kind: str = "return"

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        values = np.asarray(self.values, dtype=float)
        if self.kind not in KINDS:
            raise ValidationError(f"unknown series kind {self.kind!r}")
        if dates.shape != values.shape or dates.ndim != 1:
            raise ValidationError(f"{self.ticker}: dates and values must be equal-length vectors")
        if dates.size > 1:
            steps = np.diff(dates).astype(np.int64)
            bad = np.flatnonzero(steps <= 0)
            if bad.size:
                d = dates[bad[0] + 1]
                kind = "duplicate" if steps[bad[0]] == 0 else "out-of-order"
                raise ParseError(f"{self.ticker}: {kind} date {d}")
        if not np.all(np.isfinite(values)):
            raise ValidationError(f"{self.ticker}: non-finite values")
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class ReturnPanel:
    """Date-aligned matrix of daily excess returns, one row per date."""

    dates: np.ndarray
    columns: tuple
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        values = np.asarray(self.values, dtype=float)
        columns = tuple(self.columns)
        if values.ndim != 2 or values.shape != (dates.size, len(columns)):
            raise ValidationError("panel values must be (n_dates, n_columns)")
        if dates.size < 2:
            raise ValidationError("a panel needs at least 2 rows")
        if len(set(columns)) != len(columns):
            raise ValidationError("duplicate panel column names")
        if not np.all(np.isfinite(values)):
            raise ValidationError("panel contains non-finite values")
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "columns", columns)

    def __len__(self):
        return self.dates.size

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.columns.index(name)]
        except ValueError:
            raise KeyError(f"no column {name!r}; have {list(self.columns)}") from None

    def series(self) -> list[RawSeries]:
        return [RawSeries(c, self.dates, self.values[:, j]) for j, c in enumerate(self.columns)]

    def select(self, names: Sequence[str]) -> "ReturnPanel":
        idx = [self.columns.index(n) for n in names]
        return ReturnPanel(self.dates, tuple(names), self.values[:, idx])

    def to_csv(self, path) -> None:
        write_wide_csv(path, self.dates, {c: self.values[:, j] for j, c in enumerate(self.columns)})

    @classmethod
    def from_csv(cls, path, columns: Sequence[str] | None = None) -> "ReturnPanel":
        series = load_series(path, "wide", rf_column=None)
        if columns is not None:
            by_name = {s.ticker: s for s in series}
            missing = [c for c in columns if c not in by_name]
            if missing:
                raise ValidationError(f"{path}: missing columns {missing}")
            series = [by_name[c] for c in columns]
        return align(series)


def format_float(x: float) -> str:
    # repr is the shortest string that round-trips exactly
    return repr(float(x))


def write_wide_csv(path, dates, columns: dict) -> None:
    """Write a date column plus named float columns; NaN is written as an empty cell."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *columns])
        cols = [np.asarray(v, dtype=float) for v in columns.values()]
        for i, d in enumerate(np.asarray(dates, dtype="datetime64[D]")):
            w.writerow([str(d), *("" if math.isnan(c[i]) else format_float(c[i]) for c in cols)])


def parse_date(text: str) -> np.datetime64:
    s = text.strip()
    if len(s) == 8 and s.isdigit():
        d = dt.date(int(s[:4]), int(s[4:6]), int(s[6:]))
    else:
        d = dt.date.fromisoformat(s)
    return np.datetime64(d, "D")


def _parse_value(text: str, row: int, column: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"unparseable value {text.strip()!r}", row, column) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite value {text.strip()!r}", row, column)
    return v


def _read_block(path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    """Return (header, [(line_number, cells), ...]) for the first data block.

    Preamble lines before the header are skipped. The header is the first row
    with at least two cells whose first cell is ``date`` or empty (the latter
    is how Kenneth French's factor files label their date column). The block
    ends at the first blank row.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    header = None
    rows: list[tuple[int, list[str]]] = []
    with open(path, newline="") as fh:
        for lineno, cells in enumerate(csv.reader(fh), start=1):
            blank = not cells or all(not c.strip() for c in cells)
            if header is None:
                if not blank and len(cells) >= 2 and cells[0].strip().lower() in ("date", ""):
                    header = [c.strip() for c in cells]
                    header[0] = "date"
                continue
            if blank:
                break
            rows.append((lineno, cells))
    if header is None or not rows:
        raise EmptyFile(f"{path}: no header row or no data rows")
    return header, rows


def _kind_for(name: str, rf_column: str | None, kinds: dict | None) -> str:
    if kinds and name in kinds:
        return kinds[name]
    if rf_column is not None and name == rf_column:
        return "risk_free_rate"
    return "return"


def load_series(path, format: str = "wide", rf_column: str | None = "RF",
                kinds: dict | None = None) -> list[RawSeries]:
    """Read every non-date column of a CSV file as a RawSeries.

    Args:
        path: CSV file. Dates may be ISO-8601 or YYYYMMDD.
        format: ``"wide"`` (one column per ticker) or ``"long"``
            (``date,ticker,value`` rows).
        rf_column: Column treated as the risk-free rate series.
        kinds: Optional explicit ``{ticker: kind}`` overrides, e.g. to mark
            price columns.

    Empty cells in a wide file mean "no observation for this ticker"; any
    other unparseable cell raises :class:`ParseError` with its location.
    """
    header, rows = _read_block(path)
    data: dict[str, tuple[list, list]] = {}
    if format == "wide":
        names = header[1:]
        if any(not n for n in names):
            raise ParseError("empty column name in header", 1)
        for n in names:
            data[n] = ([], [])
        for lineno, cells in rows:
            if len(cells) > len(header):
                raise ParseError(f"expected {len(header)} cells, got {len(cells)}", lineno)
            try:
                d = parse_date(cells[0])
            except ValueError:
                raise ParseError(f"unparseable date {cells[0]!r}", lineno, "date") from None
            for name, cell in zip(names, cells[1:]):
                if not cell.strip():
                    continue
                data[name][0].append(d)
                data[name][1].append(_parse_value(cell, lineno, name))
    elif format == "long":
        lower = [h.lower() for h in header]
        try:
            i_t, i_v = lower.index("ticker"), lower.index("value")
        except ValueError:
            raise ParseError("long format needs date,ticker,value columns", 1) from None
        for lineno, cells in rows:
            try:
                d = parse_date(cells[0])
            except (ValueError, IndexError):
                raise ParseError("unparseable date", lineno, "date") from None
            if len(cells) <= max(i_t, i_v):
                raise ParseError("short row", lineno)
            ticker = cells[i_t].strip()
            bucket = data.setdefault(ticker, ([], []))
            bucket[0].append(d)
            bucket[1].append(_parse_value(cells[i_v], lineno, "value"))
    else:
        raise ValidationError(f"unknown format {format!r}")

    out = []
    for name, (dates, values) in data.items():
        if not dates:
            continue
        out.append(RawSeries(name, np.array(dates, dtype="datetime64[D]"), np.array(values),
                             _kind_for(name, rf_column, kinds)))
    if not out:
        raise EmptyFile(f"{path}: no observations")
    return out


def prices_to_excess_returns(prices: RawSeries, rf: RawSeries) -> RawSeries:
    """Percent simple returns minus the risk-free rate on the common dates.

    ``r_t = 100 * (p_t / p_{t-1} - 1) - rf_t``; the first common date only
    supplies the base price.
    """
    if prices.kind != "price":
        raise ValidationError(f"{prices.ticker}: expected kind 'price', got {prices.kind!r}")
    if rf.kind != "risk_free_rate":
        raise ValidationError(f"{rf.ticker}: expected kind 'risk_free_rate', got {rf.kind!r}")
    if np.any(prices.values <= 0):
        bad = prices.dates[np.argmax(prices.values <= 0)]
        raise NonPositivePrice(f"{prices.ticker}: non-positive price on {bad}")
    common, ip, ir = np.intersect1d(prices.dates, rf.dates, assume_unique=True, return_indices=True)
    if common.size < 2:
        raise EmptyIntersection(f"{prices.ticker} and {rf.ticker} share fewer than 2 dates")
    p = prices.values[ip]
    r = 100.0 * (p[1:] / p[:-1] - 1.0) - rf.values[ir][1:]
    return RawSeries(prices.ticker, common[1:], r, "return")


def align(series: Iterable[RawSeries], policy: str = "intersect") -> ReturnPanel:
    """Stack return series on the dates they all share, keeping input column order."""
    series = list(series)
    if policy != "intersect":
        raise ValidationError(f"unsupported alignment policy {policy!r}")
    if not series:
        raise EmptyIntersection("no series to align")
    for s in series:
        if s.kind != "return":
            raise ValidationError(f"{s.ticker}: only return series can be aligned, got {s.kind!r}")
    common = series[0].dates
    for s in series[1:]:
        common = np.intersect1d(common, s.dates, assume_unique=True)
    if common.size == 0:
        raise EmptyIntersection("series share no dates")
    cols = []
    for s in series:
        idx = np.searchsorted(s.dates, common)
        cols.append(s.values[idx])
    return ReturnPanel(common, tuple(s.ticker for s in series), np.column_stack(cols))
