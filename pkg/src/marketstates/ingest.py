"""Price loading, log returns and sector ordering.

The price file is long format, one row per (ticker, date), with a header
row. Column names are declared through :class:`PriceSchema`. The sector file
is ``ticker,sector[,subsector]`` with an optional header row.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ParseError

log = logging.getLogger(__name__)

# GICS sectors in display order.
SECTOR_ORDER = ("E", "M", "I", "CD", "CST", "HC", "F", "RE", "IT", "CSE", "U")
SECTOR_NAMES = {
    "E": "Energy",
    "M": "Materials",
    "I": "Industrials",
    "CD": "Consumer Discretionary",
    "CST": "Consumer Staples",
    "HC": "Health Care",
    "F": "Financials",
    "RE": "Real Estate",
    "IT": "Information Technology",
    "CSE": "Communication Services",
    "U": "Utilities",
}


@dataclass(frozen=True)
class PriceSchema:
    ticker: str = "ticker"
    date: str = "date"
    close: str = "adj_close"
    delimiter: str = ","


@dataclass
class PriceTable:
    tickers: list[str]
    dates: list[str]
    prices: np.ndarray  # K x (T_tot + 1)
    sectors: list[str] | None = None
    dropped: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.prices = np.asarray(self.prices, dtype=float)
        if self.prices.shape != (len(self.tickers), len(self.dates)):
            raise DataError(
                f"price matrix shape {self.prices.shape} does not match "
                f"{len(self.tickers)} tickers x {len(self.dates)} dates"
            )
        if np.any(~np.isfinite(self.prices)) or np.any(self.prices <= 0):
            raise DataError("prices must be finite and strictly positive")
        if any(a >= b for a, b in zip(self.dates, self.dates[1:])):
            raise DataError("dates must be strictly increasing")


@dataclass
class ReturnMatrix:
    """K x T_tot log returns with per-row metadata.

    ``dates[t]`` is the trading day on which return ``t`` is realised, i.e. the
    later of the two closing prices.
    """

    values: np.ndarray
    tickers: list[str]
    dates: list[str]
    sectors: list[str] | None = None
    subsectors: list[str] | None = None
    permutation: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        K, T = self.values.shape
        if len(self.tickers) != K or len(self.dates) != T:
            raise DataError("return matrix metadata does not match its shape")
        if self.permutation is None:
            self.permutation = np.arange(K)

    @property
    def K(self) -> int:
        return self.values.shape[0]

    @property
    def T_tot(self) -> int:
        return self.values.shape[1]

    def take(self, rows) -> "ReturnMatrix":
        rows = np.asarray(rows, dtype=int)
        pick = lambda xs: None if xs is None else [xs[i] for i in rows]  # noqa: E731
        return ReturnMatrix(
            values=self.values[rows],
            tickers=pick(self.tickers),
            dates=list(self.dates),
            sectors=pick(self.sectors),
            subsectors=pick(self.subsectors),
            permutation=self.permutation[rows],
        )


def load_prices(source, schema: PriceSchema = PriceSchema()) -> PriceTable:
    """Read a long-format price file into a complete K x D panel.

    The calendar is the union of all dates in the file. Tickers without a
    price on every calendar date are dropped and logged.
    """
    path = Path(source)
    series: dict[str, dict[str, float]] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", path=path) from None
        header = [h.strip() for h in header]
        try:
            i_tk = header.index(schema.ticker)
            i_dt = header.index(schema.date)
            i_px = header.index(schema.close)
        except ValueError as exc:
            raise ParseError(f"missing column in header {header}: {exc}", line=1, path=path) from None
        width = max(i_tk, i_dt, i_px) + 1
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < width:
                raise ParseError(f"expected at least {width} fields, got {len(row)}", line, path)
            ticker, date, raw = row[i_tk].strip(), row[i_dt].strip(), row[i_px].strip()
            if not ticker or not date:
                raise ParseError("empty ticker or date", line, path)
            try:
                price = float(raw)
            except ValueError:
                raise ParseError(f"not a number: {raw!r}", line, path) from None
            if not np.isfinite(price) or price <= 0:
                raise DataError(f"{path}:{line}: non-positive or non-finite price {raw!r} for {ticker}")
            per = series.setdefault(ticker, {})
            if date in per:
                raise ParseError(f"duplicate row for {ticker} on {date}", line, path)
            per[date] = price

    if not series:
        raise DataError(f"{path}: no price rows")
    calendar = sorted(set().union(*(s.keys() for s in series.values())))
    keep, dropped = [], []
    for ticker in sorted(series):
        if len(series[ticker]) == len(calendar):
            keep.append(ticker)
        else:
            dropped.append(ticker)
    for ticker in dropped:
        missing = len(calendar) - len(series[ticker])
        log.warning("dropped %s: missing %d of %d dates", ticker, missing, len(calendar))
    if not keep:
        raise DataError("no ticker covers the common date range")
    if len(calendar) < 2:
        raise DataError("at least 2 dates are required")
    prices = np.array([[series[t][d] for d in calendar] for t in keep])
    return PriceTable(tickers=keep, dates=calendar, prices=prices, dropped=dropped)


def load_sectors(source, delimiter: str = ",") -> dict[str, tuple[str, str]]:
    """Read ``ticker,sector[,subsector]`` into ``{ticker: (sector, subsector)}``."""
    path = Path(source)
    table = {}
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter=delimiter), start=1):
            row = [c.strip() for c in row]
            if not row or not any(row):
                continue
            if lineno == 1 and row[0].lower() == "ticker":
                continue
            if len(row) < 2:
                raise ParseError("expected ticker,sector[,subsector]", lineno, path)
            table[row[0]] = (row[1], row[2] if len(row) > 2 else "")
    return table


def log_returns(p: PriceTable) -> ReturnMatrix:
    values = np.diff(np.log(p.prices), axis=1)
    return ReturnMatrix(values=values, tickers=list(p.tickers), dates=list(p.dates[1:]),
                        sectors=p.sectors)


def sector_sort(r: ReturnMatrix, table: dict) -> ReturnMatrix:
    """Order rows by GICS sector, then sub-sector alphabetically.

    The sort is stable, so rows sharing sector and sub-sector keep their
    input order. ``table`` values are a sector code or a (sector, subsector)
    pair.
    """
    rank = {code: i for i, code in enumerate(SECTOR_ORDER)}
    sectors, subsectors = [], []
    for ticker in r.tickers:
        if ticker not in table:
            raise DataError(f"no sector assignment for {ticker}")
        entry = table[ticker]
        sector, sub = (entry, "") if isinstance(entry, str) else (entry[0], entry[1] if len(entry) > 1 else "")
        if sector not in rank:
            raise DataError(f"unknown sector code {sector!r} for {ticker}")
        sectors.append(sector)
        subsectors.append(sub or "")
    order = sorted(range(r.K), key=lambda i: (rank[sectors[i]], subsectors[i]))
    out = r.take(order)
    out.sectors = [sectors[i] for i in order]
    out.subsectors = [subsectors[i] for i in order]
    return out


def write_returns(path, r: ReturnMatrix) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ticker", "sector", "subsector", *r.dates])
        for i in range(r.K):
            sector = r.sectors[i] if r.sectors else ""
            sub = r.subsectors[i] if r.subsectors else ""
            w.writerow([r.tickers[i], sector, sub, *(repr(float(x)) for x in r.values[i])])


def read_returns(path) -> ReturnMatrix:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:3] != ["ticker", "sector", "subsector"]:
        raise ParseError("not a returns file", 1, path)
    dates = rows[0][3:]
    tickers, sectors, subs, values = [], [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(dates) + 3:
            raise ParseError("row length does not match header", lineno, path)
        tickers.append(row[0])
        sectors.append(row[1])
        subs.append(row[2])
        try:
            values.append([float(x) for x in row[3:]])
        except ValueError as exc:
            raise ParseError(str(exc), lineno, path) from None
    has_sectors = any(sectors)
    return ReturnMatrix(values=np.array(values).reshape(len(tickers), len(dates)), tickers=tickers,
                        dates=dates, sectors=sectors if has_sectors else None,
                        subsectors=subs if has_sectors else None)
