import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from marketstates.errors import DataError, ParseError
from marketstates.ingest import (
    PriceSchema,
    PriceTable,
    ReturnMatrix,
    load_prices,
    load_sectors,
    log_returns,
    read_returns,
    sector_sort,
    write_returns,
)


def _write(tmp_path, text, name="prices.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_complete_panel(tmp_path):
    p = _write(tmp_path, "ticker,date,adj_close\nA,2020-01-01,1\nA,2020-01-02,2\nA,2020-01-03,3\n"
                         "B,2020-01-01,4\nB,2020-01-02,5\nB,2020-01-03,6\n")
    table = load_prices(p)
    assert table.tickers == ["A", "B"]
    assert table.dates == ["2020-01-01", "2020-01-02", "2020-01-03"]
    assert table.prices.tolist() == [[1, 2, 3], [4, 5, 6]]
    assert table.dropped == []


def test_missing_date_drops_ticker(tmp_path, caplog):
    p = _write(tmp_path, "ticker,date,adj_close\nA,2020-01-01,1\nA,2020-01-02,2\nA,2020-01-03,3\n"
                         "B,2020-01-01,4\nB,2020-01-03,6\n")
    with caplog.at_level(logging.WARNING):
        table = load_prices(p)
    assert table.tickers == ["A"]
    assert table.dropped == ["B"]
    assert "B" in caplog.text


def test_non_positive_price(tmp_path):
    p = _write(tmp_path, "ticker,date,adj_close\nA,2020-01-01,1\nA,2020-01-02,0\n")
    with pytest.raises(DataError, match=":3"):
        load_prices(p)


def test_malformed_row_reports_line(tmp_path):
    p = _write(tmp_path, "ticker,date,adj_close\nA,2020-01-01,1\nA,2020-01-02,abc\n")
    with pytest.raises(ParseError) as err:
        load_prices(p)
    assert err.value.line == 3


def test_empty_intersection(tmp_path):
    p = _write(tmp_path, "ticker,date,adj_close\nA,2020-01-01,1\nA,2020-01-02,2\n"
                         "B,2020-01-03,1\nB,2020-01-04,2\n")
    with pytest.raises(DataError, match="common date range"):
        load_prices(p)


def test_custom_schema(tmp_path):
    p = _write(tmp_path, "Date;Sym;Close;Volume\n2020-01-01;X;10;5\n2020-01-02;X;11;5\n")
    table = load_prices(p, PriceSchema(ticker="Sym", date="Date", close="Close", delimiter=";"))
    assert table.prices.tolist() == [[10, 11]]


def _table(prices):
    prices = np.atleast_2d(prices)
    return PriceTable([f"T{i}" for i in range(len(prices))], [f"d{t:04d}" for t in range(prices.shape[1])], prices)


def test_log_return_examples():
    assert log_returns(_table([100, 100])).values.tolist() == [[0.0]]
    assert log_returns(_table([1, math.e])).values[0, 0] == pytest.approx(1.0, abs=1e-15)
    g = log_returns(_table([100, 110, 99])).values[0]
    # hand values: ln(110/100) = ln 1.1 and ln(99/110) = ln 0.9
    assert g == pytest.approx([math.log(1.1), math.log(0.9)], abs=1e-15)


def test_return_columns_and_dates():
    r = log_returns(_table([[1, 2, 3, 4]]))
    assert r.T_tot == 3
    assert r.dates == ["d0001", "d0002", "d0003"]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 1e4), min_size=2, max_size=40))
def test_returns_reconstruct_prices(prices):
    r = log_returns(_table(prices))
    rebuilt = prices[0] * np.exp(np.concatenate([[0.0], np.cumsum(r.values[0])]))
    np.testing.assert_allclose(rebuilt, prices, rtol=1e-12)


def _returns(tickers):
    return ReturnMatrix(values=np.arange(len(tickers) * 2, dtype=float).reshape(-1, 2),
                        tickers=list(tickers), dates=["a", "b"])


def test_sector_sort_identity():
    r = _returns(["X", "Y", "Z"])
    out = sector_sort(r, {"X": "E", "Y": "F", "Z": "U"})
    assert out.tickers == ["X", "Y", "Z"]
    assert out.permutation.tolist() == [0, 1, 2]
    np.testing.assert_array_equal(out.values, r.values)


def test_sector_sort_orders_by_table():
    out = sector_sort(_returns(["UT", "EN"]), {"UT": "U", "EN": "E"})
    assert out.tickers == ["EN", "UT"]
    assert out.sectors == ["E", "U"]
    assert out.permutation.tolist() == [1, 0]


def test_sector_sort_subsector_alphabetical():
    table = {"A": ("F", "insurance"), "B": ("F", "banks"), "C": ("E", "")}
    out = sector_sort(_returns(["A", "B", "C"]), table)
    assert out.tickers == ["C", "B", "A"]


def test_unknown_sector():
    with pytest.raises(DataError, match="XX"):
        sector_sort(_returns(["A"]), {"A": "XX"})
    with pytest.raises(DataError, match="A"):
        sector_sort(_returns(["A"]), {})


@settings(max_examples=30, deadline=None)
@given(st.lists(st.sampled_from(["E", "M", "I", "CD", "CST", "HC", "F", "RE", "IT", "CSE", "U"]),
                min_size=1, max_size=15))
def test_sector_sort_is_permutation(codes):
    tickers = [f"T{i}" for i in range(len(codes))]
    r = _returns(tickers)
    out = sector_sort(r, dict(zip(tickers, codes)))
    assert sorted(map(tuple, out.values.tolist())) == sorted(map(tuple, r.values.tolist()))
    np.testing.assert_array_equal(out.values, r.values[out.permutation])


def test_sector_file_and_returns_round_trip(tmp_path):
    s = _write(tmp_path, "ticker,sector,subsector\nA,E,oil\nB,U\n", "sectors.csv")
    assert load_sectors(s) == {"A": ("E", "oil"), "B": ("U", "")}
    r = sector_sort(_returns(["B", "A"]) , load_sectors(s))
    r.values = r.values / 7.0
    write_returns(tmp_path / "returns.csv", r)
    back = read_returns(tmp_path / "returns.csv")
    assert back.tickers == r.tickers and back.sectors == r.sectors
    np.testing.assert_array_equal(back.values, r.values)
