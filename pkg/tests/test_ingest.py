import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from esvcontagion.errors import (EmptyFile, EmptyIntersection, NonPositivePrice, ParseError,
                                 ValidationError)
from esvcontagion.ingest import (RawSeries, ReturnPanel, align, load_series,
                                 prices_to_excess_returns)


def write(tmp_path, text, name="data.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def D(s):
    return np.datetime64(s, "D")


def test_three_rows_one_column(tmp_path):
    p = write(tmp_path, "date,US\n2010-01-04,0.5\n2010-01-05,-1.25\n2010-01-06,0\n")
    (s,) = load_series(p)
    assert s.ticker == "US" and len(s) == 3
    assert s.values.tolist() == [0.5, -1.25, 0.0]
    assert s.kind == "return"


def test_duplicate_date_names_the_date(tmp_path):
    p = write(tmp_path, "date,US\n2010-01-04,0.5\n2010-01-04,0.1\n")
    with pytest.raises(ParseError, match="2010-01-04"):
        load_series(p)


def test_out_of_order_dates_rejected(tmp_path):
    p = write(tmp_path, "date,US\n2010-01-05,0.5\n2010-01-04,0.1\n")
    with pytest.raises(ParseError):
        load_series(p)


def test_bad_value_reports_row_and_column(tmp_path):
    p = write(tmp_path, "date,US,EU\n2010-01-04,0.5,1\n2010-01-05,abc,2\n")
    with pytest.raises(ParseError) as e:
        load_series(p)
    assert e.value.row == 3 and e.value.column == "US"


def test_nan_text_is_rejected(tmp_path):
    p = write(tmp_path, "date,US\n2010-01-04,nan\n2010-01-05,1\n")
    with pytest.raises(ParseError):
        load_series(p)


def test_empty_file(tmp_path):
    with pytest.raises(EmptyFile):
        load_series(write(tmp_path, ""))
    with pytest.raises(EmptyFile):
        load_series(write(tmp_path, "date,US\n", "b.csv"))


def test_french_style_file(tmp_path):
    text = ("This file was created by CMPT_ME_BEME_RETS_DAILY using the 201012 CRSP database.\n"
            "The Tbill return is the simple daily rate.\n"
            "\n"
            ",Mkt-RF,SMB,HML,RF\n"
            "19630701,  -0.67,   0.02,  -0.35,   0.012\n"
            "19630702,   0.79,  -0.28,   0.28,   0.012\n"
            "19630703,   0.63,  -0.18,  -0.10,   0.012\n"
            "\n"
            "Copyright 2011 Kenneth R. French\n")
    series = {s.ticker: s for s in load_series(write(tmp_path, text))}
    assert set(series) == {"Mkt-RF", "SMB", "HML", "RF"}
    assert series["Mkt-RF"].kind == "return"
    assert series["RF"].kind == "risk_free_rate"
    assert series["Mkt-RF"].dates[0] == D("1963-07-01")
    assert series["RF"].values.tolist() == [0.012] * 3


def test_long_format(tmp_path):
    p = write(tmp_path, "date,ticker,value\n2010-01-04,A,1\n2010-01-04,B,2\n2010-01-05,A,3\n")
    series = {s.ticker: s for s in load_series(p, "long")}
    assert series["A"].values.tolist() == [1.0, 3.0]
    assert series["B"].values.tolist() == [2.0]


def test_wide_empty_cell_means_no_observation(tmp_path):
    p = write(tmp_path, "date,A,B\n2010-01-04,1,\n2010-01-05,2,5\n")
    series = {s.ticker: s for s in load_series(p)}
    assert len(series["A"]) == 2 and len(series["B"]) == 1


def test_excess_returns_hand_arithmetic():
    p = RawSeries("P", [D("2010-01-04"), D("2010-01-05")], [100.0, 110.0], "price")
    rf = RawSeries("RF", [D("2010-01-04"), D("2010-01-05")], [0.0, 0.0], "risk_free_rate")
    r = prices_to_excess_returns(p, rf)
    assert r.values.tolist() == pytest.approx([10.0], abs=1e-12)
    assert r.dates.tolist() == [D("2010-01-05")]


def test_flat_prices_give_minus_rf():
    d = np.arange(3) + D("2010-01-04")
    p = RawSeries("P", d, [100.0, 100.0, 100.0], "price")
    rf = RawSeries("RF", d[1:], [0.01, 0.01], "risk_free_rate")
    # intersection is the last two days, so only one return survives
    assert prices_to_excess_returns(p, rf).values.tolist() == pytest.approx([-0.01])
    rf3 = RawSeries("RF", d, [0.0, 0.01, 0.01], "risk_free_rate")
    assert prices_to_excess_returns(p, rf3).values.tolist() == pytest.approx([-0.01, -0.01])


def test_nonpositive_price_and_no_overlap():
    d = np.arange(3) + D("2010-01-04")
    with pytest.raises(NonPositivePrice):
        prices_to_excess_returns(RawSeries("P", d, [1.0, 0.0, 2.0], "price"),
                                 RawSeries("RF", d, [0.0] * 3, "risk_free_rate"))
    with pytest.raises(EmptyIntersection):
        prices_to_excess_returns(RawSeries("P", d, [1.0, 2.0, 3.0], "price"),
                                 RawSeries("RF", d + 10, [0.0] * 3, "risk_free_rate"))


def test_wrong_kinds_rejected():
    d = np.arange(2) + D("2010-01-04")
    with pytest.raises(ValidationError):
        prices_to_excess_returns(RawSeries("P", d, [1.0, 2.0]), RawSeries("RF", d, [0, 0]))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.05, 20.0), min_size=2, max_size=40))
def test_cumulative_reconstruction_recovers_prices(ratios):
    prices = np.cumprod([100.0, *ratios])
    d = np.arange(prices.size) + D("2000-01-03")
    r = prices_to_excess_returns(RawSeries("P", d, prices, "price"),
                                 RawSeries("RF", d, np.zeros(prices.size), "risk_free_rate"))
    rebuilt = np.cumprod(1 + r.values / 100)
    np.testing.assert_allclose(rebuilt, prices[1:] / prices[0], rtol=1e-10)


def test_align_intersection_and_order():
    d = np.arange(7) + D("2010-01-04")
    a = RawSeries("A", d, np.arange(7.0))
    b = RawSeries("B", np.delete(d, [1, 4]), np.arange(5.0))
    panel = align([b, a])
    assert len(panel) == 5 and panel.columns == ("B", "A")
    assert panel.column("A").tolist() == [0.0, 2.0, 3.0, 5.0, 6.0]
    # independent set intersection
    expect = sorted(set(d.tolist()) & set(np.delete(d, [1, 4]).tolist()))
    assert panel.dates.tolist() == expect


def test_align_identical_dates_and_idempotence():
    d = np.arange(4) + D("2010-01-04")
    panel = align([RawSeries("A", d, [1.0, 2, 3, 4]), RawSeries("B", d, [5.0, 6, 7, 8])])
    assert panel.values.shape == (4, 2)
    again = align(panel.series())
    assert np.array_equal(again.values, panel.values) and again.columns == panel.columns


def test_align_rejects_disjoint_and_nonreturn():
    d = np.arange(3) + D("2010-01-04")
    with pytest.raises(EmptyIntersection):
        align([RawSeries("A", d, [1.0, 2, 3]), RawSeries("B", d + 5, [1.0, 2, 3])])
    with pytest.raises(ValidationError):
        align([RawSeries("A", d, [1.0, 2, 3], "price")])


def test_csv_round_trip_is_bit_identical(tmp_path):
    rng = np.random.default_rng(0)
    d = np.arange(50) + D("2010-01-04")
    vals = rng.standard_normal((50, 3)) * 10 ** rng.uniform(-8, 3, (50, 3))
    panel = ReturnPanel(d, ("a", "b", "c"), vals)
    path = tmp_path / "p.csv"
    panel.to_csv(path)
    back = ReturnPanel.from_csv(path)
    assert back.columns == panel.columns
    assert np.array_equal(back.values, panel.values)
    assert np.array_equal(back.dates, panel.dates)


def test_panel_needs_two_rows():
    with pytest.raises(ValidationError):
        ReturnPanel([D("2010-01-04")], ("a",), [[1.0]])
