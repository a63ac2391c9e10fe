import datetime as dt

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from promisedate.domain import (
    MISSING_LEVEL,
    CalendarEntry,
    CategoryDictionary,
    Dataset,
    DeliveryRecord,
    GeoKey,
    HolidayCalendar,
    InputError,
    Lane,
    Order,
    Source,
    Timestamp,
    date_of_day,
    day_index,
    decay_weights,
    encode_categorical,
)


def order(placed=0):
    return Order("o1", Timestamp(placed), Source("warehouse", "W1"), Lane("W1", "C1", ("H1",)),
                 GeoKey("110001", "tier1"), 2)


def test_timestamp_and_days():
    t = Timestamp.at(dt.date(2024, 1, 3), 14, 30)
    assert t.day == 2 and t.minute_of_day == 870
    assert str(t) == "2024-01-03T14:30"
    assert day_index(date_of_day(123)) == 123
    assert t.plus_hours(1.5).minutes_since_epoch == t.minutes_since_epoch + 90


def test_order_roundtrip_and_validation():
    o = order(100)
    assert Order.from_dict(o.to_dict()) == o
    assert o.lane.hops == [("W1", "H1"), ("H1", "C1")]
    with pytest.raises(InputError):
        Order.from_dict({"order_id": "x"})
    with pytest.raises(InputError):
        Order("o", Timestamp(0), Source("warehouse", "W1"), Lane("W1", "C1", ()), GeoKey("1", "tier1"), 0)


def test_record_invariants():
    legs = {"warehouse": 5.0, "dispatch_wait": 1.0, "linehaul": 20.0, "lastmile": 4.0, "vendor": 0.0}
    r = DeliveryRecord(order(0), Timestamp(6 * 60), Timestamp(30 * 60), legs)
    assert r.total_hours == 30.0 and r.shipping_hours == 24.0 and r.preship_hours == 6.0
    assert r.lastmile_arrival == Timestamp(26 * 60)
    with pytest.raises(InputError):
        DeliveryRecord(order(0), Timestamp(6 * 60), Timestamp(31 * 60), legs)
    with pytest.raises(InputError):
        DeliveryRecord(order(0), Timestamp(40 * 60), Timestamp(30 * 60), legs)
    with pytest.raises(InputError):
        DeliveryRecord(order(0), Timestamp(6 * 60), Timestamp(30 * 60), {**legs, "vendor": -1.0, "lastmile": 5.0})


def test_calendar_lookup_and_duplicates(tmp_path):
    cal = HolidayCalendar([CalendarEntry("C1", dt.date(2024, 1, 7), "weekend", 0.1),
                           CalendarEntry("C1", dt.date(2024, 1, 26), "fixed", 0.5)])
    assert cal.kind_of("C1", dt.date(2024, 1, 26)).value == "fixed"
    assert cal.kind_of("C2", dt.date(2024, 1, 26)) is None
    path = tmp_path / "cal.csv"
    cal.to_frame().to_csv(path, index=False)
    again = HolidayCalendar.read_csv(path)
    assert list(again) == list(cal)
    with pytest.raises(InputError):
        HolidayCalendar([CalendarEntry("C1", dt.date(2024, 1, 7), "weekend")] * 2)
    with pytest.raises(InputError):
        CalendarEntry("C1", dt.date(2024, 1, 7), "weekend", 1.5)


def test_encode_categorical_first_appearance_and_unseen():
    ids, d = encode_categorical(["b", "a", None, "b", float("nan")])
    assert d.levels == ("b", "a")
    assert list(ids) == [0, 1, MISSING_LEVEL, 0, MISSING_LEVEL]
    ids2, d2 = encode_categorical(["a", "z"], d)
    assert d2 is d and list(ids2) == [1, MISSING_LEVEL]
    assert d.decode([1, MISSING_LEVEL]) == ["a", None]


def frame():
    return pd.DataFrame({"x": [1.0, np.nan, 3.0], "c": ["u", "v", None], "y": [1.0, 2.0, 3.0],
                         "w": [1.0, 0.5, 2.0], "d": ["2024-01-01", "2024-01-05", "2024-01-15"]})


def test_dataset_csv_roundtrip(tmp_path):
    ds = Dataset.from_frame(frame(), ["x"], ["c"], target="y", weight="w", order_date="d")
    ds.save(tmp_path / "rows.csv")
    again = Dataset.load(tmp_path / "rows.csv")
    np.testing.assert_array_equal(again.numeric["x"], ds.numeric["x"])
    np.testing.assert_array_equal(again.categorical["c"], ds.categorical["c"])
    assert again.dictionaries["c"] == ds.dictionaries["c"]
    np.testing.assert_array_equal(again.target, ds.target)
    np.testing.assert_array_equal(again.sample_weight, ds.sample_weight)
    np.testing.assert_array_equal(again.order_date, ds.order_date)


def test_dataset_validation():
    with pytest.raises(InputError):
        Dataset({"x": np.ones(2)}, {}, {}, np.ones(3), np.ones(3), np.zeros(3, "datetime64[D]"))
    with pytest.raises(InputError):
        Dataset({}, {"c": np.array([0, 5])}, {"c": CategoryDictionary(("a",))}, np.ones(2), np.ones(2),
                np.zeros(2, "datetime64[D]"))
    with pytest.raises(InputError):
        Dataset({}, {}, {}, np.ones(2), np.array([1.0, -1.0]), np.zeros(2, "datetime64[D]"))


def test_decay_weights_half_life():
    ds = Dataset.from_frame(frame(), ["x"], ["c"], target="y", order_date="d")
    w = decay_weights(ds, dt.date(2024, 1, 15), 14.0).sample_weight
    np.testing.assert_allclose(w, [0.5, 0.5 ** (10 / 14), 1.0])
    with pytest.raises(InputError):
        decay_weights(ds, dt.date(2024, 1, 10))
    with pytest.raises(InputError):
        decay_weights(ds, dt.date(2024, 1, 15), 0.0)


@given(ages=st.lists(st.integers(0, 200), min_size=2, max_size=20), half=st.floats(1, 60))
def test_decay_weights_monotone_in_age(ages, half):
    ref = dt.date(2024, 12, 31)
    dates = [ref - dt.timedelta(days=a) for a in ages]
    ds = Dataset({}, {}, {}, np.zeros(len(ages)), np.ones(len(ages)), np.array(dates, dtype="datetime64[D]"))
    w = decay_weights(ds, ref, half).sample_weight
    order_ = np.argsort(ages, kind="stable")
    assert np.all(np.diff(w[order_]) <= 1e-15)
    assert np.all((w > 0) & (w <= 1))
