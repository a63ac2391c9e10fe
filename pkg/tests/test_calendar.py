import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from promisedate.calendar import (
    LastMileLog,
    adjacent_to_weekend,
    clip_mad,
    derive_handling_time,
    handling_table,
    match_proxies,
)
from promisedate.domain import CalendarEntry, DayKind, HolidayCalendar, InputError, day_index

D0 = dt.date(2024, 3, 1)


def cal(*entries):
    return HolidayCalendar([CalendarEntry(*e) for e in entries])


def log_from(days: dict, region="C1"):
    """Build a log from {date: durations}."""
    reg, day, dmin, hours = [], [], [], []
    for d, hs in days.items():
        for h in hs:
            reg.append(region)
            day.append(day_index(d))
            dmin.append(day_index(d) * 1440 + 600)
            hours.append(h)
    return LastMileLog(reg, day, dmin, hours)


def test_weekend_takes_three_most_recent():
    sats = [D0 + dt.timedelta(days=7 * k) for k in range(6)]
    c = cal(*[("C1", d, "weekend", 0.0) for d in sats])
    assert match_proxies(("C1", sats[-1], "weekend"), c) == [sats[4], sats[3], sats[2]]


def test_rate_threshold_filter():
    target = D0 + dt.timedelta(days=100)
    c = cal(("C1", D0, "flexible", 0.58), ("C1", D0 + dt.timedelta(days=10), "flexible", 0.9),
            ("C1", D0 + dt.timedelta(days=20), "flexible", 0.55), ("C1", target, "flexible", 0.6))
    assert match_proxies(("C1", target, "flexible"), c) == [D0 + dt.timedelta(days=20), D0]


def test_no_history_and_missing_entry():
    c = cal(("C1", D0, "fixed", 0.5), ("C2", D0 - dt.timedelta(days=3), "fixed", 0.5))
    assert match_proxies(("C1", D0, "fixed"), c) == []
    with pytest.raises(InputError):
        match_proxies(("C1", D0 + dt.timedelta(days=1), "fixed"), c)


def bau_around(proxy, values):
    return {proxy + dt.timedelta(days=o): values for o in (-2, -1, 1, 2)}


def test_identical_distributions_give_zero():
    rng = np.random.default_rng(0)
    v = rng.gamma(4, 6, 50)
    days = {D0: v, **bau_around(D0, v)}
    h = derive_handling_time([D0], log_from(days), "C1")
    assert h.extra_hours == 0.0 and h.support == 1


def test_median_difference():
    days = {D0: np.full(20, 30.0), **bau_around(D0, np.full(20, 24.0))}
    h = derive_handling_time([D0], log_from(days), "C1")
    assert h.extra_hours == pytest.approx(6.0)


def test_faster_proxy_clamped_at_zero():
    days = {D0: np.full(20, 20.0), **bau_around(D0, np.full(20, 24.0))}
    assert derive_handling_time([D0], log_from(days), "C1").extra_hours == 0.0


def _median(xs):
    xs = sorted(xs)
    n = len(xs)
    return (xs[(n - 1) // 2] + xs[n // 2]) / 2


def reference_clip(x):
    """Loop-based median +- 3 MAD clipping, independent of the implementation."""
    med = _median(x)
    mad = _median([abs(v - med) for v in x])
    return [min(max(v, med - 3 * mad), med + 3 * mad) for v in x]


def test_outlier_in_bau_unchanged():
    rng = np.random.default_rng(1)
    bau = rng.normal(24, 2, 40).tolist()
    proxy = rng.normal(30, 2, 40).tolist()
    clean = derive_handling_time([D0], log_from({D0: proxy, **bau_around(D0, bau)}), "C1")
    dirty_bau = list(bau)
    dirty_bau[int(np.argmax(dirty_bau))] = 500.0
    dirty_days = {D0: proxy, **bau_around(D0, bau)}
    dirty_days[D0 + dt.timedelta(days=1)] = dirty_bau
    dirty = derive_handling_time([D0], log_from(dirty_days), "C1")
    assert dirty.extra_hours == pytest.approx(clean.extra_hours, abs=1e-12)
    pooled = reference_clip(bau) * 3 + reference_clip(dirty_bau)
    expect = _median(reference_clip(proxy)) - _median(pooled)
    assert dirty.extra_hours == pytest.approx(max(0.0, expect), abs=1e-9)


def test_recency_weights():
    p1, p2 = D0 + dt.timedelta(days=30), D0
    days = {p1: np.full(12, 30.0), **bau_around(p1, np.full(12, 24.0)),
            p2: np.full(12, 27.0), **bau_around(p2, np.full(12, 24.0))}
    h = derive_handling_time([p1, p2], log_from(days), "C1")
    assert h.extra_hours == pytest.approx((3 * 6 + 2 * 3) / 5)
    assert h.support == 2


def test_sparse_proxy_defaults():
    days = {D0: np.full(9, 30.0), **bau_around(D0, np.full(20, 24.0))}
    h = derive_handling_time([D0], log_from(days), "C1")
    assert (h.extra_hours, h.support) == (0.0, 0)
    assert derive_handling_time([], log_from(days), "C1").support == 0


def test_bau_excludes_calendar_days():
    days = {D0: np.full(20, 30.0), D0 + dt.timedelta(days=1): np.full(20, 29.0),
            D0 + dt.timedelta(days=3): np.full(20, 24.0)}
    c = cal(("C1", D0, "weekend", 0.0), ("C1", D0 + dt.timedelta(days=1), "weekend", 0.0))
    h = derive_handling_time([D0], log_from(days), "C1", c)
    assert h.extra_hours == pytest.approx(6.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 2), st.floats(1e3, 1e6), st.booleans())
def test_robust_to_few_outliers(seed, n_out, size, on_proxy):
    """Up to 5% huge outliers leave the answer (nearly) unchanged."""
    rng = np.random.default_rng(seed)
    bau = np.round(rng.normal(24, 3, 40), 1)
    proxy = np.round(rng.normal(29, 3, 40), 1)
    base = derive_handling_time([D0], log_from({D0: proxy, **bau_around(D0, bau)}), "C1").extra_hours
    if on_proxy:
        proxy = np.append(proxy, np.full(n_out, size))
        days = {D0: proxy, **bau_around(D0, bau)}
    else:
        days = {D0: proxy, **bau_around(D0, bau)}
        days[D0 - dt.timedelta(days=1)] = np.append(bau, np.full(n_out, size))
    got = derive_handling_time([D0], log_from(days), "C1").extra_hours
    # medians of ~40 values shift by at most a couple of order statistics
    assert abs(got - base) < 1.5


def test_clip_mad():
    x = np.array([1.0, 2.0, 3.0, 4.0, 100.0])
    assert clip_mad(x).tolist() == [1.0, 2.0, 3.0, 4.0, 6.0]


def test_handling_table_uses_past_only():
    sats = [D0 + dt.timedelta(days=7 * k) for k in range(4)]
    c = cal(*[("C1", d, "weekend", 0.0) for d in sats])
    days = {}
    for s in sats:
        days.update(bau_around(s, np.full(20, 24.0)))
        days[s] = np.full(20, 30.0)
    log = log_from(days)
    t = handling_table(c, log, sats[2], horizon_days=1, lookback_days=0)
    h = t[("C1", sats[2])]
    assert h.extra_hours == pytest.approx(6.0) and h.support == 2
    early = handling_table(c, log, sats[0], horizon_days=0, lookback_days=0)
    assert early[("C1", sats[0])].support == 0


def test_adjacent_to_weekend():
    c = cal(("C1", D0, "fixed", 0.5), ("C1", D0 + dt.timedelta(days=1), "weekend", 0.0),
            ("C1", D0 + dt.timedelta(days=5), "flexible", 0.5))
    assert adjacent_to_weekend(c, "C1", D0)
    assert not adjacent_to_weekend(c, "C1", D0 + dt.timedelta(days=5))
    assert not adjacent_to_weekend(c, "C1", D0 + dt.timedelta(days=1))
