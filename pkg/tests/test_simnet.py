import datetime as dt

import numpy as np
import pandas as pd
import pytest

from promisedate.domain import (
    LEG_NAMES,
    CalendarEntry,
    ConfigError,
    GeoKey,
    HolidayCalendar,
    InputError,
    Lane,
    Order,
    Source,
    Timestamp,
    date_of_day,
)
from promisedate.simnet import (
    CenterSpec,
    HolidayEffect,
    HrdEvent,
    NetworkSpec,
    SimulationResult,
    VendorSpec,
    WarehouseSpec,
    default_network,
    generate,
    ground_truth_quantile,
    load_scenario,
    next_cutoff_vec,
    shift_add,
)


def tiny_network(sd=0.0, capacity=1e6, weekend_cap=None):
    """One warehouse, one vendor, one hub, one center; log-means chosen so means are 2h/3h/5h/10h."""
    cal = []
    effects = {}
    if weekend_cap is not None:
        cal = [CalendarEntry("C1", date_of_day(d), "weekend", 0.0) for d in range(400) if d % 7 == 5]
        effects = {"weekend": HolidayEffect(weekend_cap, 0.0)}
    return NetworkSpec(
        warehouses={"W1": WarehouseSpec(0, 1440, np.log(2.0), sd, np.log(1.0), sd)},
        vendors={"V1": VendorSpec(np.log(10.0), sd)},
        hubs=("H1",),
        centers={"C1": CenterSpec(capacity, service_log_mean=np.log(1.5), service_log_sd=sd,
                                  pincodes={"110001": ("tier1", 0.0)})},
        lanes=(Lane("W1", "C1", ("H1",)), Lane("V1", "C1", ("H1",))),
        hop_transit={("W1", "H1"): (np.log(3.0), sd), ("V1", "H1"): (np.log(3.0), sd), ("H1", "C1"): (np.log(5.0), sd)},
        holiday_effects=effects,
        calendar=HolidayCalendar(cal),
        vendor_share=0.3,
    )


def test_degenerate_network_sums_configured_means():
    r = generate(tiny_network(), days=5, orders_per_day=200, seed=3)
    d = r.deliveries
    total = (d["delivered_at"] - d["placed_at"]) / 60
    expect = np.where(d["source_kind"] == "vendor", 10 + 3 + 5 + 1.5, 2 + 3 + 5 + 1.5)
    assert np.allclose(total, expect, atol=1e-9)


def test_legs_sum_and_records_valid():
    r = generate(default_network(300, 21), days=21, orders_per_day=300, seed=1)
    d = r.deliveries
    legs = d[[f"leg_{n}" for n in LEG_NAMES]].sum(axis=1)
    assert np.allclose(legs, (d["delivered_at"] - d["placed_at"]) / 60)
    recs = r.records()
    assert len(recs) == len(d)
    assert all(x.delivered_at >= x.shipped_at >= x.order.placed_at for x in recs[:500])


def test_conservation_and_nonnegative_backlog():
    r = generate(default_network(400, 28), days=28, orders_per_day=400, seed=2)
    for c, f in r.flows.groupby("center"):
        assert f["arrivals"].sum() == f["deliveries"].sum() + f["backlog"].iloc[-1]
        assert (f["backlog"] >= 0).all()
        assert (f["deliveries"] <= f["capacity"]).all()


def test_bit_identical_per_seed():
    a = generate(default_network(200, 14), days=14, orders_per_day=200, seed=5)
    b = generate(default_network(200, 14), days=14, orders_per_day=200, seed=5)
    c = generate(default_network(200, 14), days=14, orders_per_day=200, seed=6)
    pd.testing.assert_frame_equal(a.deliveries, b.deliveries)
    pd.testing.assert_frame_equal(a.flows, b.flows)
    assert not a.deliveries["delivered_at"].equals(c.deliveries["delivered_at"])


def test_hrd_raises_post_event_delivery_time():
    spec = default_network(600, 42)
    ev = HrdEvent(date_of_day(21), 3, 3.0)
    r = generate(spec, [ev], days=42, orders_per_day=600, seed=4)
    d = r.deliveries
    total = (d["delivered_at"] - d["placed_at"]) / 60
    day = d["placed_at"] // 1440
    pre = total[(day >= 10) & (day < 21)].mean()
    post = total[(day >= 24) & (day < 28)].mean()
    assert post > pre
    assert set(r.plans["center"]) == set(spec.centers)
    assert r.plans["day"].min() == 18


def test_weekend_capacity_dip_delays_saturday_arrivals():
    spec = tiny_network(sd=0.3, capacity=120, weekend_cap=0.3)
    r = generate(spec, days=84, orders_per_day=100, seed=7)
    d = r.deliveries
    aday = d["lastmile_arrival"] // 1440
    lm = d["leg_lastmile"]
    sat = lm[aday % 7 == 5]
    mid = lm[aday % 7 == 2]
    assert len(sat) + len(mid) >= 1500 and len(d) >= 5000
    assert sat.mean() > mid.mean() + 2.0


def test_ground_truth_quantiles():
    spec = tiny_network()
    o = Order("x", Timestamp.at(dt.date(2024, 1, 3), 9), Source("warehouse", "W1"), spec.lanes[0],
              GeoKey("110001", "tier1"))
    for q in (0.1, 0.5, 0.99):
        assert ground_truth_quantile(spec, o, q, 2000) == pytest.approx(11.5)
    noisy = tiny_network(sd=0.4)
    q50 = ground_truth_quantile(noisy, o, 0.5, 100_000, seed=1)
    q95 = ground_truth_quantile(noisy, o, 0.95, 100_000, seed=1)
    assert q95 >= q50
    # mean by Monte-Carlo of the sum of independent lognormals
    rng = np.random.default_rng(9)
    draws = sum(m * np.exp(0.4 * rng.standard_normal(100_000)) for m in (2.0, 3.0, 5.0, 1.5))
    mean = draws.mean()
    assert mean / 1.5 <= q50 <= mean
    with pytest.raises(InputError):
        ground_truth_quantile(spec, o, 0.5, 10)


def test_cutoff_and_shift_helpers():
    assert next_cutoff_vec(np.array([600, 900, 1439]), [840]).tolist() == [840, 840 + 1440, 840 + 1440]
    assert next_cutoff_vec(np.array([5]), []).tolist() == [5]
    # shift 08:00-20:00; 2h of work starting at 19:00 finishes at 09:00 next day
    assert shift_add(np.array([19 * 60]), np.array([120]), 480, 1200).tolist() == [1440 + 9 * 60]
    # placed before the shift starts
    assert shift_add(np.array([6 * 60]), np.array([60]), 480, 1200).tolist() == [9 * 60]


def test_spec_validation():
    with pytest.raises(ConfigError, match="unknown node"):
        NetworkSpec({}, {}, (), {"C1": CenterSpec(10, pincodes={"110001": ("tier1", 0)})},
                    (Lane("W9", "C1", ("H1",)),), {})
    with pytest.raises(ConfigError):
        CenterSpec(0, pincodes={"110001": ("tier1", 0)})
    with pytest.raises(ConfigError):
        HrdEvent(dt.date(2024, 1, 1), 2, 0.5)


def test_spec_roundtrip_and_save_load(tmp_path):
    spec = default_network(100, 14)
    assert NetworkSpec.from_dict(spec.to_dict()).to_dict() == spec.to_dict()
    r = generate(spec, [HrdEvent(date_of_day(5), 2, 2.0)], days=14, orders_per_day=100, seed=0)
    r.save(tmp_path)
    back = SimulationResult.load(tmp_path)
    pd.testing.assert_frame_equal(back.deliveries, r.deliveries, check_dtype=False)
    assert back.events == r.events


def test_scenario_file(tmp_path):
    p = tmp_path / "s.toml"
    p.write_text('preset = "default"\ndays = 10\norders_per_day = 50\nseed = 4\n'
                 '[[events]]\nstart = "2024-01-05"\nduration_days = 2\nvolume_multiplier = 2.0\n')
    sc = load_scenario(p)
    assert sc["days"] == 10 and sc["events"][0].volume_multiplier == 2.0
    p.write_text("bogus = 1\n")
    with pytest.raises(ConfigError, match="bogus"):
        load_scenario(p)
