import datetime as dt
import math

import numpy as np
import pytest

from promisedate.domain import CalendarEntry, HolidayCalendar, InputError, Timestamp, day_index
from promisedate.stsf import SeasonalModel, SeriesObservation, StsfConfig, fit, forecast, resample

START_H = 24.0 * 30
HOURS = np.arange(0.0, 24 * 7 * 8) + START_H
HOLIDAYS = [dt.date(2024, 2, 20), dt.date(2024, 3, 5), dt.date(2024, 3, 19)]


def synthetic(slope=0.0, weekly=0.0, holiday=0.0, noise=0.0, seed=0, base=5.0):
    """Series with known components: the generator is the oracle."""
    rng = np.random.default_rng(seed)
    days = np.floor(HOURS / 24).astype(int)
    hol = np.isin(days, [day_index(d) for d in HOLIDAYS])
    y = base + slope * (HOURS - HOURS[0]) + weekly * np.sin(2 * np.pi * HOURS / 168) + holiday * hol
    if noise:
        y = y + rng.normal(0, noise, HOURS.size)
    return y


def calendar():
    return HolidayCalendar([CalendarEntry("R1", d, "fixed", 0.4) for d in HOLIDAYS])


def test_pure_line_recovers_slope():
    m = fit(config=StsfConfig(), t_hours=HOURS, y=2 + 0.1 * (HOURS - HOURS[0]))
    assert m.base_slope == pytest.approx(0.1, rel=1e-9)
    assert max(abs(d) for d in m.slope_adjustments) <= 1e-3
    weekly = m.seasonalities[0]
    assert max(weekly.amplitudes) < 1e-9


def test_weekly_sine_amplitude():
    m = fit(config=StsfConfig(), t_hours=HOURS, y=10 + 3 * np.sin(2 * np.pi * HOURS / 168))
    amp = m.seasonalities[0].amplitudes[0]
    assert 2.7 <= amp <= 3.3


def test_constant_series():
    m = fit(config=StsfConfig(), t_hours=HOURS, y=np.full(HOURS.size, 7.25))
    out = forecast(m, HOURS[::37], 0.5)
    assert np.allclose(out["point"], 7.25, atol=1e-9)
    assert abs(m.base_slope) < 1e-12
    assert all(abs(d) < 1e-12 for d in m.slope_adjustments)


def test_observation_list_input():
    obs = [SeriesObservation(Timestamp(int(h * 60)), float(v))
           for h, v in zip(HOURS, 3 + 0.05 * (HOURS - HOURS[0]))]
    m = fit(obs, StsfConfig(seasonalities=((24.0, 2),)))
    assert m.base_slope == pytest.approx(0.05, rel=1e-6)


def test_components_recovered_with_noise():
    y = synthetic(slope=0.1, weekly=3.0, holiday=6.0, noise=1.0, seed=4)
    m = fit(config=StsfConfig(calendar=calendar(), regions=("R1",)), t_hours=HOURS, y=y)
    assert m.base_slope == pytest.approx(0.1, rel=0.05)
    assert m.seasonalities[0].amplitudes[0] == pytest.approx(3.0, rel=0.10)
    assert m.holiday_effect("fixed", "R1") == pytest.approx(6.0, abs=1.0)


def test_holiday_forecast_exceeds_adjacent_day():
    y = synthetic(slope=0.0, weekly=0.0, holiday=6.0, noise=0.5, seed=1)
    m = fit(config=StsfConfig(calendar=calendar(), regions=("R1",)), t_hours=HOURS, y=y)
    h = day_index(HOLIDAYS[1]) * 24 + 12.0
    diff = forecast(m, h, 0.5)["point"] - forecast(m, h - 24, 0.5)["point"]
    assert diff == pytest.approx(6.0, abs=1.0)


def test_symmetric_noise_median_upper_close_to_point():
    y = synthetic(noise=2.0, seed=9)
    m = fit(config=StsfConfig(), t_hours=HOURS, y=y)
    out = forecast(m, HOURS, 0.5)
    resid = y - out["point"]
    mad = np.median(np.abs(resid - np.median(resid)))
    assert np.all(np.abs(out["upper"] - out["point"]) < mad)


def test_cap_clamps():
    m = fit(config=StsfConfig(cap=6.0), t_hours=HOURS, y=synthetic(slope=0.01))
    out = forecast(m, HOURS[-1] + 500, 0.95)
    assert out["point"] == 6.0 and out["upper"] == 6.0


def test_unfitted_level_rejected():
    m = fit(config=StsfConfig(), t_hours=HOURS, y=synthetic(noise=1.0))
    with pytest.raises(InputError):
        forecast(m, HOURS[0], 0.77)


def test_insufficient_data_and_bad_bounds():
    with pytest.raises(InputError, match="insufficient"):
        fit(config=StsfConfig(), t_hours=HOURS[:200], y=np.ones(200))
    with pytest.raises(InputError):
        fit(config=StsfConfig(cap=1.0, floor=2.0), t_hours=HOURS, y=np.ones(HOURS.size))
    with pytest.raises(InputError):
        fit(config=StsfConfig(), t_hours=HOURS[::-1], y=np.ones(HOURS.size))


def test_forecast_continuous_across_changepoints():
    rng = np.random.default_rng(0)
    y = np.concatenate([np.linspace(0, 20, 700), np.linspace(20, 5, HOURS.size - 700)]) + rng.normal(0, 0.5, HOURS.size)
    m = fit(config=StsfConfig(changepoint_prior_scale=0.5), t_hours=HOURS, y=y)
    assert any(abs(d) > 1e-3 for d in m.slope_adjustments)
    for cp in m.changepoints:
        eps = 1e-6
        left = forecast(m, cp - eps, 0.5)["point"]
        right = forecast(m, cp + eps, 0.5)["point"]
        assert abs(left - right) < 1e-3


@pytest.mark.parametrize("level", [0.5, 0.8, 0.9, 0.95])
def test_in_sample_exceedance(level):
    rng = np.random.default_rng(3)
    y = synthetic(weekly=2.0, seed=3) + rng.gamma(2.0, 2.0, HOURS.size)
    m = fit(config=StsfConfig(), t_hours=HOURS, y=y)
    upper = forecast(m, HOURS, level)["upper"]
    assert np.mean(y > upper) <= (1 - level) + 0.02


def test_tiny_prior_scale_gives_global_line():
    y = 2 + 0.1 * (HOURS - HOURS[0]) + np.random.default_rng(1).normal(0, 0.3, HOURS.size)
    m = fit(config=StsfConfig(changepoint_prior_scale=1e-6), t_hours=HOURS, y=y)
    assert max(abs(d) for d in m.slope_adjustments) < 1e-4


def test_translation_equivariance():
    y = synthetic(slope=0.02, weekly=2.0, holiday=3.0, noise=1.0, seed=5)
    cfg = StsfConfig(calendar=calendar(), regions=("R1",), changepoint_prior_scale=0.5)
    a = fit(config=cfg, t_hours=HOURS, y=y)
    b = fit(config=cfg, t_hours=HOURS, y=y + 17.0)
    probe = np.linspace(HOURS[0], HOURS[-1] + 100, 300)
    fa, fb = forecast(a, probe, 0.9), forecast(b, probe, 0.9)
    assert np.allclose(fb["point"] - fa["point"], 17.0, atol=1e-6)
    assert np.allclose(fb["upper"] - fa["upper"], 17.0, atol=1e-6)


def test_save_load_roundtrip(tmp_path):
    y = synthetic(slope=0.02, weekly=2.0, holiday=3.0, noise=1.0, seed=5)
    m = fit(config=StsfConfig(calendar=calendar(), regions=("R1",), cap=100.0), t_hours=HOURS, y=y)
    m.save(tmp_path / "s.json")
    m2 = SeasonalModel.load(tmp_path / "s.json")
    assert m2.dumps() == m.dumps()
    probe = HOURS[::11]
    assert np.array_equal(forecast(m2, probe, 0.95)["upper"], forecast(m, probe, 0.95)["upper"])


def test_extrapolates_with_final_slope():
    y = 2 + 0.1 * (HOURS - HOURS[0])
    m = fit(config=StsfConfig(), t_hours=HOURS, y=y)
    far = HOURS[-1] + 1000
    assert forecast(m, far, 0.5)["point"] == pytest.approx(2 + 0.1 * (far - HOURS[0]), rel=1e-9)


def test_resample_means_per_bucket():
    t, v = resample([0, 30, 59, 60, 185], [1.0, 2.0, 3.0, 10.0, 4.0], 60)
    assert t.tolist() == [0.0, 1.0, 3.0]
    assert v.tolist() == [2.0, 10.0, 4.0]
    assert math.isclose(v[0], 2.0)
