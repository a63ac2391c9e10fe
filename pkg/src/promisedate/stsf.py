"""Additive structural time-series forecaster: trend + seasonality + holidays.

The trend is piecewise linear with changepoints spread over the first 80% of
the training span. Slope changes carry an L1 penalty of
``1 / changepoint_prior_scale``; everything else is fit by least squares.
Prediction intervals come from empirical quantiles of in-sample residuals.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .domain import (
    DayKind,
    HolidayCalendar,
    InputError,
    Timestamp,
    day_index,
)
from .gbdt import check_version
from .losses import weighted_quantile

FORMAT_VERSION = "1.0"
HOLIDAY_KINDS = (DayKind.FIXED, DayKind.FLEXIBLE)


@dataclass(frozen=True)
class SeriesObservation:
    t: Timestamp
    y: float


@dataclass(frozen=True)
class Seasonality:
    period_hours: float
    fourier_order: int
    cos_coef: tuple[float, ...] = ()
    sin_coef: tuple[float, ...] = ()

    @property
    def amplitudes(self) -> list[float]:
        return [math.hypot(a, b) for a, b in zip(self.cos_coef, self.sin_coef)]


@dataclass(frozen=True)
class StsfConfig:
    n_changepoints: int = 25
    changepoint_prior_scale: float = 0.05
    seasonalities: tuple[tuple[float, int], ...] = ((168.0, 3), (24.0, 4))
    calendar: HolidayCalendar | None = None
    regions: tuple[str, ...] = ()
    holiday_window_days: int = 1
    cap: float = math.inf
    floor: float = -math.inf
    levels: tuple[float, ...] = (0.5, 0.8, 0.9, 0.95)
    tol: float = 1e-8
    max_sweeps: int = 20000


@dataclass(frozen=True)
class SeasonalModel:
    t0: float  # hours since epoch of the first observation
    base_slope: float  # hours of y per hour of t
    offset: float
    changepoints: tuple[float, ...]  # hours since epoch
    slope_adjustments: tuple[float, ...]
    seasonalities: tuple[Seasonality, ...]
    # (kind, region) -> effects for day offsets -w..w around each holiday date
    holiday_effects: dict[tuple[str, str], tuple[float, ...]] = field(default_factory=dict)
    holiday_dates: dict[tuple[str, str], tuple[int, ...]] = field(default_factory=dict)
    holiday_window_days: int = 1
    residual_quantiles: dict[float, float] = field(default_factory=dict)
    cap: float = math.inf
    floor: float = -math.inf

    # -- components ---------------------------------------------------------

    def trend(self, t_hours) -> np.ndarray:
        t = np.asarray(t_hours, dtype=np.float64)
        out = self.offset + self.base_slope * (t - self.t0)
        for s, d in zip(self.changepoints, self.slope_adjustments):
            out = out + d * np.maximum(t - s, 0.0)
        return out

    def seasonal(self, t_hours) -> np.ndarray:
        t = np.asarray(t_hours, dtype=np.float64)
        out = np.zeros_like(t)
        for s in self.seasonalities:
            for n, (a, b) in enumerate(zip(s.cos_coef, s.sin_coef), start=1):
                w = 2.0 * math.pi * n * t / s.period_hours
                out = out + a * np.cos(w) + b * np.sin(w)
        return out

    def holidays(self, t_hours) -> np.ndarray:
        t = np.asarray(t_hours, dtype=np.float64)
        days = np.floor(t / 24.0).astype(np.int64)
        out = np.zeros_like(t)
        w = self.holiday_window_days
        for key, effects in self.holiday_effects.items():
            dates = np.asarray(self.holiday_dates.get(key, ()), dtype=np.int64)
            for k, effect in enumerate(effects):
                if effect:
                    out = out + effect * np.isin(days - (k - w), dates)
        return out

    def holiday_effect(self, kind: str, region: str) -> float:
        """Additive effect on the holiday date itself."""
        effects = self.holiday_effects.get((kind, region))
        return effects[self.holiday_window_days] if effects else 0.0

    def raw_point(self, t_hours) -> np.ndarray:
        return self.trend(t_hours) + self.seasonal(t_hours) + self.holidays(t_hours)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": "promisedate.stsf",
            "version": FORMAT_VERSION,
            "t0": self.t0,
            "base_slope": self.base_slope,
            "offset": self.offset,
            "changepoints": list(self.changepoints),
            "slope_adjustments": list(self.slope_adjustments),
            "seasonalities": [
                {"period_hours": s.period_hours, "fourier_order": s.fourier_order,
                 "cos": list(s.cos_coef), "sin": list(s.sin_coef)} for s in self.seasonalities
            ],
            "holiday_window_days": self.holiday_window_days,
            "holidays": [
                {"kind": k, "region": r, "effects": list(v),
                 "dates": list(self.holiday_dates.get((k, r), ()))}
                for (k, r), v in sorted(self.holiday_effects.items())
            ],
            "residual_quantiles": [[q, v] for q, v in sorted(self.residual_quantiles.items())],
            "cap": None if math.isinf(self.cap) else self.cap,
            "floor": None if math.isinf(self.floor) else self.floor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SeasonalModel":
        check_version(d.get("version", "0"), FORMAT_VERSION)
        return cls(
            t0=d["t0"],
            base_slope=d["base_slope"],
            offset=d["offset"],
            changepoints=tuple(d["changepoints"]),
            slope_adjustments=tuple(d["slope_adjustments"]),
            seasonalities=tuple(Seasonality(s["period_hours"], s["fourier_order"], tuple(s["cos"]),
                                            tuple(s["sin"])) for s in d["seasonalities"]),
            holiday_effects={(h["kind"], h["region"]): tuple(h["effects"]) for h in d["holidays"]},
            holiday_dates={(h["kind"], h["region"]): tuple(h["dates"]) for h in d["holidays"]},
            holiday_window_days=d["holiday_window_days"],
            residual_quantiles={float(q): float(v) for q, v in d["residual_quantiles"]},
            cap=math.inf if d["cap"] is None else d["cap"],
            floor=-math.inf if d["floor"] is None else d["floor"],
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path: str | Path) -> "SeasonalModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _fourier(t_hours: np.ndarray, period: float, order: int) -> np.ndarray:
    cols = []
    for n in range(1, order + 1):
        w = 2.0 * math.pi * n * t_hours / period
        cols += [np.cos(w), np.sin(w)]
    return np.column_stack(cols) if cols else np.empty((t_hours.size, 0))


def _holiday_columns(t_hours: np.ndarray, config: StsfConfig):
    """Indicator columns per (kind, region, day offset) with any training support."""
    cal = config.calendar
    if cal is None or not config.regions:
        return np.empty((t_hours.size, 0)), [], {}
    days = np.floor(t_hours / 24.0).astype(np.int64)
    w = config.holiday_window_days
    cols, labels, dates_by_key = [], [], {}
    for region in config.regions:
        for kind in HOLIDAY_KINDS:
            dates = tuple(day_index(e.date) for e in cal.entries_for(region, kind))
            if not dates:
                continue
            key = (kind.value, region)
            dates_by_key[key] = dates
            for k in range(2 * w + 1):
                col = np.isin(days - (k - w), dates).astype(np.float64)
                if col.any():
                    cols.append(col)
                    labels.append((key, k))
    mat = np.column_stack(cols) if cols else np.empty((t_hours.size, 0))
    return mat, labels, dates_by_key


def _soft(x: float, thr: float) -> float:
    if x > thr:
        return x - thr
    if x < -thr:
        return x + thr
    return 0.0


def _lasso_cd(A: np.ndarray, c: np.ndarray, yy: float, lam: float, tol: float, max_sweeps: int) -> np.ndarray:
    """Minimize yy - 2 c.d + d'Ad + lam*|d|_1 by cyclic coordinate descent."""
    p = c.size
    d = np.zeros(p)
    if p == 0:
        return d

    def objective(d):
        return yy - 2.0 * c @ d + d @ A @ d + lam * np.abs(d).sum()

    obj = objective(d)
    Ad = np.zeros(p)
    for _ in range(max_sweeps):
        for j in range(p):
            ajj = A[j, j]
            if ajj <= 0:
                continue
            rho = c[j] - (Ad[j] - ajj * d[j])
            new = _soft(rho, lam / 2.0) / ajj
            if new != d[j]:
                Ad += A[:, j] * (new - d[j])
                d[j] = new
        new_obj = objective(d)
        if abs(obj - new_obj) <= tol * max(abs(new_obj), 1e-300):
            break
        obj = new_obj
    return d


def fit(series: Sequence[SeriesObservation] | None = None, config: StsfConfig = StsfConfig(), *,
        t_hours=None, y=None) -> SeasonalModel:
    """Fit the additive model to observations (or to ``t_hours``/``y`` arrays)."""
    if series is not None:
        t = np.array([o.t.hours for o in series], dtype=np.float64)
        yv = np.array([o.y for o in series], dtype=np.float64)
    else:
        t = np.asarray(t_hours, dtype=np.float64)
        yv = np.asarray(y, dtype=np.float64)
    if config.cap < config.floor:
        raise InputError("cap must be >= floor")
    if t.size < 3:
        raise InputError("insufficient data: need at least 3 observations")
    if np.any(np.diff(t) <= 0):
        raise InputError("observation times must be strictly increasing")
    if not np.all(np.isfinite(yv)):
        raise InputError("non-finite observation")
    span = t[-1] - t[0]
    for period, _ in config.seasonalities:
        if span < 2 * period:
            raise InputError(f"insufficient data: {span:.0f}h span < two {period:g}h periods")

    t0 = t[0]
    scale_t = span
    ts = (t - t0) / scale_t
    sd = float(np.std(yv))
    scale_y = sd if sd > 0 else 1.0
    ys = yv / scale_y

    n_cp = config.n_changepoints
    cps = np.linspace(0.0, 0.8, n_cp + 1)[1:] if n_cp > 0 else np.empty(0)
    hinge = np.maximum(ts[:, None] - cps[None, :], 0.0) if n_cp else np.empty((t.size, 0))

    season_blocks = [_fourier(t, p, o) for p, o in config.seasonalities]
    hol, hol_labels, hol_dates = _holiday_columns(t, config)
    Xu = np.column_stack([np.ones_like(ts), ts, *season_blocks, hol])

    # profile out the unpenalized block, then run the lasso on the changepoints
    coef_y, *_ = np.linalg.lstsq(Xu, ys, rcond=None)
    ry = ys - Xu @ coef_y
    if n_cp:
        coef_h, *_ = np.linalg.lstsq(Xu, hinge, rcond=None)
        rh = hinge - Xu @ coef_h
        A = rh.T @ rh
        c = rh.T @ ry
        lam = 1.0 / config.changepoint_prior_scale
        delta = _lasso_cd(A, c, float(ry @ ry), lam, config.tol, config.max_sweeps)
    else:
        delta = np.empty(0)
    beta, *_ = np.linalg.lstsq(Xu, ys - hinge @ delta, rcond=None)

    # back to raw units
    offset = beta[0] * scale_y
    slope = beta[1] * scale_y / scale_t
    deltas = delta * scale_y / scale_t
    pos = 2
    seasons = []
    for (period, order), block in zip(config.seasonalities, season_blocks):
        coefs = beta[pos: pos + block.shape[1]] * scale_y
        pos += block.shape[1]
        seasons.append(Seasonality(float(period), int(order), tuple(coefs[0::2].tolist()),
                                   tuple(coefs[1::2].tolist())))
    effects: dict[tuple[str, str], list[float]] = {
        key: [0.0] * (2 * config.holiday_window_days + 1) for key in hol_dates
    }
    for (key, k), b in zip(hol_labels, beta[pos:]):
        effects[key][k] = float(b * scale_y)

    model = SeasonalModel(
        t0=float(t0),
        base_slope=float(slope),
        offset=float(offset),
        changepoints=tuple((t0 + cps * scale_t).tolist()),
        slope_adjustments=tuple(deltas.tolist()),
        seasonalities=tuple(seasons),
        holiday_effects={k: tuple(v) for k, v in effects.items()},
        holiday_dates=hol_dates,
        holiday_window_days=config.holiday_window_days,
        cap=config.cap,
        floor=config.floor,
    )
    point = np.clip(model.raw_point(t), config.floor, config.cap)
    resid = yv - point
    ones = np.ones_like(resid)
    rq = {float(q): weighted_quantile(resid, ones, q) for q in sorted(config.levels)}
    return SeasonalModel(**{**model.__dict__, "residual_quantiles": rq})


def forecast(model: SeasonalModel, t, level: float = 0.95) -> dict:
    """Point forecast and upper interval end at ``t`` (Timestamp, hours, or array of hours)."""
    if level not in model.residual_quantiles:
        raise InputError(f"level {level} was not fitted; available {sorted(model.residual_quantiles)}")
    if isinstance(t, Timestamp):
        t = t.hours
    th = np.asarray(t, dtype=np.float64)
    point = np.clip(model.raw_point(th), model.floor, model.cap)
    upper = np.clip(point + model.residual_quantiles[level], model.floor, model.cap)
    if point.ndim == 0:
        return {"point": float(point), "upper": float(upper)}
    return {"point": point, "upper": upper}


def resample(times_minutes, values, freq_minutes: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Mean of ``values`` per time bucket; returns bucket start (hours) and means, empty buckets dropped."""
    tm = np.asarray(times_minutes, dtype=np.int64)
    v = np.asarray(values, dtype=np.float64)
    if tm.size == 0:
        return np.empty(0), np.empty(0)
    bucket = tm // freq_minutes
    uniq, inv = np.unique(bucket, return_inverse=True)
    sums = np.bincount(inv, weights=v)
    counts = np.bincount(inv)
    return uniq * freq_minutes / 60.0, sums / counts


def hours_for_day(day: dt.date, hour: float = 12.0) -> float:
    return day_index(day) * 24.0 + hour

