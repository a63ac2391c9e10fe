"""Holiday and weekend handling times from proxy days and robust statistics.

For an upcoming holiday or weekend the most recent similar past days in the
same region serve as proxies. Each proxy's last-mile durations are compared
with nearby business-as-usual (BAU) days after clipping outliers, and the
median excess becomes the extra handling time.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from .domain import (
    MINUTES_PER_DAY,
    DayKind,
    DeliveryRecord,
    HolidayCalendar,
    InputError,
    date_of_day,
    day_index,
)

RATE_TOLERANCE = 0.15
MAX_PROXIES = 3
BAU_WINDOW_DAYS = 7
BAU_PER_PROXY = 4
RECENCY_WEIGHTS = (3.0, 2.0, 1.0)
MIN_PROXY_DELIVERIES = 10
MAD_CLIP = 3.0


@dataclass(frozen=True)
class HandlingTime:
    region: str
    kind: DayKind
    extra_hours: float
    support: int
    date: dt.date | None = None

    def __post_init__(self):
        if self.extra_hours < 0:
            raise InputError("extra_hours must be >= 0")


class LastMileLog:
    """Last-mile durations indexed by (region, arrival day).

    ``delivered_min`` lets callers restrict to deliveries observed before a
    cut-off, so handling times can be derived without look-ahead.
    """

    def __init__(self, region, arrival_day, delivered_min, hours):
        self.frame = pd.DataFrame({
            "region": np.asarray(region, dtype=object),
            "day": np.asarray(arrival_day, dtype=np.int64),
            "delivered_min": np.asarray(delivered_min, dtype=np.int64),
            "hours": np.asarray(hours, dtype=np.float64),
        }).sort_values(["region", "day", "delivered_min"], kind="stable").reset_index(drop=True)
        self._groups = {k: (g["delivered_min"].to_numpy(), g["hours"].to_numpy())
                        for k, g in self.frame.groupby(["region", "day"], sort=False)}

    @classmethod
    def from_records(cls, records: Iterable[DeliveryRecord]) -> "LastMileLog":
        rs = list(records)
        return cls(
            [r.order.lane.destination_center for r in rs],
            [r.lastmile_arrival.day for r in rs],
            [r.delivered_at.minutes_since_epoch for r in rs],
            [r.leg_durations.get("lastmile", 0.0) for r in rs],
        )

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> "LastMileLog":
        """From a deliveries frame with destination, lastmile_arrival, delivered_at, leg_lastmile."""
        return cls(df["destination"], df["lastmile_arrival"] // MINUTES_PER_DAY, df["delivered_at"],
                   df["leg_lastmile"])

    def durations(self, region: str, day: int, before_minute: int | None = None) -> np.ndarray:
        g = self._groups.get((region, day))
        if g is None:
            return np.empty(0)
        delivered, hours = g
        if before_minute is not None:
            return hours[delivered < before_minute]
        return hours


def match_proxies(target: tuple[str, dt.date, DayKind | str], calendar: HolidayCalendar,
                  horizon_days: int = 365, before: dt.date | None = None) -> list[dt.date]:
    """Up to three most recent same-kind past dates with similar absenteeism, newest first.

    ``before`` further restricts proxies to dates strictly before it.
    """
    region, date, kind = target
    entry = calendar.get(region, date)
    if entry is None:
        raise InputError(f"no calendar entry for {region} on {date}")
    kind = DayKind(kind)
    earliest = date - dt.timedelta(days=horizon_days)
    out = []
    for e in reversed(calendar.entries_for(region, kind)):
        if e.date >= date or e.date < earliest or (before is not None and e.date >= before):
            continue
        if abs(e.absenteeism_rate - entry.absenteeism_rate) <= RATE_TOLERANCE + 1e-12:
            out.append(e.date)
            if len(out) == MAX_PROXIES:
                break
    return out


def clip_mad(x: np.ndarray, k: float = MAD_CLIP) -> np.ndarray:
    """Clip to median +- k * median absolute deviation."""
    if x.size == 0:
        return x
    med = np.median(x)
    mad = np.median(np.abs(x - med))
    return np.clip(x, med - k * mad, med + k * mad)


def _bau_days(proxy: dt.date, region: str, calendar: HolidayCalendar | None, has_data) -> list[dt.date]:
    cands = []
    for off in range(1, BAU_WINDOW_DAYS + 1):
        for d in (proxy - dt.timedelta(days=off), proxy + dt.timedelta(days=off)):
            if calendar is not None and calendar.get(region, d) is not None:
                continue
            if has_data(d):
                cands.append(d)
    return cands[:BAU_PER_PROXY]


def derive_handling_time(proxies: list[dt.date], deliveries, region: str,
                         calendar: HolidayCalendar | None = None, kind: DayKind | str = DayKind.WEEKEND,
                         before_minute: int | None = None, date: dt.date | None = None) -> HandlingTime:
    """Extra last-mile hours on proxy days relative to nearby BAU days.

    ``deliveries`` is a :class:`LastMileLog` or an iterable of records. BAU
    days are the nearest non-calendar days within a week of each proxy.
    Proxies with fewer than ten deliveries are skipped; with none left the
    result defaults to zero extra hours and zero support.
    """
    log = deliveries if isinstance(deliveries, LastMileLog) else LastMileLog.from_records(deliveries)
    kind = DayKind(kind)

    def durations(d: dt.date) -> np.ndarray:
        return log.durations(region, day_index(d), before_minute)

    extras, weights = [], []
    for rank, proxy in enumerate(proxies[:MAX_PROXIES]):
        proxy_h = durations(proxy)
        if proxy_h.size < MIN_PROXY_DELIVERIES:
            continue
        bau = _bau_days(proxy, region, calendar, lambda d: durations(d).size > 0)
        if not bau:
            continue
        bau_h = np.concatenate([clip_mad(durations(d)) for d in bau])
        diff = float(np.median(clip_mad(proxy_h)) - np.median(bau_h))
        extras.append(max(0.0, diff))
        weights.append(RECENCY_WEIGHTS[rank])
    if not extras:
        return HandlingTime(region, kind, 0.0, 0, date)
    extra = float(np.dot(extras, weights) / np.sum(weights))
    return HandlingTime(region, kind, extra, len(extras), date)


def handling_table(calendar: HolidayCalendar, log: LastMileLog, as_of: dt.date,
                   horizon_days: int = 14, lookback_days: int = 7) -> dict[tuple[str, dt.date], HandlingTime]:
    """Handling times for every calendar entry near ``as_of``, using only deliveries before it."""
    before = day_index(as_of) * MINUTES_PER_DAY
    lo = as_of - dt.timedelta(days=lookback_days)
    hi = as_of + dt.timedelta(days=horizon_days)
    table = {}
    for e in calendar:
        if not lo <= e.date <= hi:
            continue
        # proxies must be fully observed: strictly before as_of as well as before the date
        cutoff = min(e.date, as_of)
        proxies = match_proxies((e.region, e.date, e.kind), calendar, before=cutoff)
        table[(e.region, e.date)] = derive_handling_time(proxies, log, e.region, calendar, e.kind,
                                                         before_minute=before, date=e.date)
    return table


def adjacent_to_weekend(calendar: HolidayCalendar, region: str, date: dt.date) -> bool:
    """True for a holiday directly before or after a weekend day."""
    kind = calendar.kind_of(region, date)
    if kind not in (DayKind.FIXED, DayKind.FLEXIBLE):
        return False
    return any(calendar.kind_of(region, date + dt.timedelta(days=o)) == DayKind.WEEKEND for o in (-1, 1))


def handling_frame(table: Mapping[tuple[str, dt.date], HandlingTime]) -> pd.DataFrame:
    rows = [(r, day_index(d), h.kind.value, h.extra_hours, h.support) for (r, d), h in table.items()]
    return pd.DataFrame(rows, columns=["region", "day", "kind", "extra_hours", "support"])


__all__ = ["HandlingTime", "LastMileLog", "match_proxies", "derive_handling_time", "handling_table",
           "adjacent_to_weekend", "clip_mad", "date_of_day"]
