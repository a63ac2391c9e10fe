"""Static rule-based promise: configured leg times, cutoff roll-forward, fixed pads."""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .domain import (
    MINUTES_PER_DAY,
    ConfigError,
    DayKind,
    HolidayCalendar,
    Order,
    Timestamp,
)


def parse_time_of_day(v) -> int:
    """'14:30' or minutes-of-day int -> minutes of day."""
    if isinstance(v, str):
        try:
            h, m = v.split(":")
            minutes = int(h) * 60 + int(m)
        except ValueError as exc:
            raise ConfigError(f"bad time of day {v!r}") from exc
    else:
        minutes = int(v)
    if not 0 <= minutes < MINUTES_PER_DAY:
        raise ConfigError(f"time of day out of range: {v!r}")
    return minutes


def next_cutoff(minute: int, cutoffs: tuple[int, ...]) -> int:
    """First cutoff at or after ``minute`` (absolute minutes), rolling to later days."""
    day, tod = divmod(minute, MINUTES_PER_DAY)
    for c in cutoffs:
        if c >= tod:
            return day * MINUTES_PER_DAY + c
    return (day + 1) * MINUTES_PER_DAY + cutoffs[0]


def _split_key(key: str, what: str) -> tuple[str, str]:
    for sep in (">", "/", ","):
        if sep in key:
            a, b = key.split(sep, 1)
            return a.strip(), b.strip()
    raise ConfigError(f"{what} key {key!r} must look like 'A>B'")


@dataclass(frozen=True)
class RuleConfig:
    vendor_times: Mapping[str, float] = field(default_factory=dict)
    warehouse_times: Mapping[tuple[str, str], float] = field(default_factory=dict)
    hop_times: Mapping[tuple[str, str], float] = field(default_factory=dict)
    lastmile_time: float = 0.0
    cutoffs: Mapping[str, tuple[int, ...]] = field(default_factory=dict)
    weekend_pad: float = 0.0
    holiday_pad: float = 0.0

    def __post_init__(self):
        cut = {}
        for node, times in self.cutoffs.items():
            mins = tuple(parse_time_of_day(t) for t in times)
            if not mins:
                raise ConfigError(f"cutoffs[{node}] is empty")
            if list(mins) != sorted(mins):
                raise ConfigError(f"cutoffs[{node}] must be sorted within the day")
            cut[node] = mins
        object.__setattr__(self, "cutoffs", cut)
        object.__setattr__(self, "vendor_times", dict(self.vendor_times))
        object.__setattr__(self, "warehouse_times", {tuple(k): v for k, v in self.warehouse_times.items()})
        object.__setattr__(self, "hop_times", {tuple(k): v for k, v in self.hop_times.items()})
        for name, table in (("vendor_times", self.vendor_times), ("warehouse_times", self.warehouse_times),
                            ("hop_times", self.hop_times)):
            for k, v in table.items():
                if not v >= 0:
                    raise ConfigError(f"{name}[{k}] must be >= 0")
        for name in ("lastmile_time", "weekend_pad", "holiday_pad"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name} must be >= 0")

    def warehouse_total(self, warehouse: str) -> float:
        legs = [v for (w, _), v in self.warehouse_times.items() if w == warehouse]
        if not legs:
            raise ConfigError(f"missing warehouse_times for {warehouse!r}")
        return float(sum(legs))

    def to_dict(self) -> dict:
        def hhmm(m):
            return f"{m // 60:02d}:{m % 60:02d}"
        return {
            "vendor_times": dict(self.vendor_times),
            "warehouse_times": {f"{w}/{leg}": v for (w, leg), v in self.warehouse_times.items()},
            "hop_times": {f"{a}>{b}": v for (a, b), v in self.hop_times.items()},
            "lastmile_time": self.lastmile_time,
            "cutoffs": {k: [hhmm(m) for m in v] for k, v in self.cutoffs.items()},
            "weekend_pad": self.weekend_pad,
            "holiday_pad": self.holiday_pad,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RuleConfig":
        known = {"vendor_times", "warehouse_times", "hop_times", "lastmile_time", "cutoffs",
                 "weekend_pad", "holiday_pad"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown rule config keys: {sorted(extra)}")
        wh = {}
        for k, v in d.get("warehouse_times", {}).items():
            if isinstance(v, Mapping):  # nested {warehouse: {leg: hours}}
                wh.update({(k, leg): float(h) for leg, h in v.items()})
            else:
                wh[_split_key(k, "warehouse_times")] = float(v)
        hops = {}
        for k, v in d.get("hop_times", {}).items():
            if isinstance(v, Mapping):
                hops.update({(k, b): float(h) for b, h in v.items()})
            else:
                hops[_split_key(k, "hop_times")] = float(v)
        return cls(
            vendor_times={k: float(v) for k, v in d.get("vendor_times", {}).items()},
            warehouse_times=wh,
            hop_times=hops,
            lastmile_time=float(d.get("lastmile_time", 0.0)),
            cutoffs={k: tuple(v) for k, v in d.get("cutoffs", {}).items()},
            weekend_pad=float(d.get("weekend_pad", 0.0)),
            holiday_pad=float(d.get("holiday_pad", 0.0)),
        )

    @classmethod
    def load(cls, path: str | Path) -> "RuleConfig":
        path = Path(path)
        text = path.read_text()
        if path.suffix.lower() == ".toml":
            import tomli
            data = tomli.loads(text)
            data = data.get("rule", data)
        else:
            data = json.loads(text)
        return cls.from_dict(data)


def _hours_to_minutes(h: float) -> int:
    return int(round(h * 60))


def base_delivery_minute(order: Order, config: RuleConfig) -> tuple[int, int]:
    """(ready-to-ship minute, un-padded delivery minute) for ``order``."""
    clock = order.placed_at.minutes_since_epoch
    src = order.source
    if src.is_vendor:
        if src.node_id not in config.vendor_times:
            raise ConfigError(f"missing vendor_times[{src.node_id!r}]")
        clock += _hours_to_minutes(config.vendor_times[src.node_id])
    else:
        clock += _hours_to_minutes(config.warehouse_total(src.node_id))
    ready = clock
    lane = order.lane
    for a, b in lane.hops:
        if a in config.cutoffs:
            clock = next_cutoff(clock, config.cutoffs[a])
        if (a, b) not in config.hop_times:
            raise ConfigError(f"missing hop_times[{a}>{b}]")
        clock += _hours_to_minutes(config.hop_times[(a, b)])
    clock += _hours_to_minutes(config.lastmile_time)
    return ready, clock


def padded_days(start: dt.date, end: dt.date, region: str, calendar: HolidayCalendar) -> tuple[int, int]:
    """(weekend days, holiday days) in the inclusive date span for ``region``."""
    weekends = holidays = 0
    d = start
    while d <= end:
        kind = calendar.kind_of(region, d)
        if kind == DayKind.WEEKEND:
            weekends += 1
        elif kind is not None:
            holidays += 1
        d += dt.timedelta(days=1)
    return weekends, holidays


def rule_promise(order: Order, config: RuleConfig, calendar: HolidayCalendar | None = None) -> Timestamp:
    """Promised delivery timestamp under the static rule configuration.

    Pads are added once per weekend or holiday date (for the destination
    region) between the placement date and the un-padded delivery date.
    """
    _, end = base_delivery_minute(order, config)
    if calendar is not None and (config.weekend_pad or config.holiday_pad):
        wk, hol = padded_days(order.placed_at.date, Timestamp(end).date, order.lane.destination_center, calendar)
        end += _hours_to_minutes(wk * config.weekend_pad + hol * config.holiday_pad)
    return Timestamp(max(end, order.placed_at.minutes_since_epoch))
