"""Seeded synthetic delivery network.

Orders are placed per day, picked at a warehouse (shift-bound processing plus
a consolidation wait for multi-item orders) or prepared by a vendor, wait for
the origin's dispatch cutoff, travel hop by hop with lognormal transit times
and finally queue FIFO at a last-mile center whose daily capacity depends on
weekday, holidays and load events. Everything is in integer minutes.
"""

from __future__ import annotations

import datetime as dt
import json
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .domain import (
    EPOCH,
    LEG_NAMES,
    MINUTES_PER_DAY,
    AddressType,
    CalendarEntry,
    Carrier,
    CityTier,
    ConfigError,
    DayKind,
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
)

MAX_DRAIN_DAYS = 365


def lognormal_params(mean_hours: float, cv: float) -> tuple[float, float]:
    """(log-mean, log-sd) of a lognormal with the given mean and coefficient of variation."""
    s2 = np.log1p(cv * cv)
    return float(np.log(mean_hours) - s2 / 2), float(np.sqrt(s2))


@dataclass(frozen=True)
class WarehouseSpec:
    shift_start: int = 0  # minutes of day
    shift_end: int = MINUTES_PER_DAY
    proc_log_mean: float = 0.0
    proc_log_sd: float = 0.0
    multi_log_mean: float = 0.0
    multi_log_sd: float = 0.0

    def __post_init__(self):
        if not 0 <= self.shift_start < self.shift_end <= MINUTES_PER_DAY:
            raise ConfigError("warehouse shift must satisfy 0 <= start < end <= 1440")


@dataclass(frozen=True)
class VendorSpec:
    log_mean: float
    log_sd: float = 0.0
    po_minutes: tuple[int, ...] = ()  # purchase orders raised at these minutes of day
    vendor_type: str = "brand"
    coloader: bool = False
    max_hours: float = 96.0


@dataclass(frozen=True)
class CenterSpec:
    capacity: float
    weekday_multipliers: tuple[float, ...] = (1.0,) * 7
    sort_cutoff: int | None = None  # arrivals after this minute of day wait for tomorrow
    ofd_minute: int | None = None  # out-for-delivery start
    service_log_mean: float = -np.inf  # -inf means zero service time
    service_log_sd: float = 0.0
    share: float = 1.0
    pincodes: Mapping[str, tuple[str, float]] = field(default_factory=dict)  # pincode -> (tier, extra hours)

    def __post_init__(self):
        if not self.capacity > 0:
            raise ConfigError("center capacity must be > 0")
        if len(self.weekday_multipliers) != 7 or min(self.weekday_multipliers) <= 0:
            raise ConfigError("weekday multipliers must be 7 positive values")
        if not self.pincodes:
            raise ConfigError("center needs at least one pincode")


@dataclass(frozen=True)
class HolidayEffect:
    capacity_multiplier: float = 1.0
    transit_delay_hours: float = 0.0

    def __post_init__(self):
        if not self.capacity_multiplier > 0 or self.transit_delay_hours < 0:
            raise ConfigError("holiday effect needs capacity multiplier > 0 and delay >= 0")


@dataclass(frozen=True)
class NetworkSpec:
    warehouses: Mapping[str, WarehouseSpec]
    vendors: Mapping[str, VendorSpec]
    hubs: tuple[str, ...]
    centers: Mapping[str, CenterSpec]
    lanes: tuple[Lane, ...]
    hop_transit: Mapping[tuple[str, str], tuple[float, float]]  # (log-mean, log-sd) in hours
    cutoffs: Mapping[str, tuple[int, ...]] = field(default_factory=dict)
    transit_weekday_multipliers: tuple[float, ...] = (1.0,) * 7
    holiday_effects: Mapping[str, HolidayEffect] = field(default_factory=dict)
    calendar: HolidayCalendar = field(default_factory=HolidayCalendar)
    volume_weekday_multipliers: tuple[float, ...] = (1.0,) * 7
    vendor_share: float = 0.0
    preferred_warehouse: Mapping[str, str] = field(default_factory=dict)  # center -> warehouse
    preferred_share: float = 1.0
    multi_item_prob: float = 0.0
    home_share: float = 1.0
    placement_hour_weights: tuple[float, ...] = (1.0,) * 24

    def __post_init__(self):
        nodes = set(self.warehouses) | set(self.vendors) | set(self.hubs) | set(self.centers)
        seen = set()
        for lane in self.lanes:
            for n in lane.nodes:
                if n not in nodes:
                    raise ConfigError(f"lane {lane.lane_id} uses unknown node {n!r}")
            for hop in lane.hops:
                if hop not in self.hop_transit:
                    raise ConfigError(f"missing hop_transit for {hop[0]}>{hop[1]}")
            seen.add((lane.origin_node, lane.destination_center))
        for c in self.centers:
            for o in list(self.warehouses) + list(self.vendors):
                if (o, c) not in seen:
                    raise ConfigError(f"no lane from {o} to {c}")
        if min(self.transit_weekday_multipliers) <= 0 or min(self.volume_weekday_multipliers) <= 0:
            raise ConfigError("multipliers must be > 0")

    def lane(self, origin: str, center: str) -> Lane:
        for lane in self.lanes:
            if lane.origin_node == origin and lane.destination_center == center:
                return lane
        raise ConfigError(f"no lane from {origin} to {center}")

    def pincode_table(self) -> pd.DataFrame:
        rows = [(p, c, tier, extra) for c, cs in self.centers.items() for p, (tier, extra) in cs.pincodes.items()]
        return pd.DataFrame(rows, columns=["pincode", "center", "city_tier", "extra_hours"])

    # serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "warehouses": {k: asdict(v) for k, v in self.warehouses.items()},
            "vendors": {k: {**asdict(v), "po_minutes": list(v.po_minutes)} for k, v in self.vendors.items()},
            "hubs": list(self.hubs),
            "centers": {k: {**asdict(v), "weekday_multipliers": list(v.weekday_multipliers),
                            "service_log_mean": (None if not np.isfinite(v.service_log_mean) else v.service_log_mean),
                            "pincodes": {p: list(t) for p, t in v.pincodes.items()}}
                        for k, v in self.centers.items()},
            "lanes": [{"origin": l.origin_node, "destination": l.destination_center, "hops": list(l.hop_sequence),
                       "carrier": l.carrier.value} for l in self.lanes],
            "hop_transit": {f"{a}>{b}": list(v) for (a, b), v in self.hop_transit.items()},
            "cutoffs": {k: list(v) for k, v in self.cutoffs.items()},
            "transit_weekday_multipliers": list(self.transit_weekday_multipliers),
            "holiday_effects": {k: asdict(v) for k, v in self.holiday_effects.items()},
            "calendar": [{"region": e.region, "date": e.date.isoformat(), "kind": e.kind.value,
                          "absenteeism_rate": e.absenteeism_rate} for e in self.calendar],
            "volume_weekday_multipliers": list(self.volume_weekday_multipliers),
            "vendor_share": self.vendor_share,
            "preferred_warehouse": dict(self.preferred_warehouse),
            "preferred_share": self.preferred_share,
            "multi_item_prob": self.multi_item_prob,
            "home_share": self.home_share,
            "placement_hour_weights": list(self.placement_hour_weights),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "NetworkSpec":
        try:
            centers = {}
            for k, v in d["centers"].items():
                v = dict(v)
                v["weekday_multipliers"] = tuple(v.get("weekday_multipliers", (1.0,) * 7))
                slm = v.get("service_log_mean")
                v["service_log_mean"] = -np.inf if slm is None else float(slm)
                v["pincodes"] = {p: (t[0], float(t[1])) for p, t in v["pincodes"].items()}
                centers[k] = CenterSpec(**v)
            hop_transit = {}
            for key, val in d["hop_transit"].items():
                a, b = key.split(">")
                hop_transit[(a, b)] = (float(val[0]), float(val[1]))
            return cls(
                warehouses={k: WarehouseSpec(**v) for k, v in d.get("warehouses", {}).items()},
                vendors={k: VendorSpec(**{**v, "po_minutes": tuple(v.get("po_minutes", ()))})
                         for k, v in d.get("vendors", {}).items()},
                hubs=tuple(d.get("hubs", ())),
                centers=centers,
                lanes=tuple(Lane(l["origin"], l["destination"], tuple(l["hops"]), l.get("carrier", "own_logistics"))
                            for l in d["lanes"]),
                hop_transit=hop_transit,
                cutoffs={k: tuple(int(x) for x in v) for k, v in d.get("cutoffs", {}).items()},
                transit_weekday_multipliers=tuple(d.get("transit_weekday_multipliers", (1.0,) * 7)),
                holiday_effects={k: HolidayEffect(**v) for k, v in d.get("holiday_effects", {}).items()},
                calendar=HolidayCalendar(CalendarEntry(e["region"], dt.date.fromisoformat(e["date"]), e["kind"],
                                                       float(e["absenteeism_rate"])) for e in d.get("calendar", ())),
                volume_weekday_multipliers=tuple(d.get("volume_weekday_multipliers", (1.0,) * 7)),
                vendor_share=float(d.get("vendor_share", 0.0)),
                preferred_warehouse=dict(d.get("preferred_warehouse", {})),
                preferred_share=float(d.get("preferred_share", 1.0)),
                multi_item_prob=float(d.get("multi_item_prob", 0.0)),
                home_share=float(d.get("home_share", 1.0)),
                placement_hour_weights=tuple(d.get("placement_hour_weights", (1.0,) * 24)),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed network spec: {exc}") from exc


@dataclass(frozen=True)
class HrdEvent:
    """A high-demand sale window."""

    start: dt.date
    duration_days: int
    volume_multiplier: float
    capacity_multiplier: float = 1.0
    plan_noise: float = 0.1
    plan_lead_days: int = 3
    plan_tail_days: int = 10

    def __post_init__(self):
        if self.volume_multiplier < 1 or self.duration_days < 1:
            raise ConfigError("HRD needs volume_multiplier >= 1 and duration_days >= 1")
        if not self.capacity_multiplier > 0 or self.plan_noise < 0:
            raise ConfigError("HRD capacity_multiplier must be > 0 and plan_noise >= 0")

    def active(self, day: int) -> bool:
        s = day_index(self.start)
        return s <= day < s + self.duration_days

    def to_dict(self) -> dict:
        d = asdict(self)
        d["start"] = self.start.isoformat()
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "HrdEvent":
        d = dict(d)
        d["start"] = dt.date.fromisoformat(str(d["start"]))
        return cls(**d)


def _rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


def _lognormal_minutes(rng, log_mean, log_sd, size) -> np.ndarray:
    """Lognormal hours drawn as float minutes; -inf log-mean gives zeros."""
    log_mean = np.broadcast_to(np.asarray(log_mean, dtype=float), (size,))
    log_sd = np.broadcast_to(np.asarray(log_sd, dtype=float), (size,))
    z = rng.standard_normal(size)
    with np.errstate(over="ignore"):
        return np.where(np.isfinite(log_mean), np.exp(log_mean + log_sd * z) * 60.0, 0.0)


def next_cutoff_vec(minutes: np.ndarray, cutoffs: Sequence[int]) -> np.ndarray:
    """First cutoff at or after each minute; identity when there are no cutoffs."""
    minutes = np.asarray(minutes, dtype=np.int64)
    if not cutoffs:
        return minutes.copy()
    cut = np.asarray(sorted(cutoffs), dtype=np.int64)
    day, tod = np.divmod(minutes, MINUTES_PER_DAY)
    idx = np.searchsorted(cut, tod, side="left")
    wrap = idx == cut.size
    return np.where(wrap, (day + 1) * MINUTES_PER_DAY + cut[0], day * MINUTES_PER_DAY + cut[np.minimum(idx, cut.size - 1)])


def shift_add(start: np.ndarray, work: np.ndarray, shift_start: int, shift_end: int) -> np.ndarray:
    """Add ``work`` minutes of in-shift time to ``start``, pausing outside the shift."""
    L = shift_end - shift_start
    day, tod = np.divmod(np.asarray(start, dtype=np.int64), MINUTES_PER_DAY)
    w = day * L + np.clip(tod - shift_start, 0, L) + np.asarray(work, dtype=np.int64)
    d2, r = np.divmod(w, L)
    out = d2 * MINUTES_PER_DAY + shift_start + r
    if L == MINUTES_PER_DAY:
        return np.asarray(start, dtype=np.int64) + np.asarray(work, dtype=np.int64)
    return out


def _next_po(minutes: np.ndarray, po: Sequence[int]) -> np.ndarray:
    return next_cutoff_vec(minutes, po)


@dataclass
class SimulationResult:
    """Generated deliveries, daily center flows and plan tables."""

    deliveries: pd.DataFrame
    flows: pd.DataFrame
    plans: pd.DataFrame
    spec: NetworkSpec
    events: tuple[HrdEvent, ...] = ()
    days: int = 0
    seed: int = 0

    @property
    def calendar(self) -> HolidayCalendar:
        return self.spec.calendar

    def orders(self) -> list[Order]:
        return [frame_order(r) for r in self.deliveries.itertuples(index=False)]

    def records(self) -> list[DeliveryRecord]:
        return frame_records(self.deliveries)

    def save(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _atomic_write(out / "deliveries.csv", self.deliveries.to_csv(index=False))
        _atomic_write(out / "flows.csv", self.flows.to_csv(index=False))
        _atomic_write(out / "plans.csv", self.plans.to_csv(index=False))
        _atomic_write(out / "calendar.csv", self.spec.calendar.to_frame().to_csv(index=False))
        meta = {"network": self.spec.to_dict(), "events": [e.to_dict() for e in self.events],
                "days": self.days, "seed": self.seed}
        _atomic_write(out / "network.json", json.dumps(meta, sort_keys=True, indent=1))

    @classmethod
    def load(cls, in_dir: str | Path) -> "SimulationResult":
        p = Path(in_dir)
        try:
            meta = json.loads((p / "network.json").read_text())
            deliveries = pd.read_csv(p / "deliveries.csv", dtype={"pincode": str, "order_id": str,
                                                                  "hops": str})
            flows = pd.read_csv(p / "flows.csv")
            plans = pd.read_csv(p / "plans.csv")
        except FileNotFoundError as exc:
            raise InputError(f"missing simulation file: {exc.filename}") from exc
        return cls(deliveries, flows, plans, NetworkSpec.from_dict(meta["network"]),
                   tuple(HrdEvent.from_dict(e) for e in meta.get("events", [])),
                   int(meta.get("days", 0)), int(meta.get("seed", 0)))


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def frame_order(r) -> Order:
    hops = tuple(str(r.hops).split("|"))
    return Order(str(r.order_id), Timestamp(int(r.placed_at)), Source(r.source_kind, r.source_id),
                 Lane(r.origin, r.destination, hops, r.carrier), GeoKey(str(r.pincode), r.city_tier, r.address_type),
                 int(r.item_count))


def frame_records(df: pd.DataFrame) -> list[DeliveryRecord]:
    out = []
    for r in df.itertuples(index=False):
        legs = {name: float(getattr(r, f"leg_{name}")) for name in LEG_NAMES}
        out.append(DeliveryRecord(frame_order(r), Timestamp(int(r.shipped_at)), Timestamp(int(r.delivered_at)), legs))
    return out


def _calendar_arrays(spec: NetworkSpec, centers: list[str], n_days: int):
    """Per (center, day): capacity multiplier and transit delay hours from the calendar."""
    cap = np.ones((len(centers), n_days))
    delay = np.zeros((len(centers), n_days))
    kind = np.full((len(centers), n_days), "", dtype=object)
    for e in spec.calendar:
        if e.region not in centers:
            continue
        d = day_index(e.date)
        if not 0 <= d < n_days:
            continue
        eff = spec.holiday_effects.get(e.kind.value, HolidayEffect())
        i = centers.index(e.region)
        cap[i, d] = eff.capacity_multiplier * (1.0 - 0.5 * e.absenteeism_rate)
        delay[i, d] = eff.transit_delay_hours
        kind[i, d] = e.kind.value
    return cap, delay, kind


def generate(spec: NetworkSpec, events: Sequence[HrdEvent] = (), days: int = 70, orders_per_day: int = 1000,
             seed: int = 0, start_day: int = 0) -> SimulationResult:
    """Simulate ``days`` days of orders starting at day index ``start_day`` from the epoch."""
    if days < 1:
        raise InputError("days must be >= 1")
    events = tuple(events)
    centers = list(spec.centers)
    n_cal = start_day + days + MAX_DRAIN_DAYS
    cal_cap, cal_delay, _ = _calendar_arrays(spec, centers, n_cal)

    # --- orders -------------------------------------------------------------
    rng = _rng(seed, "orders")
    hour_w = np.asarray(spec.placement_hour_weights, float)
    hour_w = hour_w / hour_w.sum()
    share = np.array([spec.centers[c].share for c in centers], float)
    share = share / share.sum()
    placed, ctr, day_of = [], [], []
    for d in range(start_day, start_day + days):
        mult = spec.volume_weekday_multipliers[d % 7]
        for ev in events:
            if ev.active(d):
                mult *= ev.volume_multiplier
        n = int(rng.poisson(orders_per_day * mult))
        hours = rng.choice(24, size=n, p=hour_w)
        minute = d * MINUTES_PER_DAY + hours * 60 + rng.integers(0, 60, n)
        placed.append(np.sort(minute))
        ctr.append(rng.choice(len(centers), size=n, p=share))
    placed = np.concatenate(placed).astype(np.int64)
    ctr = np.concatenate(ctr).astype(np.int64)
    N = placed.size

    pin = np.empty(N, dtype=object)
    tier = np.empty(N, dtype=object)
    extra = np.zeros(N)
    for i, c in enumerate(centers):
        m = ctr == i
        pins = list(spec.centers[c].pincodes.items())
        pick = rng.integers(0, len(pins), int(m.sum()))
        pin[m] = [pins[k][0] for k in pick]
        tier[m] = [pins[k][1][0] for k in pick]
        extra[m] = [pins[k][1][1] for k in pick]
    address = np.where(rng.random(N) < spec.home_share, AddressType.HOME.value, AddressType.OFFICE.value)
    items = np.where(rng.random(N) < spec.multi_item_prob, 2 + rng.poisson(1.0, N), 1)

    vendors = list(spec.vendors)
    warehouses = list(spec.warehouses)
    is_vendor = (rng.random(N) < spec.vendor_share) if vendors else np.zeros(N, bool)
    origin = np.empty(N, dtype=object)
    if vendors:
        origin[is_vendor] = np.asarray(vendors, dtype=object)[rng.integers(0, len(vendors), int(is_vendor.sum()))]
    wm = ~is_vendor
    if wm.any():
        if not warehouses:
            raise ConfigError("network has no warehouses")
        pref = np.array([spec.preferred_warehouse.get(centers[i], warehouses[0]) for i in ctr[wm]], dtype=object)
        other = np.asarray(warehouses, dtype=object)[rng.integers(0, len(warehouses), int(wm.sum()))]
        origin[wm] = np.where(rng.random(int(wm.sum())) < spec.preferred_share, pref, other)

    # --- pre-ship -----------------------------------------------------------
    rng = _rng(seed, "preship")
    ready = placed.copy()
    leg_v = np.zeros(N, np.int64)
    leg_w = np.zeros(N, np.int64)
    for v in vendors:
        m = origin == v
        if not m.any():
            continue
        vs = spec.vendors[v]
        t0 = _next_po(placed[m], vs.po_minutes)
        dur = np.rint(_lognormal_minutes(rng, vs.log_mean, vs.log_sd, int(m.sum()))).astype(np.int64)
        ready[m] = t0 + dur
        leg_v[m] = ready[m] - placed[m]
    for w in warehouses:
        m = origin == w
        if not m.any():
            continue
        ws = spec.warehouses[w]
        k = int(m.sum())
        work = np.rint(_lognormal_minutes(rng, ws.proc_log_mean, ws.proc_log_sd, k)).astype(np.int64)
        multi = np.rint(_lognormal_minutes(rng, ws.multi_log_mean, ws.multi_log_sd, k)).astype(np.int64)
        work = work + np.where(items[m] > 1, multi, 0)
        ready[m] = shift_add(placed[m], work, ws.shift_start, ws.shift_end)
        leg_w[m] = ready[m] - placed[m]

    # --- dispatch + linehaul ------------------------------------------------
    rng = _rng(seed, "transit")
    shipped = ready.copy()
    arrival = np.zeros(N, np.int64)
    lane_of = np.empty(N, dtype=object)
    twk = np.asarray(spec.transit_weekday_multipliers, float)
    for lane in spec.lanes:
        ci = centers.index(lane.destination_center)
        m = (origin == lane.origin_node) & (ctr == ci)
        if not m.any():
            continue
        lane_of[m] = lane
        clock = next_cutoff_vec(ready[m], spec.cutoffs.get(lane.origin_node, ()))
        shipped[m] = clock
        for a, b in lane.hops:
            if a != lane.origin_node:
                clock = next_cutoff_vec(clock, spec.cutoffs.get(a, ()))
            lm, ls = spec.hop_transit[(a, b)]
            base = _lognormal_minutes(rng, lm, ls, clock.size)
            day = clock // MINUTES_PER_DAY
            dur = base * twk[day % 7] + cal_delay[ci, np.minimum(day, n_cal - 1)] * 60.0
            clock = clock + np.rint(dur).astype(np.int64)
        arrival[m] = clock
    if any(l is None for l in lane_of):
        raise ConfigError("some orders have no lane")

    # --- last-mile queue ----------------------------------------------------
    rng = _rng(seed, "lastmile")
    delivered = np.zeros(N, np.int64)
    assigned = np.zeros(N, np.int64)
    flow_rows = []
    for ci, c in enumerate(centers):
        cs = spec.centers[c]
        idx = np.flatnonzero(ctr == ci)
        if idx.size == 0:
            continue
        arr = arrival[idx]
        aday, atod = np.divmod(arr, MINUTES_PER_DAY)
        elig = aday + ((atod > cs.sort_cutoff) if cs.sort_cutoff is not None else 0)
        order = np.lexsort((idx, arr, elig))
        idx, arr, aday, elig = idx[order], arr[order], aday[order], elig[order]
        first = int(min(start_day, elig.min()))
        last_needed = int(elig.max())
        def capacity(day):
            cap = cs.capacity * cs.weekday_multipliers[day % 7] * cal_cap[ci, day]
            for ev in events:
                if ev.active(day):
                    cap *= ev.capacity_multiplier
            return max(1, int(round(cap)))

        caps, day_assign = [], np.zeros(idx.size, np.int64)
        p, d = 0, first
        while p < idx.size:
            if d >= n_cal:
                raise InputError(f"center {c} could not drain its backlog")
            cap = capacity(d)
            caps.append(cap)
            q = int(np.searchsorted(elig, d, side="right"))
            take = min(cap, q - p)
            day_assign[p:p + take] = d
            p += take
            d += 1
        last_day = max(d - 1, last_needed, start_day + days - 1)
        while len(caps) < last_day - first + 1:
            caps.append(capacity(first + len(caps)))
        if cs.ofd_minute is None:
            start_at = arr + (day_assign - aday) * MINUTES_PER_DAY
        else:
            start_at = np.maximum(arr, day_assign * MINUTES_PER_DAY + cs.ofd_minute)
        svc = _lognormal_minutes(rng, cs.service_log_mean, cs.service_log_sd, idx.size) + extra[idx] * 60.0
        delivered[idx] = start_at + np.rint(svc).astype(np.int64)
        assigned[idx] = day_assign

        span = np.arange(first, last_day + 1)
        n_arr = np.bincount(aday - first, minlength=span.size)[:span.size]
        n_del = np.bincount(day_assign - first, minlength=span.size)[:span.size]
        sday = shipped[idx] // MINUTES_PER_DAY
        n_ship = np.zeros(span.size, np.int64)
        ok = (sday >= first) & (sday <= last_day)
        np.add.at(n_ship, sday[ok] - first, 1)
        backlog = np.cumsum(n_arr) - np.cumsum(n_del)
        cap_arr = np.asarray(caps[:span.size])
        staff = np.rint(cap_arr / 40.0).astype(np.int64)
        own = np.rint(np.full(span.size, cs.capacity * 0.7 / 40.0) * np.minimum(1.0, cap_arr / cs.capacity)).astype(np.int64)
        own = np.minimum(own, staff)
        flow_rows.append(pd.DataFrame({
            "center": c, "day": span, "date": [date_of_day(int(x)).isoformat() for x in span],
            "shipped": n_ship, "arrivals": n_arr, "deliveries": n_del, "backlog": backlog,
            "capacity": cap_arr, "own_staff": own, "contract_staff": staff - own,
        }))

    leg_dispatch = shipped - ready
    leg_linehaul = arrival - shipped
    leg_lastmile = delivered - arrival
    lanes = lane_of
    deliveries = pd.DataFrame({
        "order_id": [f"o{i:07d}" for i in range(N)],
        "placed_at": placed,
        "source_kind": np.where(is_vendor, "vendor", "warehouse"),
        "source_id": origin,
        "origin": origin,
        "destination": [centers[i] for i in ctr],
        "hops": ["|".join(l.hop_sequence) for l in lanes],
        "carrier": [l.carrier.value for l in lanes],
        "pincode": pin,
        "city_tier": tier,
        "address_type": address,
        "item_count": items,
        "ready_at": ready,
        "shipped_at": shipped,
        "lastmile_arrival": arrival,
        "delivered_at": delivered,
        "leg_vendor": leg_v / 60.0,
        "leg_warehouse": leg_w / 60.0,
        "leg_dispatch_wait": leg_dispatch / 60.0,
        "leg_linehaul": leg_linehaul / 60.0,
        "leg_lastmile": leg_lastmile / 60.0,
    })
    flows = pd.concat(flow_rows, ignore_index=True) if flow_rows else pd.DataFrame()
    plans = _plans(flows, events, seed, spec)
    return SimulationResult(deliveries, flows, plans, spec, events, days, seed)


PLAN_COLUMNS = ["center", "day", "date", "planned_ship_volume", "planned_arrivals", "planned_capacity"]


def _plans(flows: pd.DataFrame, events: Sequence[HrdEvent], seed: int, spec: NetworkSpec) -> pd.DataFrame:
    """Noisy copies of realized volumes and capacities around each HRD span."""
    rng = _rng(seed, "plans")
    out = []
    for k, ev in enumerate(events):
        s = day_index(ev.start)
        lo, hi = s - ev.plan_lead_days, s + ev.duration_days + ev.plan_tail_days
        f = flows[(flows["day"] >= lo) & (flows["day"] < hi)].sort_values(["center", "day"])
        if f.empty:
            continue
        noise = lambda: np.maximum(0.05, 1.0 + ev.plan_noise * rng.standard_normal(len(f)))
        out.append(pd.DataFrame({
            "center": f["center"].to_numpy(), "day": f["day"].to_numpy(), "date": f["date"].to_numpy(),
            "planned_ship_volume": np.maximum(1.0, np.round(f["shipped"].to_numpy() * noise())),
            "planned_arrivals": np.maximum(1.0, np.round(f["arrivals"].to_numpy() * noise())),
            "planned_capacity": np.maximum(1.0, np.round(f["capacity"].to_numpy() * noise())),
        }))
    if not out:
        return pd.DataFrame(columns=PLAN_COLUMNS)
    return pd.concat(out, ignore_index=True).drop_duplicates(["center", "day"], keep="last").reset_index(drop=True)


def ground_truth_quantile(spec: NetworkSpec, order: Order, q: float, n_draws: int = 10_000, seed: int = 0) -> float:
    """Monte-Carlo q-quantile of total delivery hours for one order, with no queueing delay."""
    if n_draws < 1000:
        raise InputError("n_draws must be >= 1000")
    if not 0 < q < 1:
        raise InputError("q must be in (0, 1)")
    rng = _rng(seed, "ground_truth")
    n = n_draws
    placed = np.full(n, order.placed_at.minutes_since_epoch, np.int64)
    src = order.source.node_id
    if order.source.is_vendor:
        vs = spec.vendors[src]
        ready = _next_po(placed, vs.po_minutes) + np.rint(_lognormal_minutes(rng, vs.log_mean, vs.log_sd, n)).astype(np.int64)
    else:
        ws = spec.warehouses[src]
        work = np.rint(_lognormal_minutes(rng, ws.proc_log_mean, ws.proc_log_sd, n)).astype(np.int64)
        if order.is_multi_item:
            work = work + np.rint(_lognormal_minutes(rng, ws.multi_log_mean, ws.multi_log_sd, n)).astype(np.int64)
        ready = shift_add(placed, work, ws.shift_start, ws.shift_end)
    lane = order.lane
    centers = list(spec.centers)
    ci = centers.index(lane.destination_center)
    n_cal = int(placed[0] // MINUTES_PER_DAY) + MAX_DRAIN_DAYS
    _, cal_delay, _ = _calendar_arrays(spec, centers, n_cal)
    twk = np.asarray(spec.transit_weekday_multipliers, float)
    clock = next_cutoff_vec(ready, spec.cutoffs.get(lane.origin_node, ()))
    for a, b in lane.hops:
        if a != lane.origin_node:
            clock = next_cutoff_vec(clock, spec.cutoffs.get(a, ()))
        lm, ls = spec.hop_transit[(a, b)]
        day = clock // MINUTES_PER_DAY
        dur = _lognormal_minutes(rng, lm, ls, n) * twk[day % 7] + cal_delay[ci, day] * 60.0
        clock = clock + np.rint(dur).astype(np.int64)
    cs = spec.centers[lane.destination_center]
    aday, atod = np.divmod(clock, MINUTES_PER_DAY)
    elig = aday + ((atod > cs.sort_cutoff) if cs.sort_cutoff is not None else 0)
    if cs.ofd_minute is None:
        start_at = clock + (elig - aday) * MINUTES_PER_DAY
    else:
        start_at = np.maximum(clock, elig * MINUTES_PER_DAY + cs.ofd_minute)
    extra = cs.pincodes.get(order.geo.pincode, ("", 0.0))[1]
    delivered = start_at + np.rint(_lognormal_minutes(rng, cs.service_log_mean, cs.service_log_sd, n)
                                   + extra * 60.0).astype(np.int64)
    total = (delivered - placed) / 60.0
    return float(np.quantile(total, q, method="inverted_cdf"))


# --- a ready-made scenario ---------------------------------------------------

def _hhmm(h: int, m: int = 0) -> int:
    return h * 60 + m


def default_network(orders_per_day: int = 1000, days: int = 70, start_day: int = 0) -> NetworkSpec:
    """Two warehouses, four vendors, three hubs and six last-mile centers."""
    rng = np.random.default_rng(20240101)
    centers_meta = [
        ("C1", 0.24, "tier1", "W1", ("HN",)),
        ("C2", 0.20, "tier1", "W1", ("HN",)),
        ("C3", 0.18, "tier2", "W1", ("HN", "HC")),
        ("C4", 0.16, "tier2", "W2", ("HS", "HC")),
        ("C5", 0.13, "tier3", "W2", ("HS",)),
        ("C6", 0.09, "tier3", "W2", ("HS",)),
    ]
    hub_of = {"W1": "HN", "W2": "HS", "V1": "HN", "V2": "HN", "V3": "HS", "V4": "HS"}
    # hub path between the origin's hub and the center's hub chain
    chain = {"HN": {"HN": ("HN",), "HS": ("HN", "HC", "HS"), "HC": ("HN", "HC")},
             "HS": {"HS": ("HS",), "HN": ("HS", "HC", "HN"), "HC": ("HS", "HC")}}
    centers = {}
    lanes = []
    hop_transit = {}
    for k, (c, share, tier, _, hubs) in enumerate(centers_meta, start=1):
        pins = {}
        for pref in range(2):
            for j in range(10):
                pin = f"{k}{k}{pref}{k}{j:02d}"
                t = tier if j < 8 else ("tier2" if tier == "tier1" else "tier3")
                pins[pin] = (t, float(np.round(rng.gamma(2.0, 0.6 + 0.4 * (t == "tier3")), 2)))
        expected = orders_per_day * share
        centers[c] = CenterSpec(
            capacity=round(expected * 1.3),
            weekday_multipliers=(1.0, 1.0, 1.0, 1.0, 1.0, 0.9, 1.0),
            sort_cutoff=_hhmm(10),
            ofd_minute=_hhmm(10, 30),
            service_log_mean=lognormal_params(4.0, 0.5)[0],
            service_log_sd=lognormal_params(4.0, 0.5)[1],
            share=share,
            pincodes=pins,
        )
        last_hub = hubs[-1]
        hop_transit[(last_hub, c)] = lognormal_params(4.0 + 2.0 * (tier == "tier3"), 0.3 + 0.2 * (tier == "tier3"))
        for origin in ("W1", "W2", "V1", "V2", "V3", "V4"):
            oh = hub_of[origin]
            path = chain[oh][last_hub] if last_hub in chain[oh] else (oh, "HC", last_hub)
            carrier = Carrier.THIRD_PARTY if c == "C6" else Carrier.OWN
            lanes.append(Lane(origin, c, path, carrier))
    for origin, hub in hub_of.items():
        hop_transit[(origin, hub)] = lognormal_params(3.0 if origin.startswith("W") else 5.0, 0.3)
    for a, b in (("HN", "HC"), ("HC", "HN"), ("HS", "HC"), ("HC", "HS")):
        hop_transit[(a, b)] = lognormal_params(12.0, 0.25)

    cal = []
    first, last = start_day, start_day + days + 30
    for d in range(first, last):
        date = date_of_day(d)
        for c in centers:
            if d % 7 == 6:
                cal.append(CalendarEntry(c, date, "weekend", 0.0))
    # fixed national holidays and region-specific flexible ones
    for off in (17, 45, 73, 101):
        date = date_of_day(first + off)
        if date.weekday() == 6:
            continue
        for c in centers:
            cal.append(CalendarEntry(c, date, "fixed", 0.6))
    for i, c in enumerate(centers):
        for off in (9 + 2 * i, 30 + 3 * i, 52 + i, 66 + 2 * i, 88 + i):
            date = date_of_day(first + off)
            if date.weekday() == 6 or any(e.region == c and e.date == date for e in cal):
                continue
            cal.append(CalendarEntry(c, date, "flexible", float(np.round(0.3 + 0.1 * ((i + off) % 4), 2))))

    hour_w = np.array([1, 1, 1, 1, 1, 2, 3, 5, 7, 9, 10, 10, 10, 9, 9, 9, 9, 9, 10, 11, 12, 11, 8, 4], float)
    return NetworkSpec(
        warehouses={
            "W1": WarehouseSpec(_hhmm(7), _hhmm(23), *lognormal_params(3.0, 0.5), *lognormal_params(4.0, 0.6)),
            "W2": WarehouseSpec(_hhmm(8), _hhmm(22), *lognormal_params(3.5, 0.5), *lognormal_params(5.0, 0.6)),
        },
        vendors={
            "V1": VendorSpec(*lognormal_params(14.0, 0.5), (_hhmm(10), _hhmm(16)), "brand", False, 48.0),
            "V2": VendorSpec(*lognormal_params(26.0, 0.6), (_hhmm(11),), "distributor", True, 72.0),
            "V3": VendorSpec(*lognormal_params(18.0, 0.5), (_hhmm(10), _hhmm(18)), "brand", True, 48.0),
            "V4": VendorSpec(*lognormal_params(34.0, 0.7), (_hhmm(12),), "distributor", False, 96.0),
        },
        hubs=("HN", "HC", "HS"),
        centers=centers,
        lanes=tuple(lanes),
        hop_transit=hop_transit,
        cutoffs={
            "W1": (_hhmm(11), _hhmm(17), _hhmm(23)),
            "W2": (_hhmm(12), _hhmm(21)),
            "V1": (_hhmm(18),), "V2": (_hhmm(17),), "V3": (_hhmm(19),), "V4": (_hhmm(16),),
            "HN": (_hhmm(4), _hhmm(16)),
            "HC": (_hhmm(2), _hhmm(14)),
            "HS": (_hhmm(5), _hhmm(18)),
        },
        transit_weekday_multipliers=(1.0, 1.0, 1.0, 1.0, 1.05, 1.1, 1.3),
        holiday_effects={
            "weekend": HolidayEffect(0.45, 2.0),
            "fixed": HolidayEffect(0.35, 6.0),
            "flexible": HolidayEffect(0.7, 2.0),
        },
        calendar=HolidayCalendar(cal),
        volume_weekday_multipliers=(1.1, 1.0, 1.0, 1.0, 1.0, 1.05, 0.85),
        vendor_share=0.15,
        preferred_warehouse={c: w for c, _, _, w, _ in centers_meta},
        preferred_share=0.85,
        multi_item_prob=0.25,
        home_share=0.7,
        placement_hour_weights=tuple(hour_w),
    )


def load_scenario(path: str | Path) -> dict:
    """Read a scenario file (TOML or JSON).

    Keys: ``network`` (a full spec dict) or ``preset = "default"``, ``events``,
    ``days``, ``orders_per_day``, ``seed``.
    """
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        import tomli
        try:
            raw = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"bad scenario TOML: {exc}") from exc
    else:
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad scenario JSON: {exc}") from exc
    known = {"network", "preset", "events", "days", "orders_per_day", "seed", "start_day"}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown scenario keys: {sorted(extra)}")
    days = int(raw.get("days", 70))
    opd = int(raw.get("orders_per_day", 1000))
    start_day = int(raw.get("start_day", 0))
    if "network" in raw:
        spec = NetworkSpec.from_dict(raw["network"])
    elif raw.get("preset", "default") == "default":
        spec = default_network(opd, days, start_day)
    else:
        raise ConfigError(f"unknown preset {raw['preset']!r}")
    events = tuple(HrdEvent.from_dict(e) for e in raw.get("events", []))
    return {"spec": spec, "events": events, "days": days, "orders_per_day": opd,
            "seed": int(raw.get("seed", 0)), "start_day": start_day}


def operator_rule_config(spec: NetworkSpec, margin: float = 1.15) -> dict:
    """A static rule configuration an operator might hand-write from nominal means.

    Times are the nominal means times ``margin``; returned as a plain dict
    suitable for :meth:`RuleConfig.from_dict`.
    """
    def mean(lm, ls):
        return float(np.exp(lm + ls * ls / 2)) if np.isfinite(lm) else 0.0

    wh = {f"{w}/processing": round(mean(s.proc_log_mean, s.proc_log_sd) * margin, 2) for w, s in spec.warehouses.items()}
    wh.update({f"{w}/consolidation": round(mean(s.multi_log_mean, s.multi_log_sd) * margin * spec.multi_item_prob, 2)
               for w, s in spec.warehouses.items()})
    lm_means = [mean(c.service_log_mean, c.service_log_sd) for c in spec.centers.values()]
    def hhmm(m):
        return f"{m // 60:02d}:{m % 60:02d}"
    return {
        "vendor_times": {v: round(mean(s.log_mean, s.log_sd) * margin, 2) for v, s in spec.vendors.items()},
        "warehouse_times": wh,
        "hop_times": {f"{a}>{b}": round(mean(*p) * margin, 2) for (a, b), p in spec.hop_transit.items()},
        "lastmile_time": round(max(lm_means) * margin + 12.0, 2),
        "cutoffs": {k: [hhmm(m) for m in v] for k, v in spec.cutoffs.items()},
        "weekend_pad": 12.0,
        "holiday_pad": 24.0,
    }


__all__ = ["NetworkSpec", "WarehouseSpec", "VendorSpec", "CenterSpec", "HolidayEffect", "HrdEvent",
           "SimulationResult", "generate", "ground_truth_quantile", "default_network", "load_scenario",
           "operator_rule_config", "lognormal_params", "next_cutoff_vec", "shift_add", "frame_records",
           "frame_order", "EPOCH", "DayKind", "CityTier"]
