"""Feature engineering, leg models and promise composition.

A :class:`FeatureState` is a snapshot of everything known at the start of an
``as_of`` day: windowed statistics of deliveries completed before it, center
flow logs, capacity plans, calendar handling times and network metadata.
:func:`featurize` turns a state plus a batch of orders into model features.
Leg models (vendor, warehouse, shipping) predict hours; :func:`quote`
composes them into a promise timestamp.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from . import gbdt, stsf
from .baseline import RuleConfig, next_cutoff, rule_promise
from .calendar import LastMileLog, handling_table
from .domain import (
    MINUTES_PER_DAY,
    ConfigError,
    Dataset,
    DayKind,
    HolidayCalendar,
    InputError,
    Order,
    Timestamp,
    date_of_day,
    day_index,
    decay_weights,
)
from .losses import LossSpec
from .simnet import SimulationResult, frame_order, next_cutoff_vec

FAMILIES = ("historical-stats", "geo", "load", "manpower", "lastmile-perf", "holiday-seasonal", "plan",
            "pendency", "vendor")
AGGREGATIONS = ("mean", "sd", "median", "count")
GEO_LEVELS = ("pincode", "prefix", "tier", "global")
SOURCES = ("shipping", "linehaul", "lastmile", "warehouse", "vendor")
BACKOFF_MIN_OBS = 30
LEGS = ("vendor", "warehouse", "shipping")

# names accepted per family for the non-statistical families
NAMED = {
    "load": ("center_ship_volume", "center_arrivals"),
    "manpower": ("own_staff", "contract_staff"),
    "lastmile-perf": ("delivery_ratio", "clearance_ratio"),
    "holiday-seasonal": ("start_weekday", "start_hour", "start_kind", "landing_weekday", "landing_kind",
                         "landing_handling", "next_day_handling", "adjacent_weekend", "days_to_landing"),
    "pendency": ("balance", "projected_backlog", "projected_arrivals", "planned_outflow", "backlog_ratio"),
    "plan": ("planned_arrivals", "planned_capacity", "plan_ratio"),
    "vendor": ("vendor_type", "hours_to_po", "hours_to_pickup", "coloader", "max_hours"),
}
CATEGORICAL_FEATURES = {"start_weekday", "landing_weekday", "start_kind", "landing_kind", "vendor_type"}
BASE_COLUMNS = {
    "shipping": (("origin", "destination", "carrier", "city_tier", "address_type", "source_kind"), ("item_count",)),
    "warehouse": (("source_id", "destination"), ("item_count",)),
    "vendor": (("source_id", "destination"), ("item_count",)),
}
ORDER_COLUMNS = ("order_id", "placed_at", "source_kind", "source_id", "origin", "destination", "hops", "carrier",
                 "pincode", "city_tier", "address_type", "item_count")


# --- recipe ---------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureDef:
    name: str
    family: str
    window: int = 14
    aggregation: str = "mean"
    source: str | None = None
    backoff: tuple[str, ...] = GEO_LEVELS

    def __post_init__(self):
        object.__setattr__(self, "backoff", tuple(self.backoff))
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown feature family {self.family!r}")
        if self.window < 1:
            raise ConfigError(f"feature {self.name}: window must be >= 1 day")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"feature {self.name}: unknown aggregation {self.aggregation!r}")
        if self.family in ("historical-stats", "geo"):
            if self.source not in SOURCES:
                raise ConfigError(f"feature {self.name}: source must be one of {SOURCES}")
        elif self.name not in NAMED[self.family]:
            raise ConfigError(f"feature {self.name!r} is not defined for family {self.family!r}")
        if self.family == "geo":
            if not self.backoff or self.backoff[-1] != "global" or any(b not in GEO_LEVELS for b in self.backoff):
                raise ConfigError(f"feature {self.name}: backoff chain must use {GEO_LEVELS} and end in global")

    def to_dict(self) -> dict:
        d = {"name": self.name, "family": self.family, "window": self.window, "aggregation": self.aggregation}
        if self.source is not None:
            d["source"] = self.source
        if self.family == "geo":
            d["backoff"] = list(self.backoff)
        return d


@dataclass(frozen=True)
class FeatureRecipe:
    features: tuple[FeatureDef, ...]

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate feature names in recipe")

    @property
    def families(self) -> set[str]:
        return {f.family for f in self.features}

    def without(self, families: Sequence[str]) -> "FeatureRecipe":
        for fam in families:
            if fam not in FAMILIES:
                raise ConfigError(f"unknown feature family {fam!r}")
        return FeatureRecipe(tuple(f for f in self.features if f.family not in families))

    def of_family(self, family: str) -> list[FeatureDef]:
        return [f for f in self.features if f.family == family]

    def to_dict(self) -> dict:
        return {"features": [f.to_dict() for f in self.features]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureRecipe":
        try:
            return cls(tuple(FeatureDef(**f) for f in d["features"]))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed recipe: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "FeatureRecipe":
        path = Path(path)
        if path.suffix.lower() == ".toml":
            import tomli
            return cls.from_dict(tomli.loads(path.read_text()))
        return cls.from_dict(json.loads(path.read_text()))


def default_recipe(leg: str = "shipping") -> FeatureRecipe:
    F = FeatureDef
    if leg == "shipping":
        feats = [
            F("ship_mean_14", "historical-stats", 14, "mean", "shipping"),
            F("ship_sd_14", "historical-stats", 14, "sd", "shipping"),
            F("ship_median_7", "historical-stats", 7, "median", "shipping"),
            F("linehaul_mean_7", "historical-stats", 7, "mean", "linehaul"),
            F("linehaul_sd_7", "historical-stats", 7, "sd", "linehaul"),
            F("lastmile_median_7", "historical-stats", 7, "median", "lastmile"),
            F("geo_lastmile_mean", "geo", 14, "mean", "lastmile"),
            F("geo_shipping_median", "geo", 14, "median", "shipping"),
            F("center_ship_volume", "load", 3), F("center_arrivals", "load", 3),
            F("own_staff", "manpower", 1), F("contract_staff", "manpower", 1),
            F("delivery_ratio", "lastmile-perf", 7), F("clearance_ratio", "lastmile-perf", 3),
            F("start_weekday", "holiday-seasonal"), F("start_hour", "holiday-seasonal"),
            F("landing_weekday", "holiday-seasonal"), F("landing_kind", "holiday-seasonal"),
            F("landing_handling", "holiday-seasonal"), F("next_day_handling", "holiday-seasonal"),
            F("adjacent_weekend", "holiday-seasonal"), F("days_to_landing", "holiday-seasonal"),
            F("balance", "pendency", 2), F("projected_backlog", "pendency", 7),
            F("projected_arrivals", "pendency", 7), F("planned_outflow", "pendency", 7),
            F("backlog_ratio", "pendency", 7),
            F("planned_arrivals", "plan"), F("planned_capacity", "plan"), F("plan_ratio", "plan", 7),
        ]
    elif leg == "warehouse":
        feats = [
            F("wh_mean_14", "historical-stats", 14, "mean", "warehouse"),
            F("wh_sd_14", "historical-stats", 14, "sd", "warehouse"),
            F("wh_median_7", "historical-stats", 7, "median", "warehouse"),
            F("start_weekday", "holiday-seasonal"), F("start_hour", "holiday-seasonal"),
            F("start_kind", "holiday-seasonal"),
        ]
    elif leg == "vendor":
        feats = [
            F("vendor_mean_14", "historical-stats", 14, "mean", "vendor"),
            F("vendor_sd_14", "historical-stats", 14, "sd", "vendor"),
            F("vendor_median_14", "historical-stats", 14, "median", "vendor"),
            F("vendor_type", "vendor"), F("hours_to_po", "vendor"), F("hours_to_pickup", "vendor"),
            F("coloader", "vendor"), F("max_hours", "vendor"),
            F("start_weekday", "holiday-seasonal"), F("start_hour", "holiday-seasonal"),
        ]
    else:
        raise ConfigError(f"unknown leg {leg!r}")
    return FeatureRecipe(tuple(feats))


# --- history ----------------------------------------------------------------------

def prepare_deliveries(df: pd.DataFrame) -> pd.DataFrame:
    """Add derived columns used by feature building."""
    out = df.copy()
    out["pincode"] = out["pincode"].astype(str)
    out["lane_id"] = out["origin"].astype(str) + ">" + out["destination"].astype(str)
    out["prefix"] = out["pincode"].str[:4]
    out["multi"] = (out["item_count"] > 1).astype(int)
    out["shipping_h"] = (out["delivered_at"] - out["shipped_at"]) / 60.0
    out["delivered_day"] = out["delivered_at"] // MINUTES_PER_DAY
    out["placed_day"] = out["placed_at"] // MINUTES_PER_DAY
    out["shipped_day"] = out["shipped_at"] // MINUTES_PER_DAY
    out["arrival_day"] = out["lastmile_arrival"] // MINUTES_PER_DAY
    return out.sort_values("delivered_at", kind="stable").reset_index(drop=True)


def _source_column(source: str) -> str:
    return {"shipping": "shipping_h", "linehaul": "leg_linehaul", "lastmile": "leg_lastmile",
            "warehouse": "leg_warehouse", "vendor": "leg_vendor"}[source]


def _source_key(source: str) -> str:
    return {"shipping": "lane_id", "linehaul": "lane_id", "lastmile": "destination",
            "warehouse": "wh_key", "vendor": "source_id"}[source]


def _source_rows(df: pd.DataFrame, source: str) -> pd.DataFrame:
    if source == "warehouse":
        return df[df["source_kind"] == "warehouse"]
    if source == "vendor":
        return df[df["source_kind"] == "vendor"]
    return df


def _agg(series_or_group, how: str):
    if how == "mean":
        return series_or_group.mean()
    if how == "sd":
        return series_or_group.std(ddof=0)
    if how == "median":
        return series_or_group.median()
    return series_or_group.count()


class History:
    """Everything the pipeline may read, with as-of filtering."""

    def __init__(self, deliveries: pd.DataFrame, flows: pd.DataFrame, plans: pd.DataFrame,
                 calendar: HolidayCalendar, meta: dict):
        self.deliveries = prepare_deliveries(deliveries) if "lane_id" not in deliveries else deliveries.copy()
        self.deliveries["wh_key"] = self.deliveries["source_id"].astype(str) + "|" + self.deliveries["multi"].astype(str)
        self.flows = flows.sort_values(["center", "day"]).reset_index(drop=True) if len(flows) else flows
        self.plans = plans
        self.calendar = calendar
        self.meta = meta
        self.lastmile_log = LastMileLog.from_frame(self.deliveries)
        self._delivered = self.deliveries["delivered_at"].to_numpy()

    @classmethod
    def from_simulation(cls, sim: SimulationResult) -> "History":
        return cls(sim.deliveries, sim.flows, sim.plans, sim.spec.calendar, network_meta(sim.spec))

    def before(self, as_of_day: int) -> pd.DataFrame:
        k = int(np.searchsorted(self._delivered, as_of_day * MINUTES_PER_DAY, side="left"))
        return self.deliveries.iloc[:k]


def network_meta(spec) -> dict:
    """Static network facts the features may use: cutoffs, vendor attributes, centers."""
    return {
        "cutoffs": {k: list(v) for k, v in spec.cutoffs.items()},
        "vendors": {k: {"vendor_type": v.vendor_type, "po_minutes": list(v.po_minutes), "coloader": bool(v.coloader),
                        "max_hours": float(v.max_hours)} for k, v in spec.vendors.items()},
        "centers": sorted(spec.centers),
    }


# --- state ------------------------------------------------------------------------

@dataclass
class FeatureState:
    as_of: int
    recipe: FeatureRecipe
    stats: dict = field(default_factory=dict)  # name -> {key: value}
    geo: dict = field(default_factory=dict)  # name -> {level: {key: [count, value]}}
    center: dict = field(default_factory=dict)  # center -> {name: value}
    recent: dict = field(default_factory=dict)  # center -> projection inputs
    plans: dict = field(default_factory=dict)  # center -> {day: [ship, arrivals, capacity]}
    handling: dict = field(default_factory=dict)  # "region|day" -> hours
    kinds: dict = field(default_factory=dict)  # "region|day" -> kind
    lane_linehaul: dict = field(default_factory=dict)  # lane -> median linehaul hours
    lane_linehaul_sd: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"as_of": self.as_of, "recipe": self.recipe.to_dict(), "stats": self.stats, "geo": self.geo,
                "center": self.center, "recent": self.recent,
                "plans": {c: {str(d): v for d, v in p.items()} for c, p in self.plans.items()},
                "handling": self.handling, "kinds": self.kinds, "lane_linehaul": self.lane_linehaul,
                "lane_linehaul_sd": self.lane_linehaul_sd, "meta": self.meta}

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureState":
        recent = {c: {**r, "shipped": {int(k): v for k, v in r["shipped"].items()},
                      "capacity": {int(k): v for k, v in r["capacity"].items()}} for c, r in d["recent"].items()}
        return cls(int(d["as_of"]), FeatureRecipe.from_dict(d["recipe"]), d["stats"], d["geo"], d["center"], recent,
                   {c: {int(k): v for k, v in p.items()} for c, p in d["plans"].items()}, d["handling"], d["kinds"],
                   d["lane_linehaul"], d["lane_linehaul_sd"], d["meta"])

    def dumps(self) -> str:
        return json.dumps(_clean(self.to_dict()), sort_keys=True, allow_nan=False)


def _clean(x):
    """JSON-safe copy: NaN becomes None, numpy scalars become Python numbers."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return None if not math.isfinite(float(x)) else float(x)
    return x


def _f(v) -> float:
    return float("nan") if v is None else float(v)


def _grouped(df: pd.DataFrame, key: str, col: str, how: str) -> dict:
    if df.empty:
        return {}
    g = _agg(df.groupby(key, sort=True)[col], how)
    return {str(k): float(v) for k, v in g.items()}


def _geo_key(level: str) -> str:
    return {"pincode": "pincode", "prefix": "prefix", "tier": "city_tier"}[level]


def snapshot(history: History, recipe: FeatureRecipe, as_of: int | dt.date, strict: bool = False) -> FeatureState:
    """State known at the start of day ``as_of``.

    With ``strict`` the history must not contain records delivered on or
    after ``as_of``; otherwise such records are simply ignored.
    """
    A = day_index(as_of) if isinstance(as_of, dt.date) else int(as_of)
    if strict and len(history.deliveries) and history._delivered.max() >= A * MINUTES_PER_DAY:
        raise InputError("history contains records dated on or after as_of")
    hist = history.before(A)
    st = FeatureState(A, recipe, meta=history.meta)

    for f in recipe.of_family("historical-stats"):
        rows = _source_rows(hist[hist["delivered_day"] >= A - f.window], f.source)
        st.stats[f.name] = _grouped(rows, _source_key(f.source), _source_column(f.source), f.aggregation)
    for f in recipe.of_family("geo"):
        rows = _source_rows(hist[hist["delivered_day"] >= A - f.window], f.source)
        col = _source_column(f.source)
        levels = {}
        for level in f.backoff:
            if level == "global":
                v = float(_agg(rows[col], f.aggregation)) if len(rows) else float("nan")
                levels["global"] = {"*": [int(len(rows)), v]}
            else:
                g = rows.groupby(_geo_key(level), sort=True)[col]
                cnt, val = g.count(), _agg(g, f.aggregation)
                levels[level] = {str(k): [int(cnt[k]), float(val[k])] for k in cnt.index}
        st.geo[f.name] = levels

    recent_lh = hist[hist["delivered_day"] >= A - 14]
    st.lane_linehaul = _grouped(recent_lh, "lane_id", "leg_linehaul", "median")
    st.lane_linehaul["*"] = float(recent_lh["leg_linehaul"].median()) if len(recent_lh) else 24.0
    lh7 = hist[hist["delivered_day"] >= A - 7]
    st.lane_linehaul_sd = _grouped(lh7, "lane_id", "leg_linehaul", "sd")

    flows = history.flows
    fl = flows[flows["day"] < A] if len(flows) else flows
    centers = history.meta.get("centers") or sorted(history.deliveries["destination"].unique())
    for c in centers:
        fc = fl[fl["center"] == c] if len(fl) else fl
        vals = {}
        for f in recipe.features:
            if f.family in ("load", "manpower", "lastmile-perf") or (f.family == "pendency" and f.name == "balance") \
                    or (f.family == "plan" and f.name == "plan_ratio"):
                w = fc[fc["day"] >= A - f.window] if len(fc) else fc
                vals[f.name] = _center_value(f.name, w)
        # flow statistics used by breach control
        w7 = fc[fc["day"] >= A - 7] if len(fc) else fc
        if len(w7):
            net = (w7["arrivals"] - w7["deliveries"]).to_numpy(float)
            out_mean = float(w7["deliveries"].mean())
            vals["flow_in_mean"] = float(w7["arrivals"].mean())
            vals["flow_in_sd"] = float(w7["arrivals"].std(ddof=0))
            vals["flow_out_mean"] = out_mean
            vals["flow_out_sd"] = float(w7["deliveries"].std(ddof=0))
            vals["flow_net_mean"] = float(net.mean())
            vals["flow_net_sd"] = float(net.std())
        st.center[c] = vals
        hc = recent_lh[recent_lh["destination"] == c]
        transit = (hc["arrival_day"] - hc["shipped_day"])
        modal = int(transit.mode().min()) if len(transit) else 1
        w14 = fc[fc["day"] >= A - 14] if len(fc) else fc
        st.recent[c] = {
            "backlog": float(fc["backlog"].iloc[-1]) if len(fc) and fc["day"].iloc[-1] == A - 1 else 0.0,
            "shipped": {int(d): float(v) for d, v in zip(w14.get("day", []), w14.get("shipped", []))},
            "capacity": {int(d): float(v) for d, v in zip(w14.get("day", []), w14.get("capacity", []))},
            "modal_transit": modal,
        }

    if history.plans is not None and len(history.plans):
        for r in history.plans.itertuples(index=False):
            st.plans.setdefault(r.center, {})[int(r.day)] = [float(r.planned_ship_volume),
                                                            float(r.planned_arrivals), float(r.planned_capacity)]

    cal = history.calendar
    if any(f.name in ("landing_handling", "next_day_handling") for f in recipe.features):
        table = handling_table(cal, history.lastmile_log, date_of_day(A), horizon_days=21, lookback_days=7)
        st.handling = {f"{r}|{day_index(d)}": h.extra_hours for (r, d), h in table.items()}
    for e in cal:
        d = day_index(e.date)
        if A - 7 <= d <= A + 30:
            st.kinds[f"{e.region}|{d}"] = e.kind.value
    return st


def _center_value(name: str, w: pd.DataFrame) -> float:
    if w is None or len(w) == 0:
        return float("nan")
    if name == "center_ship_volume":
        return float(w["shipped"].mean())
    if name in ("center_arrivals", "plan_ratio"):
        return float(w["arrivals"].mean())
    if name == "own_staff":
        return float(w["own_staff"].mean())
    if name == "contract_staff":
        return float(w["contract_staff"].mean())
    if name == "delivery_ratio":
        cap = w["capacity"].sum()
        return float(w["deliveries"].sum() / cap) if cap else float("nan")
    if name == "clearance_ratio":
        arr = w["arrivals"].sum()
        return float(w["deliveries"].sum() / arr) if arr else float("nan")
    if name == "balance":
        return float((w["arrivals"] - w["deliveries"]).sum())
    raise ConfigError(f"no center value {name!r}")


# --- pendency projection ---------------------------------------------------------------

def project_pendency(plan: Mapping[int, Sequence[float]] | None, recent: Mapping, landing_day: int,
                     as_of: int) -> dict:
    """Project arrivals, backlog and outflow at a center up to ``landing_day``.

    ``plan`` maps day -> (ship volume, arrivals, capacity). ``recent`` holds
    the backlog at the end of ``as_of - 1``, trailing daily shipped volumes and
    capacities, and the modal transit days. Days covered by the plan use it;
    other days use shipped volume ``modal_transit`` days earlier (or the
    trailing 7-day mean) and last week's same-weekday capacity.
    """
    plan = plan or {}
    shipped = recent.get("shipped", {})
    capacity = recent.get("capacity", {})
    modal = int(recent.get("modal_transit", 1))
    ship_days = sorted(d for d in shipped if d < as_of)[-7:]
    ship_mean = float(np.mean([shipped[d] for d in ship_days])) if ship_days else float("nan")
    cap_days = sorted(d for d in capacity if d < as_of)[-7:]
    cap_mean = float(np.mean([capacity[d] for d in cap_days])) if cap_days else float("nan")

    def arrivals(d):
        if d in plan:
            return float(plan[d][1])
        src = d - modal
        if src < as_of and src in shipped:
            return float(shipped[src])
        return ship_mean

    def outflow(d):
        if d in plan:
            return float(plan[d][2])
        for back in (7, 14):
            if d - back in capacity and d - back < as_of:
                return float(capacity[d - back])
        return cap_mean

    backlog = float(recent.get("backlog", 0.0))
    for d in range(as_of, landing_day):
        a, o = arrivals(d), outflow(d)
        if math.isnan(a) or math.isnan(o):
            continue
        backlog = max(0.0, backlog + a - o)
    return {"projected_arrivals": arrivals(landing_day), "projected_backlog": backlog,
            "planned_outflow": outflow(landing_day)}


# --- featurization ---------------------------------------------------------------------

def _lookup(table: Mapping, keys: Sequence[str]) -> np.ndarray:
    return np.array([_f(table.get(k)) for k in keys], dtype=float)


def featurize(state: FeatureState, orders: pd.DataFrame, leg: str) -> pd.DataFrame:
    """Feature frame for ``orders`` (with a ``start_at`` minute column) under ``state``."""
    if leg not in LEGS:
        raise ConfigError(f"unknown leg {leg!r}")
    o = orders.reset_index(drop=True)
    n = len(o)
    cats, nums = BASE_COLUMNS[leg]
    out = pd.DataFrame({c: o[c].astype(str).to_numpy() for c in cats})
    for c in nums:
        out[c] = o[c].to_numpy(dtype=float)
    start = o["start_at"].to_numpy(dtype=np.int64)
    start_day = start // MINUTES_PER_DAY
    lane = (o["origin"].astype(str) + ">" + o["destination"].astype(str)).to_numpy()
    dest = o["destination"].astype(str).to_numpy()
    pins = o["pincode"].astype(str).to_numpy()
    lh_glob = state.lane_linehaul.get("*", 24.0)
    lh = np.array([state.lane_linehaul.get(l, lh_glob) for l in lane], dtype=float)
    landing_day = (start + np.rint(lh * 60).astype(np.int64)) // MINUTES_PER_DAY if leg == "shipping" else start_day
    keys = {
        "lane_id": lane, "destination": dest, "source_id": o["source_id"].astype(str).to_numpy(),
        "wh_key": (o["source_id"].astype(str) + "|" + (o["item_count"] > 1).astype(int).astype(str)).to_numpy(),
    }
    recipe = state.recipe
    for f in recipe.features:
        if f.family == "historical-stats":
            out[f.name] = _lookup(state.stats.get(f.name, {}), keys[_source_key(f.source)])
        elif f.family == "geo":
            levels = state.geo.get(f.name, {})
            vals = np.full(n, np.nan)
            lvl = np.full(n, float(len(f.backoff) - 1))
            done = np.zeros(n, bool)
            geo_keys = {"pincode": pins, "prefix": np.array([p[:4] for p in pins], dtype=object),
                        "tier": o["city_tier"].astype(str).to_numpy()}
            for li, level in enumerate(f.backoff):
                table = levels.get(level, {})
                if level == "global":
                    cnt_v = table.get("*", [0, None])
                    vals[~done] = _f(cnt_v[1])
                    break
                for i in np.flatnonzero(~done):
                    cv = table.get(geo_keys[level][i])
                    if cv is not None and cv[0] >= BACKOFF_MIN_OBS:
                        vals[i], lvl[i], done[i] = _f(cv[1]), li, True
            out[f.name] = vals
            out[f.name + "_level"] = lvl
        elif f.family in ("load", "manpower", "lastmile-perf") or f.name == "balance":
            out[f.name] = np.array([_f(state.center.get(c, {}).get(f.name)) for c in dest])
        elif f.family == "holiday-seasonal":
            out[f.name] = _seasonal(f.name, state, start, start_day, landing_day, dest)
        elif f.family in ("pendency", "plan"):
            out[f.name] = _pendency_plan(f.name, state, dest, landing_day)
        elif f.family == "vendor":
            out[f.name] = _vendor_feature(f.name, state, o, start)
    return out


def _seasonal(name, state, start, start_day, landing_day, dest) -> np.ndarray:
    if name == "start_weekday":
        return (start_day % 7).astype(str)
    if name == "landing_weekday":
        return (landing_day % 7).astype(str)
    if name == "start_hour":
        return (start % MINUTES_PER_DAY) / 60.0
    if name == "days_to_landing":
        return (landing_day - start_day).astype(float)
    if name in ("start_kind", "landing_kind"):
        days = start_day if name == "start_kind" else landing_day
        return np.array([state.kinds.get(f"{c}|{d}", "none") for c, d in zip(dest, days)], dtype=object)
    if name in ("landing_handling", "next_day_handling"):
        off = 0 if name == "landing_handling" else 1
        return np.array([state.handling.get(f"{c}|{d + off}", 0.0) for c, d in zip(dest, landing_day)], dtype=float)
    if name == "adjacent_weekend":
        out = np.zeros(len(dest))
        for i, (c, d) in enumerate(zip(dest, landing_day)):
            k = state.kinds.get(f"{c}|{d}")
            if k in ("fixed", "flexible"):
                out[i] = float(any(state.kinds.get(f"{c}|{d + s}") == "weekend" for s in (-1, 1)))
        return out
    raise ConfigError(f"unknown seasonal feature {name!r}")


def _pendency_plan(name, state, dest, landing_day) -> np.ndarray:
    cache = {}
    out = np.full(len(dest), np.nan)
    for i, (c, d) in enumerate(zip(dest, landing_day)):
        d = int(d)
        plan = state.plans.get(c, {})
        if name in ("planned_arrivals", "planned_capacity"):
            row = plan.get(d)
            if row is not None:
                out[i] = row[1] if name == "planned_arrivals" else row[2]
            continue
        if name == "plan_ratio":
            row = plan.get(d)
            base = state.center.get(c, {}).get("plan_ratio")
            if row is not None and base:
                out[i] = row[1] / base
            continue
        key = (c, d)
        if key not in cache:
            cache[key] = project_pendency(plan, state.recent.get(c, {}), d, state.as_of)
        p = cache[key]
        if name == "backlog_ratio":
            out[i] = p["projected_backlog"] / p["planned_outflow"] if p["planned_outflow"] else np.nan
        else:
            out[i] = p[name]
    return out


def _vendor_feature(name, state, o, start) -> np.ndarray:
    vendors = state.meta.get("vendors", {})
    cutoffs = state.meta.get("cutoffs", {})
    ids = o["source_id"].astype(str).to_numpy()
    if name == "vendor_type":
        return np.array([vendors.get(v, {}).get("vendor_type", "none") for v in ids], dtype=object)
    out = np.full(len(ids), np.nan)
    for v in np.unique(ids):
        m = ids == v
        meta = vendors.get(v)
        if meta is None:
            continue
        if name == "hours_to_po":
            out[m] = (next_cutoff_vec(start[m], meta["po_minutes"]) - start[m]) / 60.0
        elif name == "hours_to_pickup":
            out[m] = (next_cutoff_vec(start[m], cutoffs.get(v, [])) - start[m]) / 60.0
        elif name == "coloader":
            out[m] = float(meta["coloader"])
        elif name == "max_hours":
            out[m] = meta["max_hours"]
    return out


def feature_columns(frame: pd.DataFrame) -> tuple[list[str], list[str]]:
    cats = [c for c in frame.columns if frame[c].dtype == object]
    nums = [c for c in frame.columns if c not in cats]
    return nums, cats


def build_features(history: History, recipe: FeatureRecipe, orders: pd.DataFrame, leg: str,
                   as_of: int | dt.date) -> Dataset:
    """Dataset for ``orders`` from a history that must end before ``as_of``."""
    state = snapshot(history, recipe, as_of, strict=True)
    frame = featurize(state, orders, leg)
    nums, cats = feature_columns(frame)
    frame["_date"] = [date_of_day(int(d)) for d in orders["placed_at"].to_numpy() // MINUTES_PER_DAY]
    return Dataset.from_frame(frame, nums, cats, order_date="_date")


# --- training sets ----------------------------------------------------------------------

def leg_target(df: pd.DataFrame, leg: str) -> np.ndarray:
    if leg == "shipping":
        return ((df["delivered_at"] - df["shipped_at"]) / 60.0).to_numpy()
    return df[f"leg_{leg}"].to_numpy(dtype=float)


def leg_rows(df: pd.DataFrame, leg: str) -> pd.DataFrame:
    if leg == "warehouse":
        return df[df["source_kind"] == "warehouse"]
    if leg == "vendor":
        return df[df["source_kind"] == "vendor"]
    return df


def leg_start(df: pd.DataFrame, leg: str) -> np.ndarray:
    return (df["shipped_at"] if leg == "shipping" else df["placed_at"]).to_numpy(dtype=np.int64)


def rolling_frames(history: History, recipe: FeatureRecipe, leg: str, days: Sequence[int],
                   label_before: int | None = None, rows_filter=None) -> tuple[pd.DataFrame, np.ndarray, np.ndarray]:
    """Features, targets and order days for orders placed on ``days``, each day featurized as of itself."""
    d = history.deliveries
    frames, ys, ds = [], [], []
    for day in days:
        rows = leg_rows(d[d["placed_day"] == day], leg)
        if rows_filter is not None:
            rows = rows_filter(rows)
        if label_before is not None:
            rows = rows[rows["delivered_at"] < label_before]
        if rows.empty:
            continue
        rows = rows.sort_values("order_id", kind="stable")
        rows = rows.assign(start_at=leg_start(rows, leg))
        state = snapshot(history, recipe, day)
        frames.append(featurize(state, rows, leg))
        ys.append(leg_target(rows, leg))
        ds.append(np.full(len(rows), day))
    if not frames:
        raise InputError(f"no training rows for leg {leg}")
    return pd.concat(frames, ignore_index=True), np.concatenate(ys), np.concatenate(ds)


def make_dataset(frame: pd.DataFrame, target: np.ndarray, days: np.ndarray, dictionaries=None) -> Dataset:
    nums, cats = feature_columns(frame)
    f = frame.copy()
    f["_y"] = target
    f["_date"] = (np.datetime64(date_of_day(0), "D") + days.astype("timedelta64[D]"))
    return Dataset.from_frame(f, nums, cats, target="_y", order_date="_date", dictionaries=dictionaries)


# --- leg models ---------------------------------------------------------------------------

LEG_FORMAT_VERSION = "1.0"


class LegModel:
    """Predicts hours for one leg. ``orders`` carries a ``start_at`` minute column."""

    leg: str
    tag: str

    def predict_hours(self, orders: pd.DataFrame, state: FeatureState | None) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def save(self, path: str | Path) -> None:
        _atomic_write(Path(path), json.dumps(_clean(self.to_dict()), sort_keys=True))

    @staticmethod
    def from_dict(d: Mapping) -> "LegModel":
        gbdt.check_version(str(d.get("format_version", "0")), LEG_FORMAT_VERSION)
        kind = d.get("kind")
        if kind == "gbdt":
            return GbdtLeg.from_dict(d)
        if kind == "stsf":
            return StsfLeg.from_dict(d)
        if kind == "baseline":
            return RuleLeg(d["leg"], RuleConfig.from_dict(d["rule"]), HolidayCalendar())
        if kind == "corrected":
            from .breach import CorrectedLeg
            return CorrectedLeg.from_dict(d)
        if kind == "constant":
            return ConstantLeg(d["leg"], float(d["hours"]))
        raise ConfigError(f"unknown leg model kind {kind!r}")

    @staticmethod
    def load(path: str | Path) -> "LegModel":
        try:
            return LegModel.from_dict(json.loads(Path(path).read_text()))
        except FileNotFoundError as exc:
            raise InputError(f"model file not found: {path}") from exc


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


@dataclass
class ConstantLeg(LegModel):
    leg: str
    hours: float

    @property
    def tag(self) -> str:
        return f"constant:{self.hours:g}"

    def predict_hours(self, orders, state=None) -> np.ndarray:
        return np.full(len(orders), float(self.hours))

    def to_dict(self) -> dict:
        return {"format_version": LEG_FORMAT_VERSION, "kind": "constant", "leg": self.leg, "hours": self.hours}


@dataclass
class GbdtLeg(LegModel):
    leg: str
    recipe: FeatureRecipe
    model: gbdt.BoostedModel

    @property
    def tag(self) -> str:
        return f"gbdt:{self.model.params.loss}"

    def features(self, orders, state: FeatureState) -> Dataset:
        if state is None:
            raise InputError("gbdt leg needs a feature state")
        if state.recipe != self.recipe:
            state = replace(state, recipe=self.recipe)
        frame = featurize(state, orders, self.leg)
        nums, cats = feature_columns(frame)
        return Dataset.from_frame(frame, nums, cats)

    def predict_hours(self, orders, state=None) -> np.ndarray:
        if len(orders) == 0:
            return np.empty(0)
        return np.maximum(0.0, self.model.predict(self.features(orders, state)))

    def to_dict(self) -> dict:
        return {"format_version": LEG_FORMAT_VERSION, "kind": "gbdt", "leg": self.leg,
                "recipe": self.recipe.to_dict(), "model": self.model.to_dict()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "GbdtLeg":
        return cls(d["leg"], FeatureRecipe.from_dict(d["recipe"]), gbdt.BoostedModel.from_dict(d["model"]))


@dataclass
class StsfLeg(LegModel):
    """One seasonal model per key (lane for shipping, warehouse|multi or vendor for pre-ship)."""

    leg: str
    models: dict  # key -> SeasonalModel
    level: float = 0.95
    fallback_hours: float = 48.0

    @property
    def tag(self) -> str:
        return f"stsf:{self.level}"

    def key_of(self, orders: pd.DataFrame) -> np.ndarray:
        if self.leg == "shipping":
            return (orders["origin"].astype(str) + ">" + orders["destination"].astype(str)).to_numpy()
        if self.leg == "warehouse":
            return (orders["source_id"].astype(str) + "|" + (orders["item_count"] > 1).astype(int).astype(str)).to_numpy()
        return orders["source_id"].astype(str).to_numpy()

    def predict_hours(self, orders, state=None) -> np.ndarray:
        keys = self.key_of(orders)
        t = orders["start_at"].to_numpy(dtype=float) / 60.0
        out = np.full(len(orders), self.fallback_hours)
        for k in np.unique(keys):
            m = keys == k
            model = self.models.get(k)
            if model is not None:
                out[m] = stsf.forecast(model, t[m], self.level)["upper"]
        return np.maximum(0.0, out)

    def to_dict(self) -> dict:
        return {"format_version": LEG_FORMAT_VERSION, "kind": "stsf", "leg": self.leg, "level": self.level,
                "fallback_hours": self.fallback_hours,
                "models": {k: m.to_dict() for k, m in sorted(self.models.items())}}

    @classmethod
    def from_dict(cls, d: Mapping) -> "StsfLeg":
        return cls(d["leg"], {k: stsf.SeasonalModel.from_dict(m) for k, m in d["models"].items()},
                   float(d["level"]), float(d["fallback_hours"]))


@dataclass
class RuleLeg(LegModel):
    """Static configured times for one leg."""

    leg: str
    config: RuleConfig
    calendar: HolidayCalendar

    @property
    def tag(self) -> str:
        return "baseline"

    def predict_hours(self, orders, state=None) -> np.ndarray:
        cfg = self.config
        if self.leg == "vendor":
            missing = set(orders["source_id"]) - set(cfg.vendor_times)
            if missing:
                raise ConfigError(f"missing vendor_times[{sorted(missing)[0]!r}]")
            return orders["source_id"].map(cfg.vendor_times).to_numpy(dtype=float)
        if self.leg == "warehouse":
            return np.array([cfg.warehouse_total(w) for w in orders["source_id"]], dtype=float)
        out = np.empty(len(orders))
        for i, r in enumerate(orders.itertuples(index=False)):
            order = frame_order(r)
            clock = int(r.start_at)
            for a, b in order.lane.hops:
                if a != order.lane.origin_node and a in cfg.cutoffs:
                    clock = next_cutoff(clock, cfg.cutoffs[a])
                if (a, b) not in cfg.hop_times:
                    raise ConfigError(f"missing hop_times[{a}>{b}]")
                clock += int(round(cfg.hop_times[(a, b)] * 60))
            clock += int(round(cfg.lastmile_time * 60))
            out[i] = (clock - int(r.start_at)) / 60.0
        return out

    def to_dict(self) -> dict:
        return {"format_version": LEG_FORMAT_VERSION, "kind": "baseline", "leg": self.leg, "rule": self.config.to_dict()}


# --- quoting ------------------------------------------------------------------------------

@dataclass(frozen=True)
class PromiseQuote:
    order_id: str
    leg_predictions: Mapping[str, float]
    promise_at: Timestamp
    model_tags: Mapping[str, str]

    def to_dict(self) -> dict:
        return {"order_id": self.order_id, "leg_predictions": dict(self.leg_predictions),
                "promise_at": self.promise_at.minutes_since_epoch, "promise_time": str(self.promise_at),
                "promise_date": self.promise_at.date.isoformat(), "model_tags": dict(self.model_tags)}


def _order_frame(orders: Sequence[Order]) -> pd.DataFrame:
    return pd.DataFrame([{
        "order_id": o.order_id, "placed_at": o.placed_at.minutes_since_epoch, "source_kind": o.source.kind,
        "source_id": o.source.node_id, "origin": o.lane.origin_node, "destination": o.lane.destination_center,
        "hops": "|".join(o.lane.hop_sequence), "carrier": o.lane.carrier.value, "pincode": o.geo.pincode,
        "city_tier": o.geo.city_tier.value, "address_type": o.geo.address_type.value, "item_count": o.item_count,
    } for o in orders], columns=list(ORDER_COLUMNS))


def compose(orders: pd.DataFrame, models: Mapping[str, LegModel], cutoffs: Mapping[str, Sequence[int]],
            state: FeatureState | None = None, shipped_at: np.ndarray | None = None) -> pd.DataFrame:
    """Vectorized promise composition.

    Pre-ship hours come from the vendor or warehouse model by source, the
    ready time rolls to the origin's next dispatch cutoff, then the shipping
    model adds hours from that (estimated) ship time. ``shipped_at`` replaces
    the pre-ship estimate with known ship times.
    """
    o = orders.reset_index(drop=True).copy()
    n = len(o)
    placed = o["placed_at"].to_numpy(dtype=np.int64)
    pre = np.full(n, np.nan)
    if shipped_at is None:
        for leg in ("vendor", "warehouse"):
            m = (o["source_kind"] == leg).to_numpy()
            if not m.any():
                continue
            if leg not in models:
                raise InputError(f"no trained {leg} leg model")
            sub = o[m].assign(start_at=placed[m])
            pre[m] = models[leg].predict_hours(sub, state)
        ready = placed + np.rint(pre * 60).astype(np.int64)
        ship = ready.copy()
        origins = o["origin"].astype(str).to_numpy()
        for org in np.unique(origins):
            m = origins == org
            ship[m] = next_cutoff_vec(ready[m], cutoffs.get(org, ()))
    else:
        ship = np.asarray(shipped_at, dtype=np.int64)
    if "shipping" not in models:
        raise InputError("no trained shipping leg model")
    o["start_at"] = ship
    ship_h = models["shipping"].predict_hours(o, state)
    promise = np.maximum(ship + np.rint(ship_h * 60).astype(np.int64), placed)
    return pd.DataFrame({"order_id": o["order_id"].to_numpy(), "preship_hours": pre, "ship_at": ship,
                         "shipping_hours": ship_h, "promise_at": promise})


def quote(order: Order, models: Mapping[str, LegModel], cutoffs: Mapping[str, Sequence[int]] | None = None,
          state: FeatureState | None = None) -> PromiseQuote:
    """Promise for a single order."""
    cutoffs = cutoffs if cutoffs is not None else (state.meta.get("cutoffs", {}) if state else {})
    row = compose(_order_frame([order]), models, cutoffs, state).iloc[0]
    leg = order.source.kind
    preds = {leg: float(row["preship_hours"]), "shipping": float(row["shipping_hours"])}
    tags = {leg: models[leg].tag, "shipping": models["shipping"].tag}
    return PromiseQuote(order.order_id, preds, Timestamp(int(row["promise_at"])), tags)


# --- end-to-end pipelines -----------------------------------------------------------------

@dataclass(frozen=True)
class LegConfig:
    kind: str = "gbdt"  # gbdt | stsf | baseline
    loss: LossSpec = field(default_factory=lambda: LossSpec.quantile(0.9))
    iterations: int = 150
    learning_rate: float = 0.1
    num_leaves: int = 15
    seed: int = 0
    level: float = 0.95  # stsf upper level
    recipe: FeatureRecipe | None = None

    def booster(self) -> gbdt.BoosterParams:
        return gbdt.BoosterParams(boosting_iterations=self.iterations, learning_rate=self.learning_rate,
                                  num_leaves=self.num_leaves, loss=self.loss, seed=self.seed)


def _half_life_weights(ds: Dataset, ref_day: int, half_life: float | None) -> Dataset:
    if not half_life:
        return ds
    return decay_weights(ds, date_of_day(ref_day), half_life)


def train_leg(history: History, leg: str, config: LegConfig, train_days: Sequence[int], label_before: int,
              rule: RuleConfig | None = None, half_life: float | None = 14.0, rows_filter=None) -> LegModel:
    """Fit one leg model on orders placed on ``train_days`` whose outcome is known before ``label_before``."""
    if config.kind == "baseline":
        if rule is None:
            raise ConfigError("baseline leg needs a rule configuration")
        return RuleLeg(leg, rule, history.calendar)
    if config.kind == "gbdt":
        recipe = config.recipe or default_recipe(leg)
        frame, y, days = rolling_frames(history, recipe, leg, train_days, label_before, rows_filter)
        ds = _half_life_weights(make_dataset(frame, y, days), max(train_days), half_life)
        return GbdtLeg(leg, recipe, gbdt.train(ds, config.booster()))
    if config.kind == "stsf":
        return _train_stsf_leg(history, leg, config, train_days, label_before, rows_filter)
    raise ConfigError(f"unknown model kind {config.kind!r}")


def _train_stsf_leg(history, leg, config, train_days, label_before, rows_filter) -> StsfLeg:
    d = history.deliveries
    d = leg_rows(d[(d["placed_day"] >= min(train_days)) & (d["placed_day"] <= max(train_days))
                   & (d["delivered_at"] < label_before)], leg)
    if rows_filter is not None:
        d = rows_filter(d)
    tmp = StsfLeg(leg, {}, config.level)
    keys = tmp.key_of(d)
    start = leg_start(d, leg)
    y = leg_target(d, leg)
    regions = tuple(history.meta.get("centers", ()))
    models = {}
    for k in np.unique(keys):
        m = keys == k
        t, v = stsf.resample(start[m], y[m], 60)
        region = (k.split(">")[1],) if leg == "shipping" else ()
        cfg = stsf.StsfConfig(calendar=history.calendar if region else None, regions=region,
                              levels=(0.5, 0.8, 0.9, 0.95, config.level))
        try:
            models[k] = stsf.fit(config=cfg, t_hours=t, y=v)
        except InputError:
            continue
    fallback = float(np.quantile(y, config.level)) if len(y) else 48.0
    return StsfLeg(leg, models, config.level, fallback)


def union_recipe(models: Mapping[str, LegModel], *extra: FeatureRecipe) -> FeatureRecipe:
    """All features any model (or ``extra`` recipe) reads, first definition wins."""
    feats = {}
    recipes = [getattr(m, attr) for m in models.values() for attr in ("recipe", "extra_recipe") if hasattr(m, attr)]
    for r in (*recipes, *extra):
        for f in r.features:
            feats.setdefault(f.name, f)
    return FeatureRecipe(tuple(feats.values()))


PRESHIP_MODES = ("model", "known", "rule")


@dataclass
class PromisePipeline:
    """Leg models plus the dispatch cutoffs needed to compose a promise.

    ``preship`` selects how the ship time is obtained: ``"model"`` uses the
    vendor/warehouse leg models, ``"known"`` uses actual ship times (for
    isolating the shipping leg). A pipeline with a rule configuration and no
    leg models quotes with the static rule directly.
    """

    name: str
    models: dict
    cutoffs: dict
    preship: str = "model"
    rule: RuleConfig | None = None
    calendar: HolidayCalendar | None = None

    def __post_init__(self):
        if self.preship not in PRESHIP_MODES[:2]:
            raise ConfigError(f"preship must be one of {PRESHIP_MODES[:2]}")
        if not self.models and self.rule is None:
            raise ConfigError("pipeline needs leg models or a rule configuration")

    @property
    def is_rule(self) -> bool:
        return not self.models

    @property
    def recipe(self) -> FeatureRecipe:
        return union_recipe(self.models)

    @property
    def needs_state(self) -> bool:
        return any(isinstance(m, GbdtLeg) or getattr(m, "needs_state", False) for m in self.models.values())

    def state(self, history: History, day: int, *extra: FeatureRecipe) -> FeatureState | None:
        if not (self.needs_state or extra):
            return None
        return snapshot(history, union_recipe(self.models, *extra), day)

    def breakdown(self, history: History, orders: pd.DataFrame, day: int,
                  state: FeatureState | None = None) -> pd.DataFrame:
        """Per-order pre-ship hours, ship time, shipping hours and promise."""
        if self.is_rule:
            raise ConfigError("rule pipelines have no leg breakdown")
        state = state if state is not None else self.state(history, day)
        shipped = orders["shipped_at"].to_numpy(dtype=np.int64) if self.preship == "known" else None
        return compose(orders, self.models, self.cutoffs, state, shipped)

    def promise(self, history: History, orders: pd.DataFrame, day: int) -> np.ndarray:
        """Promise minutes for ``orders`` placed on ``day``."""
        if self.is_rule:
            cal = self.calendar if self.calendar is not None else history.calendar
            return np.array([rule_promise(frame_order(r), self.rule, cal).minutes_since_epoch
                             for r in orders.itertuples(index=False)], dtype=np.int64)
        return self.breakdown(history, orders, day)["promise_at"].to_numpy()

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for leg, m in self.models.items():
            m.save(directory / f"{leg}.json")
        meta = {"format_version": LEG_FORMAT_VERSION, "name": self.name, "preship": self.preship,
                "cutoffs": self.cutoffs, "legs": sorted(self.models),
                "rule": None if self.rule is None else self.rule.to_dict()}
        _atomic_write(directory / "pipeline.json", json.dumps(_clean(meta), sort_keys=True, indent=1))

    @classmethod
    def load(cls, directory: str | Path, calendar: HolidayCalendar | None = None) -> "PromisePipeline":
        directory = Path(directory)
        try:
            meta = json.loads((directory / "pipeline.json").read_text())
        except FileNotFoundError as exc:
            raise InputError(f"no pipeline.json in {directory}") from exc
        gbdt.check_version(str(meta.get("format_version", "0")), LEG_FORMAT_VERSION)
        models = {leg: LegModel.load(directory / f"{leg}.json") for leg in meta["legs"]}
        rule = RuleConfig.from_dict(meta["rule"]) if meta.get("rule") else None
        for m in models.values():
            if isinstance(m, RuleLeg) and calendar is not None:
                m.calendar = calendar
        return cls(meta["name"], models, {k: list(v) for k, v in meta["cutoffs"].items()}, meta["preship"], rule,
                   calendar)
