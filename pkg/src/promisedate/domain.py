"""Core data model: timestamps, network topology, orders, calendars, datasets."""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

MINUTES_PER_DAY = 1440
EPOCH = dt.date(2024, 1, 1)  # a Monday
MISSING_LEVEL = -1
DEFAULT_HALF_LIFE_DAYS = 14.0


class InputError(ValueError):
    """Raised when an operation receives input violating its preconditions."""


class ConfigError(ValueError):
    """Raised for missing or malformed configuration; the message names the key."""


def day_index(date: dt.date) -> int:
    return (date - EPOCH).days


def date_of_day(day: int) -> dt.date:
    return EPOCH + dt.timedelta(days=int(day))


@dataclass(frozen=True, order=True, slots=True)
class Timestamp:
    """Minute-resolution instant counted from ``EPOCH`` midnight."""

    minutes_since_epoch: int

    def __post_init__(self):
        if self.minutes_since_epoch < 0:
            raise InputError(f"timestamp must be non-negative, got {self.minutes_since_epoch}")

    @classmethod
    def at(cls, date: dt.date, hour: int = 0, minute: int = 0) -> "Timestamp":
        return cls(day_index(date) * MINUTES_PER_DAY + hour * 60 + minute)

    @property
    def day(self) -> int:
        return self.minutes_since_epoch // MINUTES_PER_DAY

    @property
    def date(self) -> dt.date:
        return date_of_day(self.day)

    @property
    def minute_of_day(self) -> int:
        return self.minutes_since_epoch % MINUTES_PER_DAY

    @property
    def hours(self) -> float:
        return self.minutes_since_epoch / 60.0

    def plus_hours(self, hours: float) -> "Timestamp":
        return Timestamp(self.minutes_since_epoch + int(round(hours * 60)))

    def hours_until(self, other: "Timestamp") -> float:
        return (other.minutes_since_epoch - self.minutes_since_epoch) / 60.0

    def __str__(self) -> str:
        d = self.date
        m = self.minute_of_day
        return f"{d.isoformat()}T{m // 60:02d}:{m % 60:02d}"


class Carrier(str, Enum):
    OWN = "own_logistics"
    THIRD_PARTY = "third_party"


class CityTier(str, Enum):
    TIER1 = "tier1"
    TIER2 = "tier2"
    TIER3 = "tier3"


class AddressType(str, Enum):
    HOME = "home"
    OFFICE = "office"


class DayKind(str, Enum):
    FIXED = "fixed"
    FLEXIBLE = "flexible"
    WEEKEND = "weekend"


@dataclass(frozen=True, slots=True)
class Lane:
    origin_node: str
    destination_center: str
    hop_sequence: tuple[str, ...]
    carrier: Carrier = Carrier.OWN

    def __post_init__(self):
        object.__setattr__(self, "hop_sequence", tuple(self.hop_sequence))
        object.__setattr__(self, "carrier", Carrier(self.carrier))
        if not self.hop_sequence:
            raise InputError("lane hop_sequence must be non-empty")
        nodes = self.nodes
        if len(set(nodes)) != len(nodes):
            raise InputError(f"lane has repeated nodes: {nodes}")

    @property
    def nodes(self) -> tuple[str, ...]:
        return (self.origin_node, *self.hop_sequence, self.destination_center)

    @property
    def hops(self) -> list[tuple[str, str]]:
        n = self.nodes
        return list(zip(n[:-1], n[1:]))

    @property
    def lane_id(self) -> str:
        return f"{self.origin_node}>{self.destination_center}"


@dataclass(frozen=True, slots=True)
class GeoKey:
    pincode: str
    city_tier: CityTier
    address_type: AddressType = AddressType.HOME

    def __post_init__(self):
        object.__setattr__(self, "city_tier", CityTier(self.city_tier))
        object.__setattr__(self, "address_type", AddressType(self.address_type))
        if len(self.pincode) != 6 or not self.pincode.isdigit():
            raise InputError(f"pincode must be 6 digits, got {self.pincode!r}")

    @property
    def pincode_prefix(self) -> str:
        return self.pincode[:4]


@dataclass(frozen=True, slots=True)
class Source:
    """Where the item is picked: a warehouse or an external vendor."""

    kind: str  # "warehouse" | "vendor"
    node_id: str

    def __post_init__(self):
        if self.kind not in ("warehouse", "vendor"):
            raise InputError(f"unknown source kind {self.kind!r}")

    @property
    def is_vendor(self) -> bool:
        return self.kind == "vendor"


@dataclass(frozen=True, slots=True)
class Order:
    order_id: str
    placed_at: Timestamp
    source: Source
    lane: Lane
    geo: GeoKey
    item_count: int = 1

    def __post_init__(self):
        if self.item_count < 1:
            raise InputError("item_count must be >= 1")

    @property
    def is_multi_item(self) -> bool:
        return self.item_count > 1

    def to_dict(self) -> dict:
        return {
            "order_id": self.order_id,
            "placed_at": self.placed_at.minutes_since_epoch,
            "source": {"kind": self.source.kind, "id": self.source.node_id},
            "lane": {
                "origin": self.lane.origin_node,
                "destination": self.lane.destination_center,
                "hops": list(self.lane.hop_sequence),
                "carrier": self.lane.carrier.value,
            },
            "geo": {
                "pincode": self.geo.pincode,
                "city_tier": self.geo.city_tier.value,
                "address_type": self.geo.address_type.value,
            },
            "item_count": self.item_count,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Order":
        try:
            lane = d["lane"]
            geo = d["geo"]
            return cls(
                order_id=str(d["order_id"]),
                placed_at=Timestamp(int(d["placed_at"])),
                source=Source(d["source"]["kind"], str(d["source"]["id"])),
                lane=Lane(lane["origin"], lane["destination"], tuple(lane["hops"]),
                          Carrier(lane.get("carrier", Carrier.OWN.value))),
                geo=GeoKey(str(geo["pincode"]), CityTier(geo["city_tier"]),
                           AddressType(geo.get("address_type", "home"))),
                item_count=int(d.get("item_count", 1)),
            )
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed order: missing {exc}") from exc


LEG_NAMES = ("vendor", "warehouse", "dispatch_wait", "linehaul", "lastmile")


@dataclass(frozen=True, slots=True)
class DeliveryRecord:
    order: Order
    shipped_at: Timestamp
    delivered_at: Timestamp
    leg_durations: Mapping[str, float]

    def __post_init__(self):
        if not (self.order.placed_at <= self.shipped_at <= self.delivered_at):
            raise InputError(f"record {self.order.order_id}: timestamps out of order")
        if any(v < 0 for v in self.leg_durations.values()):
            raise InputError(f"record {self.order.order_id}: negative leg duration")
        total = self.order.placed_at.hours_until(self.delivered_at)
        if abs(sum(self.leg_durations.values()) - total) > 1 / 60 + 1e-9:
            raise InputError(f"record {self.order.order_id}: legs do not sum to total")

    @property
    def total_hours(self) -> float:
        return self.order.placed_at.hours_until(self.delivered_at)

    @property
    def shipping_hours(self) -> float:
        return self.shipped_at.hours_until(self.delivered_at)

    @property
    def preship_hours(self) -> float:
        return self.order.placed_at.hours_until(self.shipped_at)

    @property
    def lastmile_arrival(self) -> Timestamp:
        return self.delivered_at.plus_hours(-self.leg_durations.get("lastmile", 0.0))


@dataclass(frozen=True, slots=True)
class CalendarEntry:
    region: str
    date: dt.date
    kind: DayKind
    absenteeism_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", DayKind(self.kind))
        if not 0.0 <= self.absenteeism_rate <= 1.0:
            raise InputError(f"absenteeism_rate out of [0,1]: {self.absenteeism_rate}")


class HolidayCalendar:
    """Per-region holidays and weekends, at most one entry per (region, date)."""

    def __init__(self, entries: Iterable[CalendarEntry] = ()):
        self._entries: dict[tuple[str, dt.date], CalendarEntry] = {}
        for e in entries:
            key = (e.region, e.date)
            if key in self._entries:
                raise InputError(f"duplicate calendar entry for {key}")
            self._entries[key] = e

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(sorted(self._entries.values(), key=lambda e: (e.region, e.date)))

    def get(self, region: str, date: dt.date) -> CalendarEntry | None:
        return self._entries.get((region, date))

    def kind_of(self, region: str, date: dt.date) -> DayKind | None:
        e = self._entries.get((region, date))
        return e.kind if e else None

    def regions(self) -> list[str]:
        return sorted({r for r, _ in self._entries})

    def entries_for(self, region: str, kind: DayKind | None = None) -> list[CalendarEntry]:
        out = [e for (r, _), e in self._entries.items() if r == region and (kind is None or e.kind == kind)]
        return sorted(out, key=lambda e: e.date)

    def to_frame(self) -> pd.DataFrame:
        rows = [(e.region, e.date.isoformat(), e.kind.value, e.absenteeism_rate) for e in self]
        return pd.DataFrame(rows, columns=["region", "date", "kind", "absenteeism_rate"])

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> "HolidayCalendar":
        return cls(
            CalendarEntry(str(r.region), dt.date.fromisoformat(str(r.date)), DayKind(r.kind), float(r.absenteeism_rate))
            for r in df.itertuples(index=False)
        )

    @classmethod
    def read_csv(cls, path: str | Path) -> "HolidayCalendar":
        return cls.from_frame(pd.read_csv(path, dtype={"region": str}))


# ---------------------------------------------------------------------------
# Datasets


@dataclass(frozen=True)
class CategoryDictionary:
    """Dense ids for string levels, assigned by first appearance."""

    levels: tuple[str, ...] = ()
    index: Mapping[str, int] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        object.__setattr__(self, "index", {v: i for i, v in enumerate(self.levels)})

    def __len__(self) -> int:
        return len(self.levels)

    def encode(self, values: Iterable) -> np.ndarray:
        idx = self.index
        return np.array([idx.get(_as_level(v), MISSING_LEVEL) for v in values], dtype=np.int64)

    def decode(self, ids: Iterable[int]) -> list[str | None]:
        return [self.levels[i] if i != MISSING_LEVEL else None for i in ids]


def _as_level(v) -> str | None:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return None
    return str(v)


def encode_categorical(raw: Sequence, dictionary: CategoryDictionary | None = None
                       ) -> tuple[np.ndarray, CategoryDictionary]:
    """Encode strings to level ids.

    Without a dictionary, levels get ids in order of first appearance. With
    one (predict time), unseen levels and missing values map to ``MISSING_LEVEL``.
    """
    if dictionary is None:
        seen: dict[str, int] = {}
        for v in raw:
            s = _as_level(v)
            if s is not None and s not in seen:
                seen[s] = len(seen)
        dictionary = CategoryDictionary(tuple(seen))
    return dictionary.encode(raw), dictionary


@dataclass(frozen=True)
class Dataset:
    """Columnar feature matrix with targets, weights and order dates.

    Numeric columns hold floats with NaN as missing; categorical columns hold
    dense level ids with ``MISSING_LEVEL`` for missing.
    """

    numeric: Mapping[str, np.ndarray]
    categorical: Mapping[str, np.ndarray]
    dictionaries: Mapping[str, CategoryDictionary]
    target: np.ndarray
    sample_weight: np.ndarray
    order_date: np.ndarray  # datetime64[D]

    def __post_init__(self):
        n = len(self.target)
        numeric = {k: np.asarray(v, dtype=np.float64) for k, v in self.numeric.items()}
        categorical = {k: np.asarray(v, dtype=np.int64) for k, v in self.categorical.items()}
        object.__setattr__(self, "numeric", numeric)
        object.__setattr__(self, "categorical", categorical)
        object.__setattr__(self, "target", np.asarray(self.target, dtype=np.float64))
        object.__setattr__(self, "sample_weight", np.asarray(self.sample_weight, dtype=np.float64))
        object.__setattr__(self, "order_date", np.asarray(self.order_date, dtype="datetime64[D]"))
        for name, col in [*numeric.items(), *categorical.items(),
                          ("sample_weight", self.sample_weight), ("order_date", self.order_date)]:
            if len(col) != n:
                raise InputError(f"column {name!r} has length {len(col)}, expected {n}")
        for name, col in categorical.items():
            card = len(self.dictionaries.get(name, ()))
            if len(col) and (col.min() < MISSING_LEVEL or col.max() >= card):
                raise InputError(f"categorical column {name!r} has ids outside [0, {card})")
        w = self.sample_weight
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InputError("sample weights must be finite and >= 0")
        overlap = set(numeric) & set(categorical)
        if overlap:
            raise InputError(f"column names used twice: {sorted(overlap)}")

    @classmethod
    def from_frame(cls, df: pd.DataFrame, numeric: Sequence[str], categorical: Sequence[str],
                   target: str | None = None, weight: str | None = None, order_date: str | None = None,
                   dictionaries: Mapping[str, CategoryDictionary] | None = None) -> "Dataset":
        n = len(df)
        dicts = dict(dictionaries or {})
        cats = {}
        for c in categorical:
            cats[c], dicts[c] = encode_categorical(df[c].tolist(), dicts.get(c))
        return cls(
            numeric={c: df[c].to_numpy(dtype=np.float64, na_value=np.nan) for c in numeric},
            categorical=cats,
            dictionaries={c: dicts[c] for c in categorical},
            target=df[target].to_numpy(dtype=np.float64) if target else np.full(n, np.nan),
            sample_weight=df[weight].to_numpy(dtype=np.float64) if weight else np.ones(n),
            order_date=(pd.to_datetime(df[order_date]).to_numpy().astype("datetime64[D]") if order_date
                        else np.full(n, np.datetime64(EPOCH, "D"))),
        )

    def __len__(self) -> int:
        return len(self.target)

    @property
    def numeric_names(self) -> list[str]:
        return list(self.numeric)

    @property
    def categorical_names(self) -> list[str]:
        return list(self.categorical)

    def numeric_matrix(self) -> np.ndarray:
        if not self.numeric:
            return np.empty((len(self), 0))
        return np.column_stack(list(self.numeric.values()))

    def categorical_matrix(self) -> np.ndarray:
        if not self.categorical:
            return np.empty((len(self), 0), dtype=np.int64)
        return np.column_stack(list(self.categorical.values()))

    def with_weights(self, weights: np.ndarray) -> "Dataset":
        return replace(self, sample_weight=np.asarray(weights, dtype=np.float64))

    def take(self, rows: np.ndarray) -> "Dataset":
        return Dataset(
            numeric={k: v[rows] for k, v in self.numeric.items()},
            categorical={k: v[rows] for k, v in self.categorical.items()},
            dictionaries=self.dictionaries,
            target=self.target[rows],
            sample_weight=self.sample_weight[rows],
            order_date=self.order_date[rows],
        )

    def drop(self, columns: Iterable[str]) -> "Dataset":
        cols = set(columns)
        return replace(
            self,
            numeric={k: v for k, v in self.numeric.items() if k not in cols},
            categorical={k: v for k, v in self.categorical.items() if k not in cols},
            dictionaries={k: v for k, v in self.dictionaries.items() if k not in cols},
        )

    def to_frame(self) -> pd.DataFrame:
        cols: dict[str, object] = dict(self.numeric)
        for name, ids in self.categorical.items():
            cols[name] = self.dictionaries[name].decode(ids)
        cols["target"] = self.target
        cols["sample_weight"] = self.sample_weight
        cols["order_date"] = self.order_date.astype(str)
        return pd.DataFrame(cols)

    def save(self, csv_path: str | Path) -> None:
        """Write the CSV plus a ``.schema.json`` sidecar describing column roles."""
        csv_path = Path(csv_path)
        self.to_frame().to_csv(csv_path, index=False)
        sidecar = {
            "numeric": self.numeric_names,
            "categorical": self.categorical_names,
            "target": "target",
            "weight": "sample_weight",
            "order_date": "order_date",
            "dictionaries": {k: list(d.levels) for k, d in self.dictionaries.items()},
        }
        csv_path.with_suffix(".schema.json").write_text(json.dumps(sidecar, indent=2))

    @classmethod
    def load(cls, csv_path: str | Path) -> "Dataset":
        csv_path = Path(csv_path)
        meta = json.loads(csv_path.with_suffix(".schema.json").read_text())
        dtypes = {c: str for c in meta["categorical"]}
        df = pd.read_csv(csv_path, dtype=dtypes, keep_default_na=True)
        dicts = {k: CategoryDictionary(tuple(v)) for k, v in meta["dictionaries"].items()}
        return cls.from_frame(df, meta["numeric"], meta["categorical"], meta["target"],
                              meta["weight"], meta["order_date"], dicts)


def decay_weights(rows: Dataset, reference_date: dt.date,
                  half_life_days: float = DEFAULT_HALF_LIFE_DAYS) -> Dataset:
    """Exponentially down-weight older rows: weight = 0.5 ** (age_days / half_life)."""
    if not half_life_days > 0:
        raise InputError("half_life_days must be positive")
    age = (np.datetime64(reference_date, "D") - rows.order_date).astype(np.int64)
    if len(age) and age.min() < 0:
        raise InputError("row dated after reference_date")
    return rows.with_weights(np.power(0.5, age / half_life_days))
