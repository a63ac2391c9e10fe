"""Date-level promise metrics and model comparison reports.

Accuracy counts orders delivered on the promised date or up to
``early_window`` days before it; breach counts orders delivered after it.
Both are computed per order date and then averaged without weighting.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .domain import MINUTES_PER_DAY, InputError, date_of_day, day_index


@dataclass(frozen=True)
class OutcomePair:
    order_date: dt.date
    promised_date: dt.date
    delivered_date: dt.date

    def __post_init__(self):
        if self.delivered_date < self.order_date:
            raise InputError("delivered_date must not precede order_date")


@dataclass(frozen=True)
class Metrics:
    per_date: pd.DataFrame  # order_date, n, accuracy, breach
    accuracy: float
    breach: float
    early_window: int

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "breach": self.breach, "early_window": self.early_window,
                "per_date": [{"order_date": str(r.order_date), "n": int(r.n), "accuracy": r.accuracy,
                              "breach": r.breach} for r in self.per_date.itertuples(index=False)]}


def _day_arrays(pairs: Iterable[OutcomePair]):
    rows = [(day_index(p.order_date), day_index(p.promised_date), day_index(p.delivered_date)) for p in pairs]
    if not rows:
        raise InputError("no outcome pairs")
    a = np.array(rows, dtype=np.int64)
    return a[:, 0], a[:, 1], a[:, 2]


def metrics_from_days(order_day, promised_day, delivered_day, early_window: int = 1) -> Metrics:
    """Metrics from day indices counted from the epoch."""
    if early_window < 0:
        raise InputError("early_window must be >= 0")
    o = np.asarray(order_day, dtype=np.int64)
    gap = np.asarray(promised_day, dtype=np.int64) - np.asarray(delivered_day, dtype=np.int64)
    if o.size == 0:
        raise InputError("no outcome pairs")
    acc = (gap >= 0) & (gap <= early_window)
    late = gap < 0
    days, idx = np.unique(o, return_inverse=True)
    n = np.bincount(idx)
    acc_rate = np.bincount(idx, weights=acc) / n
    breach_rate = np.bincount(idx, weights=late) / n
    per = pd.DataFrame({"order_date": [date_of_day(int(d)) for d in days], "n": n, "accuracy": acc_rate,
                        "breach": breach_rate})
    return Metrics(per, float(acc_rate.mean()), float(breach_rate.mean()), early_window)


def metrics(pairs: Sequence[OutcomePair], early_window: int = 1) -> Metrics:
    """Per-order-date accuracy and breach plus their unweighted period averages."""
    return metrics_from_days(*_day_arrays(pairs), early_window)


def metrics_from_minutes(placed_at, promise_at, delivered_at, early_window: int = 1) -> Metrics:
    days = [np.asarray(x, dtype=np.int64) // MINUTES_PER_DAY for x in (placed_at, promise_at, delivered_at)]
    return metrics_from_days(*days, early_window)


# --- reports -------------------------------------------------------------------------------

REPORT_COLUMNS = ["model", "accuracy", "breach", "orders", "order_dates", "window"]


def compare(results: Mapping[str, Metrics]) -> pd.DataFrame:
    """One report row per model; all models must cover the same order dates and window."""
    if not results:
        raise InputError("nothing to compare")
    ref = None
    rows = []
    for name, m in results.items():
        key = (tuple(m.per_date["order_date"]), tuple(m.per_date["n"]), m.early_window)
        if ref is None:
            ref = key
        elif key != ref:
            raise InputError(f"model {name!r} was evaluated on a different window")
        rows.append({"model": name, "accuracy": m.accuracy, "breach": m.breach, "orders": int(m.per_date["n"].sum()),
                     "order_dates": len(m.per_date), "window": m.early_window})
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def to_markdown(report: pd.DataFrame) -> str:
    def cell(v):
        return f"{v:.2%}" if isinstance(v, float) else str(v)
    head = "| " + " | ".join(report.columns) + " |"
    sep = "|" + "|".join("---" for _ in report.columns) + "|"
    body = ["| " + " | ".join(cell(v) for v in row) + " |" for row in report.itertuples(index=False)]
    return "\n".join([head, sep, *body]) + "\n"


def to_csv(report: pd.DataFrame) -> str:
    return report.to_csv(index=False, float_format="%.6f", lineterminator="\n")


def to_json(report: pd.DataFrame, details: Mapping[str, Metrics] | None = None) -> str:
    out = {"models": [{k: (float(v) if isinstance(v, (float, np.floating)) else
                           int(v) if isinstance(v, (np.integer,)) else v) for k, v in row.items()}
                      for row in report.to_dict("records")]}
    if details:
        out["per_date"] = {name: m.to_dict()["per_date"] for name, m in details.items()}
    return json.dumps(out, indent=2, sort_keys=True) + "\n"


def evaluate_pipelines(pipelines: Mapping, history, days: Sequence[int], early_window: int = 1,
                       orders_filter=None) -> tuple[pd.DataFrame, dict[str, Metrics]]:
    """Promise every order placed on ``days`` with each pipeline and compare.

    ``history`` is a pipeline :class:`~promisedate.pipeline.History`; each
    day's orders are promised with state as of that day.
    """
    d = history.deliveries
    results = {}
    for name, pipe in pipelines.items():
        placed, promised, delivered = [], [], []
        for day in days:
            rows = d[d["placed_day"] == day]
            if orders_filter is not None:
                rows = orders_filter(rows)
            if rows.empty:
                continue
            rows = rows.sort_values("order_id", kind="stable")
            placed.append(rows["placed_at"].to_numpy())
            promised.append(pipe.promise(history, rows, day))
            delivered.append(rows["delivered_at"].to_numpy())
        if not placed:
            raise InputError("no orders in the evaluation window")
        results[name] = metrics_from_minutes(np.concatenate(placed), np.concatenate(promised),
                                             np.concatenate(delivered), early_window)
    return compare(results), results
