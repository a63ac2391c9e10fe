"""Breach control: additive corrections learned from recent prediction outcomes.

Recent predictions are compared with what actually happened. For each
example a target extra time is built as a weighted sum of the lane's
linehaul variability and the destination's inflow/outflow statistics; the
weights are chosen on that history so that date-level breach falls under a
cutoff. A regression model then learns those targets from features and its
(non-negative) output is added to future base predictions.
"""

from __future__ import annotations

import datetime as dt
import itertools
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from . import gbdt
from .domain import MINUTES_PER_DAY, CategoryDictionary, ConfigError, Dataset, InputError, date_of_day, day_index
from .losses import LossSpec
from .pipeline import (
    LEG_FORMAT_VERSION,
    FeatureDef,
    FeatureRecipe,
    FeatureState,
    LegModel,
    _atomic_write,
    _clean,
    feature_columns,
    featurize,
)

GRID_VALUES = (0.0, 0.25, 0.5, 1.0, 2.0)
MIN_HISTORY_DATES = 7
STAT_KEYS = ("linehaul_sd", "flow_mean", "flow_sd")

# features the corrector sees besides the base prediction and flow statistics
BREACH_RECIPE = FeatureRecipe((
    FeatureDef("breach_lh_sd", "historical-stats", 7, "sd", "linehaul"),
    FeatureDef("breach_lh_mean", "historical-stats", 7, "mean", "linehaul"),
    FeatureDef("start_weekday", "holiday-seasonal"),
    FeatureDef("landing_weekday", "holiday-seasonal"),
    FeatureDef("landing_kind", "holiday-seasonal"),
    FeatureDef("landing_handling", "holiday-seasonal"),
    FeatureDef("next_day_handling", "holiday-seasonal"),
))
FLOW_FEATURES = ("flow_in_mean", "flow_in_sd", "flow_out_mean", "flow_out_sd")


@dataclass(frozen=True)
class FeedbackExample:
    features: Mapping[str, object]
    actual: float
    base_prediction: float
    delivery_date: dt.date
    start_at: int | None = None  # minute the predicted leg started; enables date-level breach

    def __post_init__(self):
        if not (self.actual >= 0 and self.base_prediction >= 0):
            raise InputError("actual and base_prediction must be >= 0")


@dataclass(frozen=True)
class BreachTargetWeights:
    w_linehaul_sd: float
    w_flow_mean: float
    w_flow_sd: float

    def __post_init__(self):
        for v in self.as_tuple():
            if not (v >= 0 and math.isfinite(v)):
                raise ConfigError("breach target weights must be finite and >= 0")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.w_linehaul_sd, self.w_flow_mean, self.w_flow_sd)

    def to_dict(self) -> dict:
        return dict(zip(("w_linehaul_sd", "w_flow_mean", "w_flow_sd"), self.as_tuple()))


def default_grid() -> list[BreachTargetWeights]:
    return [BreachTargetWeights(*w) for w in itertools.product(GRID_VALUES, repeat=3)]


def _stats(examples: Sequence[FeedbackExample]) -> np.ndarray:
    out = np.empty((len(examples), 3))
    for i, e in enumerate(examples):
        for j, k in enumerate(STAT_KEYS):
            out[i, j] = float(e.features.get(k, 0.0))
    if not np.all(np.isfinite(out)):
        raise InputError("feedback statistics must be finite")
    return out


def construct_targets(examples: Sequence[FeedbackExample], weights: BreachTargetWeights) -> np.ndarray:
    """Ideal extra hours per example: weighted statistics, floored at zero."""
    s = _stats(examples)
    w = weights.as_tuple()
    return np.array([max(0.0, math.fsum(wj * sj for wj, sj in zip(w, row))) for row in s])


class _BreachEval:
    """Precomputed arrays for scoring many weight candidates on one history."""

    def __init__(self, examples: Sequence[FeedbackExample]):
        self.stats = _stats(examples)
        self.base = np.array([e.base_prediction for e in examples])
        self.actual = np.array([e.actual for e in examples])
        starts = [e.start_at for e in examples]
        self.dated = all(s is not None for s in starts)
        self.start = np.array([s if s is not None else 0 for s in starts], dtype=np.int64)
        dates = np.array([day_index(e.delivery_date) for e in examples])
        self.dates, self.date_idx = np.unique(dates, return_inverse=True)
        self.date_n = np.bincount(self.date_idx)
        if self.dated:
            self.actual_day = (self.start + np.rint(self.actual * 60).astype(np.int64)) // MINUTES_PER_DAY

    def breached(self, extra: np.ndarray) -> np.ndarray:
        if self.dated:
            promised_day = (self.start + np.rint((self.base + extra) * 60).astype(np.int64)) // MINUTES_PER_DAY
            return self.actual_day > promised_day
        return self.actual > self.base + extra + 1e-9

    def per_date(self, extra: np.ndarray) -> np.ndarray:
        return np.bincount(self.date_idx, weights=self.breached(extra).astype(float)) / self.date_n


def tune_weights(history: Sequence[FeedbackExample], breach_cutoff: float,
                 grid: Sequence[BreachTargetWeights] | None = None) -> BreachTargetWeights:
    """Cheapest grid weights that keep breach under ``breach_cutoff`` on every delivery date.

    Cost is the mean added time. If no candidate is feasible, the one with the
    lowest worst-date breach wins. Ties go to the earlier grid entry.
    """
    grid = default_grid() if grid is None else list(grid)
    if not history:
        raise InputError("empty feedback history")
    if not grid:
        raise ConfigError("empty weight grid")
    if not 0 <= breach_cutoff < 1:
        raise ConfigError("breach cutoff must be in [0, 1)")
    ev = _BreachEval(history)
    if len(ev.dates) < MIN_HISTORY_DATES:
        raise InputError(f"feedback history spans {len(ev.dates)} delivery dates, need {MIN_HISTORY_DATES}")
    best_feasible, best_cost = None, math.inf
    fallback, fallback_worst = None, math.inf
    for w in grid:
        extra = np.maximum(0.0, ev.stats @ np.array(w.as_tuple()))
        worst = float(ev.per_date(extra).max())
        if worst <= breach_cutoff + 1e-12:
            cost = math.fsum(extra) / len(extra)
            if cost < best_cost - 1e-12:
                best_feasible, best_cost = w, cost
        elif best_feasible is None and worst < fallback_worst - 1e-12:
            fallback, fallback_worst = w, worst
    return best_feasible if best_feasible is not None else fallback


def breach_rate(history: Sequence[FeedbackExample], extra: np.ndarray | float = 0.0) -> float:
    """Mean of per-delivery-date breach rates after adding ``extra`` hours."""
    ev = _BreachEval(history)
    return float(ev.per_date(np.broadcast_to(np.asarray(extra, dtype=float), ev.base.shape)).mean())


# --- corrector ------------------------------------------------------------------------

def corrector_params(iterations: int = 60, seed: int = 0) -> gbdt.BoosterParams:
    return gbdt.BoosterParams(boosting_iterations=iterations, learning_rate=0.1, num_leaves=15,
                              loss=LossSpec.mse(), seed=seed, min_data_in_leaf=20)


def _examples_frame(examples: Sequence[FeedbackExample]) -> pd.DataFrame:
    df = pd.DataFrame([dict(e.features) for e in examples])
    df["base_prediction"] = [e.base_prediction for e in examples]
    return df


@dataclass
class BreachCorrector:
    model: gbdt.BoostedModel
    weights: BreachTargetWeights
    cutoff: float
    numeric: list[str]
    categorical: list[str]
    dictionaries: dict = field(default_factory=dict)

    def dataset(self, frame: pd.DataFrame) -> Dataset:
        missing = [c for c in self.numeric + self.categorical if c not in frame]
        if missing:
            raise InputError(f"corrector features missing: {missing}")
        return Dataset.from_frame(frame, self.numeric, self.categorical, dictionaries=self.dictionaries)

    def extra_hours(self, frame: pd.DataFrame) -> np.ndarray:
        if len(frame) == 0:
            return np.empty(0)
        return np.maximum(0.0, self.model.predict(self.dataset(frame)))

    def correct(self, base_prediction, frame: pd.DataFrame) -> np.ndarray:
        """Base prediction plus the non-negative learned correction."""
        return np.asarray(base_prediction, dtype=float) + self.extra_hours(frame)

    def to_dict(self) -> dict:
        return {"format_version": LEG_FORMAT_VERSION, "weights": self.weights.to_dict(), "cutoff": self.cutoff,
                "numeric": self.numeric, "categorical": self.categorical,
                "dictionaries": {k: list(d.levels) for k, d in self.dictionaries.items()},
                "model": self.model.to_dict()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "BreachCorrector":
        gbdt.check_version(str(d.get("format_version", "0")), LEG_FORMAT_VERSION)
        return cls(gbdt.BoostedModel.from_dict(d["model"]), BreachTargetWeights(**d["weights"]), float(d["cutoff"]),
                   list(d["numeric"]), list(d["categorical"]),
                   {k: CategoryDictionary(tuple(v)) for k, v in d["dictionaries"].items()})

    def save(self, path: str | Path) -> None:
        _atomic_write(Path(path), json.dumps(_clean(self.to_dict()), sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "BreachCorrector":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except FileNotFoundError as exc:
            raise InputError(f"corrector file not found: {path}") from exc


def train_corrector(examples: Sequence[FeedbackExample], targets: np.ndarray, weights: BreachTargetWeights,
                    cutoff: float, params: gbdt.BoosterParams | None = None) -> BreachCorrector:
    """Regress the constructed targets on the feedback features."""
    if not examples:
        raise InputError("no feedback examples")
    targets = np.asarray(targets, dtype=float)
    if targets.shape != (len(examples),):
        raise InputError("one target per example required")
    frame = _examples_frame(examples)
    numeric, categorical = feature_columns(frame)
    frame["_y"] = targets
    ds = Dataset.from_frame(frame, numeric, categorical, target="_y")
    model = gbdt.train(ds, params or corrector_params())
    return BreachCorrector(model, weights, cutoff, numeric, categorical, dict(ds.dictionaries))


def fit_breach_control(examples: Sequence[FeedbackExample], cutoff: float,
                       grid: Sequence[BreachTargetWeights] | None = None,
                       params: gbdt.BoosterParams | None = None) -> BreachCorrector:
    weights = tune_weights(examples, cutoff, grid)
    return train_corrector(examples, construct_targets(examples, weights), weights, cutoff, params)


# --- wiring into the shipping leg ----------------------------------------------------------

def feedback_features(state: FeatureState, orders: pd.DataFrame, base_hours: np.ndarray) -> pd.DataFrame:
    """Corrector inputs for ``orders`` (with ``start_at``) under ``state``.

    Flow statistics are converted to hours: the mean daily net inflow and its
    spread are divided by mean daily outflow and scaled by 24.
    """
    st = replace(state, recipe=BREACH_RECIPE)
    f = featurize(st, orders, "shipping")
    keep = [d.name for d in BREACH_RECIPE.features]
    out = f[keep].copy()
    dest = orders["destination"].astype(str).to_numpy()
    for name in FLOW_FEATURES:
        out[name] = [float(state.center.get(c, {}).get(name, np.nan)) for c in dest]
    net = np.array([state.center.get(c, {}).get("flow_net_mean", np.nan) for c in dest], dtype=float)
    net_sd = np.array([state.center.get(c, {}).get("flow_net_sd", np.nan) for c in dest], dtype=float)
    flow_out = out["flow_out_mean"].to_numpy(dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        flow_mean = np.where(flow_out > 0, 24.0 * np.maximum(0.0, net) / flow_out, 0.0)
        flow_sd = np.where(flow_out > 0, 24.0 * net_sd / flow_out, 0.0)
    out["linehaul_sd"] = np.nan_to_num(out["breach_lh_sd"].to_numpy(dtype=float))
    out["flow_mean"] = np.nan_to_num(flow_mean)
    out["flow_sd"] = np.nan_to_num(flow_sd)
    out["base_prediction"] = np.asarray(base_hours, dtype=float)
    return out


def feedback_examples(state: FeatureState, orders: pd.DataFrame, base_hours: np.ndarray,
                      actual_hours: np.ndarray) -> list[FeedbackExample]:
    """Examples from orders whose actual leg duration is already known."""
    frame = feedback_features(state, orders, base_hours).drop(columns=["base_prediction"])
    start = orders["start_at"].to_numpy(dtype=np.int64)
    actual = np.asarray(actual_hours, dtype=float)
    records = frame.to_dict("records")
    out = []
    for rec, s, a, b in zip(records, start, actual, base_hours):
        end_day = int((s + round(a * 60)) // MINUTES_PER_DAY)
        out.append(FeedbackExample(rec, float(a), float(max(0.0, b)), date_of_day(end_day), int(s)))
    return out


@dataclass
class CorrectedLeg(LegModel):
    """A base leg model with breach control applied on top."""

    base: LegModel
    corrector: BreachCorrector
    extra_recipe: FeatureRecipe = BREACH_RECIPE
    needs_state: bool = True

    @property
    def leg(self) -> str:
        return self.base.leg

    @property
    def recipe(self) -> FeatureRecipe:
        return getattr(self.base, "recipe", FeatureRecipe(()))

    @property
    def tag(self) -> str:
        w = self.corrector.weights.as_tuple()
        return f"{self.base.tag}+breach:{self.corrector.cutoff:g}:{w[0]:g}/{w[1]:g}/{w[2]:g}"

    def predict_hours(self, orders, state=None) -> np.ndarray:
        if state is None:
            raise InputError("breach correction needs a feature state")
        base = self.base.predict_hours(orders, state)
        return self.corrector.correct(base, feedback_features(state, orders, base))

    def to_dict(self) -> dict:
        return {"format_version": LEG_FORMAT_VERSION, "kind": "corrected", "leg": self.leg,
                "base": self.base.to_dict(), "corrector": self.corrector.to_dict()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "CorrectedLeg":
        return cls(LegModel.from_dict(d["base"]), BreachCorrector.from_dict(d["corrector"]))


def collect_feedback(pipeline, history, days: Sequence[int], label_before: int,
                     orders_filter=None) -> list[FeedbackExample]:
    """Feedback from a pipeline's own promises on orders placed on ``days``.

    Only orders delivered before minute ``label_before`` are used. The
    predicted leg is measured from the pipeline's estimated ship time, so the
    examples capture pre-ship estimation error as well.
    """
    d = history.deliveries
    out = []
    for day in days:
        rows = d[(d["placed_day"] == day) & (d["delivered_at"] < label_before)]
        if orders_filter is not None:
            rows = orders_filter(rows)
        if rows.empty:
            continue
        rows = rows.sort_values("order_id", kind="stable")
        state = pipeline.state(history, day, BREACH_RECIPE)
        comp = pipeline.breakdown(history, rows, day, state)
        ship = comp["ship_at"].to_numpy()
        actual = np.maximum(0.0, (rows["delivered_at"].to_numpy() - ship) / 60.0)
        base = np.maximum(0.0, comp["shipping_hours"].to_numpy())
        out.extend(feedback_examples(state, rows.assign(start_at=ship), base, actual))
    if not out:
        raise InputError("no feedback examples in the requested window")
    return out


def corrected_pipeline(pipeline, corrector: BreachCorrector, name: str | None = None):
    """Copy of ``pipeline`` whose shipping leg is breach-corrected."""
    models = dict(pipeline.models)
    models["shipping"] = CorrectedLeg(models["shipping"], corrector)
    return replace(pipeline, name=name or f"{pipeline.name}+breach", models=models)
