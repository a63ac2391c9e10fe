"""Histogram-based gradient-boosted regression trees.

Leaf-wise growth with numeric threshold splits and categorical subset splits,
optional gradient-based one-side sampling (GOSS), per-tree row and feature
subsampling, and sample weights. The objective comes from :mod:`.losses`;
for the pinball loss each leaf value is renewed to the leaf-local weighted
quantile of residuals.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .domain import MISSING_LEVEL, CategoryDictionary, Dataset, InputError
from .losses import LossSpec, constant_minimizer, gradient_hessian, loss_value, weighted_quantile

MODEL_FORMAT_VERSION = "1.0"
SPLIT_REG = 1e-3  # lambda in the gain and leaf formulas


@dataclass(frozen=True)
class GossParams:
    top_rate: float
    other_rate: float

    def __post_init__(self):
        a, b = self.top_rate, self.other_rate
        if not (a > 0 and b > 0 and a + b <= 1 + 1e-12):
            raise InputError(f"GOSS needs a > 0, b > 0, a + b <= 1; got a={a}, b={b}")


@dataclass(frozen=True)
class BoosterParams:
    boosting_iterations: int = 1000
    learning_rate: float = 0.05
    max_depth: int = -1  # -1 = unlimited
    num_leaves: int = 15
    data_fraction: float = 0.6
    feature_fraction: float = 0.6
    min_data_in_leaf: int = 20
    max_bins: int = 255
    goss: GossParams | None = None
    loss: LossSpec = field(default_factory=LossSpec.mse)
    seed: int = 0

    def __post_init__(self):
        if self.num_leaves < 2:
            raise InputError("num_leaves must be >= 2")
        for name in ("data_fraction", "feature_fraction"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise InputError(f"{name} must be in (0, 1], got {v}")
        if self.boosting_iterations < 0 or self.min_data_in_leaf < 1 or self.max_bins < 2:
            raise InputError("invalid booster parameters")

    def to_dict(self) -> dict:
        return {
            "boosting_iterations": self.boosting_iterations,
            "learning_rate": self.learning_rate,
            "max_depth": self.max_depth,
            "num_leaves": self.num_leaves,
            "data_fraction": self.data_fraction,
            "feature_fraction": self.feature_fraction,
            "min_data_in_leaf": self.min_data_in_leaf,
            "max_bins": self.max_bins,
            "goss": None if self.goss is None else {"top_rate": self.goss.top_rate,
                                                    "other_rate": self.goss.other_rate},
            "loss": self.loss.to_dict(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoosterParams":
        d = dict(d)
        goss = d.pop("goss", None)
        loss = d.pop("loss", {"variant": "mse"})
        return cls(goss=GossParams(**goss) if goss else None, loss=LossSpec.from_dict(loss), **d)


# ---------------------------------------------------------------------------
# Binning and histograms


@dataclass(frozen=True)
class FeatureBinning:
    """Bin layout of one feature; the missing bin sits after the value bins."""

    name: str
    categorical: bool
    n_bins: int
    edges: np.ndarray | None = None  # numeric: bin b holds edges[b-1] < x <= edges[b]

    @property
    def missing_bin(self) -> int:
        return self.n_bins

    def transform(self, values: np.ndarray) -> np.ndarray:
        if self.categorical:
            ids = np.asarray(values, dtype=np.int64)
            out = ids.copy()
            out[(ids < 0) | (ids >= self.n_bins)] = self.n_bins
            return out
        x = np.asarray(values, dtype=np.float64)
        out = np.searchsorted(self.edges, x, side="left").astype(np.int64)
        out[np.isnan(x)] = self.n_bins
        return out


def _numeric_edges(x: np.ndarray, max_bins: int) -> np.ndarray:
    x = x[~np.isnan(x)]
    uniq = np.unique(x)
    if uniq.size <= 1:
        return np.empty(0)
    if uniq.size <= max_bins:
        return (uniq[:-1] + uniq[1:]) / 2.0
    qs = np.quantile(x, np.linspace(0.0, 1.0, max_bins + 1)[1:-1])
    edges = np.unique(qs)
    return edges[edges < uniq[-1]]


def fit_binning(dataset: Dataset, max_bins: int) -> list[FeatureBinning]:
    """Fix bin edges from the training data: numeric features first, then categorical."""
    out = []
    for name, col in dataset.numeric.items():
        edges = _numeric_edges(col, max_bins)
        out.append(FeatureBinning(name, False, len(edges) + 1, edges))
    for name, col in dataset.categorical.items():
        out.append(FeatureBinning(name, True, max(len(dataset.dictionaries[name]), 1)))
    return out


def bin_dataset(binnings: Sequence[FeatureBinning], dataset: Dataset) -> np.ndarray:
    cols = []
    for b in binnings:
        src = dataset.categorical[b.name] if b.categorical else dataset.numeric[b.name]
        cols.append(b.transform(src))
    if not cols:
        return np.empty((len(dataset), 0), dtype=np.int64)
    return np.column_stack(cols)


@dataclass
class Histograms:
    """Per-bin weighted gradient sum, weighted hessian sum and row count, for
    all features laid end to end; feature j owns slots offsets[j]:offsets[j+1]."""

    offsets: np.ndarray
    grad: np.ndarray
    hess: np.ndarray
    count: np.ndarray

    def feature(self, j: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        s = slice(self.offsets[j], self.offsets[j + 1])
        return self.grad[s], self.hess[s], self.count[s]

    def __sub__(self, other: "Histograms") -> "Histograms":
        return Histograms(self.offsets, self.grad - other.grad, self.hess - other.hess,
                          self.count - other.count)


def _offsets(binnings: Sequence[FeatureBinning]) -> np.ndarray:
    return np.concatenate([[0], np.cumsum([b.n_bins + 1 for b in binnings])]).astype(np.int64)


def _histograms(binned: np.ndarray, offsets: np.ndarray, rows: np.ndarray,
                grad: np.ndarray, hess: np.ndarray) -> Histograms:
    total = int(offsets[-1])
    p = binned.shape[1]
    if p == 0 or rows.size == 0:
        z = np.zeros(total)
        return Histograms(offsets, z, z.copy(), np.zeros(total, dtype=np.int64))
    idx = (binned[rows] + offsets[:-1]).ravel()
    g = np.repeat(grad[rows], p)
    h = np.repeat(hess[rows], p)
    return Histograms(
        offsets,
        np.bincount(idx, weights=g, minlength=total),
        np.bincount(idx, weights=h, minlength=total),
        np.bincount(idx, minlength=total),
    )


def build_histograms(dataset: Dataset, gradients, hessians, max_bins: int,
                     weights=None) -> tuple[list[FeatureBinning], Histograms]:
    """Bin every feature of ``dataset`` and accumulate weighted gradient statistics."""
    w = dataset.sample_weight if weights is None else np.asarray(weights, dtype=np.float64)
    binnings = fit_binning(dataset, max_bins)
    binned = bin_dataset(binnings, dataset)
    rows = np.arange(len(dataset))
    g = np.asarray(gradients, dtype=np.float64) * w
    h = np.asarray(hessians, dtype=np.float64) * w
    return binnings, _histograms(binned, _offsets(binnings), rows, g, h)


# ---------------------------------------------------------------------------
# Split search


@dataclass(frozen=True)
class Split:
    feature: int
    gain: float
    default_left: bool
    bin_threshold: int = -1  # numeric: bins <= this go left
    left_levels: tuple[int, ...] = ()  # categorical: level ids going left
    left_count: int = 0
    right_count: int = 0


EXACT_SUBSET_LEVELS = 10


def _score(g, h):
    return g * g / (h + SPLIT_REG)


def _best_numeric(G, H, C, min_leaf):
    """Best (gain, bin, default_left, nl, nr) over thresholds and missing directions."""
    nb = G.size - 1
    if nb < 2:
        return None
    Gm, Hm, Cm = G[nb], H[nb], C[nb]
    Gt, Ht, Ct = G.sum(), H.sum(), C.sum()
    parent = _score(Gt, Ht)
    cg = np.cumsum(G[:nb])[:-1]
    ch = np.cumsum(H[:nb])[:-1]
    cc = np.cumsum(C[:nb])[:-1]
    dirs = [False, True] if Cm > 0 else [False]
    gains, counts = [], []
    for miss_left in dirs:
        gl = cg + Gm if miss_left else cg
        hl = ch + Hm if miss_left else ch
        cl = cc + Cm if miss_left else cc
        gain = _score(gl, hl) + _score(Gt - gl, Ht - hl) - parent
        gain = np.where((cl >= min_leaf) & (Ct - cl >= min_leaf), gain, -np.inf)
        gains.append(gain)
        counts.append(cl)
    gains = np.stack(gains, axis=1).ravel()  # ordered by (threshold, direction)
    k = int(np.argmax(gains))
    if not np.isfinite(gains[k]):
        return None
    b, d = divmod(k, len(dirs))
    nl = int(counts[d][b])
    return float(gains[k]), b, dirs[d], nl, int(Ct) - nl


def _best_categorical(G, H, C, min_leaf):
    """Levels sorted by gradient/hessian ratio; small cardinalities are searched exhaustively
    because the sorted scan can miss the optimum once the leaf-count floor binds."""
    card = G.size - 1
    present = np.flatnonzero(C > 0)
    if present.size < 2:
        return None
    ids = np.where(present == card, MISSING_LEVEL, present)
    g, h, c = G[present], H[present], C[present]
    ratio = np.where(h > 0, g / np.where(h > 0, h, 1.0), 0.0)
    order = np.lexsort((ids, ratio))
    g, h, c, ids = g[order], h[order], c[order], ids[order]
    Gt, Ht, Ct = g.sum(), h.sum(), c.sum()
    k = ids.size
    if k <= EXACT_SUBSET_LEVELS:
        # every bipartition once: the last sorted level always goes right
        masks = np.arange(1, 1 << (k - 1))
        member = ((masks[:, None] >> np.arange(k - 1)) & 1).astype(bool)
        member = np.concatenate([member, np.zeros((masks.size, 1), bool)], axis=1)
    else:
        member = np.tri(k - 1, k, dtype=bool)  # prefixes of the sorted order
    gl, hl, cl = member @ g, member @ h, member @ c
    gain = _score(gl, hl) + _score(Gt - gl, Ht - hl) - _score(Gt, Ht)
    gain = np.where((cl >= min_leaf) & (Ct - cl >= min_leaf), gain, -np.inf)
    k = int(np.argmax(gain))
    if not np.isfinite(gain[k]):
        return None
    left = ids[member[k]]
    default_left = bool(np.any(left == MISSING_LEVEL))
    levels = tuple(sorted(int(v) for v in left if v != MISSING_LEVEL))
    return float(gain[k]), levels, default_left, int(cl[k]), int(Ct - cl[k])


def best_split(hist: Histograms, binnings: Sequence[FeatureBinning], min_data_in_leaf: int,
               features: Sequence[int] | None = None) -> Split | None:
    """Highest-gain split over the allowed features, or None if no split gains.

    Ties go to the lowest feature index, then the lowest threshold.
    """
    best: Split | None = None
    for j in range(len(binnings)) if features is None else features:
        G, H, C = hist.feature(j)
        if binnings[j].categorical:
            r = _best_categorical(G, H, C, min_data_in_leaf)
            if r is None:
                continue
            cand = Split(j, r[0], r[2], left_levels=r[1], left_count=r[3], right_count=r[4])
        else:
            r = _best_numeric(G, H, C, min_data_in_leaf)
            if r is None:
                continue
            cand = Split(j, r[0], r[2], bin_threshold=r[1], left_count=r[3], right_count=r[4])
        if best is None or cand.gain > best.gain:
            best = cand
    if best is None or not best.gain > 0:
        return None
    return best


# ---------------------------------------------------------------------------
# Sampling


def goss_sample(gradients, a: float, b: float, seed) -> tuple[np.ndarray, np.ndarray]:
    """Keep the top ceil(a*n) rows by |gradient| and ceil(b*n) uniform picks from
    the rest; the picks are up-weighted by (1-a)/b. Rows come back sorted."""
    g = np.abs(np.asarray(gradients, dtype=np.float64))
    n = g.size
    if a >= 1.0 and b > 0:
        # keeping every row needs no remainder sample, whatever b is
        return np.arange(n), np.ones(n)
    GossParams(a, b)
    n_top = min(n, math.ceil(a * n - 1e-9))
    order = np.argsort(-g, kind="stable")
    top, rest = order[:n_top], order[n_top:]
    n_other = min(rest.size, math.ceil(b * n - 1e-9))
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    picked = rng.choice(rest, size=n_other, replace=False) if n_other else rest[:0]
    rows = np.concatenate([top, picked])
    mult = np.concatenate([np.ones(top.size), np.full(picked.size, (1.0 - a) / b)])
    srt = np.argsort(rows, kind="stable")
    return rows[srt], mult[srt]


# ---------------------------------------------------------------------------
# Trees


@dataclass
class Tree:
    """Flat node arrays; node 0 is the root and children always follow parents."""

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    bin_threshold: list[int] = field(default_factory=list)
    left_levels: list[tuple[int, ...]] = field(default_factory=list)
    default_left: list[bool] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)

    def add_leaf(self, value: float = 0.0) -> int:
        self.feature.append(-1)
        self.threshold.append(math.nan)
        self.bin_threshold.append(-1)
        self.left_levels.append(())
        self.default_left.append(False)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.value) - 1

    def is_leaf(self, k: int) -> bool:
        return self.left[k] < 0

    @property
    def n_leaves(self) -> int:
        return sum(1 for k in range(len(self.value)) if self.is_leaf(k))

    def _route(self, node: int, rows: np.ndarray, go_left_fn, out: np.ndarray) -> None:
        stack = [(node, rows)]
        while stack:
            k, r = stack.pop()
            if self.is_leaf(k):
                out[r] = self.value[k]
                continue
            mask = go_left_fn(k, r)
            stack.append((self.right[k], r[~mask]))
            stack.append((self.left[k], r[mask]))

    def predict_binned(self, binned: np.ndarray, binnings: Sequence[FeatureBinning]) -> np.ndarray:
        def go_left(k, r):
            j = self.feature[k]
            col = binned[r, j]
            fb = binnings[j]
            missing = col == fb.missing_bin
            if fb.categorical:
                inside = np.isin(col, self.left_levels[k])
            else:
                inside = col <= self.bin_threshold[k]
            return np.where(missing, self.default_left[k], inside)

        out = np.empty(binned.shape[0])
        self._route(0, np.arange(binned.shape[0]), go_left, out)
        return out

    def predict_raw(self, numeric: np.ndarray, categorical: np.ndarray, n_numeric: int) -> np.ndarray:
        def go_left(k, r):
            j = self.feature[k]
            if j < n_numeric:
                x = numeric[r, j]
                return np.where(np.isnan(x), self.default_left[k], x <= self.threshold[k])
            ids = categorical[r, j - n_numeric]
            return np.where(ids == MISSING_LEVEL, self.default_left[k], np.isin(ids, self.left_levels[k]))

        n = numeric.shape[0]
        out = np.empty(n)
        self._route(0, np.arange(n), go_left, out)
        return out

    def to_dict(self, names: Sequence[str], n_numeric: int, k: int = 0) -> dict:
        if self.is_leaf(k):
            return {"leaf": self.value[k]}
        j = self.feature[k]
        node: dict = {"feature": names[j], "default_left": self.default_left[k]}
        if j < n_numeric:
            node["threshold"] = self.threshold[k]
        else:
            node["categories"] = list(self.left_levels[k])
        node["left"] = self.to_dict(names, n_numeric, self.left[k])
        node["right"] = self.to_dict(names, n_numeric, self.right[k])
        return node

    @classmethod
    def from_dict(cls, d: dict, names: Sequence[str], n_numeric: int) -> "Tree":
        tree = cls()
        index = {n: i for i, n in enumerate(names)}

        def build(node: dict) -> int:
            k = tree.add_leaf(float(node.get("leaf", 0.0)))
            if "leaf" in node:
                return k
            j = index[node["feature"]]
            tree.feature[k] = j
            tree.default_left[k] = bool(node["default_left"])
            if j < n_numeric:
                tree.threshold[k] = float(node["threshold"])
            else:
                tree.left_levels[k] = tuple(int(v) for v in node["categories"])
            tree.left[k] = build(node["left"])
            tree.right[k] = build(node["right"])
            return k

        build(d)
        return tree


@dataclass
class _Leaf:
    node: int
    rows: np.ndarray
    depth: int
    hist: Histograms
    grad_sum: float
    hess_sum: float
    split: Split | None = None


def grow_tree(binned: np.ndarray, binnings: Sequence[FeatureBinning], rows: np.ndarray,
              grad: np.ndarray, hess: np.ndarray, params: BoosterParams,
              features: Sequence[int] | None = None) -> tuple[Tree, list[_Leaf]]:
    """Grow one tree leaf-wise on weighted gradients; leaf values are Newton steps."""
    offsets = _offsets(binnings)
    tree = Tree()
    root = _Leaf(tree.add_leaf(), rows, 0, _histograms(binned, offsets, rows, grad, hess),
                 float(grad[rows].sum()), float(hess[rows].sum()))
    max_depth = params.max_depth if params.max_depth > 0 else math.inf
    heap: list = []
    done: list[_Leaf] = []

    def consider(leaf: _Leaf):
        if leaf.depth < max_depth and leaf.rows.size >= 2 * params.min_data_in_leaf:
            leaf.split = best_split(leaf.hist, binnings, params.min_data_in_leaf, features)
        if leaf.split is None:
            done.append(leaf)
        else:
            heapq.heappush(heap, (-leaf.split.gain, leaf.node, leaf))

    consider(root)
    n_leaves = 1
    while heap and n_leaves < params.num_leaves:
        _, _, leaf = heapq.heappop(heap)
        s = leaf.split
        fb = binnings[s.feature]
        col = binned[leaf.rows, s.feature]
        if fb.categorical:
            inside = np.isin(col, s.left_levels)
        else:
            inside = col <= s.bin_threshold
        mask = np.where(col == fb.missing_bin, s.default_left, inside)
        lrows, rrows = leaf.rows[mask], leaf.rows[~mask]
        k = leaf.node
        tree.feature[k] = s.feature
        tree.default_left[k] = s.default_left
        if fb.categorical:
            tree.left_levels[k] = s.left_levels
        else:
            tree.bin_threshold[k] = s.bin_threshold
            tree.threshold[k] = float(fb.edges[s.bin_threshold])
        tree.left[k] = tree.add_leaf()
        tree.right[k] = tree.add_leaf()
        small, big = (lrows, rrows) if lrows.size <= rrows.size else (rrows, lrows)
        h_small = _histograms(binned, offsets, small, grad, hess)
        h_big = leaf.hist - h_small
        hist_l, hist_r = (h_small, h_big) if small is lrows else (h_big, h_small)
        for node, r, hh in ((tree.left[k], lrows, hist_l), (tree.right[k], rrows, hist_r)):
            consider(_Leaf(node, r, leaf.depth + 1, hh, float(grad[r].sum()), float(hess[r].sum())))
        n_leaves += 1
    done.extend(item[2] for item in heap)
    for leaf in done:
        tree.value[leaf.node] = -leaf.grad_sum / (leaf.hess_sum + SPLIT_REG)
    done.sort(key=lambda lf: lf.node)
    return tree, done


# ---------------------------------------------------------------------------
# Model


@dataclass(frozen=True)
class FeatureSchema:
    numeric: tuple[str, ...]
    categorical: tuple[str, ...]
    dictionaries: dict[str, CategoryDictionary]

    @property
    def names(self) -> list[str]:
        return [*self.numeric, *self.categorical]

    @classmethod
    def of(cls, ds: Dataset) -> "FeatureSchema":
        return cls(tuple(ds.numeric_names), tuple(ds.categorical_names),
                   {k: ds.dictionaries[k] for k in ds.categorical_names})

    def to_dict(self) -> dict:
        return {"numeric": list(self.numeric), "categorical": list(self.categorical),
                "dictionaries": {k: list(self.dictionaries[k].levels) for k in self.categorical}}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        return cls(tuple(d["numeric"]), tuple(d["categorical"]),
                   {k: CategoryDictionary(tuple(v)) for k, v in d["dictionaries"].items()})

    def matrices(self, rows: Dataset) -> tuple[np.ndarray, np.ndarray]:
        missing = [c for c in self.numeric if c not in rows.numeric]
        missing += [c for c in self.categorical if c not in rows.categorical]
        if missing:
            raise InputError(f"rows do not match the model schema; missing columns {missing}")
        n = len(rows)
        num = np.column_stack([rows.numeric[c] for c in self.numeric]) if self.numeric else np.empty((n, 0))
        cats = []
        for c in self.categorical:
            ids = rows.categorical[c]
            mine, theirs = self.dictionaries[c], rows.dictionaries[c]
            if mine.levels != theirs.levels:
                ids = mine.encode(theirs.decode(ids))
            cats.append(ids)
        cat = np.column_stack(cats) if cats else np.empty((n, 0), dtype=np.int64)
        return num, cat


@dataclass(frozen=True)
class BoostedModel:
    trees: tuple[Tree, ...]
    base_score: float
    params: BoosterParams
    schema: FeatureSchema
    train_loss: tuple[float, ...] = ()

    def predict(self, rows: Dataset) -> np.ndarray:
        return predict(self, rows)

    def to_dict(self) -> dict:
        names, nn = self.schema.names, len(self.schema.numeric)
        return {
            "format": "promisedate.gbdt",
            "version": MODEL_FORMAT_VERSION,
            "params": self.params.to_dict(),
            "schema": self.schema.to_dict(),
            "base_score": self.base_score,
            "train_loss": list(self.train_loss),
            "trees": [t.to_dict(names, nn) for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoostedModel":
        check_version(d.get("version", "0"))
        schema = FeatureSchema.from_dict(d["schema"])
        names, nn = schema.names, len(schema.numeric)
        return cls(
            trees=tuple(Tree.from_dict(t, names, nn) for t in d["trees"]),
            base_score=float(d["base_score"]),
            params=BoosterParams.from_dict(d["params"]),
            schema=schema,
            train_loss=tuple(d.get("train_loss", ())),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path: str | Path) -> "BoostedModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def check_version(version: str, supported: str = MODEL_FORMAT_VERSION) -> None:
    major = int(str(version).split(".")[0])
    if major > int(supported.split(".")[0]):
        raise InputError(f"model format {version} is newer than supported {supported}")


def predict(model: BoostedModel, rows: Dataset) -> np.ndarray:
    """base_score + learning_rate * sum of tree outputs, per row."""
    num, cat = model.schema.matrices(rows)
    out = np.full(len(rows), model.base_score)
    nn = len(model.schema.numeric)
    lr = model.params.learning_rate
    for t in model.trees:
        out += lr * t.predict_raw(num, cat, nn)
    return out


def _weighted_loss(loss: LossSpec, y, f, w) -> float:
    return float(np.sum(w * loss_value(loss, y, f)) / np.sum(w))


def train(dataset: Dataset, params: BoosterParams) -> BoostedModel:
    """Fit a boosted ensemble; deterministic given ``params.seed``."""
    n = len(dataset)
    if n == 0:
        raise InputError("cannot train on an empty dataset")
    y = dataset.target
    if not np.all(np.isfinite(y)):
        raise InputError("target contains non-finite values")
    w = dataset.sample_weight
    loss = params.loss
    base = constant_minimizer(loss, y, w)
    binnings = fit_binning(dataset, params.max_bins)
    binned = bin_dataset(binnings, dataset)
    p = len(binnings)
    rng = np.random.default_rng(np.random.SeedSequence(params.seed))
    pred = np.full(n, base)
    trees: list[Tree] = []
    trace = [_weighted_loss(loss, y, pred, w)]
    all_rows = np.arange(n)
    for _ in range(params.boosting_iterations):
        g, h = gradient_hessian(loss, y, pred)
        mult = np.ones(n)
        if params.goss is not None:
            rows, m = goss_sample(g, params.goss.top_rate, params.goss.other_rate, rng)
            mult[rows] = m
        elif params.data_fraction < 1.0:
            k = max(1, math.ceil(params.data_fraction * n))
            rows = np.sort(rng.choice(n, size=k, replace=False))
        else:
            rows = all_rows
        if params.feature_fraction < 1.0 and p > 0:
            kf = max(1, math.ceil(params.feature_fraction * p))
            features = sorted(int(v) for v in rng.choice(p, size=kf, replace=False))
        else:
            features = None
        wm = w * mult
        tree, leaves = grow_tree(binned, binnings, rows, g * wm, h * wm, params, features)
        if loss.variant == "quantile":
            resid = y - pred
            for leaf in leaves:
                lw = wm[leaf.rows]
                if leaf.rows.size and lw.sum() > 0:
                    tree.value[leaf.node] = weighted_quantile(resid[leaf.rows], lw, loss.tau)
                else:
                    tree.value[leaf.node] = 0.0
        pred = pred + params.learning_rate * tree.predict_binned(binned, binnings)
        trees.append(tree)
        trace.append(_weighted_loss(loss, y, pred, w))
    return BoostedModel(tuple(trees), base, params, FeatureSchema.of(dataset), tuple(trace))
