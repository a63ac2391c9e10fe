"""Independent reference implementations used as test oracles.

Nothing here imports the code under test beyond plain data containers.
"""

from __future__ import annotations

import itertools

import numpy as np

LAMBDA = 1e-3


def _score(g, h):
    return g * g / (h + LAMBDA)


def brute_force_best_split(numeric: np.ndarray, categorical: np.ndarray, grad: np.ndarray,
                           hess: np.ndarray, min_leaf: int):
    """Enumerate every threshold / subset split with both missing directions.

    ``numeric`` is (n, p) with NaN missing, ``categorical`` is (n, q) with -1
    missing; grad/hess are already weighted. Returns (gain, feature, description)
    of the best split, or None if nothing has positive gain.
    """
    n = grad.size
    G, H = grad.sum(), hess.sum()
    parent = _score(G, H)
    best = None

    def consider(mask, feature, desc):
        nonlocal best
        nl = int(mask.sum())
        if nl < min_leaf or n - nl < min_leaf:
            return
        gl, hl = grad[mask].sum(), hess[mask].sum()
        gain = _score(gl, hl) + _score(G - gl, H - hl) - parent
        if best is None or gain > best[0]:
            best = (gain, feature, desc)

    p = numeric.shape[1]
    for j in range(p):
        x = numeric[:, j]
        miss = np.isnan(x)
        vals = np.unique(x[~miss])
        for lo, hi in zip(vals[:-1], vals[1:]):
            below = np.zeros(n, dtype=bool)
            below[~miss] = x[~miss] <= lo
            consider(below, j, ("num", (lo + hi) / 2, False))
            if miss.any():
                consider(below | miss, j, ("num", (lo + hi) / 2, True))
    for j in range(categorical.shape[1]):
        ids = categorical[:, j]
        levels = sorted(set(ids.tolist()))
        for r in range(1, len(levels)):
            for subset in itertools.combinations(levels, r):
                consider(np.isin(ids, subset), p + j, ("cat", subset))
    if best is None or not best[0] > 0:
        return None
    return best


def quantile_bin_counts(values: np.ndarray, n_bins: int) -> np.ndarray:
    """Equal-frequency bin counts for distinct values by rank arithmetic."""
    n = values.size
    cuts = [round(n * k / n_bins) for k in range(n_bins + 1)]
    return np.diff(cuts)
