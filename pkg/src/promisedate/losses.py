"""Differentiable objectives for the booster: squared, asymmetric squared, pinball."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .domain import InputError


@dataclass(frozen=True)
class LossSpec:
    """Objective selector.

    ``asymmetric`` multiplies the residual by ``alpha`` when the model
    under-predicts (y > f) before squaring. ``quantile`` is the pinball loss
    at level ``tau``.
    """

    variant: str = "mse"
    alpha: float | None = None
    tau: float | None = None

    def __post_init__(self):
        if self.variant == "mse":
            pass
        elif self.variant == "asymmetric":
            # alpha == 1 is accepted: it must reproduce mse exactly.
            if self.alpha is None or not self.alpha >= 1.0:
                raise InputError(f"asymmetric loss needs alpha >= 1, got {self.alpha}")
        elif self.variant == "quantile":
            if self.tau is None or not 0.0 < self.tau < 1.0:
                raise InputError(f"quantile loss needs tau in (0,1), got {self.tau}")
        else:
            raise InputError(f"unknown loss variant {self.variant!r}")

    @classmethod
    def mse(cls) -> "LossSpec":
        return cls("mse")

    @classmethod
    def asymmetric(cls, alpha: float) -> "LossSpec":
        return cls("asymmetric", alpha=float(alpha))

    @classmethod
    def quantile(cls, tau: float) -> "LossSpec":
        return cls("quantile", tau=float(tau))

    @classmethod
    def parse(cls, text: str) -> "LossSpec":
        """Parse ``mse``, ``asymmetric:2`` or ``quantile:0.9``."""
        name, _, arg = text.partition(":")
        try:
            if name == "mse" and not arg:
                return cls.mse()
            if name == "asymmetric":
                return cls.asymmetric(float(arg))
            if name == "quantile":
                return cls.quantile(float(arg))
        except ValueError:
            pass
        raise InputError(f"cannot parse loss {text!r}")

    def to_dict(self) -> dict:
        d: dict = {"variant": self.variant}
        if self.variant == "asymmetric":
            d["alpha"] = self.alpha
        elif self.variant == "quantile":
            d["tau"] = self.tau
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LossSpec":
        return cls(d["variant"], alpha=d.get("alpha"), tau=d.get("tau"))

    def __str__(self) -> str:
        if self.variant == "asymmetric":
            return f"asymmetric:{self.alpha:g}"
        if self.variant == "quantile":
            return f"quantile:{self.tau:g}"
        return "mse"


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise InputError("non-finite value passed to loss")


def loss_value(spec: LossSpec, y, f):
    """Pointwise loss; accepts scalars or arrays."""
    y = np.asarray(y, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    _check_finite(y, f)
    u = y - f
    if spec.variant == "mse":
        out = u * u
    elif spec.variant == "asymmetric":
        e = np.where(u > 0, spec.alpha * u, u)
        out = e * e
    else:
        out = u * (spec.tau - (u < 0))
    return out if out.ndim else float(out)


def gradient_hessian(spec: LossSpec, y, f):
    """Derivatives with respect to the prediction ``f``.

    The pinball hessian is reported as the constant 1; leaf values are
    renewed to exact quantiles afterwards, so it only shapes split search.
    """
    y = np.asarray(y, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    _check_finite(y, f)
    d = f - y
    if spec.variant == "mse":
        grad = 2.0 * d
        hess = np.full_like(d, 2.0)
    elif spec.variant == "asymmetric":
        scale = np.where(y > f, spec.alpha * spec.alpha, 1.0)
        grad = 2.0 * d * scale
        hess = 2.0 * scale
    else:
        tau = spec.tau
        grad = np.where(y > f, -tau, np.where(y < f, 1.0 - tau, 0.0))
        hess = np.ones_like(d)
    if grad.ndim == 0:
        return float(grad), float(hess)
    return grad, hess


def weighted_quantile(values, weights, q: float) -> float:
    """Smallest value whose cumulative weight reaches ``q`` times the total."""
    values = np.asarray(values, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if values.size == 0:
        raise InputError("weighted_quantile of empty input")
    total = weights.sum()
    if not total > 0:
        raise InputError("weights must have a positive sum")
    order = np.argsort(values, kind="stable")
    cum = np.cumsum(weights[order])
    k = int(np.searchsorted(cum, q * total, side="left"))
    # guard against cumsum round-off landing just below the target at the top end
    k = min(k, values.size - 1)
    return float(values[order[k]])


def _asymmetric_minimizer(y: np.ndarray, w: np.ndarray, alpha: float) -> float:
    # Stationarity: sum_{y>f} w a^2 (y-f) = sum_{y<=f} w (f-y); the left side
    # minus the right side is decreasing in f, so scan the sorted breakpoints.
    order = np.argsort(y, kind="stable")
    ys, ws = y[order], w[order]
    a2 = alpha * alpha
    # prefix sums over the rows at or below position k
    cw = np.concatenate([[0.0], np.cumsum(ws)])
    cwy = np.concatenate([[0.0], np.cumsum(ws * ys)])
    tw, twy = cw[-1], cwy[-1]
    # rows [0, k) are over-predicted (weight 1), rows [k, n) under-predicted (weight a^2)
    f = (cwy + a2 * (twy - cwy)) / (cw + a2 * (tw - cw))
    left = np.concatenate([[-math.inf], ys])
    right = np.concatenate([ys, [math.inf]])
    ok = np.flatnonzero((left <= f) & (f <= right))
    if ok.size:
        return float(f[ok[0]])
    # round-off can push every candidate a hair outside its bracket
    miss = np.maximum(left - f, 0.0) + np.maximum(f - right, 0.0)
    return float(f[int(np.argmin(miss))])


def constant_minimizer(spec: LossSpec, targets: Sequence[float], weights: Sequence[float] | None = None) -> float:
    """Best constant prediction under the weighted total loss."""
    y = np.asarray(targets, dtype=np.float64)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=np.float64)
    if y.size == 0:
        raise InputError("constant_minimizer needs at least one target")
    if np.any(w < 0) or not w.sum() > 0:
        raise InputError("weights must be non-negative with a positive sum")
    _check_finite(y)
    if spec.variant == "mse" or (spec.variant == "asymmetric" and spec.alpha == 1.0):
        return float(np.sum(w * y) / np.sum(w))
    if spec.variant == "asymmetric":
        keep = w > 0
        return _asymmetric_minimizer(y[keep], w[keep], spec.alpha)
    return weighted_quantile(y, w, spec.tau)
