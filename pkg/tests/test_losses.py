import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from promisedate.domain import InputError
from promisedate.losses import (
    LossSpec,
    constant_minimizer,
    gradient_hessian,
    loss_value,
    weighted_quantile,
)

SPECS = [LossSpec.mse(), LossSpec.asymmetric(2.0), LossSpec.asymmetric(5.0),
         LossSpec.quantile(0.9), LossSpec.quantile(0.3)]


def test_asymmetric_value_underprediction_branch():
    assert loss_value(LossSpec.asymmetric(2), 5, 3) == 16.0


@pytest.mark.parametrize("u, expected", [(-2.0, 0.2), (2.0, 1.8)])
def test_pinball_value(u, expected):
    assert loss_value(LossSpec.quantile(0.9), u, 0.0) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("spec", SPECS, ids=str)
def test_zero_residual_is_zero(spec):
    assert loss_value(spec, 7.5, 7.5) == 0.0


def test_non_finite_rejected():
    with pytest.raises(InputError):
        loss_value(LossSpec.mse(), np.nan, 1.0)
    with pytest.raises(InputError):
        gradient_hessian(LossSpec.mse(), 1.0, np.inf)


def test_gradient_examples():
    assert gradient_hessian(LossSpec.mse(), 3, 5) == (4.0, 2.0)
    assert gradient_hessian(LossSpec.asymmetric(2), 5, 3) == (-16.0, 8.0)
    assert gradient_hessian(LossSpec.quantile(0.95), 5, 3)[0] == -0.95
    assert gradient_hessian(LossSpec.quantile(0.95), 3, 5)[0] == pytest.approx(0.05)
    assert gradient_hessian(LossSpec.quantile(0.95), 3, 3) == (0.0, 1.0)


@pytest.mark.parametrize("bad", [("asymmetric", {"alpha": 0.5}), ("quantile", {"tau": 1.0}),
                                 ("quantile", {"tau": 0.0}), ("huber", {})])
def test_invalid_specs(bad):
    with pytest.raises(InputError):
        LossSpec(bad[0], **bad[1])


def test_parse_and_roundtrip():
    for text in ["mse", "asymmetric:2", "quantile:0.95"]:
        spec = LossSpec.parse(text)
        assert LossSpec.from_dict(spec.to_dict()) == spec
        assert str(spec) == text
    with pytest.raises(InputError):
        LossSpec.parse("quantile:abc")


def _central_difference(spec, y, f, h=1e-6):
    return (loss_value(spec, y, f + h) - loss_value(spec, y, f - h)) / (2 * h)


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    checked = 0
    while checked < 100:
        spec = SPECS[rng.integers(len(SPECS))]
        y, f = rng.uniform(-50, 50, size=2)
        if abs(y - f) <= 1e-3:
            continue
        g, _ = gradient_hessian(spec, y, f)
        fd = _central_difference(spec, y, f)
        assert abs(g - fd) <= 1e-6 * max(1.0, abs(fd)), (spec, y, f, g, fd)
        checked += 1


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.sampled_from(SPECS))
def test_loss_nonnegative_and_zero_only_at_equality(y, f, spec):
    v = loss_value(spec, y, f)
    assert v >= 0
    if y != f:
        assert v > 0 or abs(y - f) < 1e-150


def test_constant_minimizer_examples():
    assert constant_minimizer(LossSpec.mse(), [1, 2, 3]) == 2.0
    assert constant_minimizer(LossSpec.quantile(0.5), [1, 2, 3, 4, 100]) == 3.0


def test_asymmetric_minimizer_against_grid_oracle():
    grid = np.linspace(0.0, 10.0, 100001)
    objective = 4 * (10 - grid) ** 2 + grid ** 2
    oracle = grid[np.argmin(objective)]
    assert oracle == pytest.approx(8.0, abs=1e-4)
    assert constant_minimizer(LossSpec.asymmetric(2), [0, 10]) == pytest.approx(oracle, abs=1e-4)


def test_constant_minimizer_rejects_zero_weights():
    with pytest.raises(InputError):
        constant_minimizer(LossSpec.mse(), [1, 2], [0, 0])
    with pytest.raises(InputError):
        constant_minimizer(LossSpec.mse(), [])


def _sorted_quantile_oracle(values, weights, q):
    pairs = sorted(zip(values, weights))
    total = sum(weights)
    acc = 0.0
    for v, w in pairs:
        acc += w
        if acc >= q * total - 1e-12:
            return v
    return pairs[-1][0]


@settings(max_examples=200)
@given(st.lists(st.tuples(st.integers(-20, 20), st.integers(1, 5)), min_size=1, max_size=30),
       st.sampled_from([0.1, 0.25, 0.5, 0.9, 0.95]))
def test_weighted_quantile_matches_sort_oracle(pairs, tau):
    values = [float(v) for v, _ in pairs]
    weights = [float(w) for _, w in pairs]
    got = constant_minimizer(LossSpec.quantile(tau), values, weights)
    assert got == _sorted_quantile_oracle(values, weights, tau)
    assert weighted_quantile(values, weights, tau) == got


@settings(max_examples=50)
@given(st.lists(st.floats(0, 100), min_size=2, max_size=40))
def test_asymmetric_minimizer_nondecreasing_in_alpha(ys):
    prev = -np.inf
    for alpha in [1.0, 1.5, 2.0, 4.0, 8.0]:
        f = constant_minimizer(LossSpec.asymmetric(alpha), ys)
        assert f >= prev - 1e-9
        prev = f


@settings(max_examples=50)
@given(st.lists(st.floats(0, 100), min_size=1, max_size=40), st.floats(1.0, 6.0))
def test_asymmetric_minimizer_is_optimal(ys, alpha):
    spec = LossSpec.asymmetric(alpha)
    f = constant_minimizer(spec, ys)
    best = np.sum(loss_value(spec, np.array(ys), np.full(len(ys), f)))
    for df in (-1e-3, 1e-3):
        other = np.sum(loss_value(spec, np.array(ys), np.full(len(ys), f + df)))
        assert best <= other + 1e-9 * max(1.0, other)


def test_alpha_one_minimizer_equals_mse():
    ys = np.random.default_rng(3).gamma(2.0, 10.0, size=101)
    assert constant_minimizer(LossSpec.asymmetric(1.0), ys) == constant_minimizer(LossSpec.mse(), ys)
