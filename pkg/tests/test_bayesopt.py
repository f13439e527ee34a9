import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import approx_fprime

from ichloc.bayesopt import (
    DEFAULT_SPACE,
    NOISE_FLOOR,
    Dimension,
    SearchSpace,
    _neg_log_marginal,
    expected_improvement,
    gp_fit,
    gp_predict,
    gp_predict_many,
    grid_search,
    latin_hypercube,
    optimize_detector,
)
from ichloc.core import ParameterError

UNIT3 = SearchSpace((Dimension("a", 0.0, 1.0), Dimension("b", 0.0, 1.0), Dimension("c", 0.0, 1.0)))


# ------------------------------------------------------------- search space

def test_default_space_contains_published_optima():
    assert DEFAULT_SPACE.names == ["h", "T", "d"]
    for point in ({"h": 0.024, "T": 0.76, "d": 10}, {"h": 0.0038, "T": 0.024, "d": 58}):
        assert DEFAULT_SPACE.contains(point)
        back = DEFAULT_SPACE.from_unit(DEFAULT_SPACE.to_unit(point))
        for k in point:
            assert back[k] == pytest.approx(point[k], rel=1e-12)


def test_dimension_validation():
    with pytest.raises(ParameterError):
        Dimension("x", 1.0, 1.0)
    with pytest.raises(ParameterError):
        Dimension("x", 0.0, 1.0, "log")
    with pytest.raises(ParameterError):
        Dimension("x", 0.0, 1.0, "cubic")
    with pytest.raises(ParameterError):
        SearchSpace((Dimension("x", 0, 1), Dimension("x", 0, 2)))


def test_space_dict_round_trip():
    assert SearchSpace.from_dict(DEFAULT_SPACE.to_dict()) == DEFAULT_SPACE
    with pytest.raises(ParameterError):
        SearchSpace.from_dict({"dimensions": [{"lower": 0}]})


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_from_unit_stays_in_bounds(a, b, c):
    p = DEFAULT_SPACE.from_unit([a, b, c])
    assert DEFAULT_SPACE.contains(p)
    assert p["d"] == int(p["d"])


# ----------------------------------------------------------- latin hypercube

def test_lhs_single_point_in_bounds():
    (p,) = latin_hypercube(1, DEFAULT_SPACE, seed=3)
    assert DEFAULT_SPACE.contains(p)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_lhs_strata(seed):
    n = 10
    pts = latin_hypercube(n, UNIT3, seed)
    for name in UNIT3.names:
        strata = sorted(int(p[name] * n) for p in pts)
        assert strata == list(range(n))


def test_lhs_deterministic():
    assert latin_hypercube(7, DEFAULT_SPACE, 11) == latin_hypercube(7, DEFAULT_SPACE, 11)
    assert latin_hypercube(7, DEFAULT_SPACE, 11) != latin_hypercube(7, DEFAULT_SPACE, 12)
    with pytest.raises(ParameterError):
        latin_hypercube(0, DEFAULT_SPACE)


# ------------------------------------------------------------------------ GP

def test_lml_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    X = rng.random((9, 2))
    y = np.sin(4 * X[:, 0]) + X[:, 1]
    y = (y - y.mean()) / y.std()
    theta = np.array([math.log(0.4), math.log(0.7), math.log(1.3), math.log(1e-3)])
    _, grad = _neg_log_marginal(theta, X, y)
    fd = approx_fprime(theta, lambda t: _neg_log_marginal(t, X, y)[0], 1e-7)
    np.testing.assert_allclose(grad, fd, rtol=1e-4, atol=1e-5)


def test_gp_constant_targets():
    X = np.array([[0.1], [0.5], [0.9]])
    model = gp_fit(X, [0.7, 0.7, 0.7])
    assert model.degenerate
    for x in X:
        mean, var = gp_predict(model, x)
        assert mean == pytest.approx(0.7, abs=1e-12)
        assert var < 1e-6


def test_gp_sine_interpolation_with_noise_floor():
    X = np.linspace(0, 1, 8)[:, None]
    y = np.sin(2 * np.pi * X[:, 0])
    model = gp_fit(X, y, hyperparams={"lengths": 0.3, "signal": 1.0, "noise": 0.0})
    assert model.noise == NOISE_FLOOR
    mean, _ = gp_predict_many(model, X)
    np.testing.assert_allclose(mean, y, atol=1e-6)


def test_gp_fitted_sine_interpolates():
    X = np.linspace(0, 1, 8)[:, None]
    y = np.sin(2 * np.pi * X[:, 0])
    model = gp_fit(X, y)
    assert model.noise >= NOISE_FLOOR
    mean, _ = gp_predict_many(model, X)
    np.testing.assert_allclose(mean, y, atol=1e-3)


def test_gp_duplicate_points_with_different_targets():
    X = np.array([[0.2], [0.2], [0.8]])
    model = gp_fit(X, [0.0, 1.0, 0.5])
    mean, var = gp_predict(model, [0.2])
    assert model.noise > 0
    assert 0.0 < mean < 1.0 and var >= 0


def test_gp_needs_two_distinct_points():
    with pytest.raises(ParameterError):
        gp_fit([[0.5], [0.5]], [1.0, 2.0])


def test_gp_far_point_variance():
    X = np.array([[0.0], [0.02], [0.05]])
    model = gp_fit(X, [1.0, 2.0, 0.5], hyperparams={"lengths": 0.05, "signal": 1.0, "noise": 1e-6})
    _, var = gp_predict(model, [1.0])  # 19 length scales from the nearest point
    assert var >= 0.9 * model.signal * model.y_std ** 2


def test_gp_variance_at_training_points():
    rng = np.random.default_rng(2)
    for _ in range(5):
        X = rng.random((12, 3))
        y = rng.standard_normal(12)
        model = gp_fit(X, y, seed=1)
        _, var = gp_predict_many(model, X)
        assert np.all(var / model.y_std ** 2 <= model.noise + 1e-8)


def test_gp_prediction_is_continuous():
    rng = np.random.default_rng(3)
    X = rng.random((10, 2))
    model = gp_fit(X, np.cos(3 * X[:, 0]) * X[:, 1])
    x = np.array([0.37, 0.61])
    gaps = [abs(gp_predict(model, x)[0] - gp_predict(model, x + eps)[0]) for eps in (1e-2, 1e-4, 1e-6)]
    assert gaps[0] > gaps[1] > gaps[2] and gaps[2] < 1e-5


# ---------------------------------------------------------------------- EI

def test_ei_closed_form_cases():
    assert expected_improvement(0.3, 0.0, 0.5) == 0.0
    assert expected_improvement(0.7, 0.0, 0.5) == pytest.approx(0.2, abs=1e-15)
    assert expected_improvement(1.0, 1.0, 1.0) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(-5, 5), st.floats(0, 4), st.floats(-5, 5))
def test_ei_non_negative(mean, var, best):
    ei = expected_improvement(mean, var, best)
    assert ei >= 0.0
    if var == 0.0 and mean <= best:
        assert ei == 0.0


def test_ei_matches_monte_carlo():
    rng = np.random.default_rng(20)
    done = 0
    while done < 20:
        mean, sigma, best = rng.normal(), rng.uniform(0.05, 2.0), rng.normal()
        # beyond |u| = 4 almost no sample clears `best` and the sample
        # standard error collapses to 0, so the oracle carries no information
        if abs(mean - best) / sigma > 4:
            continue
        done += 1
        samples = np.maximum(rng.normal(mean, sigma, 10**6) - best, 0.0)
        se = samples.std() / math.sqrt(samples.size)
        assert abs(expected_improvement(mean, sigma ** 2, best) - samples.mean()) <= 3 * se


# ------------------------------------------------------------- optimization

def quadratic(target):
    t = np.asarray(target)
    return lambda p: -float(np.sum((UNIT3.to_unit(p) - t) ** 2))


def test_optimize_finds_quadratic_optimum():
    target = np.array([0.3, 0.7, 0.55])
    best, history = optimize_detector(quadratic(target), UNIT3, budget=40, seed=0)
    assert len(history) == 40
    assert np.linalg.norm(UNIT3.to_unit(best.params) - target) <= 0.05


def test_budget_equal_to_initial_design():
    calls = []

    def obj(p):
        calls.append(p)
        return p["a"]

    best, history = optimize_detector(obj, UNIT3, budget=6, seed=4, n_initial=6)
    assert [t.params for t in history] == latin_hypercube(6, UNIT3, 4)
    assert best.objective == max(p["a"] for p in calls)


def test_optimize_is_deterministic():
    f = quadratic([0.2, 0.2, 0.8])
    _, h1 = optimize_detector(f, UNIT3, budget=15, seed=9)
    _, h2 = optimize_detector(f, UNIT3, budget=15, seed=9)
    assert h1 == h2


def test_optimize_records_failures():
    def obj(p):
        if p["a"] > 0.5:
            return float("nan")
        if p["b"] > 0.9:
            raise ValueError("bad point")
        return p["a"] + p["b"]

    best, history = optimize_detector(obj, UNIT3, budget=20, seed=1)
    assert len(history) == 20
    assert any(t.failed for t in history)
    assert all(t.objective == float("-inf") for t in history if t.failed)
    assert not best.failed
    assert best.objective == max(t.objective for t in history)


def test_optimize_history_invariants_default_space():
    def obj(p):
        return -abs(math.log(p["h"]) - math.log(0.02)) - abs(p["d"] - 10) / 100

    best, history = optimize_detector(obj, DEFAULT_SPACE, budget=15, seed=2)
    assert [t.iteration for t in history] == list(range(15))
    assert all(DEFAULT_SPACE.contains(t.params) for t in history)
    assert all(t.params["d"] == int(t.params["d"]) for t in history)
    assert best.objective == max(t.objective for t in history)
    assert best.detector_params().d == best.params["d"]


def test_optimize_rejects_small_budget():
    with pytest.raises(ParameterError):
        optimize_detector(lambda p: 0.0, UNIT3, budget=4)
    with pytest.raises(ParameterError):
        optimize_detector(lambda p: 0.0, UNIT3, budget=10, n_initial=11)


def test_grid_search_covers_grid():
    best, history = grid_search(lambda p: -(p["a"] - 1 / 3) ** 2 - p["b"] - p["c"], UNIT3, n=4)
    assert len(history) == 64
    assert best.params == {"a": 1 / 3, "b": 0.0, "c": 0.0}
