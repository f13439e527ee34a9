import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ichloc.core import DegenerateDatasetError, ParameterError
from ichloc.windowing import (
    BRAIN_WINDOW,
    SUBDURAL_WINDOW,
    StandardizationStats,
    WindowSpec,
    apply_window,
    build_input_channels,
    compute_channel_stats,
    compute_stats,
    standardize,
)


@pytest.mark.parametrize(
    "w, v, expected",
    [
        (BRAIN_WINDOW, 40.0, 0.5),
        (BRAIN_WINDOW, 0.0, 0.0),
        (BRAIN_WINDOW, 80.0, 1.0),
        (SUBDURAL_WINDOW, 50.0, 0.5),
        (SUBDURAL_WINDOW, -15.0, 0.0),
        (SUBDURAL_WINDOW, 115.0, 1.0),
    ],
)
def test_window_landmarks(w, v, expected):
    assert apply_window([[v]], w)[0, 0] == expected


def test_standard_windows():
    assert (BRAIN_WINDOW.level, BRAIN_WINDOW.width) == (40.0, 80.0)
    assert (SUBDURAL_WINDOW.level, SUBDURAL_WINDOW.width) == (50.0, 130.0)


def test_invalid_window():
    with pytest.raises(ParameterError):
        WindowSpec(40, 0)
    with pytest.raises(ParameterError):
        StandardizationStats(0.0, 0.0)


hu_values = st.floats(-2000, 3000, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(hu_values, hu_values, st.floats(-100, 200), st.floats(1, 500))
def test_window_monotone_and_clamped(a, b, level, width):
    w = WindowSpec(level, width)
    lo, hi = sorted((a, b))
    out = apply_window([[lo, hi]], w)[0]
    assert 0.0 <= out[0] <= out[1] <= 1.0
    if hi <= level - width / 2:
        assert out[1] == 0.0
    if lo >= level + width / 2:
        assert out[0] == 1.0


def test_standardize_examples():
    assert standardize([[2.0, 4.0]], StandardizationStats(3.0, 1.0)).tolist() == [[-1.0, 1.0]]
    m = np.array([[1.5, -2.0]])
    assert np.array_equal(standardize(m, StandardizationStats(0.0, 1.0)), m)
    assert np.all(standardize(np.full((3, 3), 7.0), StandardizationStats(7.0, 2.0)) == 0.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20), st.floats(-100, 100), st.floats(0.1, 100))
def test_standardize_inverse(values, mean, std):
    m = np.array([values])
    s = StandardizationStats(mean, std)
    back = standardize(m, s) * std + mean
    np.testing.assert_allclose(back, m, rtol=1e-12, atol=1e-12 * max(1.0, abs(mean)))


def test_compute_stats_examples():
    s = compute_stats([[[0.0, 2.0]]])
    assert (s.mean, s.std) == (1.0, 1.0)
    with pytest.raises(DegenerateDatasetError):
        compute_stats([[[5.0, 5.0]]])
    with pytest.raises(DegenerateDatasetError):
        compute_stats([])


def test_compute_stats_matches_two_pass():
    rng = np.random.default_rng(11)
    data = [rng.normal(30, 200, size=(rng.integers(2, 9), rng.integers(2, 9))) for _ in range(100)]
    # two-pass reference with plain Python sums
    vals = [float(v) for m in data for v in m.ravel()]
    mean = sum(vals) / len(vals)
    var = sum((v - mean) ** 2 for v in vals) / len(vals)
    s = compute_stats(data)
    assert s.mean == pytest.approx(mean, rel=1e-12)
    assert s.std == pytest.approx(var ** 0.5, rel=1e-12)


def test_build_input_channels():
    hu = np.full((4, 5), 40.0)
    identity = StandardizationStats(0.0, 1.0)
    ch = build_input_channels(hu, identity)
    assert len(ch) == 3
    assert all(c.shape == hu.shape for c in ch)
    assert np.all(ch[1] == 0.5)


def test_build_input_channels_composition():
    ramp = np.tile(np.linspace(-100, 200, 31), (3, 1))
    stats = StandardizationStats(12.0, 37.0)
    ch = build_input_channels(ramp, stats)
    assert np.array_equal(ch[0], standardize(ramp, stats))
    assert np.array_equal(ch[1], standardize(apply_window(ramp, BRAIN_WINDOW), stats))
    assert np.array_equal(ch[2], standardize(apply_window(ramp, SUBDURAL_WINDOW), stats))


def test_per_channel_stats():
    rng = np.random.default_rng(0)
    data = [rng.normal(40, 60, size=(8, 8)) for _ in range(5)]
    stats = compute_channel_stats(data)
    assert len(stats) == 3
    ch = build_input_channels(data[0], stats)
    assert ch[1].shape == (8, 8)
    with pytest.raises(ParameterError):
        build_input_channels(data[0], stats[:2])
