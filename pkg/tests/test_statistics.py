"""
Tests for the latency statistics, against hand-computed values.
"""

import pytest

from src.statistics import filter_outliers, fit_line, quartiles, summarize, whiskers

TOL = 1e-9

# data, (mean, sample variance, q1, median, q3)
HAND_COMPUTED = [
    ([1, 2, 3, 4], (2.5, 5 / 3, 1.75, 2.5, 3.25)),
    ([5], (5.0, 0.0, 5.0, 5.0, 5.0)),
    ([1, 2, 3, 4, 100], (22.0, 1902.5, 2.0, 3.0, 4.0)),
    ([10, 20], (15.0, 50.0, 12.5, 15.0, 17.5)),
    ([3, 1, 2], (2.0, 1.0, 1.5, 2.0, 2.5)),
    ([2, 4, 4, 4, 5, 5, 7, 9], (5.0, 32 / 7, 4.0, 4.5, 5.5)),
]


@pytest.mark.unit
@pytest.mark.parametrize("data, expected", HAND_COMPUTED)
def test_summary_matches_hand_computation(data, expected):
    s = summarize(data)
    assert s.count == len(data)
    assert (s.mean, s.variance, s.q1, s.median, s.q3) == pytest.approx(expected, abs=TOL)
    assert s.minimum == min(data)
    assert s.maximum == max(data)


@pytest.mark.unit
def test_quartiles_of_one_to_four():
    assert quartiles([1, 2, 3, 4]) == pytest.approx((1.75, 2.5, 3.25), abs=TOL)


@pytest.mark.unit
def test_whiskers_clamp_to_data():
    # IQR 1.5 -> fences at -0.5 and 5.5, clamped to the data range
    assert whiskers([1, 2, 3, 4]) == pytest.approx((1.0, 4.0), abs=TOL)
    # IQR 2 -> upper fence 7 sits below the 100 outlier
    lower, upper = whiskers([1, 2, 3, 4, 100])
    assert (lower, upper) == pytest.approx((1.0, 7.0), abs=TOL)
    s = summarize([1, 2, 3, 4, 100])
    assert (s.lower_whisker, s.upper_whisker) == (lower, upper)
    assert s.iqr == pytest.approx(2.0, abs=TOL)


@pytest.mark.unit
def test_outlier_cutoff_is_inclusive():
    kept, excluded = filter_outliers([0.5, 2.5, 2.6, 10.0], cutoff=2.5)
    assert kept.tolist() == [0.5, 2.5]
    assert excluded == 2
    kept, excluded = filter_outliers([], cutoff=1.0)
    assert kept.size == 0 and excluded == 0


@pytest.mark.unit
def test_fit_line():
    fit = fit_line([1, 2, 3], [3, 5, 7])
    assert fit.intercept == pytest.approx(1.0, abs=TOL)
    assert fit.slope == pytest.approx(2.0, abs=TOL)
    assert fit.residual_rms == pytest.approx(0.0, abs=TOL)

    # y = 2x with +-1 noise: residuals are all 1 in magnitude
    noisy = fit_line([0, 0, 10, 10], [1, -1, 21, 19])
    assert noisy.slope == pytest.approx(2.0, abs=TOL)
    assert noisy.intercept == pytest.approx(0.0, abs=TOL)
    assert noisy.residual_rms == pytest.approx(1.0, abs=TOL)


@pytest.mark.unit
def test_degenerate_inputs():
    with pytest.raises(ValueError):
        summarize([])
    with pytest.raises(ValueError):
        fit_line([1, 1], [2, 3])
    with pytest.raises(ValueError):
        fit_line([1, 2], [2])
