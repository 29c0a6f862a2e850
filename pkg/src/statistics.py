"""
Latency statistics: outlier cutoff, five-number summaries, boxplot whiskers
and the size -> latency regression line.

Conventions (fixed, so reports are reproducible):
- quartiles: numpy's "linear" method (interpolate between closest ranks)
- variance: sample variance (ddof=1), 0.0 for a single sample
- whiskers: upper = min(data max, Q3 + 1.5*IQR), lower = max(data min, Q1 - 1.5*IQR)
- regression: ordinary least squares over (size, per-size mean)
"""

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

WHISKER_FACTOR = 1.5


@dataclass(frozen=True)
class Summary:
    count: int
    mean: float
    variance: float
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float
    lower_whisker: float
    upper_whisker: float

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1


@dataclass(frozen=True)
class LinearFit:
    intercept: float
    slope: float
    residual_rms: float


def filter_outliers(values: Sequence[float], cutoff: float) -> Tuple[np.ndarray, int]:
    """
    Drop samples strictly above `cutoff`.

    Returns:
        (kept samples, number excluded)
    """
    data = np.asarray(values, dtype=float)
    kept = data[data <= cutoff]
    return kept, int(data.size - kept.size)


def quartiles(values: Sequence[float]) -> Tuple[float, float, float]:
    q1, median, q3 = np.percentile(np.asarray(values, dtype=float), [25, 50, 75], method="linear")
    return float(q1), float(median), float(q3)


def whiskers(values: Sequence[float]) -> Tuple[float, float]:
    data = np.asarray(values, dtype=float)
    q1, _, q3 = quartiles(data)
    spread = WHISKER_FACTOR * (q3 - q1)
    return max(float(data.min()), q1 - spread), min(float(data.max()), q3 + spread)


def summarize(values: Sequence[float]) -> Summary:
    """
    Raises:
        ValueError: no samples
    """
    data = np.asarray(values, dtype=float)
    if data.size == 0:
        raise ValueError("cannot summarize an empty sample set")
    q1, median, q3 = quartiles(data)
    lower, upper = whiskers(data)
    return Summary(
        count=int(data.size),
        mean=float(data.mean()),
        variance=float(data.var(ddof=1)) if data.size > 1 else 0.0,
        minimum=float(data.min()),
        q1=q1,
        median=median,
        q3=q3,
        maximum=float(data.max()),
        lower_whisker=lower,
        upper_whisker=upper,
    )


def fit_line(xs: Sequence[float], ys: Sequence[float]) -> LinearFit:
    """
    Least-squares y = intercept + slope * x.

    Raises:
        ValueError: fewer than two distinct x values
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape:
        raise ValueError("x and y must have the same length")
    if np.unique(x).size < 2:
        raise ValueError("need at least two distinct x values for a line")
    slope, intercept = np.polyfit(x, y, 1)
    residuals = y - (intercept + slope * x)
    return LinearFit(
        intercept=float(intercept),
        slope=float(slope),
        residual_rms=float(np.sqrt(np.mean(residuals ** 2))),
    )
