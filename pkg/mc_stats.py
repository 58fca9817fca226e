import math
from typing import Tuple

import numpy as np


def sample_mean(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.mean(x)) if len(x) else math.nan


def sample_variance(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.var(x, ddof=1)) if len(x) > 1 else math.nan


def standard_error(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        return math.nan
    return math.sqrt(sample_variance(x) / len(x))


def variance_standard_error(x: np.ndarray) -> float:
    """Large-sample SE of the sample variance, sqrt((m4 - s^4) / N)."""
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        return math.nan
    centred = x - np.mean(x)
    m4 = float(np.mean(centred**4))
    s2 = float(np.mean(centred**2))
    return math.sqrt(max(m4 - s2 * s2, 0.0) / len(x))


def z_score(value: float, target: float, se: float) -> float:
    if se > 0:
        return (value - target) / se
    return 0.0 if value == target else math.copysign(math.inf, value - target)


def confidence_interval(x: np.ndarray, z: float = 1.96) -> Tuple[float, float]:
    m = sample_mean(x)
    half = z * standard_error(x)
    return m - half, m + half


def mean_diff_ci(
    x1: np.ndarray, x2: np.ndarray, z: float = 1.96, paired: bool = False
) -> Tuple[float, float]:
    """
    CI of mean(x1) - mean(x2). Paired samples come from the same draws and
    use the standard error of the differences.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if paired:
        half = z * standard_error(x1 - x2)
    else:
        half = z * math.sqrt(standard_error(x1) ** 2 + standard_error(x2) ** 2)
    diff = sample_mean(x1) - sample_mean(x2)
    return diff - half, diff + half


def within(value: float, target: float, se: float, sigmas: float = 3.0, slack: float = 0.0) -> bool:
    return abs(value - target) <= sigmas * se + slack
