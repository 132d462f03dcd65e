"""Empirical tail risk estimators.

Wealth samples use the lower tail (larger is better); guarantee payouts use
the upper tail (larger is worse).
"""
import math
from typing import Tuple

import numpy as np

from .errors import ValidationError


def _tail_size(sample: np.ndarray, alpha: float) -> int:
    if sample.size == 0:
        raise ValidationError("Risk estimate requires a non-empty sample")
    if not 0.0 < alpha <= 1.0:
        raise ValidationError(f"Tail level must be in (0, 1]; got {alpha}")
    # Guard against alpha * n landing a rounding error above an integer.
    return max(1, math.ceil(alpha * sample.size - 1e-9))


def empirical_var_cvar(sample, alpha: float) -> Tuple[float, float]:
    """Lower tail VaR and CVaR of a sample.

    The tail holds the ``ceil(alpha * n)`` smallest values; VaR is the largest
    value in the tail and CVaR the tail mean.
    """
    sample = np.asarray(sample, dtype=float).ravel()
    n_tail = _tail_size(sample, alpha)
    tail = np.partition(sample, n_tail - 1)[:n_tail]
    tail.sort()
    return float(tail[-1]), float(tail.mean())


def upper_var_cvar(sample, alpha: float) -> Tuple[float, float]:
    """Upper tail VaR and CVaR of a sample (mean of the ``ceil(alpha * n)``
    largest values)."""
    sample = np.asarray(sample, dtype=float).ravel()
    n_tail = _tail_size(sample, alpha)
    tail = -np.sort(-sample)[:n_tail]
    return float(tail[-1]), float(tail.mean())


def rockafellar_value(sample, alpha: float, threshold: float) -> float:
    """``threshold + mean(min(sample - threshold, 0)) / alpha``.

    Maximised over ``threshold`` this equals the lower tail CVaR of the sample.
    """
    sample = np.asarray(sample, dtype=float)
    return float(threshold + np.minimum(sample - threshold, 0.0).mean() / alpha)
