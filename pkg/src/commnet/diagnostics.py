"""Convergence diagnostics for scalar chain series.

Effective sample size via the initial positive sequence of
autocovariance pairs (Geyer), sample autocorrelations, the Geweke
early/late mean comparison, and the accuracy-weighted effective sample
size used to rank initialization strategies in simulation studies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import next_fast_len


@dataclass(frozen=True)
class EssEstimate:
    """Effective sample size, with a marker for series the estimator
    cannot grade because they carry no variance at all."""

    value: float
    degenerate: bool

    def __float__(self) -> float:
        return float(self.value)


@dataclass(frozen=True)
class AccuracyWeightedEss:
    """Effective sample size divided by squared estimation error.

    ``exact`` marks the entries where the posterior mean hit the truth
    exactly; their ratio is reported as infinity.
    """

    ratio: np.ndarray
    exact: np.ndarray


def _as_series(series) -> np.ndarray:
    x = np.asarray(series, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise ValueError("series must be finite")
    return x


def _autocovariances(x: np.ndarray, max_lag: int) -> np.ndarray:
    """Biased sample autocovariances at lags 0..max_lag, via the FFT."""
    n = x.size
    centered = x - x.mean()
    size = next_fast_len(2 * n)
    spectrum = np.fft.rfft(centered, size)
    acov = np.fft.irfft(spectrum * np.conj(spectrum), size)[: max_lag + 1]
    return acov / n


def _initial_positive_variance(gamma: np.ndarray) -> float:
    """Long-run variance from adjacent autocovariance pairs, summed
    while the pair sums stay positive."""
    total = -gamma[0]
    m = 0
    while 2 * m + 1 < gamma.size:
        pair = gamma[2 * m] + gamma[2 * m + 1]
        if pair <= 0:
            break
        total += 2.0 * pair
        m += 1
    return total


def ess(series) -> EssEstimate:
    """Effective sample size from the initial positive sequence.

    Adjacent autocovariance pairs are accumulated while their sums stay
    positive, the resulting long-run variance is compared against the
    marginal variance, and the series length is discounted by that
    ratio.  A constant series carries no mixing information, so it
    comes back flagged as degenerate with the value pinned at the
    series length.
    """
    x = _as_series(series)
    n = x.size
    if n < 10:
        raise ValueError(f"need a series of at least 10 points, got {n}")
    if np.ptp(x) == 0:
        return EssEstimate(value=float(n), degenerate=True)
    gamma = _autocovariances(x, n - 1)
    if not gamma[0] > 0:
        return EssEstimate(value=float(n), degenerate=True)
    longrun = _initial_positive_variance(gamma)
    if longrun <= 0:
        return EssEstimate(value=float(n), degenerate=False)
    return EssEstimate(value=float(n * gamma[0] / longrun), degenerate=False)


def acf(series, max_lag: int) -> np.ndarray:
    """Sample autocorrelation at lags 0 through max_lag.

    The lag-0 value is exactly one by construction.
    """
    x = _as_series(series)
    if max_lag < 0:
        raise ValueError(f"max_lag must be nonnegative, got {max_lag}")
    if x.size <= max_lag:
        raise ValueError(
            f"series of length {x.size} cannot support lag {max_lag}"
        )
    if np.ptp(x) == 0:
        raise ValueError("autocorrelation is undefined for a constant series")
    gamma = _autocovariances(x, max_lag)
    if not gamma[0] > 0:
        raise ValueError("autocorrelation is undefined for a constant series")
    return gamma / gamma[0]


def _window_variance(window: np.ndarray) -> float:
    if np.ptp(window) == 0:
        raise ValueError("constant window makes the z-score degenerate")
    gamma = _autocovariances(window, window.size - 1)
    if not gamma[0] > 0:
        raise ValueError("constant window makes the z-score degenerate")
    longrun = _initial_positive_variance(gamma)
    return longrun if longrun > 0 else float(gamma[0])


def geweke(series, frac_a: float = 0.1, frac_b: float = 0.5) -> float:
    """Z-score comparing the mean of an early window against a late one.

    The first ``frac_a`` of the series is compared with the last
    ``frac_b``.  Each window mean is standardized by a long-run variance
    from the same initial-positive-sequence estimator that backs
    :func:`ess`, so autocorrelation inside the windows widens the
    denominator instead of inflating the score.
    """
    x = _as_series(series)
    n = x.size
    if n < 100:
        raise ValueError(f"need a series of at least 100 points, got {n}")
    if not (0.0 < frac_a and 0.0 < frac_b and frac_a + frac_b <= 1.0):
        raise ValueError(
            "window fractions must be positive and sum to at most one"
        )
    head = x[: int(round(frac_a * n))]
    tail = x[n - int(round(frac_b * n)):]
    spread = _window_variance(head) / head.size
    spread += _window_variance(tail) / tail.size
    return float((head.mean() - tail.mean()) / np.sqrt(spread))


def ess_per_error(draws, truth) -> AccuracyWeightedEss:
    """Effective sample size per unit of squared estimation error.

    ``draws`` holds one series per coefficient along its first axis;
    ``truth`` broadcasts against the remaining axes.  Chains that both
    mix well and land close to the truth score high.  Coefficients
    recovered exactly divide by zero, so they are reported as infinite
    and marked in the ``exact`` mask.
    """
    arr = np.asarray(draws, dtype=float)
    if arr.ndim == 0:
        raise ValueError("draws must have an iteration axis")
    shape = arr.shape[1:]
    target = np.broadcast_to(np.asarray(truth, dtype=float), shape)
    flat = arr.reshape(arr.shape[0], -1)
    errors = (flat.mean(axis=0) - target.ravel()) ** 2
    mixing = np.array([ess(flat[:, j]).value for j in range(flat.shape[1])])
    exact = errors == 0.0
    ratio = np.where(exact, np.inf, mixing / np.where(exact, 1.0, errors))
    return AccuracyWeightedEss(
        ratio=ratio.reshape(shape), exact=exact.reshape(shape)
    )
