"""Extreme-value statistics for replicate maxima.

Normalizing constants follow the classical conventions: for a Gaussian
marginal with mean m and standard deviation s,

    b_std = sqrt(2 ln n - ln ln n - ln 4 pi),
    a = s / b_std,   b = m + s * b_std,

and for a gridded distribution function F the quantile-based choice

    b = F^{-1}(1 - 1/n),   a = 1 / (n f(b)).

All logarithms are natural.  Distances are raw sup-norm statistics; no
p-values are computed, acceptance thresholds are fixed numbers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, GridExtensionError
from .stationary import StationaryCdf

LIMIT_FAMILIES = ("gumbel", "weibull", "frechet")


@dataclass(frozen=True)
class NormalizingConstants:
    a: float
    b: float
    n: int

    def __post_init__(self):
        if not (self.a > 0 and math.isfinite(self.a) and math.isfinite(self.b)):
            raise DomainError("scale must be positive and both constants finite")


@dataclass(frozen=True)
class MaximaSample:
    raw: np.ndarray
    normalized: np.ndarray
    constants: NormalizingConstants


@dataclass(frozen=True)
class EvtReport:
    ks_vs_limit: float
    ks_two_sample: float
    n_particles: int
    n_reps: int
    constants: NormalizingConstants
    limit_family: str
    joint_independence_distance: Optional[float] = None


def gaussian_norm_constants(n: int, mean: float, sd: float) -> NormalizingConstants:
    """Gumbel-attraction constants for the maximum of n Gaussian draws."""
    if n < 2:
        raise DomainError("population size must be at least 2")
    if sd <= 0:
        raise DomainError("sd must be positive")
    radicand = 2.0 * math.log(n) - math.log(math.log(n)) - math.log(4.0 * math.pi)
    if radicand <= 0.0:
        raise DomainError(
            f"population too small for Gaussian norming constants (n={n}); need n >= 5")
    b_std = math.sqrt(radicand)
    return NormalizingConstants(a=sd / b_std, b=mean + sd * b_std, n=n)


def norm_constants_from_cdf(cdf: StationaryCdf, n: int) -> NormalizingConstants:
    """Quantile-based constants b = F^{-1}(1 - 1/n), a = 1/(n f(b))."""
    if n < 2:
        raise DomainError("population size must be at least 2")
    u = 1.0 - 1.0 / n
    if not cdf.F[0] <= u <= cdf.F[-1]:
        raise GridExtensionError(
            f"quantile level {u:.8g} outside the resolved range of the grid")
    b = float(cdf.quantile(u))
    fb = float(cdf.pdf(b))
    if fb <= 0.0:
        raise GridExtensionError("density vanishes at the norming quantile")
    return NormalizingConstants(a=1.0 / (n * fb), b=b, n=n)


def normalize_maxima(raw_maxima, constants: NormalizingConstants) -> MaximaSample:
    raw = np.asarray(raw_maxima, dtype=float)
    return MaximaSample(raw=raw, normalized=(raw - constants.b) / constants.a,
                        constants=constants)


def gumbel_cdf(x):
    """Standard Gumbel distribution function exp(-e^{-x})."""
    return np.exp(-np.exp(-np.asarray(x, dtype=float))) if np.ndim(x) \
        else math.exp(-math.exp(-x))


def limit_cdf(family: str, x, alpha: float = 1.0):
    """CDF of a standard extreme-value limit law; evaluation only, no fitting."""
    if family == "gumbel":
        return gumbel_cdf(x)
    x = np.asarray(x, dtype=float)
    if family == "weibull":
        out = np.where(x < 0, np.exp(-np.abs(-np.minimum(x, 0.0)) ** alpha), 1.0)
    elif family == "frechet":
        with np.errstate(divide="ignore"):
            out = np.where(x > 0, np.exp(-np.maximum(x, 1e-300) ** -alpha), 0.0)
    else:
        raise DomainError(f"unknown limit family {family!r}")
    return out if out.ndim else float(out)


def ks_one_sample(sample, cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """Sup distance between the sample ECDF and a reference CDF."""
    x = np.sort(np.asarray(sample, dtype=float))
    n = x.size
    if n == 0:
        raise DomainError("sample must be nonempty")
    F = np.asarray(cdf(x), dtype=float)
    grid = np.arange(1, n + 1) / n
    return float(max(np.max(grid - F), np.max(F - (grid - 1.0 / n))))


def ks_two_sample(x, y) -> float:
    """Sup distance between two empirical CDFs."""
    x = np.sort(np.asarray(x, dtype=float))
    y = np.sort(np.asarray(y, dtype=float))
    if x.size == 0 or y.size == 0:
        raise DomainError("both samples must be nonempty")
    support = np.concatenate([x, y])
    fx = np.searchsorted(x, support, side="right") / x.size
    fy = np.searchsorted(y, support, side="right") / y.size
    return float(np.max(np.abs(fx - fy)))


def joint_independence_report(maxima_t1, maxima_t2, grid) -> float:
    """Sup over the grid of |joint ECDF - product of marginal ECDFs|.

    The two sequences must be paired by replicate.  A value near zero is the
    signature of asymptotically independent maxima at the two times.
    """
    m1 = np.asarray(maxima_t1, dtype=float)
    m2 = np.asarray(maxima_t2, dtype=float)
    if m1.shape != m2.shape or m1.ndim != 1:
        raise DomainError("paired maxima sequences must be 1-d and equally long")
    if m1.size == 0:
        raise DomainError("samples must be nonempty")
    worst = 0.0
    n = m1.size
    for x1, x2 in grid:
        le1 = m1 <= x1
        le2 = m2 <= x2
        joint = np.count_nonzero(le1 & le2) / n
        prod = (np.count_nonzero(le1) / n) * (np.count_nonzero(le2) / n)
        worst = max(worst, abs(joint - prod))
    return worst


def default_joint_grid(probs=(0.1, 0.3, 0.5, 0.7, 0.9)) -> tuple:
    """Grid of Gumbel-quantile pairs for the joint independence diagnostic."""
    q = [-math.log(-math.log(p)) for p in probs]
    return tuple((x1, x2) for x1 in q for x2 in q)


def write_maxima_csv(path, sample: MaximaSample) -> None:
    """CSV with header rep,raw_max,norm_max."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("rep,raw_max,norm_max\n")
        for rep, (r, z) in enumerate(zip(sample.raw, sample.normalized)):
            fh.write(f"{rep},{float(r)!r},{float(z)!r}\n")
