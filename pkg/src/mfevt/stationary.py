"""Stationary law of the rank-based system.

The stationary distribution function solves the autonomous ODE

    F'(x) = B_int(F(x)),      B_int(u) = integral of B over [0, u],

with the translation freedom fixed by F(anchor) = 1/2.  The solver is a
fixed-step classic Runge-Kutta sweep in both directions from the anchor,
extended until both tails are resolved below ``tail_eps``.  The density is
defined as f = B_int(F), i.e. exactly the ODE right-hand side, and the second
derivative needed for the Gumbel domain-of-attraction diagnostic is available
analytically as F'' = B(F) * B_int(F); no numerical differentiation is used
anywhere.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import DomainError, GridExtensionError, TailResolutionError

SIMPSON_TOL = 1e-10


def _simpson(f, a, fa, b, fb):
    m = 0.5 * (a + b)
    fm = f(m)
    return m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb)


def _adaptive_simpson(f, a, fa, b, fb, whole, m, fm, tol, depth):
    lm, flm, left = _simpson(f, a, fa, m, fm)
    rm, frm, right = _simpson(f, m, fm, b, fb)
    delta = left + right - whole
    if depth <= 0 or abs(delta) <= 15.0 * tol:
        return left + right + delta / 15.0
    return _adaptive_simpson(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1) + \
        _adaptive_simpson(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)


def adaptive_simpson(f: Callable[[float], float], a: float, b: float,
                     tol: float = SIMPSON_TOL) -> float:
    """Adaptive Simpson quadrature of f over [a, b] to absolute tolerance tol."""
    if b == a:
        return 0.0
    fa, fb = f(a), f(b)
    m, fm, whole = _simpson(f, a, fa, b, fb)
    return _adaptive_simpson(f, a, fa, b, fb, whole, m, fm, tol, depth=48)


def bfrak(drift_fn, u: float) -> float:
    """Integral of the drift over [0, u] for u in [0, 1].

    Uses the drift's exact antiderivative when it has one (registry
    polynomials do), otherwise adaptive Simpson at absolute tolerance 1e-10.
    """
    if not 0.0 <= u <= 1.0:
        raise DomainError(f"bfrak argument must lie in [0, 1], got {u}")
    if hasattr(drift_fn, "antiderivative"):
        return float(drift_fn.antiderivative(u))
    return adaptive_simpson(lambda r: float(drift_fn(r)), 0.0, float(u))


def _bfrak_unchecked(drift_fn):
    """ODE right-hand side; evaluated without the [0,1] domain guard so the
    RK4 stages tolerate round-off excursions just outside the interval."""
    if hasattr(drift_fn, "antiderivative"):
        return lambda u: float(drift_fn.antiderivative(u))
    return lambda u: adaptive_simpson(lambda r: float(drift_fn(r)), 0.0, float(u))


@dataclass(frozen=True)
class GridSpec:
    """Grid controls for the stationary ODE solve."""

    step: float = 0.01
    tail_eps: float = 1e-6
    max_steps: int = 200_000

    def __post_init__(self):
        if self.step <= 0 or self.tail_eps <= 0 or self.max_steps <= 0:
            raise DomainError("grid spec fields must be positive")


@dataclass(frozen=True)
class StationaryCdf:
    """Gridded distribution function with density f = B_int(F)."""

    grid_x: np.ndarray
    F: np.ndarray
    f: np.ndarray
    anchor: float

    @cached_property
    def _cdf_interp(self):
        return PchipInterpolator(self.grid_x, self.F, extrapolate=False)

    @cached_property
    def _pdf_interp(self):
        return PchipInterpolator(self.grid_x, self.f, extrapolate=False)

    @cached_property
    def _quantile_interp(self):
        # strictly increasing subsequence of F; flat stretches can appear in
        # the far tails once increments fall below float resolution
        keep = np.concatenate(([True], np.diff(self.F) > 0.0))
        return PchipInterpolator(self.F[keep], self.grid_x[keep], extrapolate=False)

    def cdf(self, x):
        """F evaluated at x; 0 below the grid, 1 above it."""
        x = np.asarray(x, dtype=float)
        out = self._cdf_interp(x)
        out = np.where(x < self.grid_x[0], 0.0, out)
        out = np.where(x > self.grid_x[-1], 1.0, out)
        return np.clip(out, 0.0, 1.0) if out.ndim else float(np.clip(out, 0.0, 1.0))

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.nan_to_num(self._pdf_interp(x), nan=0.0)
        return np.maximum(out, 0.0) if out.ndim else float(max(out, 0.0))

    def quantile(self, u):
        u_arr = np.asarray(u, dtype=float)
        lo, hi = self.F[0], self.F[-1]
        if np.any(u_arr < lo) or np.any(u_arr > hi):
            raise GridExtensionError(
                f"quantile argument outside resolved range [{lo:.3e}, {hi:.6f}]")
        out = self._quantile_interp(u_arr)
        return out if out.ndim else float(out)

    def quantile_clipped(self, u):
        """Quantile with u clipped into the resolved range.

        Bulk samplers use this; the clipping truncates at most the outermost
        ``tail_eps`` of mass per side.
        """
        return self._quantile_interp(np.clip(u, self.F[0], self.F[-1]))


def _rk4_sweep(rhs, f0, h, stop, max_steps):
    """Fixed-step RK4 of F' = rhs(F) from F(0)=f0 until stop(F); returns lists
    of x offsets (positive, in sweep direction) and F values, excluding the start."""
    xs, fs = [], []
    x, F = 0.0, f0
    for _ in range(max_steps):
        if stop(F):
            return xs, fs, True
        k1 = rhs(F)
        k2 = rhs(F + 0.5 * h * k1)
        k3 = rhs(F + 0.5 * h * k2)
        k4 = rhs(F + h * k3)
        F = F + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        x += abs(h)
        xs.append(x)
        fs.append(F)
    return xs, fs, False


def solve_stationary_cdf(drift_fn, grid: GridSpec = GridSpec(),
                         anchor_x: float = 0.0) -> StationaryCdf:
    """Solve F' = B_int(F) with F(anchor_x) = 1/2, resolving both tails.

    Raises TailResolutionError when the step budget runs out before the tails
    reach ``tail_eps`` (which happens for drifts whose integral does not
    vanish fast enough at the endpoints).
    """
    rhs = _bfrak_unchecked(drift_fn)
    h = grid.step
    up_x, up_f, ok_up = _rk4_sweep(rhs, 0.5, h, lambda F: F >= 1.0 - grid.tail_eps,
                                   grid.max_steps)
    dn_x, dn_f, ok_dn = _rk4_sweep(rhs, 0.5, -h, lambda F: F <= grid.tail_eps,
                                   grid.max_steps)
    if not (ok_up and ok_dn):
        raise TailResolutionError(
            f"tails not resolved to {grid.tail_eps:g} within {grid.max_steps} steps "
            f"per direction; drift integral may not vanish at the endpoints")
    grid_x = np.concatenate((-np.asarray(dn_x[::-1]), [0.0], np.asarray(up_x)))
    F = np.concatenate((np.asarray(dn_f[::-1]), [0.5], np.asarray(up_f)))
    F = np.clip(F, 0.0, 1.0)
    if hasattr(drift_fn, "antiderivative"):
        f = np.asarray(drift_fn.antiderivative(F), dtype=float)
    else:
        f = np.asarray([rhs(v) for v in F])
    f = np.maximum(f, 0.0)
    return StationaryCdf(grid_x=grid_x + anchor_x, F=F, f=f, anchor=float(anchor_x))


def inverse_cdf_sample(cdf: StationaryCdf, u: float) -> float:
    """Quantile of the gridded F by monotone interpolation."""
    if not 0.0 < u < 1.0:
        raise DomainError(f"quantile argument must lie in (0, 1), got {u}")
    return float(cdf.quantile(u))


def von_mises_limit(cdf: StationaryCdf, drift_fn, x: float) -> float:
    """Evaluate (1 - F) F'' / (F')^2 at x using F'' = B(F) * B_int(F).

    The expression simplifies to (1 - F) B(F) / B_int(F); it tends to -1 at
    the upper endpoint exactly when the stationary law is Gumbel-attracted.
    """
    F = float(cdf.cdf(x))
    if F >= 1.0 - 1e-12:
        raise DomainError("distribution function too close to 1; tail degenerate here")
    bf = bfrak(drift_fn, F)
    if bf <= 0.0:
        raise DomainError(f"drift integral vanishes at F={F:.6g}; diagnostic undefined")
    return (1.0 - F) * float(drift_fn(F)) / bf


def write_stationary_csv(path, cdf: StationaryCdf) -> None:
    """CSV with header x,F,f at 12 significant digits."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("x,F,f\n")
        for x, F, f in zip(cdf.grid_x, cdf.F, cdf.f):
            fh.write(f"{x:.12g},{F:.12g},{f:.12g}\n")
