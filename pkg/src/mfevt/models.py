"""Coefficient bundles for the interacting particle SDE.

A model packages the coefficients of

    dX_i = A(t, X_i)[ B(t, X_i, r_i) dt + dW_i ] + C(t, X_i) dt,
    r_i  = (1/N) sum_j g(t, X_i, X_j),

together with the closed-form law integral h(t, x) = E[g(t, x, Y)] of the
limiting dynamics, declared coefficient bounds, and vectorized fast paths for
the time-stepping engine.  Two models are built in:

* Ornstein-Uhlenbeck attraction to the empirical mean:
  A = sigma, B = -kappa (x - r) / sigma, C = 0, g = y.
* Rank-based drift through the empirical distribution function:
  the system dX_i = B(F_N(X_i)) dt + sqrt(2) dW_i.  In the generic form the
  volatility A = sqrt(2) multiplies the drift shape as well, so the stored
  shape is B(r)/sqrt(2); the product A*B then reproduces the rank drift
  exactly.

Coefficients receive paths as (time grid, value) histories to keep the
interface general, although both built-ins read only the current value.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import stationary
from .drifts import PolynomialDrift, drift_from_name
from .errors import DomainError, ModelInvalidError, ParameterError


@dataclass(frozen=True)
class PathSlice:
    """Discrete path history up to the current time."""

    times: np.ndarray
    values: np.ndarray

    @property
    def current(self) -> float:
        return float(self.values[-1])

    @staticmethod
    def point(t: float, x: float) -> "PathSlice":
        return PathSlice(np.asarray([t], dtype=float), np.asarray([x], dtype=float))


@dataclass(frozen=True)
class VectorizedHooks:
    """Array-valued coefficient evaluations used by the simulation engine.

    ``empirical_field`` maps ensemble values of shape (..., N) to the
    per-particle empirical interaction average of the same shape.  All other
    callables broadcast elementwise over plain value arrays.
    """

    a_const: float
    c_const: float
    bshape: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    d3b: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    g_pair: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    law_field: Callable[[float, np.ndarray], np.ndarray]
    empirical_field: Callable[[np.ndarray], np.ndarray]
    init_sampler: Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True)
class DriftInteractionModel:
    name: str
    volatility: Callable[[float, PathSlice], float]
    drift_shape: Callable[[float, PathSlice, float], float]
    drift_extra: Callable[[float, PathSlice], float]
    interaction: Callable[[float, PathSlice, PathSlice], float]
    drift_shape_deriv: Callable[[float, PathSlice, float], float]
    mean_interaction: Callable[[float, PathSlice], float]
    moment_envelope: Callable[[float], float]
    a_bound: float
    c_bound: float
    d3b_bound: float
    hooks: VectorizedHooks
    rebuild_spec: tuple = ()
    stationary_cdf: Optional[stationary.StationaryCdf] = field(default=None, repr=False)


@dataclass(frozen=True)
class OUModelParams:
    kappa: float
    sigma: float
    m0: float
    sigma0: float

    def __post_init__(self):
        vals = (self.kappa, self.sigma, self.m0, self.sigma0)
        if not all(isinstance(v, (int, float)) and math.isfinite(v) for v in vals):
            raise ParameterError("OU parameters must be finite numbers")
        if self.sigma <= 0:
            raise ParameterError(f"sigma must be positive, got {self.sigma}")
        if self.sigma0 <= 0:
            raise ParameterError(f"sigma0 must be positive, got {self.sigma0}")


@dataclass(frozen=True)
class RankBasedModelParams:
    drift_fn: Callable[[float], float]
    lipschitz_bound: float

    def __post_init__(self):
        if not callable(self.drift_fn):
            raise ParameterError("drift_fn must be callable")
        if not (isinstance(self.lipschitz_bound, (int, float))
                and math.isfinite(self.lipschitz_bound) and self.lipschitz_bound >= 0):
            raise ParameterError("lipschitz_bound must be a nonnegative finite number")


def ou_variance(params: OUModelParams, t: float) -> float:
    """Marginal variance of the limiting OU dynamics at time t.

    e^{-2 kappa t} sigma0^2 + (1 - e^{-2 kappa t}) sigma^2 / (2 kappa),
    continuously extended to sigma0^2 + sigma^2 t at kappa = 0.
    """
    if t < 0:
        raise DomainError(f"time must be nonnegative, got {t}")
    k, s, s0 = params.kappa, params.sigma, params.sigma0
    if k == 0.0:
        return s0 * s0 + s * s * t
    e = math.exp(-2.0 * k * t)
    return e * s0 * s0 - math.expm1(-2.0 * k * t) * s * s / (2.0 * k)


def ou_correlation(params: OUModelParams, s: float, t: float) -> float:
    """Correlation of the limiting OU marginals at ordered times s <= t."""
    if s < 0:
        raise DomainError(f"times must be nonnegative, got s={s}")
    if s > t:
        raise DomainError(f"arguments must be ordered, got s={s} > t={t}")
    if s == t:
        return 1.0
    k, sig, s0 = params.kappa, params.sigma, params.sigma0
    if k == 0.0:
        return math.sqrt((s0 * s0 + sig * sig * s) / (s0 * s0 + sig * sig * t))
    alpha = 2.0 * k * s0 * s0 / (sig * sig)
    return math.sqrt((alpha + math.expm1(2.0 * k * s)) / (alpha + math.expm1(2.0 * k * t)))


def _sorted_mean_field(values: np.ndarray) -> np.ndarray:
    # summing the sorted values makes the mean exactly permutation-invariant
    vals = np.asarray(values, dtype=float)
    n = vals.shape[-1]
    mean = np.sort(vals, axis=-1).sum(axis=-1, keepdims=True) / n
    return np.broadcast_to(mean, vals.shape)


def _rank_field(values: np.ndarray) -> np.ndarray:
    # F_N(X_i) = #{j : X_j <= X_i} / N, ties sharing the same value
    vals = np.asarray(values, dtype=float)
    flat = vals.reshape(-1, vals.shape[-1])
    out = np.empty_like(flat)
    for row in range(flat.shape[0]):
        srt = np.sort(flat[row])
        out[row] = np.searchsorted(srt, flat[row], side="right")
    return (out / vals.shape[-1]).reshape(vals.shape)


def build_ou_model(params: OUModelParams) -> DriftInteractionModel:
    """Mean-attracting Gaussian model: A=sigma, B=-kappa(x-r)/sigma, g=y."""
    k, sig, m0, _ = params.kappa, params.sigma, params.m0, params.sigma0

    def bshape(t, x, r):
        return -k * (np.asarray(x, dtype=float) - r) / sig

    def d3b(t, x, r):
        shape = np.broadcast_shapes(np.shape(x), np.shape(r))
        return np.full(shape, k / sig) if shape else k / sig

    hooks = VectorizedHooks(
        a_const=sig,
        c_const=0.0,
        bshape=bshape,
        d3b=d3b,
        g_pair=lambda t, x, y: np.asarray(y, dtype=float) + 0.0 * np.asarray(x, dtype=float),
        law_field=lambda t, x: np.full_like(np.asarray(x, dtype=float), m0),
        empirical_field=_sorted_mean_field,
        init_sampler=lambda gen, n: params.m0 + params.sigma0 * gen.standard_normal(n),
    )
    return DriftInteractionModel(
        name="ou",
        volatility=lambda t, path: sig,
        drift_shape=lambda t, path, r: -k * (path.current - r) / sig,
        drift_extra=lambda t, path: 0.0,
        interaction=lambda t, px, py: py.current,
        drift_shape_deriv=lambda t, path, r: k / sig,
        mean_interaction=lambda t, path: m0,
        moment_envelope=lambda t: 2.0 * (ou_variance(params, t) + m0 * m0),
        a_bound=sig,
        c_bound=0.0,
        d3b_bound=abs(k) / sig,
        hooks=hooks,
        rebuild_spec=("ou", params),
    )


def build_rank_model(params: RankBasedModelParams,
                     grid: stationary.GridSpec = stationary.GridSpec()) -> DriftInteractionModel:
    """Rank-based model driven through the empirical distribution function.

    Validates that the drift integral is positive on (0,1) and vanishes at 1
    (within 1e-8), solves the stationary law, and wires it in as the initial
    condition and as the closed-form law integral h(t, x) = F(x).
    """
    B = params.drift_fn
    b0, b1 = float(B(0.0)), float(B(1.0))
    if b0 == 0.0 or b1 == 0.0:
        raise ModelInvalidError("drift must not vanish at the endpoints 0 and 1")
    bf1 = stationary.bfrak(B, 1.0)
    if abs(bf1) > 1e-8:
        raise ModelInvalidError(
            f"drift integral over [0,1] must vanish, got {bf1:.3e}")
    interior = np.linspace(1e-3, 1.0 - 1e-3, 999)
    if hasattr(B, "antiderivative"):
        bf_vals = np.asarray(B.antiderivative(interior), dtype=float)
    else:
        bf_vals = np.asarray([stationary.bfrak(B, u) for u in interior])
    if np.any(bf_vals <= 0.0):
        raise ModelInvalidError("drift integral must be positive on (0, 1)")

    cdf = stationary.solve_stationary_cdf(B, grid)
    root2 = math.sqrt(2.0)

    if hasattr(B, "derivative"):
        def bprime(r):
            return B.derivative(r)
    else:
        def bprime(r):
            h = 1e-6
            lo, hi = np.clip(np.asarray(r) - h, 0.0, 1.0), np.clip(np.asarray(r) + h, 0.0, 1.0)
            return (np.asarray(B(hi)) - np.asarray(B(lo))) / (hi - lo)

    hooks = VectorizedHooks(
        a_const=root2,
        c_const=0.0,
        bshape=lambda t, x, r: np.asarray(B(r), dtype=float) / root2,
        d3b=lambda t, x, r: np.asarray(bprime(r), dtype=float) / root2,
        g_pair=lambda t, x, y: (np.asarray(y, dtype=float)
                                <= np.asarray(x, dtype=float)).astype(float),
        law_field=lambda t, x: cdf.cdf(np.asarray(x, dtype=float)),
        empirical_field=_rank_field,
        init_sampler=lambda gen, n: np.asarray(cdf.quantile_clipped(gen.random(n)), dtype=float),
    )
    label = getattr(B, "label", "") or "custom"
    return DriftInteractionModel(
        name=f"rank[{label}]",
        volatility=lambda t, path: root2,
        drift_shape=lambda t, path, r: float(B(r)) / root2,
        drift_extra=lambda t, path: 0.0,
        interaction=lambda t, px, py: 1.0 if py.current <= px.current else 0.0,
        drift_shape_deriv=lambda t, path, r: float(bprime(r)) / root2,
        mean_interaction=lambda t, path: float(cdf.cdf(path.current)),
        moment_envelope=lambda t: 1.0,
        a_bound=root2,
        c_bound=0.0,
        d3b_bound=params.lipschitz_bound / root2,
        hooks=hooks,
        rebuild_spec=("rank", params),
        stationary_cdf=cdf,
    )


def rank_params_from_name(name: str, lipschitz_bound: float | None = None) -> RankBasedModelParams:
    drift = drift_from_name(name)
    bound = drift.lipschitz_bound if lipschitz_bound is None else lipschitz_bound
    return RankBasedModelParams(drift_fn=drift, lipschitz_bound=bound)


def build_from_spec(spec: tuple) -> DriftInteractionModel:
    """Rebuild a model from its picklable (kind, params) spec."""
    kind, params = spec
    if kind == "ou":
        return build_ou_model(params)
    if kind == "rank":
        return build_rank_model(params)
    raise ParameterError(f"unknown model kind {kind!r}")


@dataclass(frozen=True)
class BoundCheck:
    name: str
    bound: float
    observed: float
    passed: bool


@dataclass(frozen=True)
class ValidationReport:
    model: str
    horizon: float
    checks: tuple[BoundCheck, ...]
    notes: tuple[str, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


_ANALYTIC_NOTES = {
    "ou": ("interaction g(t,x,y)=y is Gaussian under the limiting law, hence "
           "conditionally sub-Gaussian with bounded variance proxy; for i.i.d. "
           "copies the centered terms are pairwise independent with zero mean, "
           "so the even-moment envelope K(t)=2(sigma_t^2+m0^2) holds"),
    "rank": ("interaction is an indicator, bounded by 1; averages of centered "
             "bounded pairwise-independent terms satisfy the even-moment "
             "envelope with K(t)=1"),
}


def validate_assumptions(model: DriftInteractionModel, horizon: float,
                         n_times: int = 17, n_states: int = 41) -> ValidationReport:
    """Grid-sampled confirmation of the declared coefficient bounds.

    The report never raises; each check carries a pass/fail flag.
    """
    times = np.linspace(0.0, horizon, n_times)
    gen = np.random.Generator(np.random.Philox(key=[0xC0FFEE, 0]))
    draws = model.hooks.init_sampler(gen, 512)
    span = max(1.0, 1.5 * float(np.max(np.abs(draws))))
    states = np.linspace(-span, span, n_states)

    g_vals = model.hooks.g_pair(0.0, states[:, None], states[None, :])
    r_grid = np.linspace(float(np.min(g_vals)), float(np.max(g_vals)), 21)

    a_obs = max(abs(model.volatility(t, PathSlice.point(t, x)))
                for t in times for x in states[:: max(1, n_states // 9)])
    c_obs = max(abs(model.drift_extra(t, PathSlice.point(t, x)))
                for t in times for x in states[:: max(1, n_states // 9)])
    d3b_obs = 0.0
    for t in times:
        vals = np.abs(model.hooks.d3b(t, states[:, None], r_grid[None, :]))
        d3b_obs = max(d3b_obs, float(np.max(vals)))

    K = np.asarray([model.moment_envelope(t) for t in times])
    k_ok = bool(np.all(np.isfinite(K)) and np.all(K >= 0.0))
    k_jump = float(np.max(np.abs(np.diff(K)))) if len(K) > 1 else 0.0
    k_scale = 0.25 * (1.0 + float(np.max(K))) if k_ok else np.inf

    tol = 1e-9
    checks = (
        BoundCheck("volatility |A| bound", model.a_bound, float(a_obs),
                   a_obs <= model.a_bound + tol),
        BoundCheck("extra drift |C| bound", model.c_bound, float(c_obs),
                   c_obs <= model.c_bound + tol),
        BoundCheck("drift shape derivative bound", model.d3b_bound, d3b_obs,
                   d3b_obs <= model.d3b_bound + tol),
        BoundCheck("moment envelope continuity", k_scale, k_jump,
                   k_ok and k_jump <= k_scale),
    )
    kind = model.rebuild_spec[0] if model.rebuild_spec else ""
    notes = (_ANALYTIC_NOTES[kind],) if kind in _ANALYTIC_NOTES else ()
    return ValidationReport(model=model.name, horizon=horizon, checks=checks, notes=notes)
