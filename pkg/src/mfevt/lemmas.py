"""Exact and Monte Carlo verification of the combinatorial and analytic facts
behind the change-of-measure argument.

Exact checks
    * the two index-set conditions under which iterated-integral expectations
      vanish, and the exhaustive count of index configurations violating both;
    * the closed-form bound on that count;
    * the algebraic inequality controlling the binomial sum with rising
      factorials.

Monte Carlo checks
    * the density process Z = exp(M - <M>/2) built from the drift discrepancy
      between empirical and law interaction averages is a mean-one martingale;
    * reweighting i.i.d. paths by Z reproduces interacting-system tail
      probabilities;
    * iterated stochastic integrals of G^{ij} have zero expectation against
      index-compatible indicator products;
    * the L^{2p} norm of m-fold iterated integrals of M obeys the bound
      (C_T p sqrt(t-s))^m with C_T = 24 C e^2 sqrt(sup K).

Iterated integrals are discretized by left-point Euler sums on the dt grid,
the consistent choice for Ito integrals.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import combinations, product
from typing import Optional

import numpy as np
from scipy.stats import norm as _gaussian

from .errors import DomainError, EnumerationBudgetError, ParameterError
from .evt import gaussian_norm_constants
from .models import DriftInteractionModel, build_from_spec, ou_variance
from .sde import RngSpec, SimConfig, run_replicates

_BATCH = 2048
ZERO_EXP_MAX_SIZE = 3
ZERO_EXP_MAX_PARTICLES = 6
ENUMERATION_BUDGET = 10 ** 8
LOG_Z_CAP = 700.0  # beyond this exp overflows double precision


# ---------------------------------------------------------------------------
# index configurations and exact combinatorics


@dataclass(frozen=True)
class IndexConfig:
    """A subset K of [N] plus per-block index tuples, all 1-based."""

    n_particles: int
    K: frozenset
    i_tuples: tuple
    j_tuples: tuple

    def __post_init__(self):
        object.__setattr__(self, "K", frozenset(self.K))
        object.__setattr__(self, "i_tuples", tuple(tuple(t) for t in self.i_tuples))
        object.__setattr__(self, "j_tuples", tuple(tuple(t) for t in self.j_tuples))
        if len(self.i_tuples) != len(self.j_tuples) or not self.i_tuples:
            raise ParameterError("need equally many nonempty i and j tuples")
        if any(len(a) != len(b) for a, b in zip(self.i_tuples, self.j_tuples)):
            raise ParameterError("i and j tuples must agree in length per block")
        if any(len(t) == 0 for t in self.i_tuples):
            raise ParameterError("block sizes must be positive")
        if not self.K:
            raise ParameterError("K must be nonempty")
        allidx = set(self.K).union(*[set(t) for t in self.i_tuples + self.j_tuples])
        if not all(isinstance(i, int) and 1 <= i <= self.n_particles for i in allidx):
            raise ParameterError("all indices must lie in 1..n_particles")

    @property
    def n_blocks(self) -> int:
        return len(self.i_tuples)

    @property
    def block_sizes(self) -> tuple:
        return tuple(len(t) for t in self.i_tuples)

    @property
    def total_size(self) -> int:
        return sum(self.block_sizes)


def _cond1_forbidden(cfg: IndexConfig, beta: int, ell: int) -> set:
    # indices forbidden for i_{beta,ell} if condition 1 is to fail there (0-based block/slot)
    forb = set(cfg.K)
    forb.update(cfg.j_tuples[beta][:ell])
    for alpha in range(beta + 1, cfg.n_blocks):
        forb.update(cfg.j_tuples[alpha])
    return forb


def condition1_holds(cfg: IndexConfig) -> bool:
    """Some i_{beta,l0} avoids K, the earlier same-block j's, and all later j's."""
    for beta in range(cfg.n_blocks):
        for ell in range(len(cfg.i_tuples[beta])):
            if cfg.i_tuples[beta][ell] not in _cond1_forbidden(cfg, beta, ell):
                return True
    return False


def condition2_holds(cfg: IndexConfig) -> bool:
    """The last j of the first block avoids K, its predecessors, and later blocks."""
    j1 = cfg.j_tuples[0]
    forb = set(cfg.K)
    forb.update(j1[:-1])
    for alpha in range(1, cfg.n_blocks):
        forb.update(cfg.j_tuples[alpha])
    return j1[-1] not in forb


def counting_bound(n_particles: int, kappa: int, size: int) -> int:
    """binom(N, kappa) * kappa (kappa+1) ... (kappa+S) * N^{S-1}, exact."""
    if not 1 <= kappa <= n_particles:
        raise DomainError("need 1 <= kappa <= n_particles")
    if size < 1:
        raise DomainError("total block size must be at least 1")
    rising = 1
    for t in range(size + 1):
        rising *= kappa + t
    return math.comb(n_particles, kappa) * rising * n_particles ** (size - 1)


def enumerate_failing_configs(n_particles: int, block_sizes, kappa: int) -> int:
    """Exact count of (K, i-tuples, j-tuples) for which BOTH conditions fail.

    Enumerates K and the j-tuples; for fixed (K, j) the failing i-choices
    factorize slot by slot (condition 1 fails iff every slot draws from its
    own forbidden set), so they are counted by an exact product instead of
    being enumerated one by one.
    """
    block_sizes = tuple(int(k) for k in block_sizes)
    if not block_sizes or any(k < 1 for k in block_sizes):
        raise ParameterError("block sizes must be positive integers")
    if not 1 <= kappa <= n_particles:
        raise DomainError("need 1 <= kappa <= n_particles")
    S = sum(block_sizes)
    space = math.comb(n_particles, kappa) * n_particles ** (2 * S)
    if space > ENUMERATION_BUDGET:
        raise EnumerationBudgetError(
            f"enumeration space {space} exceeds budget {ENUMERATION_BUDGET}")

    n_blocks = len(block_sizes)
    total = 0
    indices = range(1, n_particles + 1)
    for K in combinations(indices, kappa):
        Kset = set(K)
        for flat_j in product(indices, repeat=S):
            j_tuples = []
            pos = 0
            for k in block_sizes:
                j_tuples.append(flat_j[pos:pos + k])
                pos += k
            # condition 2 must fail: last j of block 1 inside the forbidden set
            forb2 = Kset.union(j_tuples[0][:-1])
            for alpha in range(1, n_blocks):
                forb2.update(j_tuples[alpha])
            if j_tuples[0][-1] not in forb2:
                continue
            # condition 1 must fail at every slot: multiply forbidden-set sizes
            ways = 1
            for beta in range(n_blocks):
                later = set()
                for alpha in range(beta + 1, n_blocks):
                    later.update(j_tuples[alpha])
                for ell in range(block_sizes[beta]):
                    forb1 = Kset.union(j_tuples[beta][:ell], later)
                    ways *= len(forb1)
            total += ways
    return total


@dataclass(frozen=True)
class Alg45Result:
    lhs: float
    rhs: float
    holds: bool


def _log_rising(kappa: int, size: int) -> float:
    return math.lgamma(kappa + size + 1) - math.lgamma(kappa)


def alg45_check(c: float, n_particles: int, size: int) -> Alg45Result:
    """Check the binomial/rising-factorial sum against its closed-form bound.

    lhs = sum_{kappa=1}^{N} binom(N,kappa) kappa...(kappa+S) (C/N)^{kappa(1-1/ln N)}
    rhs = (S+2)(S+1)^{2(S+1)} e^{Ce} (Ce)^{S+1}; the bound has no N dependence.
    """
    if not c > 1.0:
        raise DomainError("constant must exceed 1")
    if n_particles < 2:
        raise DomainError("need at least 2 particles so ln N > 0")
    if size < 1:
        raise DomainError("S must be at least 1")
    expo = 1.0 - 1.0 / math.log(n_particles)
    ce = c * math.e
    log_rhs = (math.log(size + 2) + 2 * (size + 1) * math.log(size + 1)
               + ce + (size + 1) * math.log(ce))
    rhs = math.exp(log_rhs) if log_rhs < LOG_Z_CAP else math.inf
    if n_particles <= 300:
        # binomials up to comb(300, 150) fit comfortably in a double
        lhs = 0.0
        for kappa in range(1, n_particles + 1):
            rising = 1
            for t in range(size + 1):
                rising *= kappa + t
            lhs += (math.comb(n_particles, kappa) * rising
                    * (c / n_particles) ** (kappa * expo))
        return Alg45Result(lhs=lhs, rhs=rhs, holds=lhs <= rhs)
    log_ratio = math.log(c) - math.log(n_particles)
    log_terms = [
        math.lgamma(n_particles + 1) - math.lgamma(kappa + 1)
        - math.lgamma(n_particles - kappa + 1)
        + _log_rising(kappa, size)
        + kappa * expo * log_ratio
        for kappa in range(1, n_particles + 1)]
    peak = max(log_terms)
    log_lhs = peak + math.log(sum(math.exp(v - peak) for v in log_terms))
    lhs = math.exp(log_lhs) if log_lhs < LOG_Z_CAP else math.inf
    return Alg45Result(lhs=lhs, rhs=rhs, holds=log_lhs <= log_rhs)


# ---------------------------------------------------------------------------
# density process and Girsanov reweighting


@dataclass(frozen=True)
class DensityPath:
    """One path of the accumulated reweighting martingale and its exponential."""

    times: np.ndarray
    M: np.ndarray
    quad_var: np.ndarray
    Z: np.ndarray
    capped: bool

    def __post_init__(self):
        if not (len(self.times) == len(self.M) == len(self.quad_var) == len(self.Z)):
            raise ParameterError("density path arrays must align")
        if self.Z[0] != 1.0 or np.any(np.diff(self.quad_var) < 0):
            raise ParameterError("density path must start at Z=1 with nondecreasing <M>")


def _law_drift(hooks, t, x):
    h = hooks.law_field(t, x)
    return hooks.a_const * hooks.bshape(t, x, h) + hooks.c_const


def simulate_density_process(model: DriftInteractionModel, config: SimConfig,
                             rng: RngSpec, replicate: int = 0) -> DensityPath:
    """One replicate of the i.i.d. system with the running density statistics."""
    hooks = model.hooks
    n, dt = config.n_particles, config.dt
    gen = rng.generator(replicate)
    x = hooks.init_sampler(gen, n)
    sqdt = math.sqrt(dt)
    times = [0.0]
    M = [0.0]
    qv = [0.0]
    for k in range(config.n_steps):
        t = k * dt
        noise = gen.standard_normal(n)
        h_emp = hooks.empirical_field(x)
        h_law = hooks.law_field(t, x)
        delta_b = hooks.bshape(t, x, h_emp) - hooks.bshape(t, x, h_law)
        M.append(M[-1] + float(np.dot(delta_b, noise)) * sqdt)
        qv.append(qv[-1] + float(np.dot(delta_b, delta_b)) * dt)
        x = x + _law_drift(hooks, t, x) * dt + hooks.a_const * sqdt * noise
        times.append((k + 1) * dt)
    M = np.asarray(M)
    qv = np.asarray(qv)
    log_z = M - 0.5 * qv
    capped = bool(np.any(log_z > LOG_Z_CAP))
    Z = np.exp(np.minimum(log_z, LOG_Z_CAP))
    return DensityPath(times=np.asarray(times), M=M, quad_var=qv, Z=Z, capped=capped)


@dataclass(frozen=True)
class DensityMcResult:
    z_final: np.ndarray
    first_final: np.ndarray
    capped: np.ndarray
    mean_z: float
    se_z: float

    @property
    def n_capped(self) -> int:
        return int(np.count_nonzero(self.capped))


def _density_batch(model, config, rng, rep_lo, rep_hi):
    hooks = model.hooks
    n, dt, steps = config.n_particles, config.dt, config.n_steps
    gens = [rng.generator(r) for r in range(rep_lo, rep_hi)]
    B = rep_hi - rep_lo
    x = np.stack([hooks.init_sampler(g, n) for g in gens])
    noise = np.empty((B, steps, n))
    for idx, g in enumerate(gens):
        noise[idx] = g.standard_normal((steps, n))
    M = np.zeros(B)
    qv = np.zeros(B)
    sqdt = math.sqrt(dt)
    for k in range(steps):
        t = k * dt
        xi = noise[:, k, :]
        h_emp = hooks.empirical_field(x)
        h_law = hooks.law_field(t, x)
        delta_b = hooks.bshape(t, x, h_emp) - hooks.bshape(t, x, h_law)
        M += (delta_b * xi).sum(axis=1) * sqdt
        qv += (delta_b * delta_b).sum(axis=1) * dt
        x = x + _law_drift(hooks, t, x) * dt + hooks.a_const * sqdt * xi
    log_z = M - 0.5 * qv
    capped = log_z > LOG_Z_CAP
    z = np.exp(np.minimum(log_z, LOG_Z_CAP))
    return z, x[:, 0], capped


def _density_batch_from_spec(spec, config, rng, rep_lo, rep_hi):
    return _density_batch(build_from_spec(spec), config, rng, rep_lo, rep_hi)


def density_mc(model: DriftInteractionModel, config: SimConfig, rng: RngSpec,
               workers: int = 1) -> DensityMcResult:
    """Monte Carlo over replicates of the terminal density value Z_T.

    Overflow-capped paths are excluded from the mean and counted separately.
    """
    bounds = [(lo, min(lo + _BATCH, config.n_reps))
              for lo in range(0, config.n_reps, _BATCH)]
    if workers <= 1:
        parts = [_density_batch(model, config, rng, lo, hi) for lo, hi in bounds]
    else:
        if not model.rebuild_spec:
            raise ParameterError("model has no rebuild spec; cannot parallelize")
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_density_batch_from_spec, model.rebuild_spec,
                                   config, rng, lo, hi) for lo, hi in bounds]
            parts = [f.result() for f in futures]
    z = np.concatenate([p[0] for p in parts])
    first = np.concatenate([p[1] for p in parts])
    capped = np.concatenate([p[2] for p in parts])
    good = z[~capped]
    mean = float(np.mean(good)) if good.size else math.nan
    se = float(np.std(good, ddof=1) / math.sqrt(good.size)) if good.size > 1 else math.nan
    return DensityMcResult(z_final=z, first_final=first, capped=capped,
                           mean_z=mean, se_z=se)


@dataclass(frozen=True)
class GirsanovResult:
    lhs: float
    rhs: float
    se: float
    se_lhs: float
    se_rhs: float
    n_capped: int


def girsanov_consistency(model: DriftInteractionModel, config: SimConfig,
                         rng: RngSpec, threshold: float,
                         workers: int = 1) -> GirsanovResult:
    """Compare E[1{X^1_T > q} Z_T] under the i.i.d. law with the direct
    interacting-system probability of the same tail event.

    The two estimates use independent streams (stream_id offset by 1 for the
    interacting run); the combined standard error is returned.
    """
    dens = density_mc(model, config, rng, workers=workers)
    ok = ~dens.capped
    w = dens.z_final[ok] * (dens.first_final[ok] > threshold)
    lhs = float(np.mean(w))
    se_lhs = float(np.std(w, ddof=1) / math.sqrt(w.size))
    firsts = run_replicates(model, config, rng.substream(1), [config.horizon],
                            reducer="first", workers=workers)[:, 0]
    hits = (firsts > threshold).astype(float)
    rhs = float(np.mean(hits))
    se_rhs = float(np.std(hits, ddof=1) / math.sqrt(hits.size))
    return GirsanovResult(lhs=lhs, rhs=rhs, se=math.hypot(se_lhs, se_rhs),
                          se_lhs=se_lhs, se_rhs=se_rhs, n_capped=dens.n_capped)


# ---------------------------------------------------------------------------
# zero-expectation and iterated L^p Monte Carlo


@dataclass(frozen=True)
class GProcessSpec:
    """The interaction fluctuation process G^{ij} attached to a model.

    G^{ij}_t = D3B(t, X^i, h(t, X^i)) * (g(t, X^i, X^j) - h(t, X^i)), with h
    the closed-form law integral of g.
    """

    model: DriftInteractionModel


def tail_threshold(model: DriftInteractionModel, t: float, n: int) -> float:
    """A threshold x_n with P(X_t > x_n) of order 1/n for the built-in models."""
    kind = model.rebuild_spec[0] if model.rebuild_spec else ""
    if kind == "ou":
        params = model.rebuild_spec[1]
        sd = math.sqrt(ou_variance(params, t))
        try:
            return gaussian_norm_constants(n, params.m0, sd).b
        except DomainError:
            # population too small for the Gumbel constants; use the exact
            # 1 - 1/n Gaussian quantile, which serves the same purpose
            return params.m0 + sd * float(_gaussian.ppf(1.0 - 1.0 / n))
    if model.stationary_cdf is not None:
        return float(model.stationary_cdf.quantile(1.0 - 1.0 / n))
    raise ParameterError("no tail threshold rule for this model")


@dataclass(frozen=True)
class ZeroExpResult:
    estimate: float
    se: float
    reps: int
    threshold: float


def _partition_steps(partition, dt):
    marks = [float(v) for v in partition]
    if len(marks) < 2 or marks[0] != 0.0 or any(b <= a for a, b in zip(marks, marks[1:])):
        raise ParameterError("partition must increase strictly from 0")
    steps = []
    for v in marks:
        k = round(v / dt)
        if abs(k * dt - v) > 1e-9 * max(1.0, v):
            raise ParameterError(f"partition point {v} is not on the dt grid")
        steps.append(k)
    return steps


def zero_expectation_mc(gspec: GProcessSpec, cfg: IndexConfig, partition,
                        reps: int, rng: RngSpec, dt: float = 0.002,
                        threshold: Optional[float] = None) -> ZeroExpResult:
    """Estimate E[Psi * prod_blocks I_block] by Monte Carlo.

    Psi is the product of tail indicators over K at the final time; each block
    integral iterates G^{ij} against the Brownian motions of the i indices
    over its own subinterval, discretized by left-point Euler sums.
    """
    model = gspec.model
    hooks = model.hooks
    if cfg.total_size > ZERO_EXP_MAX_SIZE or cfg.n_particles > ZERO_EXP_MAX_PARTICLES:
        raise EnumerationBudgetError(
            f"config too large: need total size <= {ZERO_EXP_MAX_SIZE} and "
            f"n_particles <= {ZERO_EXP_MAX_PARTICLES}")
    if len(partition) != cfg.n_blocks + 1:
        raise ParameterError("partition must have one boundary per block plus the origin")
    if reps < 2:
        raise ParameterError("need at least 2 replicates")
    marks = _partition_steps(partition, dt)
    horizon = float(partition[-1])
    n = cfg.n_particles
    if threshold is None:
        threshold = tail_threshold(model, horizon, n)
    sqdt = math.sqrt(dt)
    n_steps = marks[-1]

    stats = np.empty(reps)
    pos = 0
    for lo in range(0, reps, _BATCH):
        hi = min(lo + _BATCH, reps)
        B = hi - lo
        gens = [rng.generator(r) for r in range(lo, hi)]
        x = np.stack([hooks.init_sampler(g, n) for g in gens])
        noise = np.empty((B, n_steps, n))
        for idx, g in enumerate(gens):
            noise[idx] = g.standard_normal((n_steps, n))
        levels = [np.zeros((B, k)) for k in cfg.block_sizes]
        for k in range(n_steps):
            t = k * dt
            xi = noise[:, k, :]
            for beta in range(cfg.n_blocks):
                if not marks[beta] <= k < marks[beta + 1]:
                    continue
                I = levels[beta]
                k_beta = cfg.block_sizes[beta]
                for ell in range(k_beta):
                    i_idx = cfg.i_tuples[beta][ell] - 1
                    j_idx = cfg.j_tuples[beta][ell] - 1
                    xi_col = x[:, i_idx]
                    h = hooks.law_field(t, xi_col)
                    g_val = hooks.g_pair(t, xi_col, x[:, j_idx])
                    G = hooks.d3b(t, xi_col, h) * (g_val - h)
                    inner = I[:, ell + 1] if ell + 1 < k_beta else 1.0
                    I[:, ell] = I[:, ell] + G * inner * (sqdt * xi[:, i_idx])
            x = x + _law_drift(hooks, t, x) * dt + hooks.a_const * sqdt * xi
        psi = np.ones(B)
        for idx in sorted(cfg.K):
            psi *= (x[:, idx - 1] > threshold).astype(float)
        prod = psi
        for beta in range(cfg.n_blocks):
            prod = prod * levels[beta][:, 0]
        stats[pos:pos + B] = prod
        pos += B
    estimate = float(np.mean(stats))
    se = float(np.std(stats, ddof=1) / math.sqrt(reps))
    return ZeroExpResult(estimate=estimate, se=se, reps=reps, threshold=float(threshold))


@dataclass(frozen=True)
class LpResult:
    norm_estimate: float
    bound: float
    constant: float


def lp_constant(model: DriftInteractionModel, horizon: float) -> float:
    """C_T = 24 C e^2 sqrt(sup K) from the declared model bounds."""
    grid = np.linspace(0.0, horizon, 1001)
    sup_k = max(model.moment_envelope(float(u)) for u in grid)
    return 24.0 * model.d3b_bound * math.e ** 2 * math.sqrt(sup_k)


def iterated_lp_mc(model: DriftInteractionModel, n_particles: int, m: int, p: int,
                   s: float, t: float, reps: int, rng: RngSpec,
                   dt: float = 0.002) -> LpResult:
    """Monte Carlo L^{2p} norm of the m-fold iterated integral of M on [s, t],
    against the closed-form bound (C_T p sqrt(t-s))^m."""
    if m not in (0, 1, 2):
        raise ParameterError("m must be 0, 1 or 2")
    if p not in (1, 2):
        raise ParameterError("p must be 1 or 2")
    if not 0.0 <= s < t:
        raise DomainError("need 0 <= s < t")
    c_t = lp_constant(model, t)
    bound = (c_t * p * math.sqrt(t - s)) ** m
    if m == 0:
        return LpResult(norm_estimate=1.0, bound=bound, constant=c_t)
    hooks = model.hooks
    k_lo = round(s / dt)
    k_hi = round(t / dt)
    if abs(k_lo * dt - s) > 1e-9 * max(1.0, s) or abs(k_hi * dt - t) > 1e-9 * max(1.0, t):
        raise ParameterError("s and t must lie on the dt grid")
    sqdt = math.sqrt(dt)
    acc = np.empty(reps)
    pos = 0
    for lo in range(0, reps, _BATCH):
        hi = min(lo + _BATCH, reps)
        B = hi - lo
        gens = [rng.generator(r) for r in range(lo, hi)]
        x = np.stack([hooks.init_sampler(g, n_particles) for g in gens])
        noise = np.empty((B, k_hi, n_particles))
        for idx, g in enumerate(gens):
            noise[idx] = g.standard_normal((k_hi, n_particles))
        I = np.zeros((B, m))
        for k in range(k_hi):
            tk = k * dt
            xi = noise[:, k, :]
            if k >= k_lo:
                h_emp = hooks.empirical_field(x)
                h_law = hooks.law_field(tk, x)
                delta_b = hooks.bshape(tk, x, h_emp) - hooks.bshape(tk, x, h_law)
                dM = (delta_b * xi).sum(axis=1) * sqdt
                for ell in range(m):
                    inner = I[:, ell + 1] if ell + 1 < m else 1.0
                    I[:, ell] = I[:, ell] + inner * dM
            x = x + _law_drift(hooks, tk, x) * dt + hooks.a_const * sqdt * xi
        acc[pos:pos + B] = I[:, 0]
        pos += B
    norm_estimate = float(np.mean(np.abs(acc) ** (2 * p)) ** (1.0 / (2 * p)))
    return LpResult(norm_estimate=norm_estimate, bound=bound, constant=c_t)
