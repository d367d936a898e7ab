"""Time stepping of the interacting system and reference i.i.d. samplers.

Euler-Maruyama is the only scheme: the update per particle is

    X <- X + [A * B(t, X, H) + C] dt + A sqrt(dt) xi,

with H the per-particle empirical interaction average.  Randomness comes from
counter-based Philox streams keyed by (master_seed, stream_id) with the
replicate index placed in the counter block, so every replicate owns an
independent stream and results cannot depend on how replicates are batched or
spread across worker processes.  Within a replicate the draw order is fixed:
one block of N initial-condition draws, then N standard normals per step.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericOverflowError, ParameterError
from .models import DriftInteractionModel, OUModelParams, build_from_spec, ou_variance, \
    ou_correlation
from .stationary import StationaryCdf

BATCH_REPS = 64


@dataclass(frozen=True)
class RngSpec:
    """Seed material for reproducible, splittable random streams."""

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        for label, v in (("master_seed", self.master_seed), ("stream_id", self.stream_id)):
            if not isinstance(v, int) or not 0 <= v < 2 ** 64:
                raise ParameterError(f"{label} must be an integer in [0, 2^64)")

    def generator(self, replicate: int = 0) -> np.random.Generator:
        if not 0 <= replicate < 2 ** 64:
            raise ParameterError("replicate index out of range")
        bg = np.random.Philox(key=[self.master_seed, self.stream_id],
                              counter=[0, 0, replicate, 0])
        return np.random.Generator(bg)

    def substream(self, offset: int) -> "RngSpec":
        return RngSpec(self.master_seed, self.stream_id + offset)


@dataclass(frozen=True)
class SimConfig:
    n_particles: int
    dt: float
    horizon: float
    n_reps: int
    seed: int
    scheme: str = "euler"

    def __post_init__(self):
        if not (isinstance(self.n_particles, int) and self.n_particles >= 1):
            raise ParameterError("n_particles must be a positive integer")
        if not (isinstance(self.n_reps, int) and self.n_reps >= 1):
            raise ParameterError("n_reps must be a positive integer")
        if not (self.dt > 0 and self.horizon > 0):
            raise ParameterError("dt and horizon must be positive")
        if self.dt > self.horizon:
            raise ParameterError("dt must not exceed horizon")
        if self.scheme != "euler":
            raise ParameterError(f"unsupported scheme {self.scheme!r}")
        steps = round(self.horizon / self.dt)
        if steps < 1 or abs(steps * self.dt - self.horizon) > 1e-9 * max(1.0, self.horizon):
            raise ParameterError("horizon must be an integer multiple of dt")

    @property
    def n_steps(self) -> int:
        return round(self.horizon / self.dt)


@dataclass(frozen=True)
class ParticleEnsemble:
    time: float
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if vals.ndim != 1 or vals.size == 0:
            raise ParameterError("ensemble values must be a nonempty 1-d array")
        if not np.all(np.isfinite(vals)):
            raise NumericOverflowError(f"non-finite ensemble value at t={self.time:.9g}")

    @property
    def n_particles(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: tuple

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", times)
        if len(self.states) != times.size:
            raise ParameterError("times and states must align")
        if times.size and (times[0] != 0.0 or np.any(np.diff(times) <= 0)):
            raise ParameterError("times must increase strictly from 0")

    @property
    def final(self) -> ParticleEnsemble:
        return self.states[-1]

    def values_matrix(self) -> np.ndarray:
        return np.stack([s.values for s in self.states])


def step_interacting(model: DriftInteractionModel, ensemble: ParticleEnsemble,
                     dt: float, noise: np.ndarray) -> ParticleEnsemble:
    """One Euler step of the interacting system."""
    noise = np.asarray(noise, dtype=float)
    if noise.shape != ensemble.values.shape:
        raise ParameterError("noise must have one draw per particle")
    hooks = model.hooks
    x = ensemble.values
    field = hooks.empirical_field(x)
    drift = hooks.a_const * hooks.bshape(ensemble.time, x, field) + hooks.c_const
    new = x + drift * dt + hooks.a_const * math.sqrt(dt) * noise
    if not np.all(np.isfinite(new)):
        raise NumericOverflowError(
            f"non-finite particle value stepping from t={ensemble.time:.9g}")
    return ParticleEnsemble(time=ensemble.time + dt, values=new)


def simulate_interacting(model: DriftInteractionModel, config: SimConfig,
                         rng: RngSpec, replicate: int = 0) -> Trajectory:
    """Full trajectory of one replicate; deterministic given (rng, replicate)."""
    gen = rng.generator(replicate)
    state = ParticleEnsemble(0.0, model.hooks.init_sampler(gen, config.n_particles))
    times = [0.0]
    states = [state]
    for k in range(config.n_steps):
        noise = gen.standard_normal(config.n_particles)
        try:
            state = step_interacting(model, state, config.dt, noise)
        except NumericOverflowError as exc:
            raise NumericOverflowError(f"{exc} (step {k + 1} of {config.n_steps})") from None
        state = ParticleEnsemble(time=(k + 1) * config.dt, values=state.values)
        times.append((k + 1) * config.dt)
        states.append(state)
    return Trajectory(np.asarray(times), tuple(states))


def simulate_iid_ou(params: OUModelParams, n: int, t: float, rng: RngSpec,
                    replicate: int = 0) -> np.ndarray:
    """n exact draws from the limiting OU marginal at time t."""
    if n < 0:
        raise ParameterError("n must be nonnegative")
    sd = math.sqrt(ou_variance(params, t))
    gen = rng.generator(replicate)
    return params.m0 + sd * gen.standard_normal(n)


def simulate_iid_ou_at_times(params: OUModelParams, n: int, times,
                             rng: RngSpec, replicate: int = 0) -> np.ndarray:
    """Exact joint draws of the limiting OU marginals at increasing times.

    Returns shape (n, len(times)); sampling is sequential Gauss-Markov
    conditioning, so the joint law is exact (no time discretization).
    """
    times = [float(t) for t in times]
    if not times or any(t < 0 for t in times) or any(b <= a for a, b in zip(times, times[1:])):
        raise DomainError("times must be strictly increasing and nonnegative")
    gen = rng.generator(replicate)
    out = np.empty((n, len(times)))
    sd_prev = math.sqrt(ou_variance(params, times[0]))
    out[:, 0] = params.m0 + sd_prev * gen.standard_normal(n)
    for j in range(1, len(times)):
        sd = math.sqrt(ou_variance(params, times[j]))
        rho = ou_correlation(params, times[j - 1], times[j])
        out[:, j] = (params.m0
                     + rho * (sd / sd_prev) * (out[:, j - 1] - params.m0)
                     + sd * math.sqrt(1.0 - rho * rho) * gen.standard_normal(n))
        sd_prev = sd
    return out


def simulate_iid_rank_stationary(cdf: StationaryCdf, drift_fn, n: int, t: float,
                                 dt: float, rng: RngSpec, replicate: int = 0) -> np.ndarray:
    """n independent Euler paths of dX = B(F(X)) dt + sqrt(2) dW, started from F.

    The marginal law stays F for all times up to discretization error.
    """
    if n < 0:
        raise ParameterError("n must be nonnegative")
    if t < 0:
        raise DomainError("t must be nonnegative")
    gen = rng.generator(replicate)
    if n == 0:
        return np.empty(0)
    x = np.asarray(cdf.quantile_clipped(gen.random(n)), dtype=float)
    if t == 0.0:
        return x
    steps = round(t / dt)
    if steps < 1 or abs(steps * dt - t) > 1e-9 * max(1.0, t):
        raise ParameterError("t must be an integer multiple of dt")
    root_2dt = math.sqrt(2.0 * dt)
    for k in range(steps):
        F = cdf.cdf(x)
        x = x + np.asarray(drift_fn(F), dtype=float) * dt + root_2dt * gen.standard_normal(n)
        if not np.all(np.isfinite(x)):
            raise NumericOverflowError(f"non-finite path value after step {k + 1}")
    return x


def empirical_mean_path(traj: Trajectory) -> np.ndarray:
    if not traj.states:
        raise DomainError("trajectory is empty")
    return np.asarray([float(np.mean(s.values)) for s in traj.states])


# ---------------------------------------------------------------------------
# batched replicate engine


def _snapshot_steps(config: SimConfig, snapshot_times) -> tuple:
    steps = []
    for T in snapshot_times:
        k = round(T / config.dt)
        if abs(k * config.dt - T) > 1e-9 * max(1.0, abs(T)):
            raise ParameterError(f"snapshot time {T} is not on the dt grid")
        if not 0 <= k <= config.n_steps:
            raise ParameterError(f"snapshot time {T} outside [0, horizon]")
        steps.append(k)
    return tuple(steps)


def _reduce_max(snaps: np.ndarray) -> np.ndarray:
    return snaps.max(axis=2)


def _reduce_first(snaps: np.ndarray) -> np.ndarray:
    return snaps[:, :, 0]


def _reduce_final(snaps: np.ndarray) -> np.ndarray:
    return snaps[:, -1, :]


_REDUCERS = {"max": _reduce_max, "first": _reduce_first, "final": _reduce_final}


def _run_batch(model: DriftInteractionModel, config: SimConfig, rng: RngSpec,
               rep_lo: int, rep_hi: int, snap_steps: tuple, reducer: str) -> np.ndarray:
    hooks = model.hooks
    n, dt = config.n_particles, config.dt
    gens = [rng.generator(r) for r in range(rep_lo, rep_hi)]
    x = np.stack([hooks.init_sampler(g, n) for g in gens])
    want = set(snap_steps)
    recorded = {}
    if 0 in want:
        recorded[0] = x.copy()
    sqdt = math.sqrt(dt)
    for k in range(config.n_steps):
        if not (want - recorded.keys()):
            break
        t = k * dt
        noise = np.stack([g.standard_normal(n) for g in gens])
        field = hooks.empirical_field(x)
        drift = hooks.a_const * hooks.bshape(t, x, field) + hooks.c_const
        x = x + drift * dt + hooks.a_const * sqdt * noise
        if not np.all(np.isfinite(x)):
            raise NumericOverflowError(
                f"non-finite particle value after step {k + 1} "
                f"(t = {(k + 1) * dt:.9g}, replicates {rep_lo}..{rep_hi - 1})")
        if (k + 1) in want:
            recorded[k + 1] = x.copy()
    snaps = np.stack([recorded[s] for s in snap_steps], axis=1)
    return _REDUCERS[reducer](snaps)


def _run_batch_from_spec(spec, config, rng, rep_lo, rep_hi, snap_steps, reducer):
    return _run_batch(build_from_spec(spec), config, rng, rep_lo, rep_hi,
                      snap_steps, reducer)


def run_replicates(model: DriftInteractionModel, config: SimConfig, rng: RngSpec,
                   snapshot_times, reducer: str = "max", workers: int = 1) -> np.ndarray:
    """Simulate config.n_reps independent interacting systems.

    Returns the per-replicate reduction stacked in replicate order:
    'max' / 'first' give shape (n_reps, len(snapshot_times)); 'final' gives
    (n_reps, n_particles) at the last snapshot time.  Results are invariant
    to ``workers`` because every replicate has its own random stream and
    batches are merged in deterministic order.
    """
    if reducer not in _REDUCERS:
        raise ParameterError(f"unknown reducer {reducer!r}")
    snap_steps = _snapshot_steps(config, snapshot_times)
    if not snap_steps:
        raise ParameterError("at least one snapshot time is required")
    bounds = [(lo, min(lo + BATCH_REPS, config.n_reps))
              for lo in range(0, config.n_reps, BATCH_REPS)]
    if workers <= 1:
        parts = [_run_batch(model, config, rng, lo, hi, snap_steps, reducer)
                 for lo, hi in bounds]
    else:
        if not model.rebuild_spec:
            raise ParameterError("model has no rebuild spec; cannot parallelize")
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_batch_from_spec, model.rebuild_spec, config,
                                   rng, lo, hi, snap_steps, reducer)
                       for lo, hi in bounds]
            parts = [f.result() for f in futures]
    return np.concatenate(parts, axis=0)


# ---------------------------------------------------------------------------
# CSV emission


def write_trajectory_csv(path, rep_trajectories) -> None:
    """CSV with header rep,time,particle,value; times at 9 significant digits."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("rep,time,particle,value\n")
        for rep, traj in rep_trajectories:
            for t, state in zip(traj.times, traj.states):
                for i, v in enumerate(state.values):
                    fh.write(f"{rep},{t:.9g},{i},{float(v)!r}\n")


def write_final_csv(path, finals: np.ndarray) -> None:
    """CSV with header rep,particle,value."""
    finals = np.atleast_2d(np.asarray(finals, dtype=float))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("rep,particle,value\n")
        for rep in range(finals.shape[0]):
            for i, v in enumerate(finals[rep]):
                fh.write(f"{rep},{i},{float(v)!r}\n")
