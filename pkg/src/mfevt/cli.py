"""Experiment runner: configuration ingestion, result emission, figures.

Configuration is a single JSON file with four sections::

    {
      "model":  {"type": "ou", "params": {"kappa": 1, "sigma": 1, "m0": 0, "sigma0": 1}},
      "sim":    {"n_particles": 1000, "dt": 0.01, "horizon": 1.0, "n_reps": 500, "seed": 42},
      "evt":    {"times": [1.0], "limit_family": "gumbel"},
      "output": {"directory": "out", "formats": ["csv", "json", "svg"]}
    }

The rank model selects its drift from the registry, e.g.
``{"type": "rank", "params": {"drift": "linear"}}``.

Exit codes: 0 success, 2 config error, 3 numeric failure, 4 lemma-check
failure.  All emitted files live under the output directory; nothing written
contains wall-clock metadata, so reruns with the same seed are byte-identical.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

import numpy as np

from . import evt, lemmas, models, sde, stationary
from .errors import (ConfigError, DomainError, FormatError, MfevtError,
                     NumericOverflowError, ParameterError, TailResolutionError)

_FORMATS = ("csv", "json", "svg")


# ---------------------------------------------------------------------------
# configuration


def _section(data: dict, name: str) -> dict:
    if name not in data:
        raise ConfigError(f"{name}: missing section")
    if not isinstance(data[name], dict):
        raise ConfigError(f"{name}: must be an object")
    return data[name]


def _get(section: dict, path: str, key: str, types, check=None, what: str = ""):
    if key not in section:
        raise ConfigError(f"{path}.{key}: missing")
    val = section[key]
    if isinstance(val, bool) or not isinstance(val, types):
        raise ConfigError(f"{path}.{key}: wrong type")
    if check is not None and not check(val):
        raise ConfigError(f"{path}.{key}: {what}")
    return val


@dataclass(frozen=True)
class ExperimentConfig:
    model_kind: str
    model_params: dict = field(hash=False)
    n_particles: int = 0
    dt: float = 0.0
    horizon: float = 0.0
    n_reps: int = 0
    seed: int = 0
    times: tuple = ()
    limit_family: str = "gumbel"
    out_dir: str = "out"
    formats: tuple = ("csv", "json", "svg")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        model = _section(data, "model")
        sim = _section(data, "sim")
        evt_s = _section(data, "evt")
        out = _section(data, "output")

        kind = _get(model, "model", "type", str,
                    lambda v: v in ("ou", "rank"), "must be 'ou' or 'rank'")
        params = _get(model, "model", "params", dict)
        if kind == "ou":
            for key in ("kappa", "sigma", "m0", "sigma0"):
                _get(params, "model.params", key, (int, float),
                     math.isfinite, "must be finite")
        else:
            _get(params, "model.params", "drift", str)
            if "lipschitz_bound" in params:
                _get(params, "model.params", "lipschitz_bound", (int, float),
                     lambda v: v >= 0, "must be nonnegative")

        n_particles = _get(sim, "sim", "n_particles", int, lambda v: v >= 1,
                           "must be a positive integer")
        dt = float(_get(sim, "sim", "dt", (int, float), lambda v: v > 0, "must be positive"))
        horizon = float(_get(sim, "sim", "horizon", (int, float), lambda v: v > 0,
                             "must be positive"))
        n_reps = _get(sim, "sim", "n_reps", int, lambda v: v >= 1,
                      "must be a positive integer")
        seed = _get(sim, "sim", "seed", int, lambda v: 0 <= v < 2 ** 64,
                    "must fit in 64 bits")

        times = _get(evt_s, "evt", "times", list, lambda v: len(v) >= 1, "must be nonempty")
        clean = []
        for idx, t in enumerate(times):
            if isinstance(t, bool) or not isinstance(t, (int, float)):
                raise ConfigError(f"evt.times[{idx}]: wrong type")
            t = float(t)
            if not 0.0 < t <= horizon + 1e-12:
                raise ConfigError(f"evt.times[{idx}]: must lie in (0, horizon]")
            if clean and t <= clean[-1]:
                raise ConfigError(f"evt.times[{idx}]: must increase strictly")
            clean.append(t)
        family = _get(evt_s, "evt", "limit_family", str,
                      lambda v: v in evt.LIMIT_FAMILIES,
                      f"must be one of {evt.LIMIT_FAMILIES}")

        directory = _get(out, "output", "directory", str)
        formats = _get(out, "output", "formats", list,
                       lambda v: all(f in _FORMATS for f in v),
                       f"entries must be among {_FORMATS}")

        return cls(model_kind=kind, model_params=dict(params), n_particles=n_particles,
                   dt=dt, horizon=horizon, n_reps=n_reps, seed=seed,
                   times=tuple(clean), limit_family=family, out_dir=directory,
                   formats=tuple(formats))

    def to_dict(self) -> dict:
        return {
            "model": {"type": self.model_kind, "params": dict(self.model_params)},
            "sim": {"n_particles": self.n_particles, "dt": self.dt,
                    "horizon": self.horizon, "n_reps": self.n_reps, "seed": self.seed},
            "evt": {"times": list(self.times), "limit_family": self.limit_family},
            "output": {"directory": self.out_dir, "formats": list(self.formats)},
        }

    def sim_config(self) -> sde.SimConfig:
        return sde.SimConfig(n_particles=self.n_particles, dt=self.dt,
                             horizon=self.horizon, n_reps=self.n_reps, seed=self.seed)

    def build_model(self) -> models.DriftInteractionModel:
        if self.model_kind == "ou":
            return models.build_ou_model(models.OUModelParams(
                kappa=float(self.model_params["kappa"]),
                sigma=float(self.model_params["sigma"]),
                m0=float(self.model_params["m0"]),
                sigma0=float(self.model_params["sigma0"])))
        params = models.rank_params_from_name(
            self.model_params["drift"], self.model_params.get("lipschitz_bound"))
        return models.build_rank_model(params)


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("top level: must be an object")
    return ExperimentConfig.from_dict(data)


# ---------------------------------------------------------------------------
# experiment pipeline


def _norm_constants(model, config: ExperimentConfig, t: float) -> evt.NormalizingConstants:
    if config.model_kind == "ou":
        params = model.rebuild_spec[1]
        sd = math.sqrt(models.ou_variance(params, t))
        return evt.gaussian_norm_constants(config.n_particles, params.m0, sd)
    return evt.norm_constants_from_cdf(model.stationary_cdf, config.n_particles)


def _iid_maxima(model, config: ExperimentConfig, rng: sde.RngSpec) -> np.ndarray:
    """Per-replicate maxima of the exact i.i.d. limiting system at each time."""
    out = np.empty((config.n_reps, len(config.times)))
    if config.model_kind == "ou":
        params = model.rebuild_spec[1]
        for r in range(config.n_reps):
            draws = sde.simulate_iid_ou_at_times(params, config.n_particles,
                                                 config.times, rng, replicate=r)
            out[r] = draws.max(axis=0)
    else:
        cdf = model.stationary_cdf
        for r in range(config.n_reps):
            gen = rng.generator(r)
            for j in range(len(config.times)):
                out[r, j] = float(np.max(cdf.quantile_clipped(
                    gen.random(config.n_particles))))
    return out


def _time_tag(t: float) -> str:
    return f"T{t:g}"


def run_experiment(config: ExperimentConfig, workers: int = 1):
    """Simulate interacting and matched i.i.d. systems, compare their maxima.

    Returns a list of (time, EvtReport) and writes CSV/JSON/SVG per the
    configured formats.  The i.i.d. reference uses an independent stream.
    """
    model = config.build_model()
    sim = config.sim_config()
    rng = sde.RngSpec(config.seed, stream_id=0)
    raw_int = sde.run_replicates(model, sim, rng, config.times, reducer="max",
                                 workers=workers)
    raw_iid = _iid_maxima(model, config, rng.substream(1))

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    norm_int_all = []
    for j, t in enumerate(config.times):
        constants = _norm_constants(model, config, t)
        sample_int = evt.normalize_maxima(raw_int[:, j], constants)
        sample_iid = evt.normalize_maxima(raw_iid[:, j], constants)
        norm_int_all.append(sample_int.normalized)
        ks_limit = evt.ks_one_sample(sample_int.normalized,
                                     lambda x: evt.limit_cdf(config.limit_family, x))
        ks_two = evt.ks_two_sample(sample_int.normalized, sample_iid.normalized)
        reports.append((t, constants, sample_int, sample_iid, ks_limit, ks_two))

    joint_dist = None
    if len(config.times) >= 2:
        joint_dist = evt.joint_independence_report(
            norm_int_all[0], norm_int_all[1], evt.default_joint_grid())

    results = []
    for t, constants, sample_int, sample_iid, ks_limit, ks_two in reports:
        tag = _time_tag(t)
        if "csv" in config.formats:
            evt.write_maxima_csv(out_dir / f"maxima_interacting_{tag}.csv", sample_int)
            evt.write_maxima_csv(out_dir / f"maxima_iid_{tag}.csv", sample_iid)
        if "json" in config.formats:
            payload = {
                "model": model.name,
                "n_particles": config.n_particles,
                "n_reps": config.n_reps,
                "seed": config.seed,
                "dt": config.dt,
                "horizon": config.horizon,
                "a_n": constants.a,
                "b_n": constants.b,
                "limit_family": config.limit_family,
                "ks_vs_limit": ks_limit,
                "ks_two_sample": ks_two,
                "joint_independence_distance": joint_dist,
            }
            _write_json(out_dir / f"report_{tag}.json", payload)
        if "svg" in config.formats:
            svg = _ecdf_overlay_svg(sample_int.normalized, config.limit_family)
            (out_dir / f"ecdf_overlay_{tag}.svg").write_text(svg, encoding="utf-8")
        results.append((t, evt.EvtReport(
            ks_vs_limit=ks_limit, ks_two_sample=ks_two,
            n_particles=config.n_particles, n_reps=config.n_reps,
            constants=constants, limit_family=config.limit_family,
            joint_independence_distance=joint_dist)))
    return results


def _write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


# ---------------------------------------------------------------------------
# lemma suite

_LEMMA_KEYS = ("lemma", "params", "lhs", "rhs", "holds", "count", "bound",
               "estimate", "se", "reps", "seed")


def _lemma_record(**kwargs) -> dict:
    record = {key: None for key in _LEMMA_KEYS}
    record.update(kwargs)
    return record


def _counting_sweep(max_n: int, max_blocks: int = 2, max_block_size: int = 2):
    sizes_pool = []
    for nb in range(1, max_blocks + 1):
        sizes_pool.extend(product(range(1, max_block_size + 1), repeat=nb))
    cases = 0
    worst = None
    for n in range(1, max_n + 1):
        for sizes in sizes_pool:
            for kappa in range(1, n + 1):
                count = lemmas.enumerate_failing_configs(n, sizes, kappa)
                bound = lemmas.counting_bound(n, kappa, sum(sizes))
                cases += 1
                if count > bound:
                    return cases, (n, sizes, kappa, count, bound), False
                if worst is None or count / max(bound, 1) > worst[0]:
                    worst = (count / max(bound, 1), n, sizes, kappa, count, bound)
    return cases, worst, True


def run_lemma_suite(which: str, out_dir, seed: int = 42, reps: int | None = None,
                    workers: int = 1, max_n: int = 4) -> bool:
    """Dispatch lemma verifications; writes one JSON per case, returns all-pass."""
    known = ("counting", "alg45", "zero-expectation", "lp-estimate", "martingale", "all")
    if which not in known:
        raise ConfigError(f"unknown lemma name {which!r}; choose from {known}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    all_ok = True
    run_all = which == "all"

    if run_all or which == "counting":
        cases, info, ok = _counting_sweep(max_n)
        spot_count = lemmas.enumerate_failing_configs(2, (1,), 1)
        spot_bound = lemmas.counting_bound(2, 1, 1)
        ok = ok and spot_count <= spot_bound
        _write_json(out_dir / "counting.json", _lemma_record(
            lemma="counting", params={"max_n": max_n, "cases": cases,
                                      "spot": {"n": 2, "blocks": [1], "kappa": 1}},
            count=spot_count, bound=spot_bound, holds=ok))
        all_ok &= ok

    if run_all or which == "alg45":
        ok = True
        checked = 0
        for c in (1.5, 2.0, 5.0):
            for n in range(2, 201):
                for s in (1, 2, 3):
                    res = lemmas.alg45_check(c, n, s)
                    checked += 1
                    ok &= res.holds
        spot = lemmas.alg45_check(2.0, 2, 1)
        _write_json(out_dir / "alg45.json", _lemma_record(
            lemma="alg45", params={"grid": "C in {1.5,2,5}, N in 2..200, S in {1,2,3}",
                                   "checked": checked},
            lhs=spot.lhs, rhs=spot.rhs, holds=bool(ok and spot.holds)))
        all_ok &= ok and spot.holds

    if run_all or which in ("zero-expectation", "lp-estimate", "martingale"):
        params = models.OUModelParams(kappa=1.0, sigma=1.0, m0=0.0, sigma0=1.0)
        model = models.build_ou_model(params)

        if run_all or which == "zero-expectation":
            n_reps = reps or 200_000
            for idx, cfg in enumerate(standard_zero_exp_configs()):
                blocks = cfg.n_blocks
                partition = tuple(0.2 * b / blocks for b in range(blocks + 1))
                res = lemmas.zero_expectation_mc(
                    lemmas.GProcessSpec(model), cfg, partition, n_reps,
                    sde.RngSpec(seed, stream_id=10 + idx))
                ok = abs(res.estimate) <= 4.0 * res.se
                _write_json(out_dir / f"zero_expectation_{idx}.json", _lemma_record(
                    lemma="zero-expectation",
                    params={"K": sorted(cfg.K), "i": cfg.i_tuples, "j": cfg.j_tuples,
                            "partition": partition, "dt": 0.002},
                    estimate=res.estimate, se=res.se, reps=n_reps, seed=seed,
                    holds=ok))
                all_ok &= ok

        if run_all or which == "lp-estimate":
            n_reps = reps or 100_000
            for m in (1, 2):
                for p in (1, 2):
                    res = lemmas.iterated_lp_mc(model, 10, m, p, 0.0, 0.1, n_reps,
                                                sde.RngSpec(seed, stream_id=20 + 2 * m + p))
                    ok = res.norm_estimate <= res.bound
                    _write_json(out_dir / f"lp_estimate_m{m}_p{p}.json", _lemma_record(
                        lemma="lp-estimate", params={"m": m, "p": p, "s": 0.0, "t": 0.1,
                                                     "n_particles": 10, "dt": 0.002},
                        estimate=res.norm_estimate, bound=res.bound, reps=n_reps,
                        seed=seed, holds=ok))
                    all_ok &= ok

        if run_all or which == "martingale":
            n_reps = reps or 100_000
            config = sde.SimConfig(n_particles=50, dt=0.005, horizon=0.5,
                                   n_reps=n_reps, seed=seed)
            res = lemmas.density_mc(model, config, sde.RngSpec(seed, stream_id=30),
                                    workers=workers)
            ok = abs(res.mean_z - 1.0) <= 3.0 * res.se_z and res.n_capped == 0
            _write_json(out_dir / "martingale.json", _lemma_record(
                lemma="martingale", params={"n_particles": 50, "horizon": 0.5,
                                            "dt": 0.005},
                estimate=res.mean_z, se=res.se_z, count=res.n_capped,
                reps=n_reps, seed=seed, holds=ok))
            _write_density_csv(out_dir / "martingale_reps.csv", res)
            all_ok &= ok

    return bool(all_ok)


def standard_zero_exp_configs() -> tuple:
    """Six index configurations: three satisfying condition 1, three condition 2."""
    IC = lemmas.IndexConfig
    cfgs = (
        IC(3, frozenset({1}), ((2,),), ((3,),)),          # condition 1
        IC(3, frozenset({1}), ((2, 3),), ((1, 1),)),      # condition 1
        IC(3, frozenset({1}), ((2,), (3,)), ((1,), (1,))),  # condition 1, two blocks
        IC(3, frozenset({1}), ((1,),), ((2,),)),          # condition 2
        IC(3, frozenset({1}), ((1, 1),), ((1, 2),)),      # condition 2
        IC(3, frozenset({1, 2}), ((1,), (2,)), ((3,), (2,))),  # condition 2, two blocks
    )
    for cfg in cfgs[:3]:
        assert lemmas.condition1_holds(cfg)
    for cfg in cfgs[3:]:
        assert lemmas.condition2_holds(cfg)
    return cfgs


def _write_density_csv(path, res: lemmas.DensityMcResult) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("rep,z_final,first_value,capped\n")
        for rep, (z, x1, cap) in enumerate(zip(res.z_final, res.first_final, res.capped)):
            fh.write(f"{rep},{float(z)!r},{float(x1)!r},{int(cap)}\n")


def run_girsanov_check(config: ExperimentConfig, out_dir, threshold=None,
                       workers: int = 1) -> bool:
    model = config.build_model()
    sim = config.sim_config()
    if threshold is None:
        if config.model_kind == "ou":
            threshold = math.sqrt(models.ou_variance(model.rebuild_spec[1],
                                                     config.horizon))
        else:
            threshold = float(model.stationary_cdf.quantile(1.0 - 1.0 / sim.n_particles))
    res = lemmas.girsanov_consistency(model, sim, sde.RngSpec(config.seed, stream_id=40),
                                      float(threshold), workers=workers)
    ok = abs(res.lhs - res.rhs) <= 3.0 * res.se and res.n_capped == 0
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "girsanov.json", _lemma_record(
        lemma="girsanov", params={"threshold": float(threshold),
                                  "n_particles": sim.n_particles,
                                  "horizon": sim.horizon, "dt": sim.dt},
        lhs=res.lhs, rhs=res.rhs, se=res.se, count=res.n_capped,
        reps=sim.n_reps, seed=config.seed, holds=ok))
    return ok


# ---------------------------------------------------------------------------
# SVG rendering

_W, _H = 800, 600
_MARGIN = 70


def _scale(vmin, vmax, lo, hi):
    span = vmax - vmin or 1.0
    return lambda v: lo + (v - vmin) / span * (hi - lo)

def _axes(xmin, xmax, ymin, ymax, xlabel, ylabel):
    sx = _scale(xmin, xmax, _MARGIN, _W - _MARGIN)
    sy = _scale(ymin, ymax, _H - _MARGIN, _MARGIN)
    parts = [f'<rect width="{_W}" height="{_H}" fill="white"/>',
             f'<line x1="{_MARGIN}" y1="{_H - _MARGIN}" x2="{_W - _MARGIN}" '
             f'y2="{_H - _MARGIN}" stroke="black"/>',
             f'<line x1="{_MARGIN}" y1="{_MARGIN}" x2="{_MARGIN}" '
             f'y2="{_H - _MARGIN}" stroke="black"/>']
    for i in range(6):
        xv = xmin + (xmax - xmin) * i / 5
        yv = ymin + (ymax - ymin) * i / 5
        parts.append(f'<line x1="{sx(xv):.2f}" y1="{_H - _MARGIN}" x2="{sx(xv):.2f}" '
                     f'y2="{_H - _MARGIN + 6}" stroke="black"/>')
        parts.append(f'<text x="{sx(xv):.2f}" y="{_H - _MARGIN + 22}" font-size="12" '
                     f'text-anchor="middle">{xv:.4g}</text>')
        parts.append(f'<line x1="{_MARGIN - 6}" y1="{sy(yv):.2f}" x2="{_MARGIN}" '
                     f'y2="{sy(yv):.2f}" stroke="black"/>')
        parts.append(f'<text x="{_MARGIN - 10}" y="{sy(yv):.2f}" font-size="12" '
                     f'text-anchor="end" dominant-baseline="middle">{yv:.4g}</text>')
    parts.append(f'<text x="{_W // 2}" y="{_H - 20}" font-size="14" '
                 f'text-anchor="middle">{xlabel}</text>')
    parts.append(f'<text x="20" y="{_H // 2}" font-size="14" text-anchor="middle" '
                 f'transform="rotate(-90 20 {_H // 2})">{ylabel}</text>')
    return parts, sx, sy


def _polyline(points, color, width=1.5, dash=""):
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"{extra}/>'


def _svg_doc(parts) -> str:
    body = "\n".join(parts)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
            f'viewBox="0 0 {_W} {_H}">\n{body}\n</svg>\n')


def _ecdf_overlay_svg(normalized: np.ndarray, family: str) -> str:
    xs = np.sort(np.asarray(normalized, dtype=float))
    n = xs.size
    pad = 0.05 * (xs[-1] - xs[0] or 1.0)
    xmin, xmax = float(xs[0] - pad), float(xs[-1] + pad)
    parts, sx, sy = _axes(xmin, xmax, 0.0, 1.0, "normalized maximum", "CDF")
    steps = [(sx(xmin), sy(0.0))]
    for i, x in enumerate(xs):
        steps.append((sx(x), sy(i / n)))
        steps.append((sx(x), sy((i + 1) / n)))
    steps.append((sx(xmax), sy(1.0)))
    parts.append(_polyline(steps, "steelblue", 1.5))
    grid = np.linspace(xmin, xmax, 201)
    curve = [(sx(x), sy(float(evt.limit_cdf(family, x)))) for x in grid]
    parts.append(_polyline(curve, "firebrick", 1.5, dash="6,3"))
    parts.append(f'<text x="{_W - _MARGIN - 10}" y="{_MARGIN + 16}" font-size="13" '
                 f'text-anchor="end" fill="steelblue">empirical CDF</text>')
    parts.append(f'<text x="{_W - _MARGIN - 10}" y="{_MARGIN + 34}" font-size="13" '
                 f'text-anchor="end" fill="firebrick">{family} limit</text>')
    return _svg_doc(parts)


def _ks_vs_n_svg(rows) -> str:
    ns = [float(r["n"]) for r in rows]
    ks = [float(r["ks"]) for r in rows]
    lx = [math.log10(v) for v in ns]
    parts, sx, sy = _axes(min(lx), max(lx), 0.0, max(ks) * 1.1 or 1.0,
                          "log10 population size", "KS distance")
    pts = sorted(zip(lx, ks))
    parts.append(_polyline([(sx(a), sy(b)) for a, b in pts], "steelblue", 1.5))
    for a, b in pts:
        parts.append(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="3" fill="steelblue"/>')
    return _svg_doc(parts)


def render_svg(csv_path, kind: str, out_path) -> None:
    """Render a deterministic figure from a CSV produced by this package."""
    if kind not in ("ecdf_overlay", "ks_vs_n"):
        raise FormatError(f"unknown figure kind {kind!r}")
    with open(csv_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise FormatError("no data rows in CSV")
    needed = {"ecdf_overlay": ("norm_max",), "ks_vs_n": ("n", "ks")}[kind]
    for col in needed:
        if col not in rows[0]:
            raise FormatError(f"missing column {col!r} for kind {kind}")
    if kind == "ecdf_overlay":
        vals = np.asarray([float(r["norm_max"]) for r in rows])
        svg = _ecdf_overlay_svg(vals, "gumbel")
    else:
        svg = _ks_vs_n_svg(rows)
    Path(out_path).write_text(svg, encoding="utf-8")


# ---------------------------------------------------------------------------
# entry point


def _apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    data = config.to_dict()
    if getattr(args, "out", None):
        data["output"]["directory"] = args.out
    if getattr(args, "seed", None) is not None:
        data["sim"]["seed"] = args.seed
    return ExperimentConfig.from_dict(data)


def _cmd_simulate(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    model = config.build_model()
    sim = config.sim_config()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    finals = sde.run_replicates(model, sim, sde.RngSpec(config.seed), [config.horizon],
                                reducer="final", workers=args.workers)
    sde.write_final_csv(out_dir / "final_state.csv", finals)
    if args.trajectories:
        trajs = [(r, sde.simulate_interacting(model, sim, sde.RngSpec(config.seed), r))
                 for r in range(sim.n_reps)]
        sde.write_trajectory_csv(out_dir / "trajectories.csv", trajs)
    return 0


def _cmd_maxima(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    run_experiment(config, workers=args.workers)
    return 0


def _cmd_stationary(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    if config.model_kind != "rank":
        raise ConfigError("model.type: stationary verb requires a rank model")
    model = config.build_model()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stationary.write_stationary_csv(out_dir / "stationary.csv", model.stationary_cdf)
    return 0


def _cmd_verify_lemmas(args) -> int:
    ok = run_lemma_suite(args.lemma, args.out, seed=args.seed or 42, reps=args.reps,
                         workers=args.workers, max_n=args.max_n)
    return 0 if ok else 4


def _cmd_girsanov(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    ok = run_girsanov_check(config, config.out_dir, threshold=args.threshold,
                            workers=args.workers)
    return 0 if ok else 4


def _cmd_plot(args) -> int:
    render_svg(args.csv, args.kind, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfevt",
        description="mean-field particle systems and the extremes of their maxima")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--seed", type=int, help="override the seed")
        p.add_argument("--workers", type=int, default=1,
                       help="worker processes for replicate-level parallelism")

    p = sub.add_parser("simulate", help="run the interacting system, emit final states")
    common(p)
    p.add_argument("--trajectories", action="store_true",
                   help="also emit the full trajectory CSV")
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("maxima", help="maxima experiment with i.i.d. reference")
    common(p)
    p.set_defaults(fn=_cmd_maxima)

    p = sub.add_parser("stationary", help="solve and emit the rank stationary law")
    common(p)
    p.set_defaults(fn=_cmd_stationary)

    p = sub.add_parser("verify-lemmas", help="run exact and Monte Carlo lemma checks")
    p.add_argument("--lemma", required=True,
                   choices=["counting", "alg45", "zero-expectation", "lp-estimate",
                            "martingale", "all"])
    p.add_argument("--out", default="lemma_reports")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--reps", type=int, help="override the Monte Carlo replicate count")
    p.add_argument("--max-n", type=int, default=4, dest="max_n")
    p.add_argument("--grid", default="default", choices=["default"])
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=_cmd_verify_lemmas)

    p = sub.add_parser("girsanov-check", help="compare reweighted i.i.d. and direct runs")
    common(p)
    p.add_argument("--threshold", type=float,
                   help="tail threshold (default: marginal sd at the horizon)")
    p.set_defaults(fn=_cmd_girsanov)

    p = sub.add_parser("plot", help="render an SVG from an emitted CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--kind", required=True, choices=["ecdf_overlay", "ks_vs_n"])
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ParameterError, DomainError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericOverflowError, TailResolutionError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except MfevtError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
