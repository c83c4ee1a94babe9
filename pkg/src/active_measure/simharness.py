"""Trial runner: synthetic pools, repeated-run metrics, and closed-form weight ratios.

Trials are embarrassingly parallel; each trial's random stream derives from
(master seed, trial index) so results do not depend on scheduling order or on
how many workers run them.
"""

from __future__ import annotations

import math
import multiprocessing
import os
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .baselines import (
    METHODS,
    run_active_testing,
    run_dis,
    run_dis_ais,
    run_dis_wor,
    run_mc,
    run_mc_wor,
    run_ppi,
)
from .errors import ExhaustedError
from .estimator import run_active_measurement
from .pool import LabeledSet, Unit, UnitPool, load_pool, total_true
from .proposal import (
    ClampPolicy,
    ConstantPredictor,
    FixedCheckpointPredictor,
    ImprovingPredictor,
    NoisyPredictor,
    OraclePredictor,
    predict,
)
from .variance import inverse_normal_cdf
from .weights import WeightScheme, comb_weights, lure_weights, normalize, sqrt_weights

PREDICTORS = ("oracle", "noisy", "improving", "constant", "checkpoint")


@dataclass(frozen=True)
class ExperimentConfig:
    method: str = "active"
    weights: str = "comb"
    gamma: float | None = None
    pool: str | None = None
    pool_kind: str = "clustered"
    pool_n: int = 50
    pool_seed: int = 7
    pool_clusters: int = 3
    pool_spread: float | None = None
    pool_amplitude: float = 20.0
    pool_base: float = 0.5
    pool_lo: float = 0.0
    pool_hi: float = 10.0
    clamp: str = "floor"
    clamp_value: float = 0.5
    steps: tuple[int, ...] = (10, 25, 40)
    trials: int = 1000
    seed: int = 0
    level: float = 0.95
    retrain_every: int = 1
    predictor: str = "noisy"
    bias: float = 1.3
    sigma: float = 0.5
    sigma0: float = 1.0
    rate: float = 0.5
    checkpoint_path: str | None = None
    out: str | None = None
    format: str = "csv"
    track_variance: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.predictor not in PREDICTORS:
            raise ValueError(f"unknown predictor {self.predictor!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.steps or any(t < 1 for t in self.steps):
            raise ValueError("steps grid must contain positive step counts")
        object.__setattr__(self, "steps", tuple(sorted(set(int(t) for t in self.steps))))

    @property
    def scheme(self) -> WeightScheme:
        return WeightScheme(self.weights, self.gamma if self.weights == "inv" else None)

    @property
    def scheme_label(self) -> str:
        return f"inv:{self.scheme.gamma}" if self.weights == "inv" else self.weights


_BOOLS = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _coerce(name: str, raw: str):
    fields_ = ExperimentConfig.__dataclass_fields__
    if name not in fields_:
        raise KeyError(f"unknown config key {name!r}")
    if name == "steps":
        return tuple(int(v) for v in raw.replace(",", " ").split())
    default = fields_[name].default
    if isinstance(default, bool):
        try:
            return _BOOLS[raw.strip().lower()]
        except KeyError:
            raise ValueError(f"bad boolean for {name!r}: {raw!r}") from None
    if isinstance(default, int) and not isinstance(default, bool):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if default is None and name in ("gamma", "pool_spread"):
        return float(raw)
    return raw


def config_from_mapping(mapping: Mapping[str, str], **overrides) -> ExperimentConfig:
    kwargs = {k: _coerce(k, v) for k, v in mapping.items()}
    kwargs.update(overrides)
    return ExperimentConfig(**kwargs)


def load_config(path: str | Path, **overrides) -> ExperimentConfig:
    """Parse a flat ``key = value`` config file; later keys win."""
    mapping: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{line_no}: expected 'key = value', got {raw.rstrip()!r}")
            key, value = line.split("=", 1)
            mapping[key.strip()] = value.strip()
    return config_from_mapping(mapping, **overrides)


def generate_pool(kind: str, n: int, params: Mapping[str, float] | None = None, seed: int = 0) -> UnitPool:
    """Deterministic synthetic pool: iid-uniform values or clustered bumps on a grid."""
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    params = dict(params or {})
    rng = np.random.default_rng(seed)
    if kind == "uniform":
        lo = float(params.pop("lo", 0.0))
        hi = float(params.pop("hi", 10.0))
        if params:
            raise ValueError(f"unknown uniform-pool params {sorted(params)}")
        if lo < 0 or hi < lo:
            raise ValueError(f"need 0 <= lo <= hi, got lo={lo}, hi={hi}")
        values = rng.uniform(lo, hi, n)
        refs = [f"synth:{i}" for i in range(n)]
    elif kind == "clustered":
        m = math.ceil(math.sqrt(n))
        clusters = int(params.pop("clusters", 3))
        spread = params.pop("spread", None)
        spread = m / 6.0 if spread is None else float(spread)
        amplitude = float(params.pop("amplitude", 20.0))
        base = float(params.pop("base", 0.5))
        if params:
            raise ValueError(f"unknown clustered-pool params {sorted(params)}")
        if clusters < 1 or spread < 0 or amplitude < 0 or base < 0:
            raise ValueError("clustered-pool params must be nonnegative (clusters >= 1)")
        coords = np.array([(i // m, i % m) for i in range(n)], dtype=float)
        centers = rng.uniform(0, m - 1, size=(clusters, 2))
        amps = amplitude * rng.uniform(0.5, 1.5, clusters)
        values = np.full(n, base)
        for center, amp in zip(centers, amps):
            d2 = ((coords - center) ** 2).sum(axis=1)
            if spread == 0.0:
                values[int(np.argmin(d2))] += amp
            else:
                values += amp * np.exp(-d2 / (2.0 * spread**2))
        refs = [f"grid:{int(x)},{int(y)}" for x, y in coords]
    else:
        raise ValueError(f"unknown pool kind {kind!r}")
    units = [Unit(f"u{i:04d}", refs[i], float(values[i])) for i in range(n)]
    return UnitPool(units)


def fractional_error(estimates: Sequence[float], F_true: float) -> float:
    """Mean absolute relative error of the estimates against the true total."""
    if not (F_true > 0):
        raise ValueError(f"true total must be positive, got {F_true}")
    est = np.asarray(estimates, dtype=float)
    if est.size == 0:
        raise ValueError("need at least one estimate")
    return float(np.mean(np.abs(est - F_true) / F_true))


def coverage(
    estimates: Sequence[float], var_hats: Sequence[float], F_true: float, level: float
) -> float:
    """Fraction of trials whose interval (inclusive) contains the true total."""
    est = np.asarray(estimates, dtype=float)
    var = np.asarray(var_hats, dtype=float)
    if est.shape != var.shape:
        raise ValueError(f"shape mismatch: {est.shape} estimates vs {var.shape} variances")
    z = inverse_normal_cdf(0.5 + level / 2.0)
    return float(np.mean(np.abs(est - F_true) <= z * np.sqrt(var)))


@dataclass(frozen=True)
class MetricsRow:
    method: str
    scheme: str
    t: int
    fractional_error_mean: float
    coverage: float | None
    ci_radius_mean_relative: float | None
    trials: int


@dataclass
class TrialMatrix:
    """Per-trial estimates and variance estimates at each grid step."""

    t_grid: tuple[int, ...]
    estimates: np.ndarray  # [trials, len(t_grid)]
    var_cond: np.ndarray
    var_simp: np.ndarray
    f_true: float


def build_pool(cfg: ExperimentConfig) -> UnitPool:
    if cfg.pool:
        return load_pool(cfg.pool)
    if cfg.pool_kind == "uniform":
        params = {"lo": cfg.pool_lo, "hi": cfg.pool_hi}
    else:
        params = {
            "clusters": cfg.pool_clusters,
            "spread": cfg.pool_spread,
            "amplitude": cfg.pool_amplitude,
            "base": cfg.pool_base,
        }
    return generate_pool(cfg.pool_kind, cfg.pool_n, params, cfg.pool_seed)


def _make_predictor(cfg: ExperimentConfig, seed):
    if cfg.predictor == "oracle":
        return OraclePredictor()
    if cfg.predictor == "noisy":
        return NoisyPredictor(cfg.bias, cfg.sigma, seed=seed)
    if cfg.predictor == "improving":
        return ImprovingPredictor(cfg.sigma0, cfg.rate, cfg.bias, seed=seed)
    if cfg.predictor == "constant":
        return ConstantPredictor(1.0)
    if cfg.checkpoint_path is None:
        raise ValueError("checkpoint predictor needs checkpoint_path")
    return FixedCheckpointPredictor.from_file(cfg.checkpoint_path)


def run_one_trial(cfg: ExperimentConfig, pool: UnitPool, trial_idx: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One independent trial; returns (estimates, var_cond, var_simp) at the step grid."""
    ss = np.random.SeedSequence(entropy=cfg.seed, spawn_key=(trial_idx,))
    run_ss, pred_ss = ss.spawn(2)
    rng = np.random.default_rng(run_ss)
    pred_seed = np.random.default_rng(pred_ss)
    clamp = ClampPolicy(cfg.clamp, cfg.clamp_value)
    T = max(cfg.steps)
    grid = np.asarray(cfg.steps, dtype=int)
    if cfg.method in ("active", "mc_wor", "dis_wor", "active_testing"):
        if T > pool.N:
            raise ExhaustedError(f"pool of {pool.N} cannot supply {T} without-replacement steps")
        if cfg.method == "active":
            run = run_active_measurement(
                pool, _make_predictor(cfg, pred_seed), cfg.scheme, clamp, T,
                seed=rng, retrain_every=cfg.retrain_every, level=cfg.level,
                track_variance=cfg.track_variance,
            )
        elif cfg.method == "mc_wor":
            run = run_mc_wor(pool, T, rng, level=cfg.level, track_variance=cfg.track_variance)
        elif cfg.method == "dis_wor":
            run = run_dis_wor(
                pool, _make_predictor(cfg, pred_seed), clamp, T, rng,
                level=cfg.level, track_variance=cfg.track_variance,
            )
        else:
            preds = predict(_make_predictor(cfg, pred_seed), pool, LabeledSet())
            run = run_active_testing(
                pool, preds, clamp, T, rng, level=cfg.level, track_variance=cfg.track_variance
            )
        est = np.array([run.combined_history[t - 1] for t in grid])
        vc = np.array([run.steps[t - 1].var_cond for t in grid])
        vs = np.array([run.steps[t - 1].var_simp for t in grid])
        return est, vc, vs
    if cfg.method == "mc":
        est_all, var_all = run_mc(pool, T, rng)
    elif cfg.method == "dis":
        preds = predict(_make_predictor(cfg, pred_seed), pool, LabeledSet())
        est_all, var_all = run_dis(pool, preds, clamp, T, rng)
    elif cfg.method == "dis_ais":
        est_all, var_all = run_dis_ais(
            pool, _make_predictor(cfg, pred_seed), clamp, T, rng, cfg.retrain_every
        )
    else:  # ppi
        preds = predict(_make_predictor(cfg, pred_seed), pool, LabeledSet())
        est_all, var_all = run_ppi(pool, preds, T, rng)
    return est_all[grid - 1], var_all[grid - 1], var_all[grid - 1]


def _worker_count() -> int:
    cap = os.environ.get("ACTIVE_MEASURE_THREADS")
    n = os.cpu_count() or 1
    if cap:
        n = min(n, max(int(cap), 1))
    return n


def _run_chunk(args) -> tuple[int, np.ndarray, np.ndarray, np.ndarray]:
    cfg, lo, hi = args
    pool = build_pool(cfg)
    k = len(cfg.steps)
    est = np.empty((hi - lo, k))
    vc = np.empty((hi - lo, k))
    vs = np.empty((hi - lo, k))
    for i, trial_idx in enumerate(range(lo, hi)):
        est[i], vc[i], vs[i] = run_one_trial(cfg, pool, trial_idx)
    return lo, est, vc, vs


def run_trials(cfg: ExperimentConfig, collect: bool = False):
    """Run cfg.trials independent trials; returns metric rows (and the raw matrix).

    Results are identical whatever the worker count; trials are keyed by index.
    """
    pool = build_pool(cfg)
    f_true = total_true(pool)
    M = cfg.trials
    k = len(cfg.steps)
    est = np.empty((M, k))
    vc = np.empty((M, k))
    vs = np.empty((M, k))
    workers = min(_worker_count(), M)
    if workers > 1 and M >= 64:
        bounds = np.linspace(0, M, workers * 4 + 1, dtype=int)
        chunks = [(cfg, int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
        with multiprocessing.Pool(workers) as mp_pool:
            for lo, e, c, s in mp_pool.imap_unordered(_run_chunk, chunks):
                est[lo : lo + len(e)] = e
                vc[lo : lo + len(e)] = c
                vs[lo : lo + len(e)] = s
    else:
        for idx in range(M):
            est[idx], vc[idx], vs[idx] = run_one_trial(cfg, pool, idx)
    z = inverse_normal_cdf(0.5 + cfg.level / 2.0)
    rows = []
    for j, t in enumerate(cfg.steps):
        tracked = bool(np.all(np.isfinite(vc[:, j])))
        rows.append(
            MetricsRow(
                method=cfg.method,
                scheme=cfg.scheme_label,
                t=int(t),
                fractional_error_mean=fractional_error(est[:, j], f_true),
                coverage=coverage(est[:, j], vc[:, j], f_true, cfg.level) if tracked else None,
                ci_radius_mean_relative=(
                    float(np.mean(z * np.sqrt(vc[:, j])) / f_true) if tracked else None
                ),
                trials=M,
            )
        )
    if collect:
        return rows, TrialMatrix(cfg.steps, est, vc, vs, f_true)
    return rows


@dataclass(frozen=True)
class VarianceModelConfig:
    """Closed-form comparison of weighting schemes under a parametric decay model.

    Per-step variance is c * tau**(-y) / w_tau with w the nondecreasing family
    (reciprocal-quadratic by default); no sampling is involved.
    """

    y_grid: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    schemes: tuple[str, ...] = ("sqrt", "lure", "comb")
    t_grid: tuple[int, ...] = (10, 100, 500, 2000)
    N: int = 4001
    c: float = 1.0
    family: str = "lure"

    def __post_init__(self):
        if any(not (0.0 <= y <= 1.0) for y in self.y_grid):
            raise ValueError("decay rates must lie in [0, 1]")
        if max(self.t_grid) >= self.N:
            raise ValueError("t grid must stay below N")


def _family_weights(family: str, t: int, N: int) -> np.ndarray:
    if family == "lure":
        return lure_weights(t, N)
    if family == "uniform":
        return np.ones(t)
    raise ValueError(f"unknown weight family {family!r}")


def variance_model_ratio(scheme_kind: str, y: float, t: int, N: int, c: float = 1.0, family: str = "lure") -> float:
    """Variance of a scheme-weighted combination relative to the optimal weighting."""
    tau = np.arange(1, t + 1, dtype=float)
    w = _family_weights(family, t, N)
    var = c * tau ** (-y) / w
    if scheme_kind == "sqrt":
        alpha = sqrt_weights(t)
    elif scheme_kind == "lure":
        alpha = lure_weights(t, N)
    elif scheme_kind == "comb":
        alpha = comb_weights(t, N)
    elif scheme_kind == "opt":
        alpha = 1.0 / var
    else:
        raise ValueError(f"unknown scheme {scheme_kind!r}")
    a = normalize(alpha)
    combined = float(np.dot(a * a, var))
    optimal = 1.0 / float(np.sum(1.0 / var))
    return combined / optimal


def variance_model_compare(cfg: VarianceModelConfig) -> list[dict]:
    """Exact scheme-to-optimal variance ratios over the (scheme, y, t) grid."""
    rows = []
    for scheme in cfg.schemes:
        for y in cfg.y_grid:
            for t in cfg.t_grid:
                rows.append(
                    {
                        "scheme": scheme,
                        "y": y,
                        "t": t,
                        "ratio": variance_model_ratio(scheme, y, t, cfg.N, cfg.c, cfg.family),
                    }
                )
    return rows


def _row_dicts(rows) -> list[dict]:
    return [asdict(r) if not isinstance(r, dict) else dict(r) for r in rows]


def _format_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def export_results(rows, path: str | Path, format: str = "csv"):
    """Write rows to CSV or JSON lines; numbers keep full round-trip precision."""
    dicts = _row_dicts(rows)
    path = Path(path)
    if format == "jsonl":
        import json

        with open(path, "w", encoding="utf-8") as fh:
            for d in dicts:
                fh.write(json.dumps(d) + "\n")
        return
    if format != "csv":
        raise ValueError(f"unknown format {format!r}")
    import csv as csvmod

    header = list(dicts[0]) if dicts else [f.name for f in MetricsRow.__dataclass_fields__.values()]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csvmod.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for d in dicts:
            writer.writerow([_format_cell(d[k]) for k in header])


def read_results(path: str | Path) -> list[dict]:
    """Read back an exported results file (inverse of export_results)."""
    path = Path(path)
    if path.suffix == ".jsonl" or path.read_text(encoding="utf-8")[:1] == "{":
        import json

        return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line]
    import csv as csvmod

    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csvmod.DictReader(fh):
            parsed: dict = {}
            for key, raw in row.items():
                if raw == "":
                    parsed[key] = None
                    continue
                try:
                    parsed[key] = int(raw)
                except ValueError:
                    try:
                        parsed[key] = float(raw)
                    except ValueError:
                        parsed[key] = raw
            out.append(parsed)
    return out
