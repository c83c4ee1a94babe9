"""Comparison estimators under one interface so the harness can sweep them.

With-replacement estimators (uniform Monte Carlo, fixed-proposal importance
sampling, and its adaptive variant) draw iid from proposals over the whole
pool. Without-replacement variants reuse the sequential run engine with the
appropriate proposal source. The residual-correction estimator subtracts a
uniform-sample estimate of the prediction error from the predicted total.
"""

from __future__ import annotations

from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ExhaustedError
from .estimator import ActiveRun, run_active_measurement
from .pool import LabeledSet, UnitPool
from .proposal import (
    ClampPolicy,
    ConstantPredictor,
    PredictionTable,
    Proposal,
    build_proposal,
    draw_index,
    predict,
)
from .weights import WeightScheme, normalize, sqrt_weights

METHODS = ("active", "mc", "mc_wor", "dis", "dis_ais", "dis_wor", "active_testing", "ppi")


def mc_estimate(samples: Iterable[tuple[str, float]], N: int) -> float:
    """Scale the mean of uniformly drawn labels up to the pool: (N / t) * sum f."""
    values = [float(v) for _, v in samples]
    if not values:
        raise ValueError("need at least one sample")
    return N * float(np.mean(values))


def dis_estimate(samples: Iterable[tuple[float, float]]) -> float:
    """Mean importance weight f/q over iid draws from a fixed full-pool proposal."""
    pairs = [(float(f), float(q)) for f, q in samples]
    if not pairs:
        raise ValueError("need at least one sample")
    if any(q <= 0 for _, q in pairs):
        raise ValueError("proposal probabilities must be positive")
    return float(np.mean([f / q for f, q in pairs]))


def ppi_estimate(
    g_total: float, paired: Iterable[tuple[float, float]], N: int, t: int
) -> float:
    """Predicted total minus the scaled mean residual over uniform draws."""
    pairs = [(float(g), float(f)) for g, f in paired]
    if len(pairs) != t or t < 1:
        raise ValueError(f"expected {t} paired samples, got {len(pairs)}")
    residual = sum(g - f for g, f in pairs)
    return float(g_total) - (N / t) * residual


def oracle_loss_table(pool: UnitPool, preds: PredictionTable) -> dict[str, float]:
    """Absolute prediction error per unit; needs ground truth."""
    return {u.id: abs(u.true_value - preds[u.id]) for u in pool}


def active_testing_acquisition(
    loss: Mapping[str, float], unlabeled: Sequence[str], clamp: ClampPolicy
) -> Proposal:
    """Proposal proportional to clamped per-unit loss over the unlabeled units."""
    return build_proposal(PredictionTable(loss), list(unlabeled), clamp)


class LossProxyPredictor:
    """Feeds per-unit loss values into the run engine as its acquisition scores."""

    def __init__(self, loss: Mapping[str, float]):
        self._table = PredictionTable(loss)

    def predict(self, pool: UnitPool, labeled: LabeledSet) -> PredictionTable:
        return self._table


class FrozenPredictor:
    """Pins another predictor's first table for the rest of the run."""

    def __init__(self, inner):
        self._inner = inner
        self._table: PredictionTable | None = None

    def predict(self, pool: UnitPool, labeled: LabeledSet) -> PredictionTable:
        if self._table is None:
            self._table = self._inner.predict(pool, labeled)
        return self._table


def _cumulative_mean(values: np.ndarray) -> np.ndarray:
    return np.cumsum(values) / np.arange(1, len(values) + 1)


def _cumulative_sample_var(values: np.ndarray) -> np.ndarray:
    """Unbiased sample variance of the first t values, 0 at t = 1."""
    t = np.arange(1, len(values) + 1, dtype=float)
    mean = _cumulative_mean(values)
    sq = np.cumsum(values**2)
    with np.errstate(invalid="ignore", divide="ignore"):
        var = (sq - t * mean**2) / (t - 1)
    var[0] = 0.0
    return np.maximum(var, 0.0)


def run_mc(pool: UnitPool, T: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Uniform with-replacement draws; returns estimates and variance estimates at t = 1..T."""
    truth = pool.truth()
    idx = rng.integers(0, pool.N, size=T)
    f = truth[idx]
    est = pool.N * _cumulative_mean(f)
    var = pool.N**2 * _cumulative_sample_var(f) / np.arange(1, T + 1)
    return est, var


def run_dis(
    pool: UnitPool, preds: PredictionTable, clamp: ClampPolicy, T: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Fixed-proposal with-replacement importance sampling over the whole pool."""
    truth = pool.truth()
    proposal = build_proposal(preds, pool.ids, clamp)
    probs = proposal.probs
    weights = np.empty(T)
    for i in range(T):
        j = draw_index(rng, probs)
        weights[i] = truth[j] / probs[j]
    est = _cumulative_mean(weights)
    var = _cumulative_sample_var(weights) / np.arange(1, T + 1)
    return est, var


def run_dis_ais(
    pool: UnitPool,
    predictor,
    clamp: ClampPolicy,
    T: int,
    rng: np.random.Generator,
    retrain_every: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Adaptive with-replacement importance sampling.

    The proposal covers the whole pool and is refreshed from the predictor as
    labels accumulate; per-draw estimates are combined under square-root
    weights, the usual conservative choice when the proposal adapts.
    """
    truth = pool.truth()
    labeled = LabeledSet()
    table = predict(predictor, pool, labeled)
    per_step = np.empty(T)
    for t in range(1, T + 1):
        proposal = build_proposal(table, pool.ids, clamp)
        j = draw_index(rng, proposal.probs)
        uid = pool.ids[j]
        per_step[t - 1] = truth[j] / proposal.probs[j]
        if uid not in labeled:
            labeled.add(uid, float(truth[j]))
        if t % retrain_every == 0:
            table = predict(predictor, pool, labeled)
    est = np.empty(T)
    var = np.empty(T)
    for t in range(1, T + 1):
        w = normalize(sqrt_weights(t))
        est[t - 1] = float(np.dot(w, per_step[:t]))
        var[t - 1] = float(np.dot(w**2, (per_step[:t] - est[t - 1]) ** 2))
    return est, var


def run_ppi(
    pool: UnitPool, preds: PredictionTable, T: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Residual-corrected predicted total from uniform with-replacement draws."""
    truth = pool.truth()
    g = np.array([preds[uid] for uid in pool.ids])
    g_total = float(g.sum())
    idx = rng.integers(0, pool.N, size=T)
    resid = g[idx] - truth[idx]
    t_arr = np.arange(1, T + 1)
    est = g_total - pool.N * _cumulative_mean(resid)
    var = pool.N**2 * _cumulative_sample_var(resid) / t_arr
    return est, var


def run_mc_wor(
    pool: UnitPool,
    T: int,
    seed: int | np.random.Generator,
    scheme: WeightScheme | None = None,
    level: float = 0.95,
    track_variance: bool = True,
) -> ActiveRun:
    """Without-replacement run under a uniform proposal."""
    return run_active_measurement(
        pool,
        ConstantPredictor(1.0),
        scheme or WeightScheme("lure"),
        ClampPolicy("floor", 1.0),
        T,
        seed=seed,
        level=level,
        track_variance=track_variance,
    )


def run_dis_wor(
    pool: UnitPool,
    predictor,
    clamp: ClampPolicy,
    T: int,
    seed: int | np.random.Generator,
    scheme: WeightScheme | None = None,
    level: float = 0.95,
    track_variance: bool = True,
) -> ActiveRun:
    """Without-replacement run with the predictor frozen at its first table."""
    return run_active_measurement(
        pool,
        FrozenPredictor(predictor),
        scheme or WeightScheme("lure"),
        clamp,
        T,
        seed=seed,
        level=level,
        track_variance=track_variance,
    )


def run_active_testing(
    pool: UnitPool,
    preds: PredictionTable,
    clamp: ClampPolicy,
    T: int,
    seed: int | np.random.Generator,
    scheme: WeightScheme | None = None,
    level: float = 0.95,
    track_variance: bool = True,
) -> ActiveRun:
    """Without-replacement run acquiring by absolute prediction error.

    The acquisition targets where the model is wrong rather than where the
    mass is, which mismatches the estimand; kept as a comparison point.
    """
    loss = oracle_loss_table(pool, preds)
    return run_active_measurement(
        pool,
        LossProxyPredictor(loss),
        scheme or WeightScheme("lure"),
        clamp,
        T,
        seed=seed,
        level=level,
        track_variance=track_variance,
    )


def exhaustion_guard(pool: UnitPool, T: int):
    if T > pool.N:
        raise ExhaustedError(f"pool of {pool.N} cannot supply {T} without-replacement steps")
