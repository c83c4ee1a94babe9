"""The without-replacement sampling run: base estimates, combination, orchestration.

A run labels one unit per step. The step-t base estimate adds the labeled mass
to an importance-sampling correction from the single new draw,

    F_hat_t = F(labeled before t) + f(s_t) / q_t(s_t),

which is unbiased for the pool total under any strictly positive proposal.
Per-step estimates are combined with normalized scheme weights, and streaming
registers keep both variance estimators current in O(t) per step.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, asdict
from typing import Callable, Sequence

import numpy as np

from .errors import (
    CoverageError,
    ExhaustedError,
    LabelError,
    PendingConflictError,
)
from .pool import LabeledSet, UnitPool
from .proposal import ClampPolicy, PredictionTable, draw_index, predict
from .variance import (
    VarianceAccumulator,
    combine_variances,
    confidence_interval,
    simple_variance,
)
from .weights import WeightScheme, normalize, scheme_weights

EXPORT_FIELDS = ("tau", "unit", "f", "q", "f_hat", "combined", "var_cond", "var_simp")


@dataclass(frozen=True)
class StepRecord:
    tau: int
    unit_id: str
    f_value: float
    q_tau_of_s: float
    F_D_tau: float
    F_hat_tau: float
    combined: float
    var_cond: float
    var_simp: float


@dataclass(frozen=True)
class EstimateReport:
    t: int
    estimate: float
    var_cond: float
    var_simp: float
    ci_lo: float
    ci_hi: float
    level: float
    caveat: bool

    def as_dict(self) -> dict:
        return asdict(self)


def step_estimate(F_D: float, f_s: float, q_s: float) -> float:
    """Base estimate: labeled mass plus the importance-weighted new label."""
    if not (q_s > 0):
        raise ValueError(f"proposal probability must be positive, got {q_s}")
    if f_s < 0 or F_D < 0:
        raise ValueError("labeled values and masses are nonnegative")
    return F_D + f_s / q_s

def combine(estimates: Sequence[float], weights: Sequence[float]) -> float:
    """Weighted sum of per-step estimates under normalized weights."""
    est = np.asarray(estimates, dtype=float)
    w = np.asarray(weights, dtype=float)
    if est.shape != w.shape:
        raise ValueError(f"shape mismatch: {est.shape} estimates vs {w.shape} weights")
    if abs(float(w.sum()) - 1.0) > 1e-12:
        raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
    return float(np.dot(w, est))


class ActiveRun:
    """State and step logic of one sequential measurement run.

    In simulation mode (pool carries ground truth) labels are answered
    internally; in live mode the caller drives next_sample / submit_label and
    supplies predictions up front or via push_predictions. The same object
    backs both, which is what makes live sessions replayable through the
    simulation path.
    """

    def __init__(
        self,
        pool: UnitPool,
        scheme: WeightScheme,
        clamp: ClampPolicy,
        seed: int | np.random.Generator = 0,
        predictor=None,
        predictions: PredictionTable | None = None,
        initial: LabeledSet | None = None,
        retrain_every: int = 1,
        level: float = 0.95,
        uniform_fallback: bool = True,
        track_variance: bool = True,
    ):
        if retrain_every < 1:
            raise ValueError(f"retrain_every must be >= 1, got {retrain_every}")
        if not (0.0 < level < 1.0):
            raise ValueError(f"level must lie in (0, 1), got {level}")
        if scheme.needs_variances and not track_variance:
            raise ValueError("inverse-variance weighting requires variance tracking")
        self.pool = pool
        self.scheme = scheme
        self.clamp = clamp
        self.level = level
        self.retrain_every = retrain_every
        self.track_variance = track_variance
        self.predictor = predictor
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

        self.labeled = LabeledSet()
        self._mask = np.zeros(pool.N, dtype=bool)
        self._f_d = 0.0
        if initial is not None:
            for uid, value in initial.items():
                self._check_label(uid, value)
                self.labeled.add(uid, value)
                self._mask[pool.position(uid)] = True
                self._f_d += value
        self.n_initial = len(self.labeled)
        self.n_effective = pool.N - self.n_initial
        if self.n_effective < 1:
            raise ExhaustedError("initial labels already cover the pool")

        self.steps: list[StepRecord] = []
        self.estimates: list[float] = []
        self.combined_history: list[float] = []
        self.norm_weights: np.ndarray = np.zeros(0)
        self.acc = VarianceAccumulator()
        self.last_var_taus: np.ndarray = np.zeros(0)
        self.floor_events = 0
        self.inv_fallback_events = 0
        self._epochs: list[np.ndarray] = []
        self._step_epoch: list[int] = []
        self._step_z: list[float] = []
        self._pending: tuple[int, float, int, float] | None = None
        self._last_table: PredictionTable | None = None

        if predictor is not None:
            self._register_epoch(predict(predictor, pool, self.labeled))
        elif predictions is not None:
            self._register_table(predictions)
        elif uniform_fallback:
            self._epochs.append(clamp.apply(np.ones(pool.N)))
        else:
            raise CoverageError("no predictor or predictions supplied and uniform fallback disabled")

    # -- predictions ------------------------------------------------------

    def _register_table(self, table: PredictionTable):
        # Static predictors return the same table object every retrain.
        if table is self._last_table:
            return
        self._last_table = table
        missing = [
            u.id for u in self.pool.units if u.id not in self.labeled and u.id not in table
        ]
        if missing:
            raise CoverageError(
                f"predictions missing for {len(missing)} unlabeled units, e.g. {missing[0]!r}"
            )
        raw = np.array([table[u.id] if u.id in table else 0.0 for u in self.pool.units])
        self._register_epoch_array(self.clamp.apply(raw))

    def _register_epoch(self, table: PredictionTable):
        self._register_table(table)

    def _register_epoch_array(self, clamped: np.ndarray):
        # Identical consecutive tables collapse into one epoch.
        if self._epochs and np.array_equal(self._epochs[-1], clamped):
            return
        self._epochs.append(clamped)

    def push_predictions(self, table: PredictionTable):
        """Install a fresh prediction table; takes effect at the next sample."""
        if self._pending is not None:
            raise PendingConflictError("cannot push predictions while a sample is pending")
        if self.exhausted:
            raise ExhaustedError("run is exhausted")
        self._register_table(table)

    # -- stepping ---------------------------------------------------------

    @property
    def t(self) -> int:
        return len(self.steps)

    @property
    def exhausted(self) -> bool:
        return len(self.steps) >= self.n_effective

    @property
    def pending(self) -> tuple[str, str, float] | None:
        if self._pending is None:
            return None
        pos, q, _, _ = self._pending
        u = self.pool.units[pos]
        return u.id, u.payload_ref, q

    def next_sample(self) -> tuple[str, str, float]:
        """Draw (or re-fetch) the unit awaiting a label and its probability."""
        if self._pending is not None:
            return self.pending
        if self.exhausted:
            raise ExhaustedError("all units are labeled")
        positions = np.flatnonzero(~self._mask)
        g = self._epochs[-1][positions]
        z = float(g.sum())
        probs = g / z
        j = draw_index(self.rng, probs)
        self._pending = (int(positions[j]), float(probs[j]), len(self._epochs) - 1, z)
        return self.pending

    def _check_label(self, uid: str, value: float):
        v = float(value)
        if not math.isfinite(v) or v < 0:
            raise LabelError(f"label for {uid!r} must be finite and >= 0, got {value}")
        if self.pool.simulation_mode and v != self.pool.unit(uid).true_value:
            raise LabelError(
                f"label {v} for {uid!r} contradicts ground truth {self.pool.unit(uid).true_value}"
            )

    def _q_history(self, pos: int, t: int) -> np.ndarray:
        g_at_pos = np.array([e[pos] for e in self._epochs])
        e_idx = np.asarray(self._step_epoch[:t], dtype=int)
        z = np.asarray(self._step_z[:t], dtype=float)
        return g_at_pos[e_idx] / z

    def submit_label(self, unit_id: str, value: float) -> EstimateReport:
        """Apply a label to the pending unit and refresh all estimates."""
        if self._pending is None:
            raise PendingConflictError("no sample is pending")
        pos, q, epoch_idx, z = self._pending
        if unit_id != self.pool.units[pos].id:
            raise PendingConflictError(
                f"pending unit is {self.pool.units[pos].id!r}, got label for {unit_id!r}"
            )
        self._check_label(unit_id, value)
        v = float(value)

        t = len(self.steps) + 1
        f_d_t = self._f_d
        f_hat = step_estimate(f_d_t, v, q)
        self._step_epoch.append(epoch_idx)
        self._step_z.append(z)
        self.estimates.append(f_hat)
        est_arr = np.asarray(self.estimates)

        terminal = t == self.n_effective
        if terminal:
            # Final unit has q = 1; the estimate is exact, so it gets all the
            # weight (limit of the singular schedule) and zero variance.
            norm_w = np.zeros(t)
            norm_w[-1] = 1.0
            combined = f_hat
            var_cond = 0.0
            var_simp = 0.0
        else:
            var_taus = None
            if self.track_variance:
                q_hist = self._q_history(pos, t)
                beta_t = 1.0 / ((self.n_effective - t) * (self.n_effective - t + 1))
                f_prev = self.combined_history[-1] if t >= 2 else f_hat
                var_taus = self.acc.update(v, q, q_hist, beta_t, f_d_t, f_prev)
                self.last_var_taus = var_taus
            w, fallback = scheme_weights(self.scheme, t, self.n_effective, var_taus)
            if fallback:
                self.inv_fallback_events += 1
            norm_w = normalize(w)
            combined = float(np.dot(norm_w, est_arr))
            if self.track_variance:
                var_cond, raw = combine_variances(var_taus, norm_w)
                if raw < 0:
                    self.floor_events += 1
                var_simp = simple_variance(est_arr, norm_w, combined)
            else:
                var_cond = float("nan")
                var_simp = float("nan")

        self.norm_weights = norm_w
        self.combined_history.append(combined)
        self.steps.append(
            StepRecord(t, unit_id, v, q, f_d_t, f_hat, combined, var_cond, var_simp)
        )
        self.labeled.add(unit_id, v)
        self._mask[pos] = True
        self._f_d += v
        self._pending = None

        if self.predictor is not None and not self.exhausted and t % self.retrain_every == 0:
            self._register_epoch(predict(self.predictor, self.pool, self.labeled))
        return self.report()

    # -- queries ----------------------------------------------------------

    def q_of(self, tau: int, unit_id: str) -> float:
        """Probability the step-tau proposal assigned to a unit it supported."""
        pos = self.pool.position(unit_id)
        return float(self._epochs[self._step_epoch[tau - 1]][pos] / self._step_z[tau - 1])

    def _report_at(self, t: int) -> EstimateReport:
        rec = self.steps[t - 1]
        if math.isnan(rec.var_cond):
            lo, hi = float("nan"), float("nan")
        else:
            lo, hi = confidence_interval(rec.combined, rec.var_cond, self.level)
        return EstimateReport(
            t=t,
            estimate=rec.combined,
            var_cond=rec.var_cond,
            var_simp=rec.var_simp,
            ci_lo=lo,
            ci_hi=hi,
            level=self.level,
            caveat=self.scheme.kind == "inv",
        )

    def report(self) -> EstimateReport:
        if not self.steps:
            raise ValueError("no steps completed; nothing to report")
        return self._report_at(len(self.steps))

    def trajectory(self) -> list[EstimateReport]:
        return [self._report_at(t) for t in range(1, len(self.steps) + 1)]

    # -- export -----------------------------------------------------------

    def to_records(self) -> list[dict]:
        return [
            {
                "tau": rec.tau,
                "unit": rec.unit_id,
                "f": rec.f_value,
                "q": rec.q_tau_of_s,
                "f_hat": rec.F_hat_tau,
                "combined": rec.combined,
                "var_cond": rec.var_cond,
                "var_simp": rec.var_simp,
            }
            for rec in self.steps
        ]

    def export_jsonl(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.to_records())

    def export_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(EXPORT_FIELDS)
        for r in self.to_records():
            writer.writerow([repr(r[k]) if isinstance(r[k], float) else r[k] for k in EXPORT_FIELDS])
        return buf.getvalue()


def run_active_measurement(
    pool: UnitPool,
    predictor,
    scheme: WeightScheme,
    clamp: ClampPolicy,
    T: int,
    seed: int | np.random.Generator = 0,
    initial: LabeledSet | None = None,
    retrain_every: int = 1,
    level: float = 0.95,
    label_fn: Callable[[str, str, float], float] | None = None,
    track_variance: bool = True,
) -> ActiveRun:
    """Run T labeling steps; labels come from ground truth or label_fn."""
    if pool.simulation_mode is False and label_fn is None:
        raise LabelError("live pools need a label callback")
    run = ActiveRun(
        pool,
        scheme,
        clamp,
        seed=seed,
        predictor=predictor,
        initial=initial,
        retrain_every=retrain_every,
        level=level,
        track_variance=track_variance,
    )
    if T > run.n_effective:
        raise ExhaustedError(f"pool supports {run.n_effective} steps, asked for {T}")
    for _ in range(T):
        uid, ref, q = run.next_sample()
        value = label_fn(uid, ref, q) if label_fn is not None else pool.unit(uid).true_value
        run.submit_label(uid, value)
    return run


def report(run: ActiveRun) -> EstimateReport:
    """Most recent estimate, variance estimates, and interval for a run."""
    return run.report()
