"""Acquisition distributions over unlabeled units, and the predictors that feed them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import CoverageError, ModeError, PoolFormatError
from .pool import LabeledSet, UnitPool


@dataclass(frozen=True)
class ClampPolicy:
    """Positivity clamp applied to raw predictions before normalization.

    ``floor`` replaces each value by max(value, clamp value); ``offset`` adds
    the clamp value uniformly. Either way every unit keeps a strictly positive
    sampling probability even where the predictor says zero.
    """

    mode: str = "floor"
    value: float = 1.0

    def __post_init__(self):
        if self.mode not in ("floor", "offset"):
            raise ValueError(f"clamp mode must be 'floor' or 'offset', got {self.mode!r}")
        if not (self.value > 0) or not math.isfinite(self.value):
            raise ValueError(f"clamp value must be a positive finite real, got {self.value}")

    def apply(self, g: np.ndarray) -> np.ndarray:
        if self.mode == "floor":
            return np.maximum(g, self.value)
        return g + self.value


class PredictionTable:
    """Per-unit predicted values, all finite and nonnegative."""

    def __init__(self, values: Mapping[str, float]):
        self.values: dict[str, float] = {}
        for uid, v in values.items():
            v = float(v)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"prediction for {uid!r} must be finite and >= 0, got {v}")
            self.values[uid] = v

    def __contains__(self, uid: str) -> bool:
        return uid in self.values

    def __getitem__(self, uid: str) -> float:
        return self.values[uid]

    def __len__(self) -> int:
        return len(self.values)


class Proposal:
    """Strictly positive probabilities over the currently unlabeled units."""

    def __init__(self, support: Sequence[str], probs: np.ndarray):
        probs = np.asarray(probs, dtype=float)
        if len(support) != len(probs):
            raise ValueError("support and probs lengths differ")
        if len(support) == 0:
            raise ValueError("empty support")
        if not np.all(probs > 0):
            raise ValueError("proposal probabilities must be strictly positive")
        if abs(float(probs.sum()) - 1.0) > 1e-12:
            raise ValueError(f"proposal probabilities sum to {probs.sum()!r}, not 1")
        self.support = list(support)
        self.probs = probs
        self._pos = {uid: i for i, uid in enumerate(self.support)}

    def prob_of(self, uid: str) -> float:
        return float(self.probs[self._pos[uid]])

    def sample(self, rng: np.random.Generator) -> tuple[str, float]:
        i = draw_index(rng, self.probs)
        return self.support[i], float(self.probs[i])


def draw_index(rng: np.random.Generator, probs: np.ndarray) -> int:
    """Inverse-CDF draw of an index proportional to probs (one uniform variate)."""
    cdf = np.cumsum(probs)
    u = rng.random() * cdf[-1]
    return min(int(np.searchsorted(cdf, u, side="right")), len(probs) - 1)


def build_proposal(preds: PredictionTable, unlabeled: Sequence[str], clamp: ClampPolicy) -> Proposal:
    """Normalize clamped predictions over the unlabeled units."""
    if not unlabeled:
        raise ValueError("no unlabeled units to build a proposal over")
    missing = [uid for uid in unlabeled if uid not in preds]
    if missing:
        raise CoverageError(f"missing predictions for {len(missing)} unlabeled units, e.g. {missing[0]!r}")
    raw = np.array([preds[uid] for uid in unlabeled], dtype=float)
    clamped = clamp.apply(raw)
    return Proposal(unlabeled, clamped / clamped.sum())


def sample(proposal: Proposal, rng: np.random.Generator) -> tuple[str, float]:
    """Draw one unit and its proposal probability."""
    return proposal.sample(rng)


def predict(predictor, pool: UnitPool, labeled: LabeledSet) -> PredictionTable:
    """Invoke a predictor; the result must cover every unlabeled unit."""
    table = predictor.predict(pool, labeled)
    missing = [u.id for u in pool if u.id not in labeled and u.id not in table]
    if missing:
        raise CoverageError(f"predictor left {len(missing)} unlabeled units uncovered, e.g. {missing[0]!r}")
    return table


class OraclePredictor:
    """Predicts each unit's true value exactly; simulation pools only."""

    def __init__(self):
        self._table: PredictionTable | None = None
        self._pool: UnitPool | None = None

    def predict(self, pool: UnitPool, labeled: LabeledSet) -> PredictionTable:
        if not pool.simulation_mode:
            raise ModeError("oracle predictions need ground truth")
        if self._table is None or self._pool is not pool:
            self._pool = pool
            self._table = PredictionTable({u.id: u.true_value for u in pool})
        return self._table


class ConstantPredictor:
    """Predicts the same value everywhere; normalizes to a uniform proposal."""

    def __init__(self, value: float = 1.0):
        self.value = float(value)
        self._table: PredictionTable | None = None
        self._pool: UnitPool | None = None

    def predict(self, pool: UnitPool, labeled: LabeledSet) -> PredictionTable:
        if self._table is None or self._pool is not pool:
            self._pool = pool
            self._table = PredictionTable({u.id: self.value for u in pool})
        return self._table


class NoisyPredictor:
    """Multiplicatively distorted truth: g(s) = f(s) * bias * exp(sigma * eps_s).

    The per-unit noise eps_s is drawn once the first time the predictor sees a
    pool and reused afterwards, so within a run the predictions are a fixed
    deterministic table.
    """

    def __init__(self, bias: float = 1.0, sigma: float = 0.0, seed=0):
        self.bias = float(bias)
        self.sigma = float(sigma)
        self.seed = seed
        self._table: PredictionTable | None = None
        self._pool: UnitPool | None = None

    def predict(self, pool: UnitPool, labeled: LabeledSet) -> PredictionTable:
        if not pool.simulation_mode:
            raise ModeError("noisy predictions distort ground truth")
        if self._pool is not None and self._pool is not pool:
            raise ValueError("NoisyPredictor is bound to the pool it first predicted for")
        if self._table is None:
            self._pool = pool
            eps = np.random.default_rng(self.seed).standard_normal(pool.N)
            g = pool.truth() * self.bias * np.exp(self.sigma * eps)
            self._table = PredictionTable(dict(zip(pool.ids, g)))
        return self._table


class ImprovingPredictor:
    """Noisy predictions whose noise scale decays as labels accumulate.

    At a retrain after t labeled steps the noise is redrawn with scale
    sigma(t) = sigma0 * (t + 1) ** (-rate / 2), so the per-step estimator
    variance it induces decays like t ** (-rate) with rate in [0, 1].
    """

    def __init__(self, sigma0: float = 1.0, rate: float = 0.5, bias: float = 1.0, seed: int = 0):
        if not (0.0 <= rate <= 1.0):
            raise ValueError(f"decay rate must lie in [0, 1], got {rate}")
        self.sigma0 = float(sigma0)
        self.rate = float(rate)
        self.bias = float(bias)
        self._rng = np.random.default_rng(seed)
        self._n_initial: int | None = None

    def predict(self, pool: UnitPool, labeled: LabeledSet) -> PredictionTable:
        if not pool.simulation_mode:
            raise ModeError("improving predictions distort ground truth")
        if self._n_initial is None:
            self._n_initial = len(labeled)
        t = max(len(labeled) - self._n_initial, 0)
        sigma = self.sigma0 * (t + 1) ** (-self.rate / 2.0)
        eps = self._rng.standard_normal(pool.N)
        g = pool.truth() * self.bias * np.exp(sigma * eps)
        return PredictionTable(dict(zip(pool.ids, g)))


class FixedCheckpointPredictor:
    """Step-thresholded prediction tables, emulating a pre-trained model sequence.

    ``checkpoints`` maps a label-count threshold to a full prediction table;
    predictions come from the largest threshold at or below the current number
    of labeled units.
    """

    def __init__(self, checkpoints: Mapping[int, Mapping[str, float]]):
        if not checkpoints:
            raise ValueError("need at least one checkpoint")
        self.checkpoints = {int(k): PredictionTable(v) for k, v in checkpoints.items()}
        self._thresholds = sorted(self.checkpoints)

    @classmethod
    def from_file(cls, path: str | Path) -> "FixedCheckpointPredictor":
        """Read ``threshold <TAB> id <TAB> g_value`` records."""
        tables: dict[int, dict[str, float]] = {}
        with open(path, encoding="utf-8") as fh:
            for line_no, raw in enumerate(fh, start=1):
                line = raw.rstrip("\n")
                if not line.strip() or line.lstrip().startswith("#"):
                    continue
                fields = line.split("\t")
                if len(fields) != 3:
                    raise PoolFormatError(line_no, f"expected 3 tab-separated fields, got {len(fields)}")
                try:
                    threshold = int(fields[0])
                    value = float(fields[2])
                except ValueError:
                    raise PoolFormatError(line_no, f"bad threshold or value in {line!r}") from None
                tables.setdefault(threshold, {})[fields[1]] = value
        if not tables:
            raise PoolFormatError(0, "checkpoint file contains no records")
        return cls(tables)

    def predict(self, pool: UnitPool, labeled: LabeledSet) -> PredictionTable:
        eligible = [k for k in self._thresholds if k <= len(labeled)]
        if not eligible:
            raise ValueError(f"no checkpoint threshold at or below {len(labeled)} labels")
        return self.checkpoints[eligible[-1]]
