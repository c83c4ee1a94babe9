"""Step-weight schemes for combining per-step estimates.

Each scheme models a different source of variance decay across steps:
square-root weights assume the proposal improves with more labels, the
reciprocal-quadratic ("lure") weights assume the shrinking unlabeled set does
the work, the combined weights multiply the two, and the inverse-variance
scheme plugs in estimated conditional variances for the early steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVarianceError

KINDS = ("sqrt", "lure", "comb", "inv")


@dataclass(frozen=True)
class WeightScheme:
    kind: str
    gamma: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown weight scheme {self.kind!r}; expected one of {KINDS}")
        if self.kind == "inv":
            g = 0.5 if self.gamma is None else float(self.gamma)
            if not (0.0 < g < 1.0):
                raise ValueError(f"gamma must lie in (0, 1), got {g}")
            object.__setattr__(self, "gamma", g)
        elif self.gamma is not None:
            raise ValueError(f"gamma is only meaningful for the 'inv' scheme, got kind={self.kind!r}")

    @property
    def needs_variances(self) -> bool:
        return self.kind == "inv"


def sqrt_weights(t: int) -> np.ndarray:
    """Unnormalized weights sqrt(tau) for tau = 1..t."""
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    return np.sqrt(np.arange(1, t + 1, dtype=float))


def lure_weights(t: int, N: int) -> np.ndarray:
    """Unnormalized weights 1 / ((N - tau) (N - tau + 1)) for tau = 1..t.

    Singular at tau = N; the run handles the exhaustion step separately, so
    t must stay below N here.
    """
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    if t >= N:
        raise ValueError(f"weights are singular at tau = N: need t < N, got t={t}, N={N}")
    tau = np.arange(1, t + 1, dtype=float)
    return 1.0 / ((N - tau) * (N - tau + 1))


def comb_weights(t: int, N: int) -> np.ndarray:
    """Unnormalized weights sqrt(tau) / ((N - tau) (N - tau + 1))."""
    return lure_weights(t, N) * sqrt_weights(t)


def inv_weights(var_hats: np.ndarray, gamma: float, t: int, N: int) -> np.ndarray:
    """Inverse estimated variances up to the junction, then a rescaled comb tail.

    The junction index is k = ceil(gamma * t). Weights are 1 / var_hats[tau]
    for tau <= k and comb(tau) * (1 / var_hats[k]) / comb(k) beyond it, which
    makes the sequence continuous at tau = k.
    """
    if not (0.0 < gamma < 1.0):
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    var_hats = np.asarray(var_hats, dtype=float)
    k = math.ceil(gamma * t)
    if len(var_hats) < k:
        raise ValueError(f"need variance estimates for tau <= {k}, got {len(var_hats)}")
    head_vars = var_hats[:k]
    if np.any(head_vars <= 0) or not np.all(np.isfinite(head_vars)):
        raise DegenerateVarianceError(
            f"nonpositive variance estimate among the first {k} steps"
        )
    head = 1.0 / head_vars
    if k == t:
        return head
    comb = comb_weights(t, N)
    scale = head[-1] / comb[k - 1]
    return np.concatenate([head, comb[k:] * scale])


def normalize(weights: np.ndarray) -> np.ndarray:
    """Scale nonnegative weights to sum to one."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    s = float(w.sum())
    if s <= 0:
        raise ValueError("weights sum to zero; cannot normalize")
    return w / s


def worst_case_ratio(w: np.ndarray, t: int) -> float:
    """Worst-case variance ratio of the combined scheme built on weights w.

    For positive nondecreasing w over tau = 1..t this is
    (sum w) (sum w*tau) / (sum w*sqrt(tau))^2, the ratio of the combined
    scheme's variance to the best fixed weighting under the least favorable
    variance decay. It stays at or below 9/8.
    """
    w = np.asarray(w, dtype=float)[:t]
    if len(w) < t or t < 1:
        raise ValueError(f"need {t} weights, got {len(w)}")
    if np.any(w <= 0):
        raise ValueError("weights must be strictly positive")
    if np.any(np.diff(w) < 0):
        raise ValueError("weights must be nondecreasing")
    tau = np.arange(1, t + 1, dtype=float)
    num = w.sum() * float((w * tau).sum())
    den = float((w * np.sqrt(tau)).sum()) ** 2
    return num / den


def scheme_weights(
    scheme: WeightScheme,
    t: int,
    N: int,
    var_hats: np.ndarray | None = None,
) -> tuple[np.ndarray, bool]:
    """Unnormalized weights for tau = 1..t under a scheme, with inv fallback.

    For the inv scheme, nonpositive variance estimates at required indices are
    replaced by the smallest positive one among them; if none is positive the
    step falls back to comb weights. Returns (weights, fallback_used).
    """
    if scheme.kind == "sqrt":
        return sqrt_weights(t), False
    if scheme.kind == "lure":
        return lure_weights(t, N), False
    if scheme.kind == "comb":
        return comb_weights(t, N), False
    if var_hats is None:
        raise ValueError("inv scheme needs per-step variance estimates")
    var_hats = np.asarray(var_hats, dtype=float)
    k = math.ceil(scheme.gamma * t)
    head = var_hats[:k].copy()
    bad = ~(np.isfinite(head) & (head > 0))
    if bad.any():
        good = head[~bad]
        if len(good) == 0:
            return comb_weights(t, N), True
        head[bad] = good.min()
        patched = np.concatenate([head, var_hats[k:]])
        return inv_weights(patched, scheme.gamma, t, N), True
    return inv_weights(var_hats, scheme.gamma, t, N), False
