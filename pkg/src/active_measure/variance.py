"""Conditional-variance estimation for without-replacement sampling runs.

Each step contributes a single draw, so the conditional variance of step tau's
estimate is itself estimated by importance sampling: draws made at later steps
r >= tau re-enter step tau's variance estimate, reweighted by the proposal
ratio q_tau(s_r) / q_r(s_r). Units labeled between tau and r contribute their
exact terms. The unknown remaining mass is replaced by a plug-in mean (the
previous combined estimate minus the labeled mass at tau).

The estimator is a quadratic polynomial in the plug-in mean, so three running
sums per step (x, y, z below) plus three mixed coefficients (a, b, c) and the
mixing mass u are enough to refresh every step's estimate in O(t) total work
per new draw:

    x[tau] = sum of f(s)^2 / q_tau(s)   over s labeled after step tau
    y[tau] = sum of f(s)                over the same units
    z[tau] = sum of q_tau(s)            over the same units
    a, b, c, u = mixing-weighted sums such that the estimate for step tau is
    (a - 2 b G + c G^2) / u with G the current plug-in mean for step tau.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .errors import SequencingError
from .weights import lure_weights, normalize


def inverse_normal_cdf(p: float) -> float:
    """Quantile of the standard normal distribution.

    Rational minimax approximation (three branches on p), accurate to well
    below 1e-10 absolute over (0, 1); implemented here so reports do not
    depend on platform math libraries.
    """
    if not (0.0 < p < 1.0):
        raise ValueError(f"p must lie strictly inside (0, 1), got {p}")
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r
                    + 6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r
                  + 1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r
                + 1.3314166789178437745e2) * r + 3.3871328727963666080e0)
        den = (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r
                    + 3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r
                  + 5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r
                + 4.2313330701600911252e1) * r + 1.0)
        return q * num / den
    r = p if q < 0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        num = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r
                    + 2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r
                  + 3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r
                + 4.63033784615654529590e0) * r + 1.42343711074968357734e0)
        den = (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r
                    + 1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r
                  + 6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r
                + 2.05319162663775882187e0) * r + 1.0)
    else:
        r -= 5.0
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
                    + 1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r
                  + 2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r
                + 5.46378491116411436990e0) * r + 6.65790464350110377720e0)
        den = (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r
                    + 1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r
                  + 1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r
                + 5.99832206555887937690e-1) * r + 1.0)
    value = num / den
    return -value if q < 0 else value


def confidence_interval(estimate: float, var_hat: float, level: float) -> tuple[float, float]:
    """Normal interval estimate +/- z * sqrt(var_hat) at the given level."""
    if not (0.0 < level < 1.0):
        raise ValueError(f"level must lie in (0, 1), got {level}")
    if var_hat < 0 or not math.isfinite(var_hat):
        raise ValueError(f"var_hat must be finite and >= 0, got {var_hat}")
    z = inverse_normal_cdf(0.5 + level / 2.0)
    radius = z * math.sqrt(var_hat)
    return estimate - radius, estimate + radius


class VarianceAccumulator:
    """Streaming per-step variance registers, O(t) work per new draw."""

    def __init__(self, capacity: int = 64):
        self._cap = max(capacity, 1)
        self._x = np.zeros(self._cap)
        self._y = np.zeros(self._cap)
        self._z = np.zeros(self._cap)
        self._a = np.zeros(self._cap)
        self._b = np.zeros(self._cap)
        self._c = np.zeros(self._cap)
        self._u = np.zeros(self._cap)
        self._fd = np.zeros(self._cap)
        self._t = 0

    @property
    def t(self) -> int:
        return self._t

    def _grow(self):
        self._cap *= 2
        for name in ("_x", "_y", "_z", "_a", "_b", "_c", "_u", "_fd"):
            old = getattr(self, name)
            fresh = np.zeros(self._cap)
            fresh[: len(old)] = old
            setattr(self, name, fresh)

    def update(
        self,
        f_value: float,
        q_t: float,
        q_hist: np.ndarray,
        beta_t: float,
        f_d_new: float,
        f_prev: float,
    ) -> np.ndarray:
        """Fold the new draw into every step's registers.

        q_hist[tau - 1] is the probability the step-tau proposal assigned to
        the new unit, for tau = 1..t with t the new step count; its last entry
        equals q_t. f_d_new is the labeled mass before the new step, f_prev
        the previous combined estimate (the first step passes its own base
        estimate). Returns per-step variance estimates for tau = 1..t
        evaluated at the current plug-in means.
        """
        t = self._t + 1
        if len(q_hist) != t:
            raise SequencingError(f"expected {t} historical probabilities, got {len(q_hist)}")
        if t > self._cap:
            self._grow()
        self._fd[t - 1] = f_d_new
        self._t = t
        x = self._x[:t]
        y = self._y[:t]
        z = self._z[:t]
        a = self._a[:t]
        b = self._b[:t]
        c = self._c[:t]
        u = self._u[:t]
        q_hist = np.asarray(q_hist, dtype=float)
        g = f_prev - self._fd[:t]
        a += beta_t * (x + f_value * f_value / (q_t * q_hist))
        b += beta_t * (y + f_value / q_t)
        c += beta_t * (z + q_hist / q_t)
        u += beta_t
        # a step with no accumulated mixing mass yet has no estimate (nan)
        with np.errstate(invalid="ignore"):
            var = (a - 2.0 * b * g + c * g * g) / u
        x += f_value * f_value / q_hist
        y += f_value
        z += q_hist
        return var.copy()

    def variances(self, f_prev: float) -> np.ndarray:
        """Re-evaluate every step's estimate at a new plug-in mean."""
        t = self._t
        if t == 0:
            return np.zeros(0)
        g = f_prev - self._fd[:t]
        with np.errstate(invalid="ignore"):
            return (self._a[:t] - 2.0 * self._b[:t] * g + self._c[:t] * g * g) / self._u[:t]


def streaming_update(
    acc: VarianceAccumulator,
    step,
    q_lookup: Callable[[int], float],
    beta_t: float,
    f_prev: float,
) -> np.ndarray:
    """Apply one recorded step to the accumulator.

    ``step`` carries tau, f_value, q_tau_of_s, and F_D_tau; ``q_lookup(tau)``
    returns the probability the step-tau proposal assigned to the new unit.
    """
    t = acc.t + 1
    if step.tau != t:
        raise SequencingError(f"expected step {t}, got step {step.tau}")
    q_hist = np.array([q_lookup(tau) for tau in range(1, t + 1)], dtype=float)
    return acc.update(step.f_value, step.q_tau_of_s, q_hist, beta_t, step.F_D_tau, f_prev)


def plug_in_mean(tau: int, run, t: int | None = None) -> float:
    """Plug-in estimate of the unlabeled mass at step tau.

    Uses the combined estimate from the previous step; at t = 1 the only
    available estimate is the first step's own.
    """
    t = len(run.steps) if t is None else t
    prev = run.combined_history[t - 2] if t >= 2 else run.combined_history[0]
    return prev - run.steps[tau - 1].F_D_tau


def var_single(tau: int, r: int, run, g_hat: float) -> float:
    """One-draw variance estimate for step tau based on the draw at step r.

    Exact terms for units labeled at steps tau..r-1 plus an importance
    sampling correction from step r's draw. Direct quadratic-time reference
    used to cross-check the streaming registers.
    """
    exact = 0.0
    for j in range(tau, r):
        rec = run.steps[j - 1]
        q_tau_s = run.q_of(tau, rec.unit_id)
        exact += q_tau_s * (rec.f_value / q_tau_s - g_hat) ** 2
    rec = run.steps[r - 1]
    q_tau_sr = run.q_of(tau, rec.unit_id)
    ratio = q_tau_sr / rec.q_tau_of_s
    return exact + ratio * (rec.f_value / q_tau_sr - g_hat) ** 2


def var_tau(tau: int, t: int, run, g_hat: float) -> float:
    """Mix the one-draw estimates for step tau over r = tau..t.

    The mixing weights are the reciprocal-quadratic family in the global step
    index r, normalized over the window, matching the shrinking-sample-space
    variance decay of later draws.
    """
    betas = lure_weights(t, run.n_effective)[tau - 1 :]
    betas = normalize(betas)
    return float(
        sum(b * var_single(tau, r, run, g_hat) for b, r in zip(betas, range(tau, t + 1)))
    )


def combine_variances(var_taus: np.ndarray, norm_weights: np.ndarray) -> tuple[float, float]:
    """Weighted combination sum(w^2 * var); returns (floored, raw)."""
    raw = float(np.dot(norm_weights**2, var_taus))
    return max(raw, 0.0), raw


def simple_variance(estimates: np.ndarray, norm_weights: np.ndarray, combined: float) -> float:
    """Sum of squared weighted deviations of per-step estimates from the combined one."""
    dev = np.asarray(estimates, dtype=float) - combined
    return float(np.dot(norm_weights**2, dev * dev))


def var_combined(run, norm_weights: np.ndarray) -> float:
    """Quadratic-time reference for the combined conditional variance at the run's final step."""
    t = len(run.steps)
    var_taus = np.array([var_tau(tau, t, run, plug_in_mean(tau, run)) for tau in range(1, t + 1)])
    value, _ = combine_variances(var_taus, np.asarray(norm_weights, dtype=float))
    return value


def var_simple(run, norm_weights: np.ndarray) -> float:
    """Squared-deviation variance estimate at the run's final step."""
    estimates = np.array([rec.F_hat_tau for rec in run.steps])
    return simple_variance(estimates, np.asarray(norm_weights, dtype=float), run.combined_history[-1])
