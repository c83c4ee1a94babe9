import json
import math

import numpy as np
import pytest

from active_measure.errors import (
    CoverageError,
    ExhaustedError,
    LabelError,
    PendingConflictError,
)
from active_measure.estimator import (
    ActiveRun,
    combine,
    report,
    run_active_measurement,
    step_estimate,
)
from active_measure.pool import LabeledSet, total_true
from active_measure.proposal import (
    ClampPolicy,
    ImprovingPredictor,
    NoisyPredictor,
    OraclePredictor,
    PredictionTable,
)
from active_measure.variance import confidence_interval, var_combined, var_simple
from active_measure.weights import WeightScheme

CLAMP = ClampPolicy("floor", 0.5)


def test_step_estimate_values():
    assert step_estimate(0.0, 2.0, 1.0) == 2.0
    assert step_estimate(3.0, 2.0, 0.25) == 11.0
    with pytest.raises(ValueError):
        step_estimate(0.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        step_estimate(0.0, -1.0, 0.5)


def test_step_estimate_expectation_is_total():
    # three units, any strictly positive proposal: sum_q q * (0 + f/q) = F
    f = np.array([1.0, 2.0, 3.0])
    rng = np.random.default_rng(0)
    for _ in range(20):
        q = rng.uniform(0.05, 1.0, 3)
        q = q / q.sum()
        expectation = float(sum(qi * step_estimate(0.0, fi, qi) for fi, qi in zip(f, q)))
        assert expectation == pytest.approx(6.0, rel=1e-12)


def test_combine_examples():
    assert combine([5.0], [1.0]) == 5.0
    assert combine([4.0, 8.0], [0.5, 0.5]) == 6.0
    w = np.array([0.2, 0.3, 0.5])
    assert combine([7.7, 7.7, 7.7], w) == pytest.approx(7.7, rel=1e-15)
    with pytest.raises(ValueError, match="shape"):
        combine([1.0, 2.0], [1.0])
    with pytest.raises(ValueError, match="sum to 1"):
        combine([1.0, 2.0], [0.5, 0.6])


def test_oracle_run_is_exact_at_every_step(positive_pool):
    f_total = total_true(positive_pool)
    for seed in range(3):
        run = run_active_measurement(
            positive_pool, OraclePredictor(), WeightScheme("comb"), CLAMP, 30, seed=seed
        )
        errs = np.abs(np.array(run.combined_history) - f_total) / f_total
        assert float(errs.max()) <= 1e-9
        step_errs = np.abs(np.array([r.F_hat_tau for r in run.steps]) - f_total) / f_total
        assert float(step_errs.max()) <= 1e-9


@pytest.mark.parametrize("scheme", ["sqrt", "lure", "comb"])
def test_full_exhaustion_recovers_total(sim_pool, scheme):
    f_total = total_true(sim_pool)
    run = run_active_measurement(
        sim_pool, NoisyPredictor(1.4, 0.7, seed=5), WeightScheme(scheme),
        ClampPolicy("floor", 1.0), sim_pool.N, seed=8,
    )
    assert run.combined_history[-1] == pytest.approx(f_total, rel=1e-9)
    final = run.report()
    assert final.var_cond == 0.0
    assert final.ci_lo == final.ci_hi == final.estimate


def test_terminal_step_with_initial_labels(sim_pool):
    initial = LabeledSet([("u0", 1.0), ("u5", 0.0)])
    run = run_active_measurement(
        sim_pool, NoisyPredictor(1.2, 0.5, seed=2), WeightScheme("lure"),
        ClampPolicy("floor", 1.0), sim_pool.N - 2, seed=3, initial=initial,
    )
    assert run.n_effective == sim_pool.N - 2
    assert run.exhausted
    assert run.combined_history[-1] == pytest.approx(total_true(sim_pool), rel=1e-9)


def test_initial_labels_contribute_mass_but_no_steps(sim_pool):
    initial = LabeledSet([("u3", 4.0)])
    run = ActiveRun(sim_pool, WeightScheme("comb"), ClampPolicy("floor", 1.0), seed=1,
                    predictor=OraclePredictor(), initial=initial)
    uid, _, q = run.next_sample()
    rep = run.submit_label(uid, sim_pool.unit(uid).true_value)
    assert rep.t == 1
    assert run.steps[0].F_D_tau == 4.0
    assert len(run.labeled) == 2


def test_initial_labels_must_match_truth(sim_pool):
    with pytest.raises(LabelError):
        ActiveRun(sim_pool, WeightScheme("comb"), ClampPolicy("floor", 1.0), seed=1,
                  predictor=OraclePredictor(), initial=LabeledSet([("u3", 999.0)]))


def test_capacity_guard(sim_pool):
    with pytest.raises(ExhaustedError):
        run_active_measurement(
            sim_pool, OraclePredictor(), WeightScheme("comb"), ClampPolicy("floor", 1.0),
            sim_pool.N + 1, seed=0,
        )


def test_deterministic_exports(positive_pool):
    kwargs = dict(scheme=WeightScheme("comb"), clamp=CLAMP, T=25, seed=123)
    a = run_active_measurement(positive_pool, NoisyPredictor(1.3, 0.5, seed=4), kwargs["scheme"],
                               kwargs["clamp"], kwargs["T"], seed=kwargs["seed"])
    b = run_active_measurement(positive_pool, NoisyPredictor(1.3, 0.5, seed=4), kwargs["scheme"],
                               kwargs["clamp"], kwargs["T"], seed=kwargs["seed"])
    assert a.export_jsonl() == b.export_jsonl()
    assert a.export_csv() == b.export_csv()


def test_export_shapes_and_round_trip(positive_pool):
    run = run_active_measurement(
        positive_pool, NoisyPredictor(1.3, 0.5, seed=4), WeightScheme("comb"), CLAMP, 9, seed=5
    )
    records = [json.loads(line) for line in run.export_jsonl().splitlines()]
    assert len(records) == 9
    assert list(records[0]) == ["tau", "unit", "f", "q", "f_hat", "combined", "var_cond", "var_simp"]
    assert [r["tau"] for r in records] == list(range(1, 10))
    csv_lines = run.export_csv().splitlines()
    assert len(csv_lines) == 10  # header + rows
    # full-precision floats round-trip through the csv text
    q_text = csv_lines[1].split(",")[3]
    assert float(q_text) == run.steps[0].q_tau_of_s


def test_report_consistency_with_module_operations(positive_pool):
    run = run_active_measurement(
        positive_pool, NoisyPredictor(1.3, 0.5, seed=6), WeightScheme("comb"), CLAMP, 12, seed=6
    )
    rep = report(run)
    assert rep.t == 12
    assert rep.estimate == combine([r.F_hat_tau for r in run.steps], run.norm_weights)
    assert rep.var_cond == pytest.approx(var_combined(run, run.norm_weights), rel=1e-8)
    assert rep.var_simp == pytest.approx(var_simple(run, run.norm_weights), rel=1e-12)
    lo, hi = confidence_interval(rep.estimate, rep.var_cond, 0.95)
    assert (rep.ci_lo, rep.ci_hi) == (lo, hi)
    assert rep.ci_lo <= rep.estimate <= rep.ci_hi
    assert not rep.caveat


def test_inv_scheme_sets_caveat(positive_pool):
    run = run_active_measurement(
        positive_pool, NoisyPredictor(1.3, 0.5, seed=6), WeightScheme("inv", 0.5), CLAMP, 8, seed=6
    )
    assert run.report().caveat


def test_trajectory_matches_reports(positive_pool):
    run = run_active_measurement(
        positive_pool, NoisyPredictor(1.3, 0.5, seed=7), WeightScheme("comb"), CLAMP, 6, seed=7
    )
    traj = run.trajectory()
    assert len(traj) == 6
    assert traj[-1] == run.report()
    assert [r.t for r in traj] == list(range(1, 7))


def test_report_requires_a_step(sim_pool):
    run = ActiveRun(sim_pool, WeightScheme("comb"), ClampPolicy("floor", 1.0), seed=1,
                    predictor=OraclePredictor())
    with pytest.raises(ValueError, match="no steps"):
        run.report()
    assert run.trajectory() == []


def test_pending_protocol(sim_pool):
    run = ActiveRun(sim_pool, WeightScheme("comb"), ClampPolicy("floor", 1.0), seed=2,
                    predictor=OraclePredictor())
    first = run.next_sample()
    assert run.next_sample() == first  # idempotent re-fetch
    with pytest.raises(PendingConflictError):
        run.submit_label("definitely-wrong-unit", 1.0)
    with pytest.raises(PendingConflictError):
        run.push_predictions(PredictionTable({u.id: 1.0 for u in sim_pool}))
    rep = run.submit_label(first[0], sim_pool.unit(first[0]).true_value)
    assert rep.t == 1
    with pytest.raises(PendingConflictError):
        run.submit_label(first[0], 1.0)  # nothing pending now


def test_label_validation(live_pool):
    run = ActiveRun(live_pool, WeightScheme("comb"), ClampPolicy("floor", 1.0), seed=3)
    uid, _, _ = run.next_sample()
    for bad in (-1.0, math.nan, math.inf):
        with pytest.raises(LabelError):
            run.submit_label(uid, bad)
    rep = run.submit_label(uid, 2.0)
    assert rep.estimate == pytest.approx(2.0 * live_pool.N, rel=1e-12)


def test_simulation_label_must_match_truth(sim_pool):
    run = ActiveRun(sim_pool, WeightScheme("comb"), ClampPolicy("floor", 1.0), seed=4,
                    predictor=OraclePredictor())
    uid, _, _ = run.next_sample()
    with pytest.raises(LabelError, match="contradicts"):
        run.submit_label(uid, sim_pool.unit(uid).true_value + 1.0)


def test_live_mode_needs_callback(live_pool):
    with pytest.raises(LabelError):
        run_active_measurement(live_pool, None, WeightScheme("comb"), ClampPolicy("floor", 1.0), 2, seed=0)
    run = run_active_measurement(
        live_pool, None, WeightScheme("comb"), ClampPolicy("floor", 1.0), 3, seed=0,
        label_fn=lambda uid, ref, q: 3.0,
    )
    assert run.t == 3


def test_uniform_fallback_flag(live_pool):
    run = ActiveRun(live_pool, WeightScheme("comb"), ClampPolicy("floor", 1.0), seed=5)
    _, _, q = run.next_sample()
    assert q == pytest.approx(1.0 / live_pool.N, rel=1e-12)
    with pytest.raises(CoverageError):
        ActiveRun(live_pool, WeightScheme("comb"), ClampPolicy("floor", 1.0), seed=5,
                  uniform_fallback=False)


def test_push_predictions_changes_next_proposal(live_pool):
    run = ActiveRun(live_pool, WeightScheme("comb"), ClampPolicy("floor", 1.0), seed=6)
    table = {u.id: 1.0 for u in live_pool}
    table["u0"] = 1000.0
    run.push_predictions(PredictionTable(table))
    uid, _, q = run.next_sample()
    assert uid == "u0"  # essentially all mass on u0
    assert q > 0.99


def test_push_predictions_requires_coverage(live_pool):
    run = ActiveRun(live_pool, WeightScheme("comb"), ClampPolicy("floor", 1.0), seed=7)
    with pytest.raises(CoverageError):
        run.push_predictions(PredictionTable({"u0": 1.0}))


def test_retrain_interval_limits_epochs(positive_pool):
    dense = run_active_measurement(
        positive_pool, ImprovingPredictor(1.0, 1.0, seed=1), WeightScheme("comb"), CLAMP,
        20, seed=9, retrain_every=1,
    )
    sparse = run_active_measurement(
        positive_pool, ImprovingPredictor(1.0, 1.0, seed=1), WeightScheme("comb"), CLAMP,
        20, seed=9, retrain_every=10,
    )
    assert len(sparse._epochs) < len(dense._epochs)
    assert len(sparse._epochs) <= 1 + 2  # initial table plus one refresh per 10 steps


def test_q_history_is_consistent_with_recorded_probabilities(positive_pool):
    run = run_active_measurement(
        positive_pool, NoisyPredictor(1.2, 0.4, seed=2), WeightScheme("comb"), CLAMP, 10, seed=11
    )
    for rec in run.steps:
        assert run.q_of(rec.tau, rec.unit_id) == rec.q_tau_of_s


@pytest.mark.slow
def test_variance_envelope_monitored(positive_pool):
    # with values and predictions bounded away from 0 and infinity, the
    # per-step variance scaled by (N - tau)(N - tau + 1) stays flat-ish in tau;
    # monitored against gross blowup rather than a specific constant
    f_total = total_true(positive_pool)
    M, T, N = 3000, 45, positive_pool.N
    per_step = np.empty((M, T))
    for m in range(M):
        run = run_active_measurement(
            positive_pool, NoisyPredictor(1.2, 0.3, seed=70_000 + m), WeightScheme("comb"),
            CLAMP, T, seed=m, track_variance=False,
        )
        per_step[m] = [r.F_hat_tau for r in run.steps]
    tau = np.arange(1, T + 1)
    ratios = per_step.var(axis=0, ddof=1) / ((N - tau) * (N - tau + 1))
    assert np.all(np.isfinite(ratios))
    print(f"variance envelope ratios: max={ratios.max():.4f} median={np.median(ratios):.4f}")
    assert ratios.max() <= 50 * max(np.median(ratios), 1e-12)


@pytest.mark.slow
def test_combined_estimate_unbiased_small_monte_carlo(positive_pool):
    f_total = total_true(positive_pool)
    M = 3000
    means = np.empty(M)
    for m in range(M):
        run = run_active_measurement(
            positive_pool, NoisyPredictor(1.3, 0.5, seed=10_000 + m), WeightScheme("comb"),
            CLAMP, 25, seed=m, track_variance=False,
        )
        means[m] = run.combined_history[-1]
    se = means.std(ddof=1) / math.sqrt(M)
    assert abs(means.mean() - f_total) <= 4 * se
