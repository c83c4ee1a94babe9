import math

import numpy as np
import pytest

from active_measure.baselines import (
    active_testing_acquisition,
    dis_estimate,
    mc_estimate,
    oracle_loss_table,
    ppi_estimate,
    run_active_testing,
    run_dis,
    run_dis_ais,
    run_dis_wor,
    run_mc,
    run_mc_wor,
    run_ppi,
)
from active_measure.pool import LabeledSet, total_true
from active_measure.proposal import ClampPolicy, NoisyPredictor, OraclePredictor, predict

CLAMP = ClampPolicy("floor", 0.5)


def test_mc_estimate_examples():
    assert mc_estimate([("a", 2.0)], 3) == 6.0
    assert mc_estimate([("a", 4.0), ("b", 4.0)], 7) == 28.0
    with pytest.raises(ValueError):
        mc_estimate([], 3)


def test_mc_estimate_expectation_by_enumeration():
    # N=3, f = (1,2,3): uniform single draw averages to the total
    outcomes = [mc_estimate([(f"s{i}", f)], 3) for i, f in enumerate((1.0, 2.0, 3.0))]
    assert np.mean(outcomes) == pytest.approx(6.0)


def test_dis_estimate_examples():
    assert dis_estimate([(2.0, 0.25)]) == 8.0
    f = np.array([1.0, 2.0, 3.0])
    q = f / f.sum()  # proposal exactly proportional to the values
    assert dis_estimate([(fi, qi) for fi, qi in zip(f, q)]) == pytest.approx(6.0, rel=1e-12)
    with pytest.raises(ValueError):
        dis_estimate([(1.0, 0.0)])


def test_dis_estimate_expectation_by_enumeration():
    f = np.array([1.0, 2.0, 3.0])
    rng = np.random.default_rng(1)
    q = rng.uniform(0.1, 1.0, 3)
    q /= q.sum()
    expectation = float(sum(qi * (fi / qi) for fi, qi in zip(f, q)))
    assert expectation == pytest.approx(6.0, rel=1e-12)


def test_ppi_estimate_examples():
    # g=f: residuals vanish for any sample
    assert ppi_estimate(6.0, [(2.0, 2.0)], 3, 1) == 6.0
    # enumeration with g = (2,2,2), f = (1,2,3): draws give 3, 6, 9
    draws = [ppi_estimate(6.0, [(2.0, f)], 3, 1) for f in (1.0, 2.0, 3.0)]
    assert draws == [3.0, 6.0, 9.0]
    assert np.mean(draws) == pytest.approx(6.0)
    with pytest.raises(ValueError):
        ppi_estimate(6.0, [(2.0, 1.0)], 3, 2)


def test_active_testing_acquisition_derived_probs():
    prop = active_testing_acquisition(
        {"a": 0.0, "b": 4.0}, ["a", "b"], ClampPolicy("floor", 0.01)
    )
    assert prop.prob_of("a") == pytest.approx(0.01 / 4.01, rel=1e-12)
    assert prop.prob_of("b") == pytest.approx(4.0 / 4.01, rel=1e-12)


def test_oracle_loss_uniform_when_predictions_exact(sim_pool):
    preds = predict(OraclePredictor(), sim_pool, LabeledSet())
    loss = oracle_loss_table(sim_pool, preds)
    prop = active_testing_acquisition(loss, sim_pool.ids, ClampPolicy("floor", 0.01))
    assert np.allclose(prop.probs, 1.0 / sim_pool.N)


def test_dis_wor_with_oracle_is_exact(positive_pool):
    f_total = total_true(positive_pool)
    run = run_dis_wor(positive_pool, OraclePredictor(), CLAMP, 20, seed=0)
    errs = np.abs(np.array([r.F_hat_tau for r in run.steps]) - f_total) / f_total
    assert float(errs.max()) <= 1e-9


def test_mc_wor_exhaustion_recovers_total(sim_pool):
    run = run_mc_wor(sim_pool, sim_pool.N, seed=3)
    assert run.combined_history[-1] == pytest.approx(total_true(sim_pool), rel=1e-9)


def test_active_testing_runs_without_replacement(positive_pool):
    preds = predict(NoisyPredictor(1.4, 0.6, seed=2), positive_pool, LabeledSet())
    run = run_active_testing(positive_pool, preds, CLAMP, 15, seed=4)
    assert len({r.unit_id for r in run.steps}) == 15


def test_with_replacement_runners_shapes(positive_pool):
    rng = np.random.default_rng(0)
    est, var = run_mc(positive_pool, 12, rng)
    assert est.shape == var.shape == (12,)
    assert var[0] == 0.0  # single draw: no sample variance yet
    preds = predict(NoisyPredictor(1.2, 0.3, seed=1), positive_pool, LabeledSet())
    est, var = run_dis(positive_pool, preds, CLAMP, 12, np.random.default_rng(1))
    assert est.shape == (12,)
    est, var = run_ppi(positive_pool, preds, 12, np.random.default_rng(2))
    assert est.shape == (12,)
    est, var = run_dis_ais(positive_pool, NoisyPredictor(1.2, 0.3, seed=3), CLAMP, 12,
                           np.random.default_rng(3), retrain_every=4)
    assert est.shape == (12,)
    assert np.all(var >= 0)


@pytest.mark.slow
def test_adaptation_and_wor_chains_reduce_error():
    # adaptive WOR <= frozen WOR <= frozen with-replacement, and
    # adaptive WOR <= adaptive with-replacement <= frozen with-replacement,
    # at 10% and 30% of the pool labeled (paired differences, 2 SE)
    from active_measure.simharness import ExperimentConfig, run_trials

    M = 2500
    base = dict(
        weights="comb", steps=(10, 30), trials=M, seed=9090, track_variance=False,
        pool_kind="clustered", pool_n=100, pool_seed=11, pool_clusters=3,
        pool_amplitude=30.0, pool_base=0.5, clamp="floor", clamp_value=0.5,
        predictor="improving", sigma0=1.5, rate=1.0, bias=1.0,
    )
    tms = {
        m: run_trials(ExperimentConfig(method=m, **base), collect=True)[1]
        for m in ("active", "dis", "dis_ais", "dis_wor")
    }
    f_true = tms["active"].f_true

    def err(m, j):
        return np.abs(tms[m].estimates[:, j] - f_true) / f_true

    for j in (0, 1):
        for worse, better in (("dis", "dis_wor"), ("dis_wor", "active"),
                              ("dis", "dis_ais"), ("dis_ais", "active")):
            d = err(worse, j) - err(better, j)
            two_se = 2 * d.std(ddof=1) / math.sqrt(M)
            assert d.mean() - two_se > 0, (worse, better, j, d.mean(), two_se)


@pytest.mark.slow
@pytest.mark.parametrize("runner", ["mc", "dis", "ppi", "dis_ais", "mc_wor", "dis_wor"])
def test_baselines_empirically_unbiased(positive_pool, runner):
    f_total = total_true(positive_pool)
    M, T = 2500, 20
    finals = np.empty(M)
    for m in range(M):
        rng = np.random.default_rng(50_000 + m)
        if runner == "mc":
            finals[m] = run_mc(positive_pool, T, rng)[0][-1]
        elif runner == "dis":
            preds = predict(NoisyPredictor(1.3, 0.5, seed=60_000 + m), positive_pool, LabeledSet())
            finals[m] = run_dis(positive_pool, preds, CLAMP, T, rng)[0][-1]
        elif runner == "ppi":
            preds = predict(NoisyPredictor(1.3, 0.5, seed=60_000 + m), positive_pool, LabeledSet())
            finals[m] = run_ppi(positive_pool, preds, T, rng)[0][-1]
        elif runner == "dis_ais":
            finals[m] = run_dis_ais(
                positive_pool, NoisyPredictor(1.3, 0.5, seed=60_000 + m), CLAMP, T, rng
            )[0][-1]
        elif runner == "mc_wor":
            finals[m] = run_mc_wor(positive_pool, T, rng, track_variance=False).combined_history[-1]
        else:
            finals[m] = run_dis_wor(
                positive_pool, NoisyPredictor(1.3, 0.5, seed=60_000 + m), CLAMP, T, rng,
                track_variance=False,
            ).combined_history[-1]
    se = finals.std(ddof=1) / math.sqrt(M)
    assert abs(finals.mean() - f_total) <= 4 * se
