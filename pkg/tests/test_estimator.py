import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pbsim.estimator import (
    OFFSET_FREE,
    WITH_OFFSET,
    ExpectationTriple,
    SequenceData,
    a_hat,
    b_hat,
    bootstrap_ci,
    budget_parts,
    diamond_bounds,
    estimate,
    estimate_records,
    expectation,
    expectations_from_records,
    purity_point,
    shift_term,
    per_sequence,
    triple_variance,
)
from pbsim.noise import Miscalibration, ScenarioConfig
from pbsim.protocol import ExperimentPlan, MeasurementRecord, RecordTable, simulate

P_DEP = 0.998
DEPOL = ScenarioConfig(t1_base=math.inf, tphi_base=math.inf, depolarizing=P_DEP)


@pytest.fixture(scope="module")
def depol_table():
    return simulate(ExperimentPlan(cycles=60), DEPOL, seed=21).records


def rec(variant, ones, shots=1000, sid=0, m=2):
    return MeasurementRecord(0, 0.0, "f1", m, variant, shots, ones, sid)


# ---------------------------------------------------------------- expectations and purity


def test_expectation_examples():
    assert expectation(1000, 1000) == 1.0
    assert expectation(500, 1000) == 0.0
    assert expectation(0, 1000) == -1.0


def test_triple_from_records():
    t = expectations_from_records([rec("x", 500), rec("y", 250), rec("z", 1000)])
    assert (t.x, t.y, t.z) == (0.0, -0.5, 1.0)
    assert purity_point(t, bias_correct=False) == pytest.approx(1.25)


def test_missing_variant_rejected():
    with pytest.raises(ValueError, match="missing"):
        expectations_from_records([rec("x", 500), rec("z", 1000)])
    with pytest.raises(ValueError):
        expectations_from_records([rec("x", 5, sid=0), rec("y", 5, sid=1), rec("z", 5, sid=0)])


def test_triple_validates_range():
    with pytest.raises(ValueError):
        ExpectationTriple(1.5, 0, 0)


def test_purity_bias_correction_oracle():
    # <sigma_z> = 0.5 and x = y = 0 at 100 shots: true purity metric 0.25.
    rng = np.random.default_rng(0)
    n, N = 100_000, 100
    z = rng.binomial(N, 0.75, n)
    x = rng.binomial(N, 0.5, n)
    y = rng.binomial(N, 0.5, n)
    corr, raw = [], []
    for a, b, c in zip(x[:20000], y[:20000], z[:20000]):
        t = ExpectationTriple(2 * a / N - 1, 2 * b / N - 1, 2 * c / N - 1, (N, N, N))
        corr.append(purity_point(t))
        raw.append(purity_point(t, bias_correct=False))
    corr, raw = np.array(corr), np.array(raw)
    se = corr.std(ddof=1) / math.sqrt(corr.size)
    assert abs(corr.mean() - 0.25) < 3 * se
    # uncorrected estimate carries the shot-noise bias of about 3/N
    assert raw.mean() - 0.25 > 10 * se


def test_a_hat_examples():
    assert a_hat(rec("z", 1000), rec("z_flip", 0)) == 1.0
    assert a_hat(rec("z", 500), rec("z_flip", 500)) == 0.5
    assert a_hat(rec("z", 900), rec("z_flip", 100)) == pytest.approx(0.9)
    with pytest.raises(ValueError):
        a_hat(rec("z_flip", 0), rec("z", 1000))
    with pytest.raises(ValueError):
        a_hat(rec("z", 900), rec("z_flip", 100, sid=4))


def test_triple_variance_examples():
    same = [ExpectationTriple(0.1, 0.2, 0.3)] * 5
    assert triple_variance(same) == 0.0
    spread = [ExpectationTriple(1, 0, 0), ExpectationTriple(-1, 0, 0)]
    assert triple_variance(spread) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        triple_variance(same[:1])


@given(st.lists(st.tuples(*[st.floats(-1, 1)] * 3), min_size=2, max_size=20))
def test_triple_variance_nonnegative(rows):
    assert triple_variance([ExpectationTriple(*r) for r in rows]) >= 0.0


# ---------------------------------------------------------------- sequence data and b_hat


def test_incomplete_sequences_are_rejected():
    t = simulate(ExperimentPlan(cycles=2), DEPOL, seed=0).records
    keep = np.ones(len(t), bool)
    keep[1] = False  # drop the x variant of sequence 0
    with pytest.warns(RuntimeWarning):
        data = SequenceData.from_table(t.select(keep))
    assert len(data) == len(t) // 4 - 1
    assert data.rejected[0][0] == 0 and "x" in data.rejected[0][1]


def test_b_hat_noiseless_is_one():
    t = simulate(ExperimentPlan(cycles=30), ScenarioConfig(t1_base=math.inf, tphi_base=math.inf), seed=2).records
    vals = b_hat(SequenceData.from_table(t))
    assert all(abs(v - 1.0) < 0.01 for v in vals.values())


def test_b_hat_depolarizing_decay(depol_table):
    # Every sequence lands on the same vector of length p^(m+1).
    vals = b_hat(SequenceData.from_table(depol_table))
    for m, v in vals.items():
        assert v == pytest.approx(P_DEP ** (2 * (m + 1)), abs=0.01)


def test_shift_term_zero_for_unital_noise(depol_table):
    ps = per_sequence(SequenceData.from_table(depol_table))
    assert shift_term(ps) < 1e-5


# ---------------------------------------------------------------- budgets


def test_budget_parts_examples():
    assert budget_parts(1.0, 1.0) == (0.0, 0.0, 0.0)
    eps, inc, coh = budget_parts(0.99, 0.99**2)
    assert eps == pytest.approx(inc, abs=1e-15) and coh == pytest.approx(0.0, abs=1e-15)
    eps, inc, _ = budget_parts(1 - 2 * 3.61e-3, (1 - 2 * 2.36e-3) ** 2)
    assert eps - inc == pytest.approx(1.25e-3, abs=1e-12)


def test_diamond_bounds_examples():
    lo, hi = diamond_bounds(3.61e-3)
    assert lo == pytest.approx(5.415e-3, rel=1e-12)
    # sqrt(6 * 3.61e-3)
    assert hi == pytest.approx(0.1471734, abs=1e-7)
    assert diamond_bounds(0.0) == (0.0, 0.0)
    with pytest.raises(ValueError):
        diamond_bounds(-0.1)


@given(st.floats(0, 1), st.floats(0, 1))
def test_diamond_bounds_ordered_and_monotone(a, b):
    lo_a, hi_a = diamond_bounds(a)
    assert lo_a <= hi_a + 1e-15
    if a <= b:
        assert lo_a <= diamond_bounds(b)[0] and hi_a <= diamond_bounds(b)[1]


# ---------------------------------------------------------------- full pipeline


def test_depolarizing_unitarity_matches_p_squared(depol_table):
    fit = estimate_records(depol_table, resamples=0)
    assert fit.ok
    b = fit.budget
    assert abs(b.u - b.p**2) < 3 * math.hypot(b.u_se, 2 * b.p * b.p_se)
    assert abs(b.epsilon - (1 - P_DEP) / 2) < 3 * 0.5 * b.p_se


def test_with_offset_recovers_half_offset(depol_table):
    fit = estimate_records(depol_table, method=WITH_OFFSET, resamples=0)
    assert fit.ok
    assert abs(fit.p_fit.offset - 0.5) < 3 * fit.p_fit.offset_se


def test_offset_free_and_standard_p_agree():
    sc = ScenarioConfig(miscalibration=Miscalibration(overrotation=0.03))
    t = simulate(ExperimentPlan(cycles=60), sc, seed=5).records
    a = estimate_records(t, method=OFFSET_FREE, resamples=0).budget
    b = estimate_records(t, method=WITH_OFFSET, resamples=0).budget
    assert abs(a.p - b.p) < 3 * math.hypot(a.p_se, b.p_se)


def test_estimate_is_reproducible(depol_table):
    a = estimate_records(depol_table, resamples=100, seed=4).budget
    b = estimate_records(depol_table, resamples=100, seed=4).budget
    assert a.ci == b.ci


def test_estimate_failure_modes():
    empty = estimate(SequenceData.from_table(RecordTable.empty()))
    assert not empty.ok and empty.message
    noiseless = ScenarioConfig(t1_base=math.inf, tphi_base=math.inf)
    t = simulate(ExperimentPlan(cycles=5), noiseless, seed=0).records
    fit = estimate_records(t, resamples=0)
    assert not fit.ok and "degenerate" in fit.message
    with pytest.raises(ValueError):
        estimate_records(t, method="bogus")


def test_single_sequence_per_length_fails():
    t = simulate(ExperimentPlan(cycles=1), DEPOL, seed=0).records
    assert not estimate_records(t, resamples=0).ok


# ---------------------------------------------------------------- bootstrap


def _mean_stat(values):
    return lambda idx: np.stack([values[i].mean(axis=1) for i in idx], axis=1)


def test_bootstrap_zero_variance_has_zero_width():
    vals = np.full(40, 0.3)
    res = bootstrap_ci([np.arange(40)], _mean_stat(vals), 200)
    assert res.low[0] == res.high[0] == pytest.approx(0.3)


def test_bootstrap_gaussian_width():
    # Percentile half-width of a mean should match sigma/sqrt(n).
    rng = np.random.default_rng(0)
    n, ratios = 50, []
    for trial in range(100):
        vals = rng.normal(0, 1, n)
        res = bootstrap_ci([np.arange(n)], _mean_stat(vals), 400, seed=trial)
        ratios.append(0.5 * (res.high[0] - res.low[0]) / (vals.std(ddof=1) / math.sqrt(n)))
    assert abs(np.mean(ratios) - 1.0) < 0.15


def test_bootstrap_same_seed_same_result():
    vals = np.random.default_rng(1).normal(size=30)
    a = bootstrap_ci([np.arange(30)], _mean_stat(vals), 100, seed=9)
    b = bootstrap_ci([np.arange(30)], _mean_stat(vals), 100, seed=9)
    assert np.array_equal(a.samples, b.samples)


def test_bootstrap_low_confidence_widens():
    vals = np.random.default_rng(2).normal(size=40)
    narrow = bootstrap_ci([np.arange(5)], _mean_stat(vals), 400, seed=1)
    assert narrow.low_confidence
    full = bootstrap_ci([np.arange(40)], _mean_stat(vals), 400, seed=1)
    assert not full.low_confidence


def test_bootstrap_ci_on_window(depol_table):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        fit = estimate_records(depol_table, resamples=200, seed=0)
    lo, hi = fit.budget.ci["epsilon"]
    assert lo < fit.budget.epsilon < hi
    assert fit.bootstrap.n_failed == 0
