import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from survadapt.errors import DimensionMismatch, LabelError, LengthMismatch, NoEvents, ZeroComparablePairs
from survadapt.survcore import (
    Cohort,
    Role,
    ScoredCohort,
    SurvivalRecord,
    Treatment,
    c_index,
    c_index_prime,
    cox_linear_risk,
    d_index,
    neg_log_partial_likelihood,
    pair_accounting,
    with_times,
)

from oracles import c_index_brute, nlpl_brute


def rec(i, t=1.0, e=1, x=(0.0,)):
    return SurvivalRecord(str(i), x, t, e, Treatment.NONE)


@pytest.mark.parametrize("scores,expected", [((3, 2, 1), 1.0), ((1, 2, 3), 0.0)])
def test_c_index_trivial(scores, expected):
    assert c_index(scores, (1, 2, 3), (1, 1, 1)) == expected
    assert d_index(scores, (1, 2, 3), (1, 1, 1)) == 1.0 - expected


def test_c_index_censored_example():
    assert c_index((2, 1, 3), (1, 2, 3), (1, 0, 1)) == 0.5
    assert d_index((2, 1, 3), (1, 2, 3), (1, 0, 1)) == 0.5


def test_c_index_score_tie_counts_zero():
    assert c_index((1, 1), (1, 2), (1, 1)) == 0.0


def test_c_index_errors():
    with pytest.raises(ZeroComparablePairs):
        c_index((1, 2), (1, 2), (0, 0))
    with pytest.raises(ZeroComparablePairs):
        c_index((1, 2), (2, 2), (1, 1))  # tied times are not comparable
    with pytest.raises(LengthMismatch):
        c_index((1, 2), (1, 2, 3), (1, 1, 1))


def test_c_index_prime_examples():
    s, t, e = (2, 1, 3), (1, 2, 3), (1, 0, 1)
    assert c_index_prime(s, t, e, (0, 0, 0)) == c_index(s, t, e)
    assert c_index_prime((3, 2, 1), (1, 2, 3), (1, 1, 1), (1, 0, 0)) == 1.0
    assert c_index_prime(s, t, e, (0, 1, 0)) == 0.5
    with pytest.raises(LengthMismatch):
        c_index_prime(s, t, e, (0, 1))


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 25), st.integers(0, 10_000))
def test_c_index_matches_brute_force(n, seed):
    rng = np.random.default_rng(seed)
    s, t = rng.normal(size=n), rng.exponential(size=n)
    e = rng.integers(0, 2, size=n)
    e[0] = 1
    t[0] = t.min() - 0.1  # guarantees a comparable pair
    assert c_index(s, t, e) == pytest.approx(c_index_brute(s, t, e), abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 25), st.integers(0, 10_000))
def test_c_index_antisymmetry_and_monotone_invariance(n, seed):
    rng = np.random.default_rng(seed)
    s, t = rng.normal(size=n), rng.exponential(size=n)
    e = np.ones(n, int)
    assert c_index(s, t, e) + c_index(-s, t, e) == pytest.approx(1.0, abs=1e-12)
    assert c_index(np.exp(3 * s) + 7, t, e) == c_index(s, t, e)


def test_pair_accounting():
    assert pair_accounting(100, 40, 0.25).reused_fraction == 0.0625
    pa = pair_accounting(10, 4, 0.5)
    assert pa.total_pairs == 120 and pa.missed_pairs == 35
    zero = pair_accounting(17, 3, 0.0)
    assert zero.reused_fraction == 0 and zero.missed_pairs == 0


def test_nlpl_examples():
    assert neg_log_partial_likelihood([4.2], [3.0], [1]) == 0.0
    assert neg_log_partial_likelihood([0, 0], [1, 2], [1, 0]) == pytest.approx(math.log(2), abs=1e-12)
    assert neg_log_partial_likelihood([0, 0, 0], [1, 2, 3], [1, 1, 1]) == pytest.approx(
        math.log(3) + math.log(2), abs=1e-12)
    with pytest.raises(NoEvents):
        neg_log_partial_likelihood([0, 1], [1, 2], [0, 0])


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 20), st.integers(0, 10_000), st.floats(-50, 50))
def test_nlpl_brute_force_and_shift_invariance(n, seed, c):
    rng = np.random.default_rng(seed)
    s, t = rng.normal(size=n), rng.exponential(size=n)
    e = rng.integers(0, 2, size=n)
    e[0] = 1
    base = neg_log_partial_likelihood(s, t, e)
    assert base == pytest.approx(nlpl_brute(s, t, e), rel=1e-12, abs=1e-12)
    assert abs(neg_log_partial_likelihood(s + c, t, e) - base) <= 1e-10


def test_nlpl_large_scores_stay_finite():
    v = neg_log_partial_likelihood([800.0, -800.0, 0.0], [1, 2, 3], [1, 1, 1])
    assert math.isfinite(v)


def test_cox_linear_risk():
    assert cox_linear_risk([0, 0], [5, -3]) == 0
    assert cox_linear_risk([1, 2], [3, -1]) == 1
    assert cox_linear_risk([0.5], [2]) == 1
    with pytest.raises(DimensionMismatch):
        cox_linear_risk([1, 2], [1])


def test_record_and_cohort_invariants():
    with pytest.raises(ValueError):
        SurvivalRecord("a", (1.0,), -1.0, 1, Treatment.NONE)
    with pytest.raises(ValueError):
        SurvivalRecord("a", (1.0,), 1.0, 2, Treatment.NONE)
    with pytest.raises(DimensionMismatch):
        Cohort("c", [rec(0, x=(1.0,)), rec(1, x=(1.0, 2.0))], Role.SOURCE)
    with pytest.raises(LabelError):
        Cohort("c", [rec(0, t=None)], Role.SOURCE)
    tgt = Cohort("t", [rec(0), rec(1, t=2.0, e=0)], Role.TARGET)
    hidden = tgt.hide_times()
    assert not hidden.labeled and hidden.role is Role.TARGET
    with pytest.raises(LabelError):
        hidden.times
    back = with_times(hidden, [1.0, 2.0])
    assert back.times.tolist() == [1.0, 2.0] and back.events.tolist() == [1, 0]


def test_scored_cohort_checks():
    c = Cohort("c", [rec(0), rec(1)], Role.SOURCE)
    ScoredCohort(c, np.array([0.1, 0.2]))
    with pytest.raises(ValueError):
        ScoredCohort(c, np.array([0.1]))
    with pytest.raises(ValueError):
        ScoredCohort(c, np.array([0.1, np.nan]))
