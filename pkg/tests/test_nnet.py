import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from survadapt.errors import DimensionMismatch, EmptyDataset, NoEvents, ParseError
from survadapt.nnet import (
    Head,
    RiskModel,
    init_model,
    load_model,
    log_risk,
    save_model,
    sdi_surrogate_scores,
    surrogate_indicator_less,
    surrogate_partial_likelihood,
    surrogate_sdi,
)
from survadapt.rankmetrics import sdi
from survadapt.survcore import Cohort, Role, SurvivalRecord, Treatment

from oracles import finite_difference, normwise_rel_error


def make_cohort(X, times, events):
    recs = [SurvivalRecord(str(i), tuple(map(float, x)), float(t), int(e), Treatment.NONE)
            for i, (x, t, e) in enumerate(zip(X, times, events))]
    return Cohort("c", recs, Role.SOURCE)


def random_cohort(rng, n, d):
    e = rng.integers(0, 2, n)
    e[0] = 1
    return make_cohort(rng.normal(size=(n, d)), rng.exponential(size=n), e)


def test_init_model_shapes_and_determinism():
    m = init_model(7, (200, 20), seed=3)
    assert m.params["layer0.weight"].shape == (200, 7)
    assert m.params["layer1.weight"].shape == (20, 200)
    assert m.params["head_h.weight"].shape == (1, 20)
    assert m.params["head_hprime.weight"].shape == (1, 20)
    again = init_model(7, (200, 20), seed=3)
    assert all(np.array_equal(m.params[k], again.params[k]) for k in m.params)
    other = init_model(7, (200, 20), seed=4)
    assert not np.array_equal(m.params["layer0.weight"], other.params["layer0.weight"])
    assert all(not np.any(m.params[k]) for k in m.params if k.endswith("bias"))


def test_log_risk_zero_network_and_toy():
    m = init_model(3, (4,), seed=0)
    zero = RiskModel({k: np.zeros_like(v) for k, v in m.params.items()})
    assert log_risk(zero, Head.H, np.array([1.0, -2.0, 3.0])) == 0.0

    toy = RiskModel({
        "layer0.weight": np.array([[1.0, 2.0], [-1.0, 0.5]]),
        "layer0.bias": np.array([0.5, -0.25]),
        "head_h.weight": np.array([[2.0, -3.0]]),
        "head_h.bias": np.array([0.1]),
        "head_hprime.weight": np.array([[1.0, 1.0]]),
        "head_hprime.bias": np.array([0.0]),
    })
    x = np.array([1.0, -0.2])
    # hidden pre-activations: 1 - 0.4 + 0.5 = 1.1 ; -1 - 0.1 - 0.25 = -1.35 -> relu 0
    assert log_risk(toy, Head.H, x) == pytest.approx(2 * 1.1 + 0.1, abs=1e-15)
    assert log_risk(toy, "hprime", x) == pytest.approx(1.1, abs=1e-15)
    with pytest.raises(DimensionMismatch):
        log_risk(toy, Head.H, np.array([1.0, 2.0, 3.0]))


def test_batched_equals_elementwise():
    rng = np.random.default_rng(0)
    m = init_model(4, (8, 3), seed=1)
    X = rng.normal(size=(6, 4))
    batch = log_risk(m, Head.H, X)
    np.testing.assert_allclose(batch, [log_risk(m, Head.H, x) for x in X], rtol=1e-12, atol=1e-14)


def test_log_risk_continuity():
    rng = np.random.default_rng(2)
    m = init_model(4, (8, 3), seed=1)
    x = rng.normal(size=4)
    base = log_risk(m, Head.H, x)
    p = m.copy()
    for v in p.params.values():
        v += 1e-6
    assert abs(log_risk(p, Head.H, x) - base) < 1e-6 * 100


def test_surrogate_indicator_less():
    assert surrogate_indicator_less(0.3, 0.3, 1.0) == 0.0
    assert surrogate_indicator_less(0.0, math.log(2), 1.0) == pytest.approx(0.5, abs=1e-15)
    assert surrogate_indicator_less(3.0, 0.0, 1.0) == 0.0
    assert surrogate_indicator_less(-1e9, 0.0, 2.0) == 2.0
    assert surrogate_indicator_less(1e9, 0.0, 1.0) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0.1, 5))
def test_surrogate_indicator_range_and_monotone(d1, d2, m):
    lo, hi = sorted((d1, d2))
    v_lo, v_hi = surrogate_indicator_less(lo, 0, m), surrogate_indicator_less(hi, 0, m)
    assert 0.0 <= v_hi <= v_lo <= m


def test_surrogate_sdi_identical_heads_vanish():
    rng = np.random.default_rng(0)
    m = init_model(5, (6, 4), seed=0)
    m.params["head_hprime.weight"] = m.params["head_h.weight"].copy()
    c = random_cohort(rng, 12, 5)
    tape = surrogate_sdi(m, c)
    assert tape.loss == 0.0
    assert all(not np.any(g) for g in tape.gradients.values())


def test_surrogate_sdi_close_to_exact_when_separated():
    rng = np.random.default_rng(5)
    for _ in range(20):
        n = 10
        a = rng.permutation(n) * 12.0
        b = rng.permutation(n) * 12.0
        e = rng.integers(0, 2, n)
        e[:2] = 1
        value, _, _ = sdi_surrogate_scores(a, b, e, 1.0)
        assert abs(value - sdi(a, b, e)) < 0.05


def test_surrogate_sdi_empty():
    with pytest.raises(EmptyDataset):
        sdi_surrogate_scores([], [], [])


def _fd_check(loss_fn, model, tape):
    def fn():
        return loss_fn(model).loss
    fd = finite_difference(fn, model.params, step=1e-5)
    return normwise_rel_error(tape.gradients, fd)


def test_partial_likelihood_zero_network():
    m = init_model(2, (3,), seed=0)
    for v in m.params.values():
        v[...] = 0.0
    c = make_cohort(np.ones((2, 2)), [1, 2], [1, 0])
    tape = surrogate_partial_likelihood(m, c)
    assert tape.loss == pytest.approx(math.log(2), abs=1e-15)
    loss = lambda mm: surrogate_partial_likelihood(mm, c)
    assert _fd_check(loss, m, tape) < 1e-4


def test_partial_likelihood_bias_shift():
    rng = np.random.default_rng(1)
    m = init_model(3, (5,), seed=2)
    c = random_cohort(rng, 10, 3)
    tape = surrogate_partial_likelihood(m, c)
    assert abs(tape.gradients["head_h.bias"][0]) < 1e-12
    m.params["head_h.bias"] += 4.0
    assert surrogate_partial_likelihood(m, c).loss == pytest.approx(tape.loss, abs=1e-10)
    with pytest.raises(NoEvents):
        surrogate_partial_likelihood(m, make_cohort(np.ones((2, 3)), [1, 2], [0, 0]))


@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    m = init_model(5, (6, 4), seed=seed)
    c = random_cohort(rng, 12, 5)
    pl = lambda mm: surrogate_partial_likelihood(mm, c)
    assert _fd_check(pl, m, pl(m)) < 1e-4
    loss = lambda mm: surrogate_sdi(mm, c)
    assert _fd_check(loss, m, loss(m)) < 1e-4


def test_model_roundtrip_bit_exact(tmp_path):
    m = init_model(4, (7, 3), seed=9)
    for v in m.params.values():
        v += np.random.default_rng(1).normal(size=v.shape) * 1e-3
    p = tmp_path / "m.txt"
    save_model(m, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "survadapt-model v1" and lines[1] == "dims 4 7 3"
    assert lines[2] == "tensor layer0.weight 7 4"
    back = load_model(p)
    assert list(back.params) == list(m.params)
    assert all(np.array_equal(back.params[k], m.params[k]) for k in m.params)
    save_model(back, tmp_path / "m2.txt")
    assert (tmp_path / "m2.txt").read_bytes() == p.read_bytes()
    p.write_text("garbage\n")
    with pytest.raises(ParseError):
        load_model(p)
