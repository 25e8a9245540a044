import numpy as np
import pytest

from survadapt.dataio import (
    SynthConfig,
    cohort_to_csv,
    generate_domains,
    read_cohort,
    read_truth,
    true_log_risk,
    write_cohort,
    write_truth,
)
from survadapt.errors import LabelError, ParseError, SchemaError
from survadapt.survcore import Cohort, Role, SurvivalRecord, Treatment, c_index

GOOD = """id,time,event,treatment,f0,f1
a,1.5,1,P,0.1,0.2
b,2.0,0,R,-1.0,3.0
c,,1,NA,0.0,0.0
"""


def test_read_well_formed(tmp_path):
    p = tmp_path / "tgt.csv"
    p.write_text(GOOD)
    c = read_cohort(p, Role.TARGET)
    assert len(c) == 3 and c.name == "tgt" and c.dim == 2
    assert c.records[2].time is None and c.records[1].treatment is Treatment.R
    assert c.records[2].treatment is Treatment.NONE
    with pytest.raises(LabelError):
        read_cohort(p, Role.SOURCE)


@pytest.mark.parametrize("body,exc,line", [
    ("id,time,event,treatment,f0\na,1,2,P,0\n", ParseError, 2),
    ("id,time,event,treatment,f0\na,1,1,P,0\nb,x,1,P,0\n", ParseError, 3),
    ("id,time,event,treatment,f0\na,1,1,Q,0\n", ParseError, 2),
    ("id,time,event,treatment,f0\na,-1,1,P,0\n", ParseError, 2),
    ("id,time,event,treatment,f0\na,1,1,P\n", ParseError, 2),
    ("id,event,time,treatment,f0\n", SchemaError, None),
    ("id,time,event,treatment,x0\n", SchemaError, None),
    ("", SchemaError, None),
])
def test_read_errors(tmp_path, body, exc, line):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(exc) as info:
        read_cohort(p, Role.TARGET)
    if line is not None:
        assert f"line {line}" in str(info.value)


def test_roundtrip_value_and_bytes(tmp_path):
    p = tmp_path / "tgt.csv"
    p.write_text(GOOD)
    c = read_cohort(p, Role.TARGET)
    out = tmp_path / "out.csv"
    write_cohort(c, out)
    back = read_cohort(out, Role.TARGET)
    assert back.records == c.records
    again = tmp_path / "again.csv"
    write_cohort(back, again)
    assert again.read_bytes() == out.read_bytes()
    assert b"\r" not in out.read_bytes()
    assert ",NA," in out.read_text()


def test_empty_cohort_header_only():
    assert cohort_to_csv(Cohort("e", [], Role.SOURCE)) == "id,time,event,treatment\n"


def test_float_precision_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    recs = [SurvivalRecord(str(i), tuple(rng.normal(size=3)), float(rng.exponential()), 1, Treatment.P)
            for i in range(5)]
    c = Cohort("x", recs, Role.SOURCE)
    write_cohort(c, tmp_path / "x.csv")
    assert read_cohort(tmp_path / "x.csv").records == c.records


def test_generate_determinism_and_layout(tmp_path):
    cfg = SynthConfig(n_domains=3, n_per_domain=50, dim=4, seed=7)
    a, b = generate_domains(cfg), generate_domains(cfg)
    assert [s.name for s in a.sources] == ["source_0", "source_1", "source_2"]
    assert a.target.name == "target" and a.target.role is Role.TARGET and not a.target.labeled
    for x, y in zip(a.cohorts(), b.cohorts()):
        assert cohort_to_csv(x) == cohort_to_csv(y)
    assert cohort_to_csv(a.target_labeled) == cohort_to_csv(b.target_labeled)
    other = generate_domains(SynthConfig(n_domains=3, n_per_domain=50, dim=4, seed=8))
    assert cohort_to_csv(other.sources[0]) != cohort_to_csv(a.sources[0])
    gt = a.truth["target"]
    assert np.all(gt.true_event_time > 0) and np.all(np.isfinite(gt.true_log_risk))
    np.testing.assert_allclose(gt.true_log_risk, true_log_risk(a.target.features))
    write_truth(gt, tmp_path / "t.truth.csv")
    back = read_truth(tmp_path / "t.truth.csv")
    assert back.ids == gt.ids and np.array_equal(back.true_event_time, gt.true_event_time)


def test_zero_censoring():
    dom = generate_domains(SynthConfig(n_domains=1, n_per_domain=100, dim=3, censor_fraction=0.0))
    assert all(np.all(c.events == 1) for c in dom.sources)
    assert np.all(dom.target.events == 1)


def test_censoring_calibration():
    dom = generate_domains(SynthConfig(n_domains=1, n_per_domain=2000, dim=5, censor_fraction=0.4, seed=3))
    for c in dom.cohorts():
        frac = 1 - c.events.mean()
        assert 0.35 <= frac <= 0.45


def test_ground_truth_ranking_sanity():
    dom = generate_domains(SynthConfig(n_domains=1, n_per_domain=600, dim=6, censor_fraction=0.0, seed=2))
    src = dom.sources[0]
    gt = dom.truth[src.name]
    assert c_index(gt.true_log_risk, src.times, src.events) > 0.7


def test_shift_grows_with_scale():
    def mean_shift(scale):
        dom = generate_domains(SynthConfig(n_domains=2, n_per_domain=1000, dim=4, shift_scale=scale, seed=1))
        return np.linalg.norm(dom.sources[1].features.mean(0) - dom.sources[0].features.mean(0))
    assert mean_shift(2.0) > mean_shift(0.5)


def test_treatment_arms():
    dom = generate_domains(SynthConfig(n_domains=1, n_per_domain=400, dim=3, treatment_effect=0.5, seed=0))
    arms = dom.sources[0].treatments
    assert set(arms) == {Treatment.P, Treatment.R}
    gt = dom.truth["source_0"]
    base = true_log_risk(dom.sources[0].features)
    shift = gt.true_log_risk - base
    is_r = np.array([t is Treatment.R for t in arms])
    np.testing.assert_allclose(shift[is_r], np.log(0.5))
    np.testing.assert_allclose(shift[~is_r], 0.0)


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(censor_fraction=1.0)
    with pytest.raises(ValueError):
        SynthConfig(shift_scale=-1)
