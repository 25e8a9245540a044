"""CSV ingestion/writing and the synthetic multi-domain survival generator.

CSV layout (UTF-8, LF, ``.`` decimals)::

    id,time,event,treatment,f0,...,f{d-1}

``time`` may be empty (label withheld, target cohorts only); ``treatment`` is
``P``, ``R`` or ``NA``. Synthetic cohorts come with a ``<name>.truth.csv``
sidecar: ``id,true_log_risk,true_event_time``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.linalg import expm

from .errors import CalibrationFailed, LabelError, ParseError, SchemaError
from .survcore import Cohort, Role, SurvivalRecord, Treatment, with_times

FIXED_COLUMNS = ["id", "time", "event", "treatment"]
TRUTH_COLUMNS = ["id", "true_log_risk", "true_event_time"]


def _fmt(x: float) -> str:
    return repr(float(x))


def cohort_to_csv(cohort: Cohort) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(FIXED_COLUMNS + [f"f{j}" for j in range(cohort.dim)])
    for r in cohort.records:
        time = "" if r.time is None else _fmt(r.time)
        writer.writerow([r.id, time, r.event, r.treatment.value] + [_fmt(v) for v in r.features])
    return buf.getvalue()


def write_cohort(cohort: Cohort, path) -> None:
    Path(path).write_text(cohort_to_csv(cohort), encoding="utf-8", newline="")


def read_cohort(path, role: Role = Role.SOURCE, name: Optional[str] = None) -> Cohort:
    path = Path(path)
    role = Role(role)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        d = len(header) - len(FIXED_COLUMNS)
        if header[:4] != FIXED_COLUMNS or header[4:] != [f"f{j}" for j in range(d)]:
            raise SchemaError(f"{path}: header must be 'id,time,event,treatment,f0,...', got {header}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
            rid, time_s, event_s, treat_s = row[:4]
            try:
                time = float(time_s) if time_s.strip() else None
                feats = tuple(float(v) for v in row[4:])
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            if event_s not in ("0", "1"):
                raise ParseError(f"event must be 0 or 1, got {event_s!r}", line=lineno)
            try:
                treatment = Treatment(treat_s)
            except ValueError:
                raise ParseError(f"treatment must be P, R or NA, got {treat_s!r}", line=lineno) from None
            if time is None and role is Role.SOURCE:
                raise LabelError(f"{path}: line {lineno}: source record {rid} has no time")
            if time is not None and not (math.isfinite(time) and time >= 0):
                raise ParseError(f"time must be finite and non-negative, got {time_s!r}", line=lineno)
            records.append(SurvivalRecord(rid, feats, time, int(event_s), treatment))
    return Cohort(name or path.name.split(".")[0], records, role)


@dataclass
class GroundTruth:
    """Per-record truth of a synthetic cohort.

    ``observed_time`` (the censored observation) is kept alongside the
    sidecar fields so the evaluator can reveal target labels.
    """

    ids: list
    true_log_risk: np.ndarray
    true_event_time: np.ndarray
    observed_time: Optional[np.ndarray] = None


def write_truth(truth: GroundTruth, path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRUTH_COLUMNS)
    for rid, r, t in zip(truth.ids, truth.true_log_risk, truth.true_event_time):
        writer.writerow([rid, _fmt(r), _fmt(t)])
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


def read_truth(path) -> GroundTruth:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRUTH_COLUMNS:
            raise SchemaError(f"{path}: header must be {','.join(TRUTH_COLUMNS)}")
        ids, risk, times = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                ids.append(row[0])
                risk.append(float(row[1]))
                times.append(float(row[2]))
            except (IndexError, ValueError) as exc:
                raise ParseError(str(exc), line=lineno) from None
    return GroundTruth(ids, np.array(risk), np.array(times))


# ---------------------------------------------------------------------------
# synthetic domains


@dataclass
class SynthConfig:
    n_domains: int = 3
    n_per_domain: int = 400
    dim: int = 10
    shift_scale: float = 1.0
    censor_fraction: float = 0.3
    baseline_rate: float = 0.01
    seed: int = 0
    # hazard multiplier of arm R relative to arm P; None means no treatment arms
    treatment_effect: Optional[float] = None

    def __post_init__(self):
        if self.n_domains < 1 or self.n_per_domain < 1 or self.dim < 1:
            raise ValueError("n_domains, n_per_domain and dim must be positive")
        if self.shift_scale < 0:
            raise ValueError("shift_scale must be non-negative")
        if not 0.0 <= self.censor_fraction < 1.0:
            raise ValueError("censor_fraction must lie in [0, 1)")
        if self.baseline_rate <= 0:
            raise ValueError("baseline_rate must be positive")
        if self.treatment_effect is not None and self.treatment_effect <= 0:
            raise ValueError("treatment_effect must be positive")


def true_log_risk(X: np.ndarray) -> np.ndarray:
    """Shared nonlinear log-risk used by every domain.

    g(x) = sum_k (-0.8)^k x_k + 0.25 (x_0^2 - x_1^2) + 0.5 sin(2 x_2)

    with indices taken modulo the dimension.
    """
    X = np.atleast_2d(X)
    d = X.shape[1]
    beta = (-0.8) ** np.arange(d)
    return X @ beta + 0.25 * (X[:, 0] ** 2 - X[:, 1 % d] ** 2) + 0.5 * np.sin(2.0 * X[:, 2 % d])


def _domain_map(rng: np.random.Generator, dim: int, scale: float):
    """Random rotation and translation whose magnitude grows with ``scale``."""
    A = rng.normal(size=(dim, dim))
    skew = 0.5 * (A - A.T) / math.sqrt(dim)
    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    return expm(scale * skew), scale * direction


def _calibrate_censoring(event_times, unit_exp, target_fraction, tol=0.05, max_iter=100):
    """Bisection on the log censoring rate so the realised censored share hits the target."""
    lo, hi = -30.0, 30.0
    best = None
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        frac = float(np.mean(unit_exp / math.exp(mid) < event_times))
        if best is None or abs(frac - target_fraction) < abs(best[1] - target_fraction):
            best = (mid, frac)
        if abs(frac - target_fraction) < 1e-3:
            break
        if frac < target_fraction:
            lo = mid
        else:
            hi = mid
    if abs(best[1] - target_fraction) > tol:
        raise CalibrationFailed(
            f"censoring calibration reached {best[1]:.3f}, wanted {target_fraction:.3f}"
        )
    return math.exp(best[0])


@dataclass
class SyntheticDomains:
    sources: list
    target: Cohort
    truth: dict

    @property
    def target_labeled(self) -> Cohort:
        return with_times(self.target, self.truth[self.target.name].observed_time)

    def cohorts(self):
        return [*self.sources, self.target]


def _generate_domain(name, role, rng, cfg: SynthConfig, rotation, shift) -> tuple:
    n, d = cfg.n_per_domain, cfg.dim
    Z = rng.normal(size=(n, d))
    X = Z @ rotation.T + shift
    log_risk = true_log_risk(X)
    treatments = [Treatment.NONE] * n
    if cfg.treatment_effect is not None:
        arm_r = rng.random(n) < 0.5
        log_risk = log_risk + np.where(arm_r, math.log(cfg.treatment_effect), 0.0)
        treatments = [Treatment.R if r else Treatment.P for r in arm_r]
    event_time = rng.exponential(size=n) / (cfg.baseline_rate * np.exp(log_risk))
    if cfg.censor_fraction > 0:
        unit = rng.exponential(size=n)
        rate = _calibrate_censoring(event_time, unit, cfg.censor_fraction)
        censor_time = unit / rate
        observed = np.minimum(event_time, censor_time)
        events = (event_time <= censor_time).astype(int)
    else:
        observed = event_time.copy()
        events = np.ones(n, dtype=int)
    ids = [f"{name}-{i:05d}" for i in range(n)]
    hide = role is Role.TARGET
    records = [
        SurvivalRecord(ids[i], tuple(float(v) for v in X[i]), None if hide else float(observed[i]),
                       int(events[i]), treatments[i])
        for i in range(n)
    ]
    return Cohort(name, records, role), GroundTruth(ids, log_risk, event_time, observed)


def generate_domains(config: SynthConfig) -> SyntheticDomains:
    """K source domains plus one target, each an affine shift of a standard normal.

    Domain 0 is unshifted; the target is domain K. Event times are exponential
    with rate ``baseline_rate * exp(g(x))`` (times ``treatment_effect`` in arm
    R); censoring times are exponential, independent of x, with a per-domain
    rate calibrated to ``censor_fraction``. The target's times are withheld
    from its cohort and kept in the truth record.
    """
    geo_seq, *dom_seqs = np.random.SeedSequence(config.seed).spawn(config.n_domains + 2)
    geo = np.random.default_rng(geo_seq)
    maps = [(np.eye(config.dim), np.zeros(config.dim))]
    for _ in range(config.n_domains):
        maps.append(_domain_map(geo, config.dim, config.shift_scale))

    sources, truth = [], {}
    for k in range(config.n_domains):
        cohort, gt = _generate_domain(f"source_{k}", Role.SOURCE, np.random.default_rng(dom_seqs[k]),
                                      config, *maps[k])
        sources.append(cohort)
        truth[cohort.name] = gt
    target, gt = _generate_domain("target", Role.TARGET, np.random.default_rng(dom_seqs[-1]),
                                  config, *maps[config.n_domains])
    truth[target.name] = gt
    return SyntheticDomains(sources, target, truth)
