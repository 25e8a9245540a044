"""Survival data types and the classical censoring-aware metrics.

Scores are log-risks: a higher score means a higher hazard, hence a shorter
expected survival. All functions here are pure.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, LabelError, LengthMismatch, NoEvents, ZeroComparablePairs


class Treatment(str, enum.Enum):
    P = "P"
    R = "R"
    NONE = "NA"


class Role(str, enum.Enum):
    SOURCE = "source"
    TARGET = "target"


@dataclass(frozen=True)
class SurvivalRecord:
    """One instance ``(x, t, delta)``; ``time`` is ``None`` when the label is withheld."""

    id: str
    features: tuple
    time: Optional[float]
    event: int
    treatment: Treatment = Treatment.NONE

    def __post_init__(self):
        if self.time is not None and not (self.time >= 0 and math.isfinite(self.time)):
            raise LabelError(f"record {self.id}: time must be a finite non-negative number")
        if self.event not in (0, 1):
            raise LabelError(f"record {self.id}: event must be 0 or 1, got {self.event!r}")


@dataclass
class Cohort:
    name: str
    records: list
    role: Role = Role.SOURCE
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.records = list(self.records)
        dims = {len(r.features) for r in self.records}
        if len(dims) > 1:
            raise DimensionMismatch(f"cohort {self.name}: records have mixed dimensions {sorted(dims)}")
        if self.role is Role.SOURCE and any(r.time is None for r in self.records):
            raise LabelError(f"source cohort {self.name} has records without a time")

    def __len__(self):
        return len(self.records)

    @property
    def dim(self) -> int:
        return len(self.records[0].features) if self.records else 0

    @property
    def ids(self) -> list:
        return [r.id for r in self.records]

    @property
    def features(self) -> np.ndarray:
        if "X" not in self._cache:
            X = np.array([r.features for r in self.records], dtype=float)
            self._cache["X"] = X.reshape(len(self.records), self.dim)
        return self._cache["X"]

    @property
    def events(self) -> np.ndarray:
        return np.array([r.event for r in self.records], dtype=int)

    @property
    def labeled(self) -> bool:
        return all(r.time is not None for r in self.records)

    @property
    def times(self) -> np.ndarray:
        if not self.labeled:
            raise LabelError(f"cohort {self.name} has records without a time")
        return np.array([r.time for r in self.records], dtype=float)

    @property
    def treatments(self) -> list:
        return [r.treatment for r in self.records]

    def subset(self, indices, name=None, role=None) -> "Cohort":
        return Cohort(name or self.name, [self.records[i] for i in indices], role or self.role)

    def hide_times(self, keep=()) -> "Cohort":
        """Target view: every time except those at positions in ``keep`` is withheld."""
        keep = set(keep)
        recs = [r if i in keep else _replace_time(r, None) for i, r in enumerate(self.records)]
        return Cohort(self.name, recs, Role.TARGET)


def _replace_time(rec: SurvivalRecord, time) -> SurvivalRecord:
    return SurvivalRecord(rec.id, rec.features, time, rec.event, rec.treatment)


def with_times(cohort: Cohort, times: Sequence[float], role: Role | None = None) -> Cohort:
    """Return a copy of ``cohort`` with all times revealed."""
    if len(times) != len(cohort):
        raise LengthMismatch("times must align with records")
    recs = [_replace_time(r, float(t)) for r, t in zip(cohort.records, times)]
    return Cohort(cohort.name, recs, role or cohort.role)


@dataclass
class ScoredCohort:
    cohort: Cohort
    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        if self.scores.shape != (len(self.cohort),):
            raise LengthMismatch("scores must align with the cohort records")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")


def _check_aligned(scores, times, events):
    scores = np.asarray(scores, dtype=float)
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=int)
    if not (scores.shape == times.shape == events.shape) or scores.ndim != 1:
        raise LengthMismatch("scores, times and events must be 1-D and of equal length")
    if scores.size == 0:
        raise LengthMismatch("at least one record is required")
    if np.any(np.isnan(times)):
        raise LabelError("times must not be missing")
    return scores, times, events


def _concordance_counts(scores, times, events):
    # comparable: i is an event and j outlives it (strictly)
    comparable = (events[:, None] == 1) & (times[None, :] > times[:, None])
    concordant = comparable & (scores[:, None] > scores[None, :])
    return int(concordant.sum()), int(comparable.sum())


def c_index(scores, times, events) -> float:
    """Harrell's concordance with strict indicators (score ties count as discordant)."""
    scores, times, events = _check_aligned(scores, times, events)
    concordant, z = _concordance_counts(scores, times, events)
    if z == 0:
        raise ZeroComparablePairs("no comparable pairs: the concordance is undefined")
    return concordant / z


def d_index(scores, times, events) -> float:
    return 1.0 - c_index(scores, times, events)


def c_index_prime(scores, times, events, supervised_mask) -> float:
    """Concordance over the whole cohort, supervision samples included.

    ``supervised_mask`` does not change the value; it is validated so that
    callers pass the same alignment used by :func:`pair_accounting` reports.
    """
    mask = np.asarray(supervised_mask, dtype=bool)
    if mask.shape != np.shape(scores):
        raise LengthMismatch("supervised_mask must align with scores")
    return c_index(scores, times, events)


@dataclass(frozen=True)
class PairAccounting:
    total_pairs: float
    reused_fraction: float
    missed_pairs: float


def pair_accounting(n_events: int, n_censored: int, supervision_fraction: float) -> PairAccounting:
    """How many target pairs C-index' inspects, and how many of them supervision touched.

    Assumes censored cases are spread uniformly among the events. A pair is
    reused when both of its members were labeled for training; the plain
    C-index additionally misses every pair with exactly one labeled member.
    """
    n, c, lam = n_events, n_censored, supervision_fraction
    if n < 0 or c < 0:
        raise ValueError("counts must be non-negative")
    if not 0.0 <= lam < 1.0:
        raise ValueError("supervision_fraction must lie in [0, 1)")
    total = n * n + 0.5 * n * c
    missed = lam * (1.0 - lam) * (n * n + n * c)
    return PairAccounting(total_pairs=total, reused_fraction=lam * lam, missed_pairs=missed)


def _logsumexp(v: np.ndarray) -> float:
    m = float(np.max(v))
    return m + math.log(float(np.sum(np.exp(v - m))))


def neg_log_partial_likelihood(log_scores, times, events) -> float:
    """Cox negative log partial likelihood, risk set ``{l : t_l >= t_o}``."""
    s, t, e = _check_aligned(log_scores, times, events)
    if not np.any(e == 1):
        raise NoEvents("partial likelihood needs at least one event")
    total = 0.0
    for o in np.flatnonzero(e == 1):
        total += _logsumexp(s[t >= t[o]]) - s[o]
    return total


def cox_linear_risk(beta, x) -> float:
    """Log-risk of the linear Cox model; the baseline hazard is not modelled."""
    beta = np.asarray(beta, dtype=float)
    x = np.asarray(x, dtype=float)
    if beta.shape != x.shape:
        raise DimensionMismatch(f"beta has shape {beta.shape}, x has shape {x.shape}")
    return float(beta @ x)
