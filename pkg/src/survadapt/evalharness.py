"""Experiment evaluation: folds, metric reports, significance, treatment
recommendation and the source-weight explanation.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

from .adapt import TrainConfig, average_order_rank, fit_cox_linear, inject_supervision, append_supervision
from .adapt import train_deepsurv_single, train_mssda
from .errors import (
    AllZeroDifferences,
    IncompleteTable,
    KTooSmall,
    LabelError,
    MatrixInvalid,
    NoTreatmentLabels,
    TooFewRecords,
    ZeroComparablePairs,
)
from .nnet import RiskModel, log_risk
from .survcore import Cohort, Role, SurvivalRecord, Treatment, c_index, c_index_prime

EXACT_WILCOXON_MAX_N = 20


# ---------------------------------------------------------------------------
# scorers


def as_scorer(model) -> Callable:
    """Turn a RiskModel (head h) or a callable into ``X -> log-risk scores``."""
    if isinstance(model, RiskModel):
        return lambda X: log_risk(model, "h", np.atleast_2d(X))
    return model


def average_order_scorer(models: Sequence) -> Callable:
    """Aggregate risk of several single-domain rankers: the negated mean rank."""
    scorers = [as_scorer(m) for m in models]
    return lambda X: -average_order_rank(scorers, np.atleast_2d(X))


def linear_scorer(beta, mean=None, components=None) -> Callable:
    beta = np.asarray(beta, dtype=float)

    def score(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if components is not None:
            X = (X - mean) @ components.T
        return X @ beta

    return score


def pca_basis(X, n_components: int = 15):
    """Mean and the leading principal directions (rows), signs fixed so the
    largest-magnitude loading of each direction is positive."""
    X = np.asarray(X, dtype=float)
    mean = X.mean(axis=0)
    cov = np.cov(X - mean, rowvar=False).reshape(X.shape[1], X.shape[1])
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][: min(n_components, X.shape[1])]
    comps = vecs[:, order].T
    signs = np.sign(comps[np.arange(comps.shape[0]), np.abs(comps).argmax(axis=1)])
    return mean, comps * signs[:, None]


def project(cohort: Cohort, mean, components) -> Cohort:
    Z = (cohort.features - mean) @ components.T
    recs = [SurvivalRecord(r.id, tuple(float(v) for v in z), r.time, r.event, r.treatment)
            for r, z in zip(cohort.records, Z)]
    return Cohort(cohort.name, recs, cohort.role)


# ---------------------------------------------------------------------------
# folds and metrics


@dataclass
class FoldPlan:
    k: int
    assignments: np.ndarray

    def indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)


def kfold_split(cohort, k: int = 5, seed: int = 0) -> FoldPlan:
    n = cohort if isinstance(cohort, int) else len(cohort)
    if k < 2:
        raise ValueError("k must be at least 2")
    if n < k:
        raise TooFewRecords(f"{n} records cannot fill {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    assignments = np.empty(n, dtype=int)
    assignments[perm] = np.arange(n) % k
    return FoldPlan(k, assignments)


def evaluate_target(model, target: Cohort, supervised_mask=None) -> dict:
    """C-index on the records not used for supervision and C-index' on all of them."""
    if not target.labeled:
        raise LabelError(f"target {target.name} needs evaluation labels")
    mask = np.zeros(len(target), bool) if supervised_mask is None else np.asarray(supervised_mask, bool)
    scores = as_scorer(model)(target.features)
    times, events = target.times, target.events
    keep = ~mask
    return {
        "c_index": c_index(scores[keep], times[keep], events[keep]),
        "c_index_prime": c_index_prime(scores, times, events, mask),
    }


@dataclass
class MetricsRow:
    target: str
    method: str
    supervision: float
    fold: int
    c_index: float
    c_index_prime: float


@dataclass
class MetricsReport:
    rows: list = field(default_factory=list)

    def summary(self) -> list:
        """Per (target, method, supervision): means and standard errors over folds."""
        groups = {}
        for r in self.rows:
            groups.setdefault((r.target, r.method, r.supervision), []).append(r)
        out = []
        for (target, method, sup), rows in sorted(groups.items()):
            entry = {"target": target, "method": method, "supervision": sup}
            for metric in ("c_index", "c_index_prime"):
                vals = np.array([getattr(r, metric) for r in rows], float)
                vals = vals[np.isfinite(vals)]
                entry[metric] = float(vals.mean()) if vals.size else math.nan
                entry[f"{metric}_se"] = standard_error(vals)
                entry[f"{metric}_folds"] = vals.tolist()
            out.append(entry)
        return out


def standard_error(values) -> float:
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return math.nan
    return float(v.std(ddof=1) / math.sqrt(v.size))


def evaluate_folds(scorer, target: Cohort, supervised_mask, k: int, seed: int, *,
                   target_name=None, method="mssda", supervision=0.0) -> list:
    """One row per fold; folds where a metric has no comparable pairs get NaN."""
    plan = kfold_split(target, k, seed)
    scores = np.asarray(as_scorer(scorer)(target.features), float)
    times, events = target.times, target.events
    mask = np.asarray(supervised_mask, bool)
    rows = []
    for f in range(k):
        idx = plan.indices(f)
        held = idx[~mask[idx]]
        rows.append(MetricsRow(
            target_name or target.name, method, supervision, f,
            _safe(c_index, scores[held], times[held], events[held]),
            _safe(c_index, scores[idx], times[idx], events[idx]),
        ))
    return rows


def _safe(metric, *args) -> float:
    try:
        return metric(*args)
    except ZeroComparablePairs:
        return math.nan


def train_method(method: str, sources: Sequence[Cohort], target: Cohort, config: TrainConfig,
                 pca_components: int = 15):
    """Fit one of ``mssda``, ``deepsurv-ao`` or ``cox-ao`` and return a scorer."""
    if method == "mssda":
        return as_scorer(train_mssda(sources, target, config).model)
    if method == "deepsurv-ao":
        return average_order_scorer([train_deepsurv_single(s, config) for s in sources])
    if method == "cox-ao":
        scorers = []
        for s in sources:
            mean, comps = pca_basis(s.features, pca_components)
            beta = fit_cox_linear(project(s, mean, comps))
            scorers.append(linear_scorer(beta, mean, comps))
        return average_order_scorer(scorers)
    raise ValueError(f"unknown method {method!r}")


def run_benchmark(sources: Sequence[Cohort], target: Cohort, config: TrainConfig, *,
                  methods=("mssda", "deepsurv-ao", "cox-ao"), folds: int = 5) -> MetricsReport:
    """Train each method once (with injected target supervision) and evaluate per fold.

    ``target`` must carry labels; the trainer only sees the supervised ones.
    """
    split = inject_supervision(target, config.supervision_fraction, config.seed)
    train_sources = append_supervision(sources, split.labeled_subset)
    report = MetricsReport()
    for method in methods:
        scorer = train_method(method, train_sources, split.unlabeled_target, config)
        report.rows.extend(evaluate_folds(
            scorer, target, split.supervised_mask, folds, config.seed,
            method=method, supervision=config.supervision_fraction,
        ))
    return report


# ---------------------------------------------------------------------------
# significance and ranking


def _signed_rank_parts(differences):
    d = np.asarray(differences, dtype=float)
    d = d[d != 0]
    if d.size == 0:
        raise AllZeroDifferences("every difference is zero")
    ranks = rankdata(np.abs(d))
    return d, ranks


def wilcoxon_upper(differences) -> float:
    """One-sided p-value of the Wilcoxon signed-rank test for a positive shift.

    Zero differences are dropped and tied magnitudes get average ranks. For
    n <= 20 the null distribution of W+ is counted exactly (doubled ranks make
    it integer-valued); above that a normal approximation with continuity and
    tie corrections is used.
    """
    d, ranks = _signed_rank_parts(differences)
    n = d.size
    w_plus = ranks[d > 0].sum()
    if n <= EXACT_WILCOXON_MAX_N:
        doubled = np.rint(2 * ranks).astype(int)
        total = int(doubled.sum())
        counts = np.zeros(total + 1, dtype=object)
        counts[0] = 1
        for r in doubled:
            shifted = np.zeros_like(counts)
            shifted[r:] = counts[: total + 1 - r]
            counts = counts + shifted
        observed = int(np.rint(2 * w_plus))
        return float(sum(counts[observed:]) / 2**n)
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts**3 - tie_counts) / 48.0
    z = (w_plus - mean - 0.5) / math.sqrt(var)
    return float(1.0 - NormalDist().cdf(z))


def rank_methods(table: dict) -> dict:
    """Mean rank (1 = best, ties averaged) of each method across targets.

    ``table`` maps target -> {method: metric value}.
    """
    if not table:
        raise IncompleteTable("empty table")
    methods = sorted({m for row in table.values() for m in row})
    per_target = []
    for target, row in table.items():
        missing = [m for m in methods if m not in row or row[m] is None or not np.isfinite(row[m])]
        if missing:
            raise IncompleteTable(f"target {target} lacks values for {missing}")
        per_target.append(rankdata([-row[m] for m in methods]))
    mean = np.mean(per_target, axis=0)
    return {m: float(r) for m, r in zip(methods, mean)}


# ---------------------------------------------------------------------------
# treatment recommendation


class Group(str, enum.Enum):
    RECOM = "recom"
    ANTI = "anti"


@dataclass
class PatientRecommendation:
    patient_id: str
    rec_score: float
    recommended: Treatment
    administered: Treatment
    group: Group


@dataclass
class RecommendationReport:
    patients: list
    median_recom: float
    median_anti: float
    comparable: bool
    success: bool

    @property
    def beneficial_share(self) -> dict:
        n = len(self.patients)
        return {t: sum(p.recommended is t for p in self.patients) / n for t in (Treatment.P, Treatment.R)}


def treatment_dummy(treatments) -> np.ndarray:
    return np.array([1.0 if t is Treatment.P else 0.0 for t in treatments])


def with_treatment_dummy(cohort: Cohort) -> Cohort:
    """Append the treatment indicator (P = 1, R = 0) as the last covariate.

    With this coding a positive model weight on the indicator means higher
    risk under P, which is exactly when R gets recommended.
    """
    if any(t is Treatment.NONE for t in cohort.treatments):
        raise NoTreatmentLabels(f"cohort {cohort.name} has records without a treatment")
    recs = [SurvivalRecord(r.id, r.features + (1.0 if r.treatment is Treatment.P else 0.0,),
                           r.time, r.event, r.treatment) for r in cohort.records]
    return Cohort(cohort.name, recs, cohort.role)


def recommend_treatment(model, target: Cohort) -> RecommendationReport:
    """Compare each patient's predicted log-risk under P and under R.

    The model takes the covariates with the treatment dummy appended. A
    positive ``rec_score = logrisk(x^P) - logrisk(x^R)`` recommends R. Both
    counterfactual copies are scored in one batch so rank-based scorers see a
    common pool. Medians use uncensored patients only.
    """
    administered = target.treatments
    if not administered or any(t is Treatment.NONE for t in administered):
        raise NoTreatmentLabels(f"target {target.name} lacks treatment labels")
    if not target.labeled:
        raise LabelError(f"target {target.name} needs observed times for the group medians")
    X = target.features
    n = len(target)
    XP = np.hstack([X, np.ones((n, 1))])
    XR = np.hstack([X, np.zeros((n, 1))])
    scores = np.asarray(as_scorer(model)(np.vstack([XP, XR])), float)
    rec = scores[:n] - scores[n:]

    patients = []
    for rid, score, given in zip(target.ids, rec, administered):
        recommended = Treatment.R if score > 0 else Treatment.P
        # a zero score contradicts nothing: the patient counts as recommended
        agree = score == 0 or recommended is given
        patients.append(PatientRecommendation(rid, float(score), given if score == 0 else recommended,
                                              given, Group.RECOM if agree else Group.ANTI))
    times, events = target.times, target.events
    medians = {}
    for g in Group:
        sel = [i for i, p in enumerate(patients) if p.group is g and events[i] == 1]
        medians[g] = float(np.median(times[sel])) if sel else math.nan
    comparable = all(np.isfinite(v) for v in medians.values()) and medians[Group.ANTI] != medians[Group.RECOM]
    success = bool(comparable and medians[Group.ANTI] < medians[Group.RECOM])
    return RecommendationReport(patients, medians[Group.RECOM], medians[Group.ANTI], comparable, success)


def success_ratio(reports: Sequence[RecommendationReport]) -> tuple:
    """(successes, valid folds); folds with an empty group or equal medians are not valid."""
    valid = [r for r in reports if r.comparable]
    return sum(r.success for r in valid), len(valid)


# ---------------------------------------------------------------------------
# weight explanation


def weight_distance_matrix(weight_rows) -> np.ndarray:
    """Row ``i`` holds the weights learned with domain ``i`` as target (its own
    entry is ignored). Entry ``(i, j)`` is the Euclidean distance of rows i and
    j once coordinates i and j are removed from both.
    """
    W = np.asarray(weight_rows, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise MatrixInvalid(f"weight matrix must be square, got shape {W.shape}")
    K = W.shape[0]
    if K < 3:
        raise KTooSmall(f"need at least 3 domains, got {K}")
    D = np.zeros((K, K))
    for i in range(K):
        for j in range(i + 1, K):
            keep = [c for c in range(K) if c not in (i, j)]
            D[i, j] = D[j, i] = float(np.linalg.norm(W[i, keep] - W[j, keep]))
    return D


@dataclass(frozen=True)
class Merge:
    left: int
    right: int
    height: float
    size: int


@dataclass
class Dendrogram:
    """Merges in order. Leaves are ``0..K-1``; the cluster formed by merge
    ``m`` has id ``K + m``."""

    n_leaves: int
    merges: list

    def members(self, cluster: int) -> frozenset:
        if cluster < self.n_leaves:
            return frozenset([cluster])
        m = self.merges[cluster - self.n_leaves]
        return self.members(m.left) | self.members(m.right)


def hierarchical_cluster(distances) -> Dendrogram:
    """Average-linkage agglomerative clustering.

    Among equally close pairs the one with the smallest cluster ids merges
    first.
    """
    D = np.asarray(distances, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1] or D.shape[0] < 1:
        raise MatrixInvalid("distance matrix must be square and non-empty")
    if not np.all(np.isfinite(D)) or np.any(D < 0) or not np.allclose(D, D.T, rtol=0, atol=1e-12) \
            or np.any(np.diag(D) != 0):
        raise MatrixInvalid("distance matrix must be symmetric, non-negative, with a zero diagonal")
    K = D.shape[0]
    active = {i: [i] for i in range(K)}
    merges = []
    next_id = K
    while len(active) > 1:
        ids = sorted(active)
        best = None
        for x in range(len(ids)):
            for y in range(x + 1, len(ids)):
                a, b = ids[x], ids[y]
                dist = float(D[np.ix_(active[a], active[b])].mean())
                if best is None or dist < best[0]:
                    best = (dist, a, b)
        dist, a, b = best
        merged = active.pop(a) + active.pop(b)
        merges.append(Merge(a, b, dist, len(merged)))
        active[next_id] = merged
        next_id += 1
    return Dendrogram(K, merges)
