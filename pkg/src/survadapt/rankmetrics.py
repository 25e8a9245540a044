"""Ranking distances between risk functions on censored data.

The symmetric discordance index (SDI) compares two rankers on a survival
sample: Kendall-style disagreement over the event pairs, plus, for every
censored instance, the Jaccard distance between the sets of events each
ranker places above it. Both parts are metrics, so their convex combination
is one too, which is what makes the target-domain bound below work.

Score ties are broken by record index (lower index ranks lower), so every
score vector induces a strict ordering.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import (
    EmptyDataset,
    EmptyHypothesisSet,
    IndexNotCensored,
    LengthMismatch,
    TiedScores,
    WeightsNotNormalized,
)
from .survcore import Cohort

BOUND_SLACK = 1e-9


@dataclass(frozen=True)
class CensorSplit:
    event_indices: tuple
    censored_indices: tuple

    @classmethod
    def from_events(cls, events) -> "CensorSplit":
        events = np.asarray(events, dtype=int)
        return cls(
            tuple(int(i) for i in np.flatnonzero(events == 1)),
            tuple(int(i) for i in np.flatnonzero(events != 1)),
        )


def strict_ranks(scores) -> np.ndarray:
    """Ranks ``0..n-1`` by ascending score, ties broken by index."""
    scores = np.asarray(scores, dtype=float)
    order = np.lexsort((np.arange(scores.size), scores))
    ranks = np.empty(scores.size, dtype=np.int64)
    ranks[order] = np.arange(scores.size)
    return ranks


def kendall_tau_distance(scores1, scores2) -> float:
    """Normalised count of pairs that the two score vectors order oppositely."""
    s1 = [float(v) for v in scores1]
    s2 = [float(v) for v in scores2]
    n = len(s1)
    if n != len(s2):
        raise LengthMismatch("score vectors differ in length")
    if n < 2:
        raise LengthMismatch("kendall tau distance needs at least two items")
    if len(set(s1)) != n or len(set(s2)) != n:
        raise TiedScores("scores must be pairwise distinct")
    discordant = 0
    for i in range(n):
        for j in range(i + 1, n):
            if (s1[i] < s1[j]) != (s2[i] < s2[j]):
                discordant += 1
    return 2.0 * discordant / (n * (n - 1))


def risk_set(scores, split: CensorSplit, censored_index: int) -> frozenset:
    """Events ranked strictly above the censored instance."""
    if censored_index not in split.censored_indices:
        raise IndexNotCensored(f"index {censored_index} is not censored")
    ranks = strict_ranks(scores)
    pivot = ranks[censored_index]
    return frozenset(j for j in split.event_indices if ranks[j] > pivot)


def _alphas(n_ev: int, n_ce: int):
    return n_ev * (n_ev - 1) / 2.0, n_ev * n_ce / 2.0


def sdi(scores1, scores2, events) -> float:
    r1 = strict_ranks(scores1)
    r2 = strict_ranks(scores2)
    ev = np.asarray(events, dtype=int) == 1
    if not (r1.shape == r2.shape == ev.shape):
        raise LengthMismatch("scores and events must have equal length")
    if r1.size == 0:
        raise EmptyDataset("SDI of an empty sample is undefined")
    n_ev = int(ev.sum())
    n_ce = ev.size - n_ev
    a1, a2 = _alphas(n_ev, n_ce)
    if a1 + a2 == 0:
        return 0.0

    e1, e2 = r1[ev], r2[ev]
    kendall = 0.0
    if a1 > 0:
        d1 = e1[:, None] < e1[None, :]
        d2 = e2[:, None] < e2[None, :]
        discordant = np.count_nonzero(np.triu(d1 != d2, k=1))
        kendall = discordant / a1

    jaccard = 0.0
    if a2 > 0:
        c1, c2 = r1[~ev], r2[~ev]
        above1 = e1[None, :] > c1[:, None]
        above2 = e2[None, :] > c2[:, None]
        sym = np.count_nonzero(above1 != above2, axis=1)
        union = np.count_nonzero(above1 | above2, axis=1)
        per = np.divide(sym, union, out=np.zeros(n_ce), where=union > 0)
        jaccard = float(per.mean())

    return (a1 * kendall + a2 * jaccard) / (a1 + a2)


def sdi_decomposed_oracle(scores1, scores2, events) -> float:
    """SDI rebuilt from its two metric parts: Kendall tau on the events and
    a set-based Jaccard distance for each censored instance.

    Deliberately shares no code with :func:`sdi` beyond the tie-break rule,
    so the two can be checked against each other.
    """
    s1 = [float(v) for v in scores1]
    s2 = [float(v) for v in scores2]
    flags = [int(v) for v in events]
    n = len(s1)
    if not n == len(s2) == len(flags):
        raise LengthMismatch("scores and events must have equal length")
    if n == 0:
        raise EmptyDataset("SDI of an empty sample is undefined")
    key1 = [(s1[i], i) for i in range(n)]
    key2 = [(s2[i], i) for i in range(n)]
    ev = [i for i in range(n) if flags[i] == 1]
    ce = [i for i in range(n) if flags[i] != 1]
    a1, a2 = _alphas(len(ev), len(ce))
    if a1 + a2 == 0:
        return 0.0

    kappa = 0.0
    if len(ev) >= 2:
        rank1 = {i: r for r, i in enumerate(sorted(ev, key=key1.__getitem__))}
        rank2 = {i: r for r, i in enumerate(sorted(ev, key=key2.__getitem__))}
        kappa = kendall_tau_distance([rank1[i] for i in ev], [rank2[i] for i in ev])

    jaccard_sum = 0.0
    for c in ce:
        set1 = {j for j in ev if key1[j] > key1[c]}
        set2 = {j for j in ev if key2[j] > key2[c]}
        union = set1 | set2
        if union:
            jaccard_sum += len(set1 ^ set2) / len(union)
    mean_jaccard = jaccard_sum / len(ce) if ce else 0.0

    return a1 / (a1 + a2) * kappa + a2 / (a1 + a2) * mean_jaccard


def sdi_matrix(score_rows, events) -> np.ndarray:
    """All pairwise SDI values between the rows of ``score_rows`` (m x n)."""
    S = np.atleast_2d(np.asarray(score_rows, dtype=float))
    ev = np.asarray(events, dtype=int) == 1
    if S.shape[1] != ev.size:
        raise LengthMismatch("score rows must align with events")
    if ev.size == 0:
        raise EmptyDataset("SDI of an empty sample is undefined")
    R = np.stack([strict_ranks(row) for row in S])
    n_ev = int(ev.sum())
    n_ce = ev.size - n_ev
    a1, a2 = _alphas(n_ev, n_ce)
    out = np.zeros((R.shape[0], R.shape[0]))
    if a1 + a2 == 0:
        return out
    E = R[:, ev]
    if a1 > 0:
        iu = np.triu_indices(n_ev, k=1)
        lower = (E[:, :, None] < E[:, None, :])[:, iu[0], iu[1]].astype(np.int64)
        # pairs where both agree on "<" plus pairs where both agree on ">"
        agree = lower @ lower.T + (1 - lower) @ (1 - lower).T
        out += iu[0].size - agree
    if a2 > 0:
        C = R[:, ~ev]
        above = (E[:, None, :] > C[:, :, None]).astype(np.int64)  # m x nc x ne
        inter = np.einsum("acj,bcj->abc", above, above)
        size = above.sum(axis=2)
        union = size[:, None, :] + size[None, :, :] - inter
        sym = union - inter
        per = np.divide(sym, union, out=np.zeros(union.shape, dtype=float), where=union > 0)
        out += per.mean(axis=2) * a2
    return out / (a1 + a2)


@dataclass
class HypothesisSet:
    """A finite set of scoring functions, each mapping an ``(n, d)`` array to ``n`` scores."""

    rankers: Sequence[Callable]

    def __post_init__(self):
        self.rankers = list(self.rankers)
        if not self.rankers:
            raise EmptyHypothesisSet("the hypothesis set is empty")

    def __len__(self):
        return len(self.rankers)

    def score(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.stack([np.asarray(h(X), dtype=float).reshape(len(X)) for h in self.rankers])

    @classmethod
    def linear(cls, betas) -> "HypothesisSet":
        return cls([_LinearRanker(np.asarray(b, dtype=float)) for b in betas])


@dataclass(frozen=True)
class _LinearRanker:
    beta: np.ndarray

    def __call__(self, X):
        return np.asarray(X, dtype=float) @ self.beta


def _sample_sdi(hypotheses: HypothesisSet, sample: Cohort) -> np.ndarray:
    if len(sample) == 0:
        raise EmptyDataset(f"sample {sample.name} is empty")
    return sdi_matrix(hypotheses.score(sample.features), sample.events)


def empirical_discrepancy(hypotheses: HypothesisSet, sample_s: Cohort, sample_t: Cohort) -> float:
    """Largest gap in SDI between the two samples over hypothesis pairs."""
    if not isinstance(hypotheses, HypothesisSet):
        hypotheses = HypothesisSet(hypotheses)
    gap = np.abs(_sample_sdi(hypotheses, sample_s) - _sample_sdi(hypotheses, sample_t))
    return float(gap.max())


@dataclass(frozen=True)
class BoundCheck:
    lhs: float
    rhs: float
    satisfied: bool


@dataclass
class BoundReport:
    per_hypothesis: list
    eta_d: float
    discrepancies: list

    @property
    def all_satisfied(self) -> bool:
        return all(c.satisfied for c in self.per_hypothesis)


def _truth_sdi(hypotheses: HypothesisSet, cohort: Cohort, truth_scores) -> np.ndarray:
    truth_scores = np.asarray(truth_scores, dtype=float)
    if truth_scores.shape != (len(cohort),):
        raise LengthMismatch(f"ground truth for {cohort.name} does not align with its records")
    rows = np.vstack([hypotheses.score(cohort.features), truth_scores])
    return sdi_matrix(rows, cohort.events)[:-1, -1]


def verify_target_bound(hypotheses, sources, target, weights) -> BoundReport:
    """Evaluate both sides of the multi-source target bound for every hypothesis.

    ``sources`` is a sequence of ``(cohort, truth_scores)``; ``target`` is one
    such pair. The joint-optimum term is found by exhaustive search over the
    hypothesis set itself.
    """
    if not isinstance(hypotheses, HypothesisSet):
        hypotheses = HypothesisSet(hypotheses)
    w = np.asarray(weights, dtype=float)
    if w.shape != (len(sources),) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise WeightsNotNormalized(f"weights must be a simplex vector over {len(sources)} sources")
    t_cohort, t_truth = target
    loss_t = _truth_sdi(hypotheses, t_cohort, t_truth)
    losses_s = np.stack([_truth_sdi(hypotheses, c, f) for c, f in sources])
    discs = np.array([empirical_discrepancy(hypotheses, c, t_cohort) for c, _ in sources])

    eta = float(np.min(loss_t + w @ losses_s))
    rhs = eta + w @ (losses_s + discs[:, None])
    checks = [
        BoundCheck(float(l), float(r), bool(l <= r + BOUND_SLACK)) for l, r in zip(loss_t, rhs)
    ]
    return BoundReport(per_hypothesis=checks, eta_d=eta, discrepancies=[float(d) for d in discs])
