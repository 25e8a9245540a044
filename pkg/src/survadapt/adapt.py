"""Adversarial multi-source survival domain adaptation and its baselines.

The trainer maximises, over the extractor, head ``h`` and the source weights,
the minimum over head ``hprime`` of::

    sum_i w_i * (-NLPL_i(h)) - lambda1 * |SDI~(h, h'; target) - sum_i w_i SDI~(h, h'; source_i)|
                             - lambda2 * ||w||_2

where NLPL is the Cox negative log partial likelihood and SDI~ the relaxed
symmetric discordance index. ``w`` is the softmax of free logits.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigInvalid, FractionOutOfRange, LabelError, NoEvents
from .nnet import RiskModel, backward, forward, init_model, partial_likelihood_scores, sdi_surrogate_scores
from .survcore import Cohort, Role

log = logging.getLogger(__name__)

MAX_RESAMPLES = 100


@dataclass
class TrainConfig:
    lambda1: float = 1.0
    lambda2: float = 0.1
    learning_rate: float = 0.001
    epochs: int = 20
    batch_size: int = 64
    margin: float = 1.0
    hidden: tuple = (200, 20)
    dropout: float = 0.05
    seed: int = 0
    supervision_fraction: float = 0.0
    adversary_steps: int = 1

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        problems = []
        if self.lambda1 < 0 or self.lambda2 < 0:
            problems.append("lambda1 and lambda2 must be >= 0")
        if not self.learning_rate > 0:
            problems.append("learning_rate must be > 0")
        if self.epochs < 0:
            problems.append("epochs must be >= 0")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if not self.margin > 0:
            problems.append("margin must be > 0")
        if not self.hidden or any(h < 1 for h in self.hidden):
            problems.append("hidden widths must be positive")
        if not 0.0 <= self.dropout < 1.0:
            problems.append("dropout must lie in [0, 1)")
        if not 0.0 <= self.supervision_fraction < 1.0:
            problems.append("supervision_fraction must lie in [0, 1)")
        if self.adversary_steps < 0:
            problems.append("adversary_steps must be >= 0")
        if problems:
            raise ConfigInvalid("; ".join(problems))


def softmax_weights(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    e = np.exp(z - z.max())
    return e / e.sum()


@dataclass
class SourceWeights:
    logits: np.ndarray

    @classmethod
    def uniform(cls, k: int) -> "SourceWeights":
        return cls(np.zeros(k))

    @property
    def weights(self) -> np.ndarray:
        return softmax_weights(self.logits)


# ---------------------------------------------------------------------------
# supervision


@dataclass
class SupervisionSplit:
    labeled_subset: Cohort
    unlabeled_target: Cohort
    heldout_eval: Cohort
    supervised_mask: np.ndarray


def inject_supervision(target: Cohort, fraction: float, seed: int = 0) -> SupervisionSplit:
    """Reveal the labels of ``floor(fraction * N)`` target records, chosen by ``seed``.

    ``target`` must carry its true times; they are hidden in
    ``unlabeled_target`` except for the selected records, which also form
    ``labeled_subset`` (to be appended to every source).
    """
    if not 0.0 <= fraction < 1.0:
        raise FractionOutOfRange(f"supervision fraction {fraction} is outside [0, 1)")
    if not target.labeled:
        raise LabelError(f"target {target.name} needs its true times to inject supervision")
    n = len(target)
    k = int(math.floor(fraction * n))
    chosen = np.sort(np.random.default_rng(seed).choice(n, size=k, replace=False)) if k else np.array([], int)
    mask = np.zeros(n, dtype=bool)
    mask[chosen] = True
    labeled = target.subset(chosen, name=f"{target.name}-supervised", role=Role.SOURCE)
    heldout = target.subset(np.flatnonzero(~mask), role=Role.SOURCE)
    return SupervisionSplit(labeled, target.hide_times(), heldout, mask)


def append_supervision(sources: Sequence[Cohort], labeled: Cohort) -> list:
    if len(labeled) == 0:
        return list(sources)
    return [Cohort(s.name, s.records + labeled.records, Role.SOURCE) for s in sources]


# ---------------------------------------------------------------------------
# objective


@dataclass
class Batch:
    X: np.ndarray
    events: np.ndarray
    times: Optional[np.ndarray] = None

    @classmethod
    def from_cohort(cls, cohort: Cohort, idx=None) -> "Batch":
        idx = np.arange(len(cohort)) if idx is None else idx
        times = cohort.times[idx] if cohort.labeled else None
        return cls(cohort.features[idx], cohort.events[idx], times)


@dataclass
class ObjectiveTape:
    """Objective value with gradients for the two players.

    ``ascent`` covers the extractor, head ``h`` and ``"logits"``; ``descent``
    covers head ``hprime`` (the adversary minimises the objective).
    """

    value: float
    ascent: dict
    descent: dict
    source_pl: float = 0.0
    discrepancy: float = 0.0


def _objective(model, source_batches, target_batch, logits, cfg: TrainConfig, dropout=0.0, rng=None):
    w = softmax_weights(logits)
    K = len(source_batches)
    grads = model.zeros_like()
    pl = np.zeros(K)
    s_src = np.zeros(K)
    adapt = cfg.lambda1 > 0 and target_batch is not None
    caches, pl_grads, sdi_grads = [], [], []
    for i, b in enumerate(source_batches):
        cache = forward(model, b.X, dropout, rng)
        pl[i], g = partial_likelihood_scores(cache.a, b.times, b.events)
        caches.append(cache)
        pl_grads.append(g)
        if adapt:
            s_src[i], ga, gb = sdi_surrogate_scores(cache.a, cache.b, b.events, cfg.margin)
            sdi_grads.append((ga, gb))

    delta, sign = 0.0, 0.0
    if adapt:
        t_cache = forward(model, target_batch.X, dropout, rng)
        s_t, ta, tb = sdi_surrogate_scores(t_cache.a, t_cache.b, target_batch.events, cfg.margin)
        delta = s_t - float(w @ s_src)
        sign = float(np.sign(delta))
    norm_w = float(np.linalg.norm(w))
    value = float(-(w @ pl) - cfg.lambda1 * abs(delta) - cfg.lambda2 * norm_w)

    def accumulate(cache, ga, gb):
        for k, v in backward(model, cache, ga, gb).items():
            grads[k] += v

    for i, cache in enumerate(caches):
        ga = -w[i] * pl_grads[i]
        gb = None
        if adapt:
            ga = ga + cfg.lambda1 * sign * w[i] * sdi_grads[i][0]
            gb = cfg.lambda1 * sign * w[i] * sdi_grads[i][1]
        accumulate(cache, ga, gb)
    if adapt:
        accumulate(t_cache, -cfg.lambda1 * sign * ta, -cfg.lambda1 * sign * tb)

    dw = -pl + cfg.lambda1 * sign * s_src - cfg.lambda2 * w / norm_w
    dlogits = w * (dw - w @ dw)
    descent = {k: grads.pop(k) for k in ("head_hprime.weight", "head_hprime.bias")}
    grads["logits"] = dlogits
    return ObjectiveTape(value, grads, descent, float(w @ pl), abs(delta))


def mssda_objective(model: RiskModel, sources: Sequence[Cohort], target: Cohort, weights,
                    config: TrainConfig) -> ObjectiveTape:
    """Full-cohort evaluation of the min-max objective (no dropout)."""
    logits = weights.logits if isinstance(weights, SourceWeights) else np.asarray(weights, float)
    batches = [Batch.from_cohort(s) for s in sources]
    return _objective(model, batches, Batch.from_cohort(target), logits, config)


# ---------------------------------------------------------------------------
# training


@dataclass
class EpochRecord:
    epoch: int
    source_pl_loss: float
    discrepancy_term: float
    weights: np.ndarray


@dataclass
class TrainResult:
    model: RiskModel
    weights: np.ndarray
    history: list = field(default_factory=list)
    source_names: list = field(default_factory=list)


class _BatchStream:
    """Per-epoch reshuffled index batches for one cohort."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n = n
        self.rng = rng

    def epoch(self, steps: int, batch_size: int) -> list:
        need = steps * min(batch_size, self.n)
        order = self.rng.permutation(self.n)
        while order.size < need:
            order = np.concatenate([order, self.rng.permutation(self.n)])
        size = min(batch_size, self.n)
        return [order[s * size:(s + 1) * size] for s in range(steps)]


def _source_batch(cohort, idx, rng) -> Batch:
    batch = Batch.from_cohort(cohort, idx)
    tries = 0
    while not np.any(batch.events == 1):
        tries += 1
        if tries > MAX_RESAMPLES:
            raise NoEvents(f"could not draw a batch with an event from {cohort.name}")
        log.info("batch from %s has no events; resampling", cohort.name)
        idx = rng.choice(len(cohort), size=idx.size, replace=False)
        batch = Batch.from_cohort(cohort, idx)
    return batch


def _train(sources: Sequence[Cohort], target: Optional[Cohort], config: TrainConfig,
           on_step: Optional[Callable] = None) -> TrainResult:
    if not sources:
        raise ConfigInvalid("at least one source is required")
    for s in sources:
        if not s.labeled:
            raise LabelError(f"source {s.name} is not fully labeled")
        if not np.any(s.events == 1):
            raise NoEvents(f"source {s.name} has no events")
    d = sources[0].dim
    if any(s.dim != d for s in sources) or (target is not None and target.dim != d):
        raise ConfigInvalid("all cohorts must share the feature dimension")

    K = len(sources)
    seqs = np.random.SeedSequence(config.seed).spawn(2 + K)
    dropout_rng = np.random.default_rng(seqs[0])
    target_stream = _BatchStream(len(target), np.random.default_rng(seqs[1])) if target is not None else None
    source_rngs = [np.random.default_rng(s) for s in seqs[2:]]
    source_streams = [_BatchStream(len(s), r) for s, r in zip(sources, source_rngs)]

    model = init_model(d, config.hidden, config.seed)
    logits = np.zeros(K)
    lr = config.learning_rate
    adapt = config.lambda1 > 0 and target is not None
    steps = max(1, math.ceil(max(len(s) for s in sources) / config.batch_size))
    history = []
    for epoch in range(1, config.epochs + 1):
        plans = [st.epoch(steps, config.batch_size) for st in source_streams]
        t_plan = target_stream.epoch(steps, config.batch_size) if adapt else None
        pl_sum = disc_sum = 0.0
        for step in range(steps):
            batches = [_source_batch(s, plans[i][step], source_rngs[i]) for i, s in enumerate(sources)]
            t_batch = Batch.from_cohort(target, t_plan[step]) if adapt else None
            if adapt:
                for _ in range(config.adversary_steps):
                    tape = _objective(model, batches, t_batch, logits, config, config.dropout, dropout_rng)
                    for k, g in tape.descent.items():
                        model.params[k] -= lr * g
            tape = _objective(model, batches, t_batch, logits, config, config.dropout, dropout_rng)
            for k, g in tape.ascent.items():
                if k == "logits":
                    logits = logits + lr * g
                else:
                    model.params[k] += lr * g
            pl_sum += tape.source_pl
            disc_sum += tape.discrepancy
            if on_step is not None:
                on_step(epoch, step, tape)
        history.append(EpochRecord(epoch, pl_sum / steps, disc_sum / steps, softmax_weights(logits)))
    return TrainResult(model, softmax_weights(logits), history, [s.name for s in sources])


def train_mssda(sources: Sequence[Cohort], target: Cohort, config: TrainConfig) -> TrainResult:
    return _train(sources, target, config)


def train_deepsurv_single(source: Cohort, config: TrainConfig) -> RiskModel:
    """Partial-likelihood-only training of the same network on one source."""
    cfg = replace(config, lambda1=0.0, lambda2=0.0)
    return _train([source], None, cfg).model


# ---------------------------------------------------------------------------
# classical baselines


def fit_cox_linear(source: Cohort, learning_rate: float = 0.1, epochs: int = 200) -> np.ndarray:
    """Full-batch gradient descent on the per-event mean negative log partial likelihood."""
    times, events, X = source.times, source.events, source.features
    n_ev = int(np.sum(events == 1))
    if n_ev == 0:
        raise NoEvents(f"source {source.name} has no events")
    beta = np.zeros(X.shape[1])
    for _ in range(epochs):
        _, g = partial_likelihood_scores(X @ beta, times, events)
        beta = beta - learning_rate * (X.T @ g) / n_ev
    return beta


def descending_ranks(scores) -> np.ndarray:
    """Ranks 1..N, 1 = highest score; ties go to the lower record index first."""
    scores = np.asarray(scores, dtype=float)
    order = np.lexsort((np.arange(scores.size), -scores))
    ranks = np.empty(scores.size)
    ranks[order] = np.arange(1, scores.size + 1)
    return ranks


def average_order_rank(models: Sequence[Callable], target) -> np.ndarray:
    """Mean descending rank of each target record across the given scorers.

    ``target`` is a :class:`Cohort` or a feature matrix.
    """
    if not models:
        raise ValueError("at least one model is required")
    X = target.features if isinstance(target, Cohort) else np.asarray(target, dtype=float)
    return np.mean([descending_ranks(m(X)) for m in models], axis=0)
