"""Feedforward risk network with two scalar heads and hand-written backprop.

The extractor is a ReLU MLP ``d -> h1 -> h2 -> ...``; heads ``h`` and
``hprime`` are linear maps from the last hidden layer to a log-risk. The three
training losses (partial likelihood, surrogate SDI, and their combination in
``adapt``) are differentiated analytically with respect to the two head
outputs and then pushed back through the network by :func:`backward`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, EmptyDataset, NoEvents, ParseError
from .survcore import Cohort

EXP_CLAMP = 1e6
JACCARD_FLOOR = 1e-8
MODEL_MAGIC = "survadapt-model v1"


class Head(str, enum.Enum):
    H = "h"
    HPRIME = "hprime"


@dataclass
class RiskModel:
    """Parameters keyed by name, in a fixed order.

    ``layer{i}.weight`` is ``(out, in)``, ``layer{i}.bias`` is ``(out,)``;
    heads use ``head_h.*`` and ``head_hprime.*`` with a ``(1, k)`` weight.
    """

    params: dict = field(default_factory=dict)

    @property
    def n_layers(self) -> int:
        return sum(1 for k in self.params if k.startswith("layer") and k.endswith(".weight"))

    @property
    def input_dim(self) -> int:
        return self.params["layer0.weight"].shape[1]

    @property
    def hidden(self) -> tuple:
        return tuple(self.params[f"layer{i}.weight"].shape[0] for i in range(self.n_layers))

    def copy(self) -> "RiskModel":
        return RiskModel({k: v.copy() for k, v in self.params.items()})

    def zeros_like(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.params.items()}


@dataclass
class GradientTape:
    loss: float
    gradients: dict


def init_model(d: int, hidden=(200, 20), seed: int = 0) -> RiskModel:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    if d < 1 or not hidden or any(h < 1 for h in hidden):
        raise ValueError("input dimension and hidden widths must be positive")
    rng = np.random.default_rng(seed)
    params = {}
    fan_in = d
    for i, width in enumerate(hidden):
        bound = 1.0 / math.sqrt(fan_in)
        params[f"layer{i}.weight"] = rng.uniform(-bound, bound, size=(width, fan_in))
        params[f"layer{i}.bias"] = np.zeros(width)
        fan_in = width
    bound = 1.0 / math.sqrt(fan_in)
    for head in ("head_h", "head_hprime"):
        params[f"{head}.weight"] = rng.uniform(-bound, bound, size=(1, fan_in))
        params[f"{head}.bias"] = np.zeros(1)
    return RiskModel(params)


@dataclass
class _ForwardCache:
    inputs: list
    pre: list
    masks: list
    features: np.ndarray
    a: np.ndarray
    b: np.ndarray


def forward(model: RiskModel, X, dropout: float = 0.0, rng=None) -> _ForwardCache:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise DimensionMismatch(f"expected inputs of dimension {model.input_dim}, got shape {X.shape}")
    p = model.params
    inputs, pre, masks = [], [], []
    h = X
    for i in range(model.n_layers):
        inputs.append(h)
        z = h @ p[f"layer{i}.weight"].T + p[f"layer{i}.bias"]
        pre.append(z)
        h = np.maximum(z, 0.0)
        if dropout > 0.0:
            keep = (rng.random(h.shape) >= dropout) / (1.0 - dropout)
            h = h * keep
            masks.append(keep)
        else:
            masks.append(None)
    a = h @ p["head_h.weight"][0] + p["head_h.bias"][0]
    b = h @ p["head_hprime.weight"][0] + p["head_hprime.bias"][0]
    return _ForwardCache(inputs, pre, masks, h, a, b)


def backward(model: RiskModel, cache: _ForwardCache, grad_a=None, grad_b=None) -> dict:
    """Gradients of a loss with respect to every parameter, given dloss/da and dloss/db."""
    p = model.params
    grads = model.zeros_like()
    V = cache.features
    dV = np.zeros_like(V)
    for head, g in (("head_h", grad_a), ("head_hprime", grad_b)):
        if g is None:
            continue
        g = np.asarray(g, dtype=float)
        grads[f"{head}.weight"][0] = g @ V
        grads[f"{head}.bias"][0] = g.sum()
        dV += np.outer(g, p[f"{head}.weight"][0])
    dh = dV
    for i in reversed(range(model.n_layers)):
        if cache.masks[i] is not None:
            dh = dh * cache.masks[i]
        dz = dh * (cache.pre[i] > 0)
        grads[f"layer{i}.weight"] = dz.T @ cache.inputs[i]
        grads[f"layer{i}.bias"] = dz.sum(axis=0)
        if i > 0:
            dh = dz @ p[f"layer{i}.weight"]
    return grads


def log_risk(model: RiskModel, head: Head, x):
    """Log-risk ``h(phi(x))`` for one vector (returns float) or a batch of rows."""
    head = Head(head)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    cache = forward(model, x[None, :] if single else x)
    out = cache.a if head is Head.H else cache.b
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# losses


def surrogate_indicator_less(a: float, b: float, margin: float = 1.0) -> float:
    """Margin-ranking relaxation of ``I[a < b]``: ``max(0, margin - exp(a - b))``."""
    value, _ = _soft_less(np.asarray(float(a) - float(b)), margin)
    return float(value)


def _soft_less(diff: np.ndarray, margin: float):
    """Value and derivative in ``diff = a - b`` of the relaxed indicator."""
    e = np.minimum(np.exp(np.minimum(diff, math.log(EXP_CLAMP) + 1.0)), EXP_CLAMP)
    raw = margin - e
    active = (raw > 0) & (e < EXP_CLAMP)
    return np.where(active, raw, 0.0), np.where(active, -e, 0.0)


def sdi_surrogate_scores(a, b, events, margin: float = 1.0):
    """Relaxed SDI between score vectors ``a`` and ``b``; returns (value, d/da, d/db).

    Conjunctions of indicators become products of relaxed indicators; for
    each censored instance the risk-set sizes become soft counts, with
    ``|A xor B| -> sum |u - v|`` and ``|A or B| -> sum max(u, v)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ev = np.asarray(events, dtype=int) == 1
    n = a.size
    if n == 0:
        raise EmptyDataset("surrogate SDI of an empty sample is undefined")
    ga = np.zeros(n)
    gb = np.zeros(n)
    n_ev = int(ev.sum())
    n_ce = n - n_ev
    a1 = n_ev * (n_ev - 1) / 2.0
    a2 = n_ev * n_ce / 2.0
    if a1 + a2 == 0:
        return 0.0, ga, gb
    norm = a1 + a2
    value = 0.0
    ev_idx = np.flatnonzero(ev)
    ce_idx = np.flatnonzero(~ev)

    if a1 > 0:
        ae, be = a[ev_idx], b[ev_idx]
        # A[i, j] ~ I[a_i < a_j],  Bt[i, j] ~ I[b_j < b_i]
        A, dA = _soft_less(ae[:, None] - ae[None, :], margin)
        Bt, dBt = _soft_less(be[None, :] - be[:, None], margin)
        off = 1.0 - np.eye(n_ev)
        A, dA, Bt, dBt = A * off, dA * off, Bt * off, dBt * off
        value += float(np.sum(A * Bt)) / norm
        GA = dA * Bt / norm
        GB = A * dBt / norm
        ga[ev_idx] += GA.sum(axis=1) - GA.sum(axis=0)
        gb[ev_idx] += GB.sum(axis=0) - GB.sum(axis=1)

    if a2 > 0:
        ac, ae = a[ce_idx], a[ev_idx]
        bc, be = b[ce_idx], b[ev_idx]
        U, dU = _soft_less(ac[:, None] - ae[None, :], margin)
        V, dV = _soft_less(bc[:, None] - be[None, :], margin)
        sym = np.abs(U - V).sum(axis=1)
        union = np.maximum(U, V).sum(axis=1)
        floored = union < JACCARD_FLOOR
        den = np.where(floored, JACCARD_FLOOR, union)
        value += float(np.sum(sym / den)) * (a2 / n_ce) / norm
        scale = (a2 / n_ce) / norm
        sgn = np.sign(U - V)
        u_max = (U >= V).astype(float)
        ratio = np.where(floored, 0.0, sym / den**2)
        dJdU = (sgn / den[:, None] - ratio[:, None] * u_max) * scale
        dJdV = (-sgn / den[:, None] - ratio[:, None] * (1.0 - u_max)) * scale
        GU = dJdU * dU
        GV = dJdV * dV
        ga[ce_idx] += GU.sum(axis=1)
        ga[ev_idx] -= GU.sum(axis=0)
        gb[ce_idx] += GV.sum(axis=1)
        gb[ev_idx] -= GV.sum(axis=0)

    return value, ga, gb


def partial_likelihood_scores(s, times, events):
    """Negative log partial likelihood and its gradient in the log-scores."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(times, dtype=float)
    e = np.asarray(events, dtype=int)
    ev = np.flatnonzero(e == 1)
    if ev.size == 0:
        raise NoEvents("partial likelihood needs at least one event")
    at_risk = t[None, :] >= t[ev][:, None]  # events x records
    shift = np.where(at_risk, s[None, :], -np.inf).max(axis=1)
    w = np.where(at_risk, np.exp(np.minimum(s[None, :] - shift[:, None], 0.0)), 0.0)
    denom = w.sum(axis=1)
    loss = float(np.sum(np.log(denom) + shift - s[ev]))
    grad = (w / denom[:, None]).sum(axis=0)
    grad[ev] -= 1.0
    return loss, grad


def surrogate_sdi(model: RiskModel, cohort: Cohort, margin: float = 1.0) -> GradientTape:
    cache = forward(model, cohort.features)
    value, ga, gb = sdi_surrogate_scores(cache.a, cache.b, cohort.events, margin)
    return GradientTape(value, backward(model, cache, ga, gb))


def surrogate_partial_likelihood(model: RiskModel, cohort: Cohort) -> GradientTape:
    cache = forward(model, cohort.features)
    loss, g = partial_likelihood_scores(cache.a, cohort.times, cohort.events)
    return GradientTape(loss, backward(model, cache, grad_a=g))


# ---------------------------------------------------------------------------
# persistence


def save_model(model: RiskModel, path) -> None:
    lines = [MODEL_MAGIC, "dims " + " ".join(str(v) for v in (model.input_dim, *model.hidden))]
    for name, value in model.params.items():
        mat = value.reshape(1, -1) if value.ndim == 1 else value
        lines.append(f"tensor {name} {mat.shape[0]} {mat.shape[1]}")
        lines.extend(" ".join(repr(float(v)) for v in row) for row in mat)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path) -> RiskModel:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != MODEL_MAGIC:
        raise ParseError(f"not a model file (expected '{MODEL_MAGIC}')", line=1)
    dims = lines[1].split() if len(lines) > 1 else []
    if not dims or dims[0] != "dims":
        raise ParseError("expected 'dims d h1 h2 ...'", line=2)
    params = {}
    i = 2
    while i < len(lines):
        head = lines[i].split()
        if not head:
            i += 1
            continue
        if head[0] != "tensor" or len(head) != 4:
            raise ParseError("expected 'tensor <name> <rows> <cols>'", line=i + 1)
        name, rows, cols = head[1], int(head[2]), int(head[3])
        try:
            mat = np.array([[float(v) for v in lines[i + 1 + r].split()] for r in range(rows)])
        except (IndexError, ValueError) as exc:
            raise ParseError(f"bad tensor body for {name}: {exc}", line=i + 1) from exc
        if mat.shape != (rows, cols):
            raise ParseError(f"tensor {name} does not have shape {rows}x{cols}", line=i + 1)
        params[name] = mat[0].copy() if name.endswith(".bias") else mat
        i += 1 + rows
    model = RiskModel(params)
    declared = tuple(int(v) for v in dims[1:])
    if declared != (model.input_dim, *model.hidden):
        raise ParseError(f"dims line {declared} disagrees with the tensors", line=2)
    return model
