"""``survadapt`` command line: simulate, train, evaluate, recommend, explain.

Exit codes: 0 success, 1 runtime or data error, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import glob
import io
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .adapt import TrainConfig, append_supervision, fit_cox_linear, inject_supervision, train_mssda
from .dataio import SynthConfig, generate_domains, read_cohort, read_truth, write_cohort, write_truth
from .errors import ConfigInvalid, LabelError, NoTreatmentLabels, ParseError, SurvAdaptError
from .evalharness import (
    as_scorer,
    average_order_scorer,
    evaluate_folds,
    hierarchical_cluster,
    linear_scorer,
    pca_basis,
    project,
    recommend_treatment,
    weight_distance_matrix,
    with_treatment_dummy,
    MetricsReport,
)
from .nnet import load_model, partial_likelihood_scores, save_model
from .survcore import Cohort, Role, Treatment, with_times

log = logging.getLogger("survadapt")

MODES = ("mssda", "deepsurv", "cox")
METHOD_NAMES = {"mssda": "mssda", "deepsurv": "deepsurv-ao", "cox": "cox-ao"}
CONFIG_KEYS = {
    "lambda1": ("lambda1", float),
    "lambda2": ("lambda2", float),
    "lr": ("learning_rate", float),
    "epochs": ("epochs", int),
    "batch_size": ("batch_size", int),
    "margin": ("margin", float),
    "hidden": ("hidden", lambda s: tuple(int(v) for v in s.split(","))),
    "dropout": ("dropout", float),
    "seed": ("seed", int),
    "supervision_frac": ("supervision_fraction", float),
    "adversary_steps": ("adversary_steps", int),
}
COX_MAGIC = "survadapt-cox v1"


class UsageError(Exception):
    """Bad flags or config: exit status 2."""


# ---------------------------------------------------------------------------
# config


def parse_config(text: str):
    """Parse ``key = value`` lines (``#`` comments) into (TrainConfig, mode)."""
    values, mode = {}, "mssda"
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "mode":
            if value not in MODES:
                raise UsageError(f"config line {lineno}: mode must be one of {', '.join(MODES)}")
            mode = value
            continue
        if key not in CONFIG_KEYS:
            raise UsageError(f"config line {lineno}: unknown key '{key}'")
        field, conv = CONFIG_KEYS[key]
        try:
            values[field] = conv(value)
        except ValueError:
            raise UsageError(f"config line {lineno}: bad value for '{key}': {value!r}") from None
    try:
        return TrainConfig(**values), mode
    except ConfigInvalid as exc:
        raise UsageError(f"invalid config: {exc}") from None


def format_config(cfg: TrainConfig, mode: str) -> str:
    inverse = {field: key for key, (field, _) in CONFIG_KEYS.items()}
    lines = [f"mode = {mode}"]
    for field, key in inverse.items():
        value = getattr(cfg, field)
        if field == "hidden":
            value = ",".join(str(v) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# model directories


def _save_cox(path, mean, comps, beta):
    lines = [COX_MAGIC]
    for name, mat in (("mean", mean[None, :]), ("components", comps), ("beta", beta[None, :])):
        lines.append(f"tensor {name} {mat.shape[0]} {mat.shape[1]}")
        lines.extend(" ".join(repr(float(v)) for v in row) for row in mat)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_cox(path):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != COX_MAGIC:
        raise ParseError(f"{path}: not a cox model file", line=1)
    out, i = {}, 1
    while i < len(lines):
        _, name, rows, cols = lines[i].split()
        rows = int(rows)
        out[name] = np.array([[float(v) for v in lines[i + 1 + r].split()] for r in range(rows)])
        i += 1 + rows
    return out["mean"][0], out["components"], out["beta"][0]


def load_scorer(model_dir: Path):
    """Return (scorer, mode, config, input_dim) for a directory written by ``train``."""
    cfg_path = model_dir / "config.txt"
    if not cfg_path.exists():
        raise FileNotFoundError(f"{cfg_path} not found")
    cfg, mode = parse_config(cfg_path.read_text(encoding="utf-8"))
    if mode == "mssda":
        model = load_model(model_dir / "model.txt")
        return as_scorer(model), mode, cfg, model.input_dim
    if mode == "deepsurv":
        models = [load_model(p) for p in sorted(model_dir.glob("model-*.txt"))]
        if not models:
            raise FileNotFoundError(f"no model-*.txt files in {model_dir}")
        return average_order_scorer(models), mode, cfg, models[0].input_dim
    parts = [_load_cox(p) for p in sorted(model_dir.glob("cox-*.txt"))]
    if not parts:
        raise FileNotFoundError(f"no cox-*.txt files in {model_dir}")
    scorers = [linear_scorer(beta, mean, comps) for mean, comps, beta in parts]
    return average_order_scorer(scorers), mode, cfg, parts[0][0].size


def _fmt(x: float) -> str:
    return "nan" if x is None or not math.isfinite(x) else repr(float(x))


def _write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


def _has_treatments(cohort: Cohort) -> bool:
    return len(cohort) > 0 and all(t is not Treatment.NONE for t in cohort.treatments)


def _labeled_target(target: Cohort, truth_path) -> Cohort:
    """Evaluation labels: the target file's own times, else the truth sidecar's
    uncensored event times."""
    truth = read_truth(truth_path)
    if truth.ids != target.ids:
        raise LabelError("truth sidecar ids do not match the target records")
    if target.labeled:
        return target
    log.warning("target has no times; evaluating against uncensored truth event times")
    full = with_times(target, truth.true_event_time)
    recs = [type(r)(r.id, r.features, r.time, 1, r.treatment) for r in full.records]
    return Cohort(target.name, recs, Role.TARGET)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    cfg = SynthConfig(n_domains=args.domains, n_per_domain=args.n, dim=args.dim,
                      shift_scale=args.shift, censor_fraction=args.censor_frac, seed=args.seed,
                      treatment_effect=args.treatment_effect)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dom = generate_domains(cfg)
    for cohort in dom.sources:
        write_cohort(cohort, out / f"{cohort.name}.csv")
    # the raw target file keeps its labels; training hides them
    write_cohort(dom.target_labeled, out / f"{dom.target.name}.csv")
    for name, truth in dom.truth.items():
        write_truth(truth, out / f"{name}.truth.csv")
    print(f"wrote {len(dom.sources)} sources and 1 target to {out}")
    return 0


def cmd_train(args) -> int:
    cfg, mode = parse_config(Path(args.config).read_text(encoding="utf-8"))
    paths = sorted(p for p in glob.glob(args.sources) if not p.endswith(".truth.csv"))
    if not paths:
        raise UsageError(f"no source files match {args.sources!r}")
    sources = [read_cohort(p, Role.SOURCE) for p in paths]
    target = read_cohort(args.target, Role.TARGET)
    if all(_has_treatments(s) for s in sources) and _has_treatments(target):
        sources = [with_treatment_dummy(s) for s in sources]
        target = with_treatment_dummy(target)
        log.info("treatment indicator appended as the last covariate")

    if cfg.supervision_fraction > 0:
        split = inject_supervision(target, cfg.supervision_fraction, cfg.seed)
        sources = append_supervision(sources, split.labeled_subset)
        target_view = split.unlabeled_target
    else:
        target_view = target.hide_times()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = [s.name for s in sources]
    history_rows = []
    if mode == "mssda":
        result = train_mssda(sources, target_view, cfg)
        save_model(result.model, out / "model.txt")
        weights = result.weights
        for rec in result.history:
            history_rows.append(["mssda", rec.epoch, _fmt(rec.source_pl_loss), _fmt(rec.discrepancy_term)]
                                + [format(w, ".17g") for w in rec.weights])
    elif mode == "deepsurv":
        weights = np.full(len(sources), 1.0 / len(sources))
        for i, s in enumerate(sources):
            result = train_mssda([s], target_view, replace(cfg, lambda1=0.0, lambda2=0.0))
            save_model(result.model, out / f"model-{s.name}.txt")
            onehot = np.eye(len(sources))[i]
            for rec in result.history:
                history_rows.append([f"deepsurv-{s.name}", rec.epoch, _fmt(rec.source_pl_loss), "0.0"]
                                    + [format(w, ".17g") for w in onehot])
    else:
        weights = np.full(len(sources), 1.0 / len(sources))
        for i, s in enumerate(sources):
            mean, comps = pca_basis(s.features)
            reduced = project(s, mean, comps)
            # the linear baseline keeps its own optimiser budget; lr/epochs drive the networks
            beta = fit_cox_linear(reduced)
            _save_cox(out / f"cox-{s.name}.txt", mean, comps, beta)
            loss, _ = partial_likelihood_scores(reduced.features @ beta, reduced.times, reduced.events)
            history_rows.append([f"cox-{s.name}", 200, _fmt(loss), "0.0"]
                                + [format(w, ".17g") for w in np.eye(len(sources))[i]])

    (out / "config.txt").write_text(format_config(cfg, mode), encoding="utf-8")
    _write_csv(out / "weights.csv", ["source", "weight"],
               [[n, format(float(w), ".17g")] for n, w in zip(names, weights)])
    _write_csv(out / "history.csv",
               ["model", "epoch", "source_pl_loss", "discrepancy_term"] + [f"w:{n}" for n in names],
               history_rows)
    for n, w in zip(names, weights):
        print(f"{n}\t{float(w):.6f}")
    return 0


def _prepare_target(args, input_dim):
    target = read_cohort(args.target, Role.TARGET)
    labeled = _labeled_target(target, args.truth)
    if input_dim == labeled.dim + 1:
        labeled = with_treatment_dummy(labeled)
    elif input_dim != labeled.dim:
        raise LabelError(f"model expects {input_dim} inputs, target has {labeled.dim} features")
    return labeled


def cmd_evaluate(args) -> int:
    scorer, mode, cfg, input_dim = load_scorer(Path(args.model))
    if not 0.0 <= args.supervision_frac < 1.0:
        raise UsageError("--supervision-frac must lie in [0, 1)")
    if args.folds < 2:
        raise UsageError("--folds must be at least 2")
    target = _prepare_target(args, input_dim)
    mask = inject_supervision(target, args.supervision_frac, cfg.seed).supervised_mask
    rows = evaluate_folds(scorer, target, mask, args.folds, cfg.seed, method=METHOD_NAMES[mode],
                          supervision=args.supervision_frac)
    _write_csv(args.report, ["target", "method", "supervision", "fold", "c_index", "c_index_prime"],
               [[r.target, r.method, repr(r.supervision), r.fold, _fmt(r.c_index), _fmt(r.c_index_prime)]
                for r in rows])
    for s in MetricsReport(rows).summary():
        print(f"{s['target']}\t{s['method']}\tC-index {s['c_index']:.4f} ({s['c_index_se']:.4f})"
              f"\tC-index' {s['c_index_prime']:.4f} ({s['c_index_prime_se']:.4f})")
    return 0


def cmd_recommend(args) -> int:
    scorer, mode, cfg, input_dim = load_scorer(Path(args.model))
    target = read_cohort(args.target, Role.TARGET)
    if not _has_treatments(target):
        raise NoTreatmentLabels(f"target {target.name} has records without a treatment label")
    labeled = _labeled_target(target, args.truth)
    if input_dim != labeled.dim + 1:
        raise LabelError("the model was not trained with a treatment indicator")
    report = recommend_treatment(scorer, labeled)
    _write_csv(args.report, ["target", "patient_id", "rec_score", "recommended", "administered", "group"],
               [[target.name, p.patient_id, _fmt(p.rec_score), p.recommended.value, p.administered.value,
                 p.group.value] for p in report.patients])
    if report.comparable:
        print(f"median_recom {report.median_recom:.6g}\tmedian_anti {report.median_anti:.6g}"
              f"\tsuccess {str(report.success).lower()}")
    else:
        print(f"median_recom {report.median_recom:.6g}\tmedian_anti {report.median_anti:.6g}"
              f"\tincomparable")
    return 0


def read_weight_matrix(path):
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ParseError(f"{path}: empty file", line=1)
    names = rows[0][1:]
    K = len(names)
    if len(rows) - 1 != K:
        raise ParseError(f"{path}: expected {K} rows after the header, got {len(rows) - 1}")
    W = np.zeros((K, K))
    for i, row in enumerate(rows[1:]):
        if len(row) != K + 1 or row[0] != names[i]:
            raise ParseError(f"row must be '{names[i]}' followed by {K} weights", line=i + 2)
        for j, cell in enumerate(row[1:]):
            if i == j:
                continue
            try:
                W[i, j] = float(cell)
            except ValueError:
                raise ParseError(f"bad weight {cell!r}", line=i + 2) from None
    return names, W


def cmd_explain(args) -> int:
    names, W = read_weight_matrix(args.weights_matrix)
    D = weight_distance_matrix(W)
    _write_csv(args.out_dist, ["target"] + names,
               [[names[i]] + [_fmt(v) for v in D[i]] for i in range(len(names))])
    tree = hierarchical_cluster(D)
    K = len(names)

    def label(c):
        return names[c] if c < K else f"cluster{c}"

    lines = [f"merge {label(m.left)} {label(m.right)} height {m.height!r}" for m in tree.merges]
    Path(args.out_dendro).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"{K} domains clustered; final merge at height {tree.merges[-1].height:.6g}")
    return 0


# ---------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="survadapt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"survadapt {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write synthetic source/target cohorts")
    p.add_argument("--out", required=True)
    p.add_argument("--domains", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--censor-frac", type=float, required=True)
    p.add_argument("--shift", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--treatment-effect", type=float, default=None,
                   help="hazard multiplier of arm R vs P; adds treatment labels")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="fit MSSDA or a baseline")
    p.add_argument("--sources", required=True, help="glob of source CSV files")
    p.add_argument("--target", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="per-fold C-index and C-index' on a target")
    p.add_argument("--model", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--supervision-frac", type=float, required=True)
    p.add_argument("--folds", type=int, required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("recommend", help="treatment recommendation report")
    p.add_argument("--model", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("explain", help="distance matrix and dendrogram of learned weights")
    p.add_argument("--weights-matrix", required=True)
    p.add_argument("--out-dist", required=True)
    p.add_argument("--out-dendro", required=True)
    p.set_defaults(func=cmd_explain)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"survadapt: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"survadapt: error: {exc}", file=sys.stderr)
        return 2
    except (SurvAdaptError, OSError, ValueError) as exc:
        code = getattr(exc, "code", type(exc).__name__)
        print(f"survadapt: error: {code}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
