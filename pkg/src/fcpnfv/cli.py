"""Command-line entry point: synth, simulate, ingest, train, eval, sweep, run.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import deep, ingest, metrics, pipeline, synthgen, telstra_sim
from .errors import ConfigError, FcpError, FileMissing, ParseError
from .persist import TrainedModel, atomic_output, atomic_write, load_model, save_model
from .shallow.adt import AdtHyper
from .shallow.forest import RfHyper
from .shallow.multiclass import default_hyper
from .shallow.svm import SvmHyper
from .training import MODEL_CHOICES, SaeConfig, fit_model

log = logging.getLogger("fcpnfv")

TASKS = ("detect1", "detect2", "localize", "severity")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _json_text(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# data loading


class Dataset:
    """Records from either ingest schema.

    ``matrix.labels`` carry the severity code (KDE ``severity`` or Telstra
    ``fault_severity``); ``classes`` holds KDE fault-class ids or None.
    """

    def __init__(self, matrix, kind, classes=None):
        self.matrix = matrix
        self.kind = kind
        self.classes = classes


def load_dataset(path) -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise FileMissing(f"missing input file: {path}")
    with open(path, newline="", encoding="utf-8-sig") as fh:
        header = next(csv.reader(fh), None)
    if not header:
        raise ParseError("empty file, header expected", path, 1)
    if header[0].strip() == "docket":
        records = ingest.load_kde_table(path)
        return Dataset(ingest.kde_design_matrix(records), "kde", [r.fault_class for r in records])
    if header[0].strip() == "id":
        label = header[-1].strip()
        return Dataset(ingest.read_design_matrix(path, label_name=label), "telstra")
    raise ParseError(f"unrecognised header starting {header[0]!r}", path, 1)


def _task_matrix(ds: Dataset, task: str, mapping: pipeline.SeverityMapping):
    m = ds.matrix
    if task == "detect1":
        return pipeline.stage1_training_set(m, mapping)
    if task == "detect2":
        return pipeline.stage2_training_set(m, mapping)
    if task == "severity":
        return pipeline.severity_training_set(m, mapping, faults_only=ds.kind == "kde")
    if task == "localize-flat":
        if ds.classes is None:
            raise ConfigError("localization needs a KDE table with a class column")
        keep = [i for i, c in enumerate(ds.classes) if c]
        sub = m.take(keep)
        return ingest.DesignMatrix(sub.rows, [ds.classes[i] for i in keep], sub.feature_names, sub.ids)
    raise ConfigError(f"unknown task {task!r}")


def _sample(m, n, seed):
    """Stratified subsample of ``n`` rows (all rows when n is None or >= len)."""
    if n is None or n >= len(m):
        return m
    part, _ = ingest.stratified_parts(m.labels, (n / len(m), 1 - n / len(m)), seed)
    return m.take(np.sort(part))


def _shallow_hyper(args, algo):
    if algo == "svm":
        return SvmHyper(C=args.C, kernel=args.kernel, gamma=args.gamma)
    if algo == "adt":
        return AdtHyper(rounds=args.rounds)
    return RfHyper(n_trees=args.n_trees, mtry=args.mtry, n_jobs=args.jobs)


def _hyper(args, algo):
    if algo == "sae":
        return SaeConfig(
            h1=args.h1, h2=args.h2, beta=args.beta, rho=args.rho, l2=args.l2,
            epochs1=args.epochs1, epochs2=args.epochs2,
            softmax_epochs=args.softmax_epochs, finetune_epochs=args.finetune_epochs,
        )
    return _shallow_hyper(args, algo)


def _mapping(args):
    if getattr(args, "severity_mapping", None):
        return pipeline.SeverityMapping.from_dict(json.loads(Path(args.severity_mapping).read_text()))
    return pipeline.SeverityMapping()


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args):
    tax = synthgen.load_taxonomy(args.taxonomy)
    cfg = synthgen.ChainConfig(args.burn_in, args.thin, args.proposal_scale, args.seed)
    records = synthgen.generate_dataset(tax, args.n, cfg, args.sampler)
    _write_with(args.out, lambda p: ingest.write_kde_table(records, p))
    log.info("wrote %d records to %s", len(records), args.out)


def cmd_simulate(args):
    cfg = telstra_sim.SimConfig(n_records=args.n, seed=args.seed, signal=args.signal,
                                label_noise=args.label_noise)
    ingest.write_telstra(telstra_sim.simulate(cfg), args.out)


def cmd_ingest(args):
    tables = ingest.load_telstra(args.telstra_dir)
    schema = None
    if args.schema_in:
        schema = ingest.FeatureSchema.from_dict(json.loads(Path(args.schema_in).read_text()))
    m = ingest.assemble_features(tables, schema)
    _write_with(args.out, lambda p: ingest.write_design_matrix(m, p, label_name="fault_severity"))
    if args.schema_out:
        atomic_write(args.schema_out, _json_text(m.schema.to_dict()))


def _write_with(path, writer):
    with atomic_output(path) as tmp:
        writer(tmp)


def train_for_task(ds: Dataset, task, algo, hyper, seed, mapping, taxonomy=None) -> TrainedModel:
    m0 = ds.matrix
    names = m0.feature_names
    if hyper is None:
        hyper = SaeConfig() if algo == "sae" else default_hyper(algo)
    if task == "localize":
        if ds.classes is None:
            raise ConfigError("localization needs a KDE table with a class column")
        tax = taxonomy or synthgen.load_taxonomy()

        def fit(X, y):
            return fit_model(X, y, algo, hyper, seed, "localize", names)

        loc = pipeline.train_localizer(m0.rows, ds.classes, tax, fit)
        return TrainedModel(loc, None, names, "localize", {"algo": algo, **asdict(hyper)}, seed)
    m = _task_matrix(ds, task, mapping)
    tm = fit_model(m.rows, m.labels, algo, hyper, seed, task, names)
    if task == "severity":
        forecasts = pipeline.TELSTRA_FORECASTS if ds.kind == "telstra" else pipeline.KDE_FORECASTS
        tm.extras = {
            "forecast_names": {str(k): v for k, v in forecasts.items()},
            "location_fault_rate": pipeline.location_fault_rates(m0, mapping),
        }
    return tm


def cmd_train(args):
    ds = load_dataset(args.data)
    taxonomy = synthgen.load_taxonomy(args.taxonomy) if args.taxonomy else None
    tm = train_for_task(ds, args.task, args.model, _hyper(args, args.model), args.seed, _mapping(args), taxonomy)
    save_model(tm, args.out)


def _read_predictions(path):
    """CSV ``y_true,p_<class>,...``; returns (labels, probs, classes)."""
    path = Path(path)
    if not path.is_file():
        raise FileMissing(f"missing input file: {path}")
    with open(path, newline="", encoding="utf-8-sig") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "y_true" or not all(h.startswith("p_") for h in rows[0][1:]):
        raise ParseError("expected header y_true,p_<class>,...", path, 1)
    classes = [ingest._maybe_int(h[2:]) for h in rows[0][1:]]
    y, P = [], []
    for lineno, r in enumerate(rows[1:], start=2):
        if not r:
            continue
        if len(r) != len(rows[0]):
            raise ParseError(f"expected {len(rows[0])} fields, got {len(r)}", path, lineno)
        try:
            y.append(ingest._maybe_int(r[0]))
            P.append([float(v) for v in r[1:]])
        except ValueError as exc:
            raise ParseError(str(exc), path, lineno) from None
    return y, np.array(P, dtype=float).reshape(len(P), len(classes)), classes


def _emit_report(args, report: metrics.MetricsReport, extra=None):
    doc = report.to_dict(args.timing)
    if extra:
        doc = {**extra, "aggregate": doc} if "folds" in extra else {**doc, **extra}
    atomic_write(args.out, _json_text(doc))
    if args.csv:
        atomic_write(args.csv, report.to_csv())
    if args.confusion:
        atomic_write(args.confusion, report.confusion_csv())


def cmd_eval(args):
    if args.predictions:
        y, P, classes = _read_predictions(args.predictions)
        _emit_report(args, metrics.metrics(y, P, classes))
        return
    if not args.data or not args.task:
        raise UsageError("eval needs --predictions, or --data and --task with --model or --cv")
    ds = load_dataset(args.data)
    mapping = _mapping(args)
    task = "localize-flat" if args.task == "localize" else args.task
    m = _sample(_task_matrix(ds, task, mapping), args.sample, args.seed)
    if args.cv:
        algo = args.algo
        hyper = _hyper(args, algo)

        def trainer(X, y):
            return fit_model(X, y, algo, hyper, args.seed)

        res = metrics.kfold(m.rows, m.labels, args.cv, trainer, args.seed)
        fold_docs = res.to_dict(args.timing)
        _emit_report(args, res.aggregate, {"folds": fold_docs["folds"],
                                           "mean_fold_accuracy": fold_docs["mean_fold_accuracy"]})
        return
    if not args.model:
        raise UsageError("eval needs --model (a model file) or --cv")
    tm = load_model(args.model)
    if isinstance(tm.model, pipeline.Localizer):
        raise UsageError("localizer files are evaluated through `run`")
    classes = tuple(sorted(set(np.unique(m.labels).tolist()) | set(tm.labels)))
    P = metrics.align_proba(tm, m.rows, classes)
    _emit_report(args, metrics.metrics(m.labels, P, classes))


def cmd_sweep(args):
    ds = load_dataset(args.data)
    m = _task_matrix(ds, args.task, _mapping(args))
    data = deep.sweep_split(m.rows, m.labels, args.seed, args.val_fraction)
    cfg = _hyper(args, "sae")
    h1, h2 = cfg.hypers()
    if args.betas or args.rhos:
        betas = args.betas or [cfg.beta]
        rhos = args.rhos or [cfg.rho]
        rows = deep.sweep_sparsity(data, betas, rhos, (cfg.h1, cfg.h2), h1, h2,
                                   cfg.softmax_epochs, cfg.finetune_epochs, args.seed)
        text = _csv_text(("beta", "rho", "accuracy", "mse"),
                         [(r["beta"], r["rho"], r["accuracy"], r["mse"]) for r in rows])
    else:
        rows = deep.sweep_hidden_sizes(data, args.h1_values, args.h2_values, h1, h2,
                                       cfg.softmax_epochs, cfg.finetune_epochs, args.seed)
        text = _csv_text(("h1", "h2", "accuracy", "mse"),
                         [(r["h1"], r["h2"], r["accuracy"], r["mse"]) for r in rows])
    atomic_write(args.out, text)


def cmd_run(args):
    config = pipeline.load_config(args.config)
    ds = load_dataset(args.records)
    verdicts = pipeline.run_pipeline(ds.matrix, config)
    atomic_write(args.out, pipeline.verdicts_csv(verdicts))
    if args.report:
        atomic_write(args.report, _json_text(pipeline.verdict_report(verdicts)))


# ---------------------------------------------------------------------------


def _add_model_flags(p):
    g = p.add_argument_group("shallow models")
    g.add_argument("--C", type=float, default=1.0)
    g.add_argument("--kernel", choices=("rbf", "linear"), default="rbf")
    g.add_argument("--gamma", type=float, default=None)
    g.add_argument("--rounds", type=int, default=10, help="ADT boosting rounds")
    g.add_argument("--n-trees", type=int, default=100)
    g.add_argument("--mtry", type=int, default=None)
    g.add_argument("--jobs", type=int, default=1, help="RF tree-building threads")
    s = p.add_argument_group("stacked autoencoder")
    s.add_argument("--h1", type=int, default=100)
    s.add_argument("--h2", type=int, default=50)
    s.add_argument("--beta", type=float, default=4.0)
    s.add_argument("--rho", type=float, default=0.1)
    s.add_argument("--l2", type=float, default=0.001)
    s.add_argument("--epochs1", type=int, default=400)
    s.add_argument("--epochs2", type=int, default=100)
    s.add_argument("--softmax-epochs", type=int, default=400)
    s.add_argument("--finetune-epochs", type=int, default=400)
    p.add_argument("--severity-mapping", help="JSON file: severity code -> none|impending|manifest")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="fcpnfv", description="Fault detection, localization and severity prediction.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="taxonomy -> synthetic KDE table")
    p.add_argument("--taxonomy", help="taxonomy JSON (default: shipped mobile-network taxonomy)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--burn-in", type=int, default=500)
    p.add_argument("--thin", type=int, default=5)
    p.add_argument("--proposal-scale", type=float, default=1.0)
    p.add_argument("--sampler", choices=("markov", "direct"), default="markov")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("simulate", help="write simulated tables in the Telstra layout")
    p.add_argument("--n", type=int, default=7381)
    p.add_argument("--seed", type=int, default=2016)
    p.add_argument("--signal", type=float, default=0.6)
    p.add_argument("--label-noise", type=float, default=0.02)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ingest", help="Telstra directory -> feature CSV")
    p.add_argument("--telstra-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--schema-out")
    p.add_argument("--schema-in", help="freeze the column layout to a saved schema")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="fit a model and write a model file")
    p.add_argument("--task", choices=TASKS, required=True)
    p.add_argument("--model", choices=MODEL_CHOICES, required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--taxonomy", help="taxonomy JSON for --task localize")
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics report for a model, k-fold CV, or a prediction file")
    p.add_argument("--predictions", help="CSV y_true,p_<class>,...")
    p.add_argument("--model", help="model file")
    p.add_argument("--data")
    p.add_argument("--task", choices=TASKS)
    p.add_argument("--cv", type=int, help="k for stratified k-fold (trains --algo per fold)")
    p.add_argument("--algo", choices=MODEL_CHOICES, default="svm")
    p.add_argument("--sample", type=int, help="stratified subsample size before evaluation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="JSON report")
    p.add_argument("--csv", help="flat metric CSV")
    p.add_argument("--confusion", help="confusion-matrix CSV")
    p.add_argument("--timing", action="store_true", help="include wall-clock seconds (not reproducible)")
    _add_model_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="hidden-size or sparsity sweeps of the stacked autoencoder")
    p.add_argument("--data", required=True)
    p.add_argument("--task", choices=("severity", "detect1", "detect2"), default="severity")
    p.add_argument("--h1-values", type=_ints, default=[25, 50, 100, 150])
    p.add_argument("--h2-values", type=_ints, default=[25, 50])
    p.add_argument("--betas", type=_floats)
    p.add_argument("--rhos", type=_floats)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_model_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("run", help="pipeline config + records -> verdicts")
    p.add_argument("--config", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True, help="verdict CSV")
    p.add_argument("--report", help="JSON report")
    p.set_defaults(func=cmd_run)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"fcpnfv: error: {exc}", file=sys.stderr)
        return 1
    except (FcpError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"fcpnfv: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


cli_dispatch = main


if __name__ == "__main__":
    sys.exit(main())
