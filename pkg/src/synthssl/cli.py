"""Command line entry point: ``synthssl <command> ...``."""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .dataset import (
    BOTH_STRATIFIED,
    MINORITY_ONLY,
    DatasetError,
    GeneratorSpec,
    generate_gaussian_task,
    load_csv,
    remove_mcar,
    save_csv,
)
from .harness import ExperimentConfig, bundled_config, read_records, run_experiment, write_report
from .oversampler import CLASS_DEPENDENT, CLASS_INDEPENDENT, OversamplePlan, convex_oversample
from .s3vm import EnsembleModel, S3vmConfig, train_ensemble, train_s3vm
from .stats import metrics
from .svm import MODEL_FORMAT, KernelSpec, SvmModel, train_svm

ENSEMBLE_FORMAT = "synthssl-ensemble 1"
LINEAGE_COLUMNS = ("label", "seed_i", "seed_h", "delta")


def read_features(path):
    """Feature matrix of a CSV, ignoring label and lineage columns."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetError(f"{path}: empty file")
    keep = [i for i, name in enumerate(rows[0]) if name.strip() not in LINEAGE_COLUMNS]
    try:
        return np.array([[float(r[i]) for i in keep] for r in rows[1:]], dtype=float).reshape(-1, len(keep))
    except ValueError as exc:
        raise DatasetError(f"{path}: {exc}") from exc


def save_model(model, path):
    if isinstance(model, EnsembleModel):
        parts = [ENSEMBLE_FORMAT, f"members {model.member_count}"]
        parts += [res.model.to_text() for _, res in model.members]
        text = "\n".join(parts[:2]) + "\n" + "".join(parts[2:])
    else:
        text = model.to_text()
    Path(path).write_text(text, encoding="utf-8")


def load_model(path):
    """An :class:`SvmModel`, or a list of them for an ensemble file."""
    text = Path(path).read_text(encoding="utf-8")
    head = text.split("\n", 1)[0].strip()
    if head == MODEL_FORMAT:
        return SvmModel.from_text(text)
    if head != ENSEMBLE_FORMAT:
        raise ValueError(f"{path}: unknown model format {head!r}")
    chunks = text.split(MODEL_FORMAT + "\n")[1:]
    models = [SvmModel.from_text(MODEL_FORMAT + "\n" + c) for c in chunks]
    declared = int(text.splitlines()[1].split()[1])
    if len(models) != declared:
        raise ValueError(f"{path}: expected {declared} members, found {len(models)}")
    return models


def predict_with(model, X):
    if isinstance(model, list):
        votes = np.sum([m.predict(X) for m in model], axis=0)
        return np.where(votes > 0, 1, -1)
    return model.predict(X)


# --------------------------------------------------------------------------
# Commands


def cmd_gen(args):
    spec = GeneratorSpec(d=args.d, n=args.n, v=args.v, seed=args.seed)
    save_csv(generate_gaussian_task(spec), args.out)


def cmd_mcar(args):
    ds = load_csv(args.input)
    kept, removed = remove_mcar(ds, args.ratio, args.mode, args.seed)
    save_csv(kept, args.out)
    if args.removed_out:
        if removed is None:
            removed = ds.subset(np.zeros(ds.n, bool))
        save_csv(removed, args.removed_out)
    print(json.dumps({"kept": kept.n, "removed": 0 if removed is None else removed.n}))


def cmd_oversample(args):
    ds = load_csv(args.input)
    plan = OversamplePlan(m=args.m, k=args.k, class_mode=args.class_mode, seed=args.seed)
    batch = convex_oversample(ds, plan)
    out = batch.to_dataset(first_id=int(ds.ids.max()) + 1, feature_names=ds.feature_names)
    save_csv(out, args.out, {"seed_i": batch.seed_i, "seed_h": batch.seed_h,
                             "delta": [repr(float(v)) for v in batch.delta]})


def _kernel(args):
    return KernelSpec(args.kernel, args.gamma)


def cmd_train(args):
    ds = load_csv(args.input)
    X, y = ds.features, ds.labels
    kernel = _kernel(args)
    result = {"method": args.method}
    if args.method == "svm":
        model = train_svm(X, y, args.C, kernel, tol=args.tol)
        result.update(n_support=len(model.dual_coef), bias=model.bias, converged=model.converged)
    else:
        r = args.r if args.r is not None else float(np.mean(y == 1))
        config = S3vmConfig(args.C, args.lambda_star, r, kernel=kernel, tol=args.tol)
        if args.members > 1 or args.unlabeled is None:
            if args.m is None:
                raise DatasetError("s3vm without --unlabeled needs --m synthetic patterns")
            plan = OversamplePlan(m=args.m, k=args.k, class_mode=args.class_mode, seed=args.seed)
        if args.members > 1:
            model = train_ensemble(ds, plan, config, args.members)
            result.update(members=[{"seed": s, **res.to_dict()} for s, res in model.members])
        else:
            U = read_features(args.unlabeled) if args.unlabeled else convex_oversample(ds, plan).patterns
            fit = train_s3vm(ds, U, config)
            model = fit.model
            result.update(fit.to_dict(), bias=model.bias, objective=fit.objective)
    save_model(model, args.model)
    if args.result:
        Path(args.result).write_text(json.dumps(result, indent=2) + "\n", encoding="utf-8")


def cmd_evaluate(args):
    model = load_model(args.model)
    ds = load_csv(args.input)
    pred = predict_with(model, ds.features)
    report = metrics(ds.labels, pred, args.positive_class)
    out = {k: getattr(report, k) for k in ("acc", "macc", "gm", "s_pos", "s_neg", "tp", "fp", "tn", "fn")}
    text = json.dumps(out, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)


def cmd_experiment(args):
    path = Path(args.config)
    if path.exists():
        data = json.loads(path.read_text(encoding="utf-8"))
    else:
        data = bundled_config(args.config)
    if args.output_dir:
        data["output_dir"] = args.output_dir
    if args.n_jobs:
        data["n_jobs"] = args.n_jobs
    config = ExperimentConfig.from_dict(data)
    records = run_experiment(config)
    skipped = sum(not r.ok for r in records)
    print(f"{len(records)} cells ({skipped} skipped) written to {config.output_dir}")
    return 0


def cmd_report(args):
    summary = write_report(read_records(args.cells), args.out)
    print((Path(args.out) / "friedman.txt").read_text(encoding="utf-8"), end="")
    return 0 if summary.rank_tables else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="synthssl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a bi-modal Gaussian task")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--v", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("mcar", help="remove labeled patterns completely at random")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--ratio", type=float, required=True)
    p.add_argument("--mode", choices=(BOTH_STRATIFIED, MINORITY_ONLY), default=BOTH_STRATIFIED)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--removed-out")
    p.set_defaults(func=cmd_mcar)

    p = sub.add_parser("oversample", help="generate synthetic patterns by convex combination")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--class-mode", choices=(CLASS_DEPENDENT, CLASS_INDEPENDENT), default=CLASS_DEPENDENT)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_oversample)

    p = sub.add_parser("train", help="train an SVM, S3VM or S3VM ensemble")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--method", choices=("svm", "s3vm"), default="svm")
    p.add_argument("--lambda", "--C", dest="C", type=float, default=1.0)
    p.add_argument("--lambda-star", type=float, default=1.0)
    p.add_argument("--r", type=float, help="positive share of unlabeled labels (default: labeled share)")
    p.add_argument("--kernel", choices=("rbf", "linear"), default="rbf")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--unlabeled", help="CSV of unlabeled patterns (s3vm)")
    p.add_argument("--m", type=int, help="synthetic patterns to generate when no --unlabeled is given")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--class-mode", choices=(CLASS_DEPENDENT, CLASS_INDEPENDENT), default=CLASS_DEPENDENT)
    p.add_argument("--members", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model", required=True, help="output model file")
    p.add_argument("--result", help="output JSON with labels and objective trace")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a saved model on a labeled CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--positive-class", type=int, choices=(-1, 1), default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="run an experiment from a JSON config")
    p.add_argument("--config", required=True, help="JSON file or bundled name, e.g. small_experiment")
    p.add_argument("--output-dir")
    p.add_argument("--n-jobs", type=int)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="rebuild summaries from cells.csv")
    p.add_argument("--cells", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args) or 0
    except (DatasetError, ValueError, OSError) as exc:
        print(f"synthssl {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
