"""Experiment engine: method registry, nested cross-validated model
selection, MCAR degradation per outer fold, and report files.

A *cell* is one (dataset, method, MCAR ratio, repeat, fold) combination.
All randomness of a cell is derived from ``(base_seed, dataset, repeat,
fold)`` only, so every method sees the same removed patterns and the same
synthetic data, and cells can run in any order.
"""

import csv
import importlib.resources
import io
import itertools
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .dataset import (
    BOTH_STRATIFIED,
    MINORITY_ONLY,
    Dataset,
    DatasetError,
    GeneratorSpec,
    concat,
    fit_scaling,
    generate_gaussian_task,
    load_csv,
    minority_class,
    one_hot_encode,
    remove_mcar,
    stratified_kfold,
)
from .oversampler import CLASS_DEPENDENT, CLASS_INDEPENDENT, OversamplePlan, convex_oversample
from .s3vm import S3vmConfig, ensemble_predict, train_ensemble, train_s3vm
from .stats import metrics, rank_table
from .svm import KernelSpec, train_svm
from .utils import derive_seed

log = logging.getLogger(__name__)

__all__ = [
    "METHODS",
    "ExperimentConfig",
    "MethodSpec",
    "RunRecord",
    "CellContext",
    "fit_predict",
    "run_cell",
    "run_experiment",
    "summarize",
    "synthetic_grid_sources",
    "load_source",
    "bundled_config",
    "write_records",
    "read_records",
]

SVM = "SVM"
S_MCAR = "S-MCAR"
SVM_OVS = "SVM+OvS"
S3VM_REAL = "S3VM-Real"
S3VM_OVS_DEP = "S3VM-OvS-classdep"
S3VM_OVS_INDEP = "S3VM-OvS-classindep"
S3VM_ENSEMBLE = "S3VM-Ensemble"

METHODS = (SVM, S_MCAR, SVM_OVS, S3VM_REAL, S3VM_OVS_DEP, S3VM_OVS_INDEP, S3VM_ENSEMBLE)
S3VM_METHODS = (S3VM_REAL, S3VM_OVS_DEP, S3VM_OVS_INDEP, S3VM_ENSEMBLE)

KINDS = ("synthetic_grid", "small_sample", "imbalanced")
DEFAULT_METHODS = {
    "synthetic_grid": (SVM, S_MCAR, S3VM_REAL, S3VM_OVS_DEP),
    "small_sample": METHODS,
    "imbalanced": (SVM, S_MCAR, SVM_OVS, S3VM_OVS_DEP, S3VM_OVS_INDEP),
}
METRICS = ("acc", "macc", "gm")


@dataclass(frozen=True)
class MethodSpec:
    name: str
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in METHODS:
            raise ValueError(f"unknown method {self.name!r}; choose from {METHODS}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to run one experiment; field names match the JSON
    config file."""

    kind: str = "small_sample"
    datasets: tuple = ()
    mcar_ratios: tuple = (0.2, 0.5, 0.8)
    methods: tuple = None
    c_grid: tuple = (0.1, 1.0, 10.0)
    gamma_grid: tuple = (0.1, 1.0, 10.0)
    lambda_star_grid: tuple = (0.1, 1.0, 10.0)
    r_grid: tuple = (0.5, 0.7, 0.9)
    folds: int = 10
    inner_folds: int = 3
    repeats: int = 3
    k_neighbors: int = 5
    ensemble_members: int = 51
    standardize: bool = None
    kernel: str = "rbf"
    tol: float = 1e-3
    anneal_start: float = 1e-5
    anneal_multiplier: float = 2.0
    base_seed: int = 0
    output_dir: str = "results"
    n_jobs: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("methods", tuple(self.methods or DEFAULT_METHODS[self.kind]))
        if self.standardize is None:
            # generator coordinates already share one scale; standardizing
            # them inflates kernel distances in high dimension
            set_("standardize", self.kind != "synthetic_grid")
        for name in ("datasets", "mcar_ratios", "c_grid", "gamma_grid", "lambda_star_grid", "r_grid"):
            set_(name, tuple(getattr(self, name)))
        for m in self.methods:
            MethodSpec(m)
        for name in ("c_grid", "gamma_grid", "lambda_star_grid", "r_grid"):
            if not getattr(self, name):
                raise ValueError(f"{name} must not be empty")
        if not self.mcar_ratios or not all(0 < r < 1 for r in self.mcar_ratios):
            raise ValueError("mcar_ratios must be a non-empty subset of (0, 1)")
        if self.ensemble_members % 2 == 0:
            raise ValueError("ensemble_members must be odd")

    @property
    def removal_mode(self):
        return MINORITY_ONLY if self.kind == "imbalanced" else BOTH_STRATIFIED

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        return cls(**data)

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        out = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}


RECORD_FIELDS = (
    "dataset", "method", "mcar_ratio", "repeat", "fold", "status", "reason", "params",
    "positive_class", "acc", "macc", "gm", "s_pos", "s_neg", "tp", "fp", "tn", "fn",
)


@dataclass(frozen=True)
class RunRecord:
    dataset: str
    method: str
    mcar_ratio: float
    repeat: int
    fold: int
    status: str = "ok"
    reason: str = ""
    params: str = ""
    positive_class: int = 0
    acc: float = float("nan")
    macc: float = float("nan")
    gm: float = float("nan")
    s_pos: float = float("nan")
    s_neg: float = float("nan")
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0
    wall_time: float = field(default=0.0, compare=False)
    train_ids: tuple = field(default=(), compare=False, repr=False)
    test_ids: tuple = field(default=(), compare=False, repr=False)

    @property
    def key(self):
        return (self.dataset, self.method, self.mcar_ratio, self.repeat, self.fold)

    @property
    def ok(self):
        return self.status == "ok"


# --------------------------------------------------------------------------
# Dataset sources


def synthetic_grid_sources(seed=0, dims=(2, 10, 100), sizes=(50, 100, 1000), spreads=(0.167, 0.25, 0.5)):
    """The 27 generator specs of the synthetic experiment as source dicts."""
    return tuple(
        {"generator": {"d": d, "n": n, "v": v, "seed": int(derive_seed(seed, d, n, v) % 2**63)}}
        for d, n, v in itertools.product(dims, sizes, spreads)
    )


def bundled_config(name="small_experiment"):
    """Config dict shipped with the package under ``data/<name>.json``."""
    ref = importlib.resources.files(__package__) / "data" / f"{name}.json"
    if not ref.is_file():
        raise ValueError(f"no bundled config named {name!r}")
    return json.loads(ref.read_text(encoding="utf-8"))


def load_source(source):
    """Build a :class:`Dataset` from a source dict.

    ``{"generator": {"d":.., "n":.., "v":.., "seed":..}, "name": ...}`` or
    ``{"csv": path, "label_column": "label", "label_map": {...},
    "nominal_columns": [...], "name": ...}``.
    """
    if "generator" in source:
        spec = GeneratorSpec(**source["generator"])
        return generate_gaussian_task(spec, name=source.get("name") or spec.label)
    if "csv" in source:
        nominal = source.get("nominal_columns", ())
        label_map = source.get("label_map")
        if label_map is not None:
            label_map = {str(k): v for k, v in label_map.items()}
        ds = load_csv(source["csv"], source.get("label_column", "label"), label_map, nominal,
                      name=source.get("name"))
        return one_hot_encode(ds, nominal)
    raise ValueError(f"dataset source needs 'generator' or 'csv': {source}")


# --------------------------------------------------------------------------
# Methods


@dataclass(frozen=True)
class CellContext:
    """Per-cell facts a method pipeline needs besides its hyperparameters."""

    config: ExperimentConfig
    quotas: dict
    positive_class: int
    initial_ratio: float
    seed: int


def _param_grid(method, config):
    """Candidate hyperparameters in tie-break order (smaller C, gamma, lambda*, r first)."""
    axes = [("C", sorted(config.c_grid))]
    if config.kernel == "rbf":
        axes.append(("gamma", sorted(config.gamma_grid)))
    if method in S3VM_METHODS:
        axes.append(("lambda_star", sorted(config.lambda_star_grid)))
        if config.kind == "imbalanced":
            axes.append(("r", sorted(config.r_grid)))
    names = [a for a, _ in axes]
    return [dict(zip(names, values)) for values in itertools.product(*(v for _, v in axes))]


def _oversample(labeled, ctx, mode, seed):
    """Synthetic batch for a pipeline; k shrinks to fit small pools and a
    class with a single pattern contributes no synthetic data."""
    config = ctx.config
    counts = labeled.class_counts()
    if mode == CLASS_INDEPENDENT:
        m = sum(ctx.quotas.values())
        k = min(config.k_neighbors, labeled.n - 1)
        plan = OversamplePlan(m=m, k=k, class_mode=CLASS_INDEPENDENT, seed=seed)
    else:
        quotas = {c: (q if counts[c] >= 2 else 0) for c, q in ctx.quotas.items()}
        pools = [counts[c] for c, q in quotas.items() if q > 0]
        k = min([config.k_neighbors] + [p - 1 for p in pools])
        plan = OversamplePlan(m=sum(quotas.values()), k=max(k, 1), class_mode=CLASS_DEPENDENT,
                              seed=seed, quotas=quotas)
    return plan, convex_oversample(labeled, plan)


def _s3vm_config(params, ctx, kernel):
    config = ctx.config
    if config.kind == "imbalanced":
        # the grid value is the share given to the minority (positive) class
        r = params["r"] if ctx.positive_class == 1 else 1.0 - params["r"]
    else:
        r = ctx.initial_ratio
    return S3vmConfig(
        lambda_labeled=params["C"],
        lambda_unlabeled=params["lambda_star"],
        balance_ratio=r,
        anneal_start=config.anneal_start,
        anneal_multiplier=config.anneal_multiplier,
        kernel=kernel,
        tol=config.tol,
    )


def fit_predict(method, labeled, unlabeled_real, X_eval, params, ctx, members=None):
    """Train ``method`` on ``labeled`` (plus its unlabeled inputs) and
    predict ``X_eval``.

    ``unlabeled_real`` holds the removed real patterns (labels masked); only
    S3VM-Real uses it. Standardization statistics come from ``labeled``
    alone.
    """
    config = ctx.config
    labeled = labeled.require_numeric()
    X_eval = np.asarray(X_eval, dtype=float)
    if config.standardize:
        scaling = fit_scaling(labeled.features)
        labeled = labeled.with_features(scaling.apply(labeled.features))
        X_eval = scaling.apply(X_eval)
        if unlabeled_real is not None:
            unlabeled_real = unlabeled_real.with_features(scaling.apply(unlabeled_real.features))
    kernel = KernelSpec(config.kernel, params.get("gamma", 1.0))
    Xl, yl = labeled.features, labeled.labels
    ovs_seed = derive_seed(ctx.seed, "oversample")

    if method in (SVM, S_MCAR):
        return train_svm(Xl, yl, params["C"], kernel, tol=config.tol, record=False).predict(X_eval)
    if method == SVM_OVS:
        _, batch = _oversample(labeled, ctx, CLASS_DEPENDENT, ovs_seed)
        X = np.vstack([Xl, batch.patterns])
        y = np.concatenate([yl, batch.seed_class])
        return train_svm(X, y, params["C"], kernel, tol=config.tol, record=False).predict(X_eval)

    s3vm_config = _s3vm_config(params, ctx, kernel)
    if method == S3VM_REAL:
        U = None if unlabeled_real is None else unlabeled_real.features
        return train_s3vm((Xl, yl), U, s3vm_config).predict(X_eval)
    if method in (S3VM_OVS_DEP, S3VM_OVS_INDEP):
        mode = CLASS_DEPENDENT if method == S3VM_OVS_DEP else CLASS_INDEPENDENT
        _, batch = _oversample(labeled, ctx, mode, ovs_seed)
        return train_s3vm((Xl, yl), batch.patterns, s3vm_config).predict(X_eval)
    if method == S3VM_ENSEMBLE:
        plan, _ = _oversample(labeled, ctx, CLASS_DEPENDENT, ovs_seed)
        ens = train_ensemble(labeled, plan, s3vm_config, members or config.ensemble_members)
        return ensemble_predict(ens, X_eval)
    raise ValueError(f"unknown method {method!r}")


def _selection_method(method):
    # hyperparameters of the ensemble are chosen with a single member
    return S3VM_OVS_DEP if method == S3VM_ENSEMBLE else method


def select_params(method, kept, removed, ctx):
    """Nested stratified CV on the reduced training data maximizing GM.

    Falls back to 2 inner folds when a class is too small for the
    configured count; raises ``DatasetError`` when even that is impossible.
    """
    config = ctx.config
    grid = _param_grid(method, config)
    if len(grid) == 1:
        return grid[0]
    smallest = min(kept.class_counts().values())
    inner_k = config.inner_folds if smallest >= config.inner_folds else 2
    if smallest < inner_k:
        raise DatasetError(f"cannot stratify {smallest} patterns into {inner_k} inner folds")
    plan = stratified_kfold(kept, inner_k, seed=derive_seed(ctx.seed, "inner"))
    sel_method = _selection_method(method)
    best, best_score = None, -np.inf
    for params in grid:
        scores = []
        for f in range(inner_k):
            train, val = plan.split(kept, f)
            inner_ctx = replace(ctx, seed=derive_seed(ctx.seed, "inner", f))
            pred = fit_predict(sel_method, train, removed, val.features, params, inner_ctx)
            scores.append(metrics(val.labels, pred, ctx.positive_class).gm)
        score = float(np.mean(scores))
        if score > best_score:
            best, best_score = params, score
    return best


def _outer_plan(dataset, config, repeat):
    return stratified_kfold(dataset, config.folds, seed=derive_seed(config.base_seed, dataset.name, repeat),
                            repeat=repeat)


def run_cell(dataset, method, mcar_ratio, repeat, fold, config, plan=None):
    """Run one experiment cell and return its :class:`RunRecord`.

    The outer fold is split off first; MCAR removal, over-sampling,
    standardization and model selection only ever see the training part.
    An infeasible cell comes back with ``status="skipped"`` and a reason.
    """
    method = method.name if isinstance(method, MethodSpec) else method
    MethodSpec(method)
    started = time.perf_counter()
    base = dict(dataset=dataset.name, method=method, mcar_ratio=float(mcar_ratio), repeat=repeat, fold=fold)
    try:
        plan = plan or _outer_plan(dataset, config, repeat)
        train, test = plan.split(dataset, fold)
        cell_seed = derive_seed(config.base_seed, dataset.name, repeat, fold)
        kept, removed = remove_mcar(train, mcar_ratio, config.removal_mode,
                                    seed=derive_seed(cell_seed, "mcar", float(mcar_ratio)))
        positive = minority_class(kept.class_counts())
        quotas = removed.class_counts() if removed is not None else {-1: 0, 1: 0}
        if method == SVM:
            kept, removed = train, None
        if method != S3VM_REAL:
            unlabeled = None
        else:
            unlabeled = None if removed is None else removed.mask_labels()
        ctx = CellContext(
            config=config,
            quotas=quotas,
            positive_class=positive,
            initial_ratio=train.class_counts()[1] / train.n,
            seed=cell_seed,
        )
        params = select_params(method, kept, unlabeled, ctx)
        pred = fit_predict(method, kept, unlabeled, test.features, params, ctx)
    except DatasetError as exc:
        return RunRecord(**base, status="skipped", reason=str(exc),
                         wall_time=time.perf_counter() - started)
    report = metrics(test.labels, pred, positive)
    used = kept if unlabeled is None else concat([kept, unlabeled])
    return RunRecord(
        **base,
        params=json.dumps(params, sort_keys=True),
        positive_class=positive,
        acc=report.acc,
        macc=report.macc,
        gm=report.gm,
        s_pos=report.s_pos,
        s_neg=report.s_neg,
        tp=report.tp,
        fp=report.fp,
        tn=report.tn,
        fn=report.fn,
        wall_time=time.perf_counter() - started,
        train_ids=tuple(int(i) for i in used.ids),
        test_ids=tuple(int(i) for i in test.ids),
    )


# --------------------------------------------------------------------------
# Experiments


def _cells(config, datasets):
    for ds in datasets:
        for repeat in range(config.repeats):
            for fold in range(config.folds):
                for ratio in config.mcar_ratios:
                    for method in config.methods:
                        yield ds, method, ratio, repeat, fold


def _run_cell_args(args):
    ds, method, ratio, repeat, fold, config = args
    return run_cell(ds, method, ratio, repeat, fold, config)


def execute(config, datasets=None):
    """Run every cell of ``config`` and return the records sorted by key."""
    if datasets is None:
        sources = config.datasets or (synthetic_grid_sources(config.base_seed)
                                      if config.kind == "synthetic_grid" else ())
        if not sources:
            raise ValueError("the config lists no datasets")
        datasets = [load_source(s) for s in sources]
    names = [ds.name for ds in datasets]
    if len(set(names)) != len(names):
        raise ValueError(f"dataset names must be unique: {names}")
    jobs = [(*cell, config) for cell in _cells(config, datasets)]
    log.info("running %d cells", len(jobs))
    if config.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=config.n_jobs) as pool:
            records = list(pool.map(_run_cell_args, jobs, chunksize=1))
    else:
        records = [_run_cell_args(job) for job in jobs]
    return sorted(records, key=lambda r: (r.dataset, METHODS.index(r.method), r.mcar_ratio, r.repeat, r.fold))


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_records(records, path):
    """Write the deterministic part of each record (no timings) as CSV."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RECORD_FIELDS)
        for rec in records:
            writer.writerow([_fmt(getattr(rec, f)) for f in RECORD_FIELDS])


def read_records(path):
    casts = {f.name: f.type for f in fields(RunRecord)}
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            kw = {}
            for k, v in row.items():
                t = casts[k]
                kw[k] = int(v) if t is int else float(v) if t is float else v
            out.append(RunRecord(**kw))
    return out


@dataclass
class Summary:
    """Aggregates of a set of records.

    ``groups`` rows carry mean/std per (dataset, method, ratio);
    ``rank_tables`` maps ``(metric, ratio)`` to a :class:`RankTable`.
    """

    groups: list
    rank_tables: dict
    skipped: list


def summarize(records, alpha=0.05):
    records = list(records)
    if not records:
        raise ValueError("nothing to summarize")
    ok = [r for r in records if r.ok]
    skipped = [r for r in records if not r.ok]
    methods = [m for m in METHODS if any(r.method == m for r in records)]
    datasets = sorted({r.dataset for r in records})
    ratios = sorted({r.mcar_ratio for r in records})

    groups = []
    by_key = {}
    for r in ok:
        by_key.setdefault((r.dataset, r.method, r.mcar_ratio), []).append(r)
    for ds in datasets:
        for m in methods:
            for ratio in ratios:
                rows = by_key.get((ds, m, ratio), [])
                row = {"dataset": ds, "method": m, "mcar_ratio": ratio, "n": len(rows)}
                for metric in METRICS:
                    vals = np.array([getattr(r, metric) for r in rows])
                    row[f"{metric}_mean"] = float(vals.mean()) if len(vals) else float("nan")
                    row[f"{metric}_std"] = float(vals.std()) if len(vals) else float("nan")
                groups.append(row)

    means = {(g["dataset"], g["method"], g["mcar_ratio"]): g for g in groups}
    tables = {}
    for metric in METRICS:
        for ratio in ratios:
            # only datasets where every method produced a score can be ranked
            usable = [ds for ds in datasets
                      if all(np.isfinite(means[(ds, m, ratio)][f"{metric}_mean"]) for m in methods)]
            if not usable:
                continue
            scores = np.array([[means[(ds, m, ratio)][f"{metric}_mean"] for m in methods] for ds in usable])
            tables[(metric, ratio)] = rank_table(scores, True, alpha, methods, usable)
    return Summary(groups=groups, rank_tables=tables, skipped=skipped)


def _write_summary(summary, out):
    cols = ["dataset", "method", "mcar_ratio", "n"] + [f"{m}_{s}" for m in METRICS for s in ("mean", "std")]
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for g in summary.groups:
            writer.writerow([_fmt(g[c]) for c in cols])
    for (metric, ratio), table in summary.rank_tables.items():
        with open(out / f"ranks_{metric}_{ratio:g}.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["dataset"] + [f"{m}_{kind}" for kind in ("score", "rank") for m in table.methods])
            for ds, s, r in zip(table.datasets, table.scores, table.ranks):
                writer.writerow([ds] + [_fmt(float(v)) for v in s] + [_fmt(float(v)) for v in r])
            writer.writerow(["mean_rank"] + [""] * len(table.methods) + [_fmt(float(v)) for v in table.mean_ranks])
    (out / "friedman.txt").write_text(format_friedman(summary), encoding="utf-8")
    if summary.skipped:
        lines = [f"{r.dataset},{r.method},{r.mcar_ratio},{r.repeat},{r.fold}: {r.reason}" for r in summary.skipped]
        (out / "skipped.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def format_friedman(summary):
    """Plain-text block of mean ranks and Friedman results per metric and ratio."""
    buf = io.StringIO()
    for (metric, ratio), table in sorted(summary.rank_tables.items()):
        buf.write(f"== {metric.upper()} | MCAR {ratio:g} | {len(table.datasets)} datasets ==\n")
        width = max(len(m) for m in table.methods)
        for m, r in zip(table.methods, table.mean_ranks):
            buf.write(f"  {m:<{width}}  {r:6.2f}\n")
        fr = table.friedman
        if fr is None:
            buf.write("  Friedman test: not applicable (needs >= 2 datasets and >= 3 methods)\n")
        else:
            verdict = "reject" if fr.reject else "accept"
            buf.write(f"  chi2_F = {fr.chi2:.4f}  F_ID = {fr.f_value:.4f}  "
                      f"C0 = (0, {fr.critical_f:.4f})  alpha = {fr.alpha:g}  -> {verdict} H0\n")
    return buf.getvalue()


def run_experiment(config, datasets=None):
    """Run all cells, write ``cells.csv``, ``timings.csv``, ``summary.csv``,
    ``ranks_<metric>_<ratio>.csv`` and ``friedman.txt`` to
    ``config.output_dir`` and return the records."""
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = execute(config, datasets)
    write_records(records, out / "cells.csv")
    with open(out / "timings.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["dataset", "method", "mcar_ratio", "repeat", "fold", "wall_time"])
        for r in records:
            writer.writerow([r.dataset, r.method, r.mcar_ratio, r.repeat, r.fold, f"{r.wall_time:.4f}"])
    _write_summary(summarize(records), out)
    skipped = [r for r in records if not r.ok]
    if skipped:
        log.warning("%d of %d cells skipped, see skipped.txt", len(skipped), len(records))
    return records


def write_report(records, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize(records)
    _write_summary(summary, out)
    return summary
