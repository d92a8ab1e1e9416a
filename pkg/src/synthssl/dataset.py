"""Binary classification datasets: loading, encoding, generation, splitting
and random (MCAR) degradation.

Labels are always stored as -1/+1. Patterns whose supervision flag is
"unlabeled" keep a 0 in the label slot so that no trainer can read the
ground truth by accident.
"""

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .utils import make_rng, round_half_up

__all__ = [
    "DatasetError",
    "Dataset",
    "GeneratorSpec",
    "SplitPlan",
    "load_csv",
    "save_csv",
    "one_hot_encode",
    "standardize",
    "generate_gaussian_task",
    "remove_mcar",
    "stratified_kfold",
    "minority_class",
]

BOTH_STRATIFIED = "both_stratified"
MINORITY_ONLY = "minority_only"

DEFAULT_LABEL_MAP = {"-1": -1, "1": 1, "+1": 1, "-1.0": -1, "1.0": 1}


class DatasetError(ValueError):
    """Raised for malformed inputs or infeasible dataset operations."""


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable feature matrix with labels and per-pattern provenance.

    Attributes
    ----------
    features : ndarray of shape (n, p)
        Numeric feature columns.
    labels : ndarray of shape (n,)
        -1/+1 for labeled patterns, 0 where the label is masked.
    ids : ndarray of shape (n,)
        Stable integer identifiers; unique within a dataset.
    synthetic : ndarray of bool
        True for generated patterns, False for real ones.
    labeled : ndarray of bool
        Supervision flag.
    feature_names : tuple of str
        Names of the numeric columns.
    nominal : dict
        Categorical columns not yet one-hot encoded, name -> array of str.
    columns : tuple of str
        Order of all columns (numeric and nominal) as read from the source.
    """

    features: np.ndarray
    labels: np.ndarray
    ids: np.ndarray = None
    synthetic: np.ndarray = None
    labeled: np.ndarray = None
    feature_names: tuple = None
    nominal: dict = field(default_factory=dict)
    columns: tuple = None
    name: str = ""

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        n = X.shape[0]
        if n < 1:
            raise DatasetError("a dataset needs at least one pattern")
        if not np.all(np.isfinite(X)):
            raise DatasetError("feature values must be finite")
        y = np.asarray(self.labels).astype(np.int64)
        if y.shape != (n,):
            raise DatasetError(f"expected {n} labels, got shape {y.shape}")
        ids = np.arange(n) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        if len(np.unique(ids)) != n:
            raise DatasetError("pattern ids must be unique")
        synthetic = np.zeros(n, bool) if self.synthetic is None else np.asarray(self.synthetic, bool)
        labeled = np.ones(n, bool) if self.labeled is None else np.asarray(self.labeled, bool)
        if not np.all(np.isin(y[labeled], (-1, 1))):
            raise DatasetError("labeled patterns must carry -1/+1 labels")
        y = np.where(labeled, y, 0)
        names = self.feature_names
        if names is None:
            names = tuple(f"f{i + 1}" for i in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise DatasetError("feature_names does not match the number of columns")
        nominal = {k: _frozen(np.asarray(v, dtype=str)) for k, v in self.nominal.items()}
        for k, v in nominal.items():
            if v.shape != (n,):
                raise DatasetError(f"nominal column {k!r} has the wrong length")
        columns = self.columns
        if columns is None:
            columns = tuple(names) + tuple(nominal)
        if X.shape[1] + len(nominal) < 1:
            raise DatasetError("a dataset needs at least one feature")
        setattr_ = object.__setattr__
        setattr_(self, "features", _frozen(X))
        setattr_(self, "labels", _frozen(y))
        setattr_(self, "ids", _frozen(ids))
        setattr_(self, "synthetic", _frozen(synthetic))
        setattr_(self, "labeled", _frozen(labeled))
        setattr_(self, "feature_names", tuple(names))
        setattr_(self, "nominal", nominal)
        setattr_(self, "columns", tuple(columns))

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1] + len(self.nominal)

    def __len__(self):
        return self.n

    def subset(self, index):
        """Rows selected by an integer index or boolean mask, ids preserved."""
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        if len(index) == 0:
            raise DatasetError("subset would be empty")
        return replace(
            self,
            features=self.features[index],
            labels=self.labels[index],
            ids=self.ids[index],
            synthetic=self.synthetic[index],
            labeled=self.labeled[index],
            nominal={k: v[index] for k, v in self.nominal.items()},
        )

    def with_features(self, features):
        return replace(self, features=features)

    def mask_labels(self):
        """Copy with every label hidden (supervision=unlabeled)."""
        return replace(self, labeled=np.zeros(self.n, bool))

    def class_counts(self):
        """Counts of labeled patterns per class as ``{-1: n_neg, 1: n_pos}``."""
        y = self.labels[self.labeled]
        return {-1: int(np.sum(y == -1)), 1: int(np.sum(y == 1))}

    def require_numeric(self):
        if self.nominal:
            raise DatasetError(f"encode nominal columns first: {sorted(self.nominal)}")
        return self

    def id_index(self):
        return {int(i): k for k, i in enumerate(self.ids)}


def concat(datasets, name=""):
    """Stack datasets row-wise; ids must stay unique."""
    datasets = list(datasets)
    return Dataset(
        features=np.vstack([ds.features for ds in datasets]),
        labels=np.concatenate([ds.labels for ds in datasets]),
        ids=np.concatenate([ds.ids for ds in datasets]),
        synthetic=np.concatenate([ds.synthetic for ds in datasets]),
        labeled=np.concatenate([ds.labeled for ds in datasets]),
        feature_names=datasets[0].feature_names,
        name=name or datasets[0].name,
    )


def minority_class(counts):
    """Class with fewer patterns; equal counts resolve to -1."""
    return 1 if counts[1] < counts[-1] else -1


# --------------------------------------------------------------------------
# CSV input/output


def _label_key(token):
    token = token.strip()
    try:
        value = float(token)
    except ValueError:
        return token
    return value


def load_csv(path, label_column="label", label_map=None, nominal_columns=(), name=None):
    """Read a headed CSV file into a :class:`Dataset`.

    Parameters
    ----------
    path : str or Path
    label_column : str
        Header of the column holding the class.
    label_map : dict, optional
        Maps raw label tokens to -1/+1, e.g. ``{0: -1, 1: 1}``. Numeric keys
        match numeric tokens regardless of formatting. Defaults to a
        pass-through of -1/+1.
    nominal_columns : sequence of str
        Columns kept as categorical tokens (see :func:`one_hot_encode`).
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"no such file: {path}")
    mapping = {}
    for k, v in (label_map or DEFAULT_LABEL_MAP).items():
        if int(v) not in (-1, 1):
            raise DatasetError(f"label map target must be -1 or +1, got {v!r}")
        mapping[_label_key(str(k))] = int(v)

    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path} is empty") from None
        rows = [row for row in reader if row and any(c.strip() for c in row)]

    if label_column not in header:
        raise DatasetError(f"label column {label_column!r} not in header {header}")
    nominal_columns = list(nominal_columns)
    for col in nominal_columns:
        if col not in header or col == label_column:
            raise DatasetError(f"nominal column {col!r} not found")
    label_pos = header.index(label_column)
    columns = [h for h in header if h != label_column]
    numeric = [h for h in columns if h not in nominal_columns]

    X = np.empty((len(rows), len(numeric)))
    y = np.empty(len(rows), dtype=np.int64)
    nominal = {c: [] for c in nominal_columns}
    for r, row in enumerate(rows, start=2):  # row 1 is the header
        if len(row) != len(header):
            raise DatasetError(f"row {r}: expected {len(header)} cells, got {len(row)}")
        cells = dict(zip(header, row))
        key = _label_key(row[label_pos])
        if key not in mapping:
            raise DatasetError(f"row {r}: unknown label value {row[label_pos]!r}")
        y[r - 2] = mapping[key]
        for j, col in enumerate(numeric):
            try:
                X[r - 2, j] = float(cells[col])
            except ValueError:
                raise DatasetError(
                    f"row {r}, column {col!r}: non-numeric value {cells[col]!r}"
                ) from None
        for col in nominal_columns:
            nominal[col].append(cells[col].strip())

    if len(rows) == 0:
        raise DatasetError(f"{path} has no data rows")
    if len(np.unique(y)) < 2:
        raise DatasetError(f"{path}: fewer than 2 classes present")
    return Dataset(
        features=X.reshape(len(rows), len(numeric)),
        labels=y,
        feature_names=tuple(numeric),
        nominal=nominal,
        columns=tuple(columns),
        name=name or path.stem,
    )


def save_csv(dataset, path, extra_columns=None):
    """Write ``f1..fd,label`` (plus optional extra columns) to ``path``.

    Masked labels are written as 0.
    """
    dataset.require_numeric()
    extra_columns = extra_columns or {}
    header = list(dataset.feature_names) + ["label"] + list(extra_columns)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.features[i]]
            row.append(str(int(dataset.labels[i])))
            row.extend(str(col[i]) for col in extra_columns.values())
            writer.writerow(row)


# --------------------------------------------------------------------------
# Encoding and scaling


def one_hot_encode(dataset, nominal_columns):
    """Replace each categorical column with one indicator column per value.

    Indicator columns are named ``"<column>=<value>"`` (values sorted) and
    inserted where the categorical column used to be.
    """
    nominal_columns = list(nominal_columns)
    for col in nominal_columns:
        if col in dataset.feature_names:
            raise DatasetError(f"column {col!r} is already numeric")
        if col not in dataset.nominal:
            raise DatasetError(f"column {col!r} not found")
    if not nominal_columns:
        return dataset

    numeric = {name: dataset.features[:, j] for j, name in enumerate(dataset.feature_names)}
    blocks, names, columns = [], [], []
    for col in dataset.columns:
        if col in numeric:
            blocks.append(numeric[col][:, None])
            names.append(col)
            columns.append(col)
        elif col in nominal_columns:
            values = dataset.nominal[col]
            for level in sorted(set(values)):
                blocks.append((values == level).astype(float)[:, None])
                names.append(f"{col}={level}")
                columns.append(f"{col}={level}")
        else:
            columns.append(col)
    features = np.hstack(blocks) if blocks else np.empty((dataset.n, 0))
    remaining = {k: v for k, v in dataset.nominal.items() if k not in nominal_columns}
    return replace(
        dataset,
        features=features,
        feature_names=tuple(names),
        nominal=remaining,
        columns=tuple(columns),
    )


@dataclass(frozen=True)
class Scaling:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, X):
        return (np.asarray(X, dtype=float) - self.mean) / self.std


def fit_scaling(X):
    """Population mean/std of each column; zero-variance columns get std 1."""
    X = np.asarray(X, dtype=float)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 1e-12 * np.maximum(1.0, np.abs(mean)), std, 1.0)
    return Scaling(mean, std)


def standardize(train, others=()):
    """Standardize ``train`` to zero mean / unit population std and apply
    the same affine map to every dataset in ``others``.

    Returns
    -------
    (train, others, scaling)
    """
    train.require_numeric()
    scaling = fit_scaling(train.features)
    out = [ds.with_features(scaling.apply(ds.features)) for ds in others]
    return train.with_features(scaling.apply(train.features)), out, scaling


# --------------------------------------------------------------------------
# Synthetic bi-modal tasks


@dataclass(frozen=True)
class GeneratorSpec:
    """Parameters of a bi-modal Gaussian binary task.

    ``d`` dimensions, ``n`` patterns (even), per-coordinate standard
    deviation ``v``.
    """

    d: int
    n: int
    v: float
    seed: int = 0

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise DatasetError(f"d must be a positive integer, got {self.d}")
        if int(self.n) != self.n or self.n < 2 or self.n % 2:
            raise DatasetError(f"n must be a positive even integer, got {self.n}")
        if not self.v > 0:
            raise DatasetError(f"v must be positive, got {self.v}")

    @property
    def label(self):
        return f"d{self.d}_n{self.n}_v{self.v:g}"


# first-coordinate centers of the two modes of each class
MODE_CENTERS = {1: (0.0, 2.0), -1: (1.0, 3.0)}


def generate_gaussian_task(spec, name=None):
    """Draw a balanced two-class task with two isotropic modes per class.

    Class +1 modes sit at first coordinate 0 and 2, class -1 modes at 1 and
    3; every other coordinate is centered at 0. All coordinates have
    standard deviation ``spec.v``.
    """
    rng = make_rng(spec.seed)
    half = spec.n // 2
    X, y = [], []
    for cls in (1, -1):
        sizes = (half - half // 2, half // 2)
        for center, size in zip(MODE_CENTERS[cls], sizes):
            mu = np.zeros(spec.d)
            mu[0] = center
            X.append(mu + spec.v * rng.standard_normal((size, spec.d)))
            y.append(np.full(size, cls))
    X, y = np.vstack(X), np.concatenate(y)
    order = rng.permutation(spec.n)
    return Dataset(features=X[order], labels=y[order], name=name or spec.label)


# --------------------------------------------------------------------------
# MCAR removal


def remove_mcar(dataset, ratio, mode=BOTH_STRATIFIED, seed=0):
    """Remove patterns completely at random.

    ``both_stratified`` removes ``round(ratio * n_c)`` patterns from every
    class; ``minority_only`` removes ``round(ratio * n_minority)`` from the
    minority class only (equal counts: class -1 is the minority). Counts
    round half up.

    Returns
    -------
    kept, removed : Dataset
        ``removed`` is None when nothing was removed.
    """
    if not 0 <= ratio < 1:
        raise DatasetError(f"ratio must lie in [0, 1), got {ratio}")
    counts = dataset.class_counts()
    if mode == BOTH_STRATIFIED:
        targets = {c: round_half_up(ratio * counts[c]) for c in (-1, 1)}
        min_left = 2
    elif mode == MINORITY_ONLY:
        minority = minority_class(counts)
        targets = {minority: round_half_up(ratio * counts[minority]), -minority: 0}
        min_left = 1
    else:
        raise DatasetError(f"unknown removal mode {mode!r}")

    rng = make_rng(seed)
    drop = np.zeros(dataset.n, bool)
    for c in (-1, 1):
        members = np.flatnonzero(dataset.labels == c)
        if counts[c] - targets[c] < min_left:
            raise DatasetError(
                f"removing {targets[c]} of {counts[c]} patterns would empty class {c:+d}"
            )
        drop[members[rng.permutation(len(members))[: targets[c]]]] = True
    kept = dataset.subset(~drop)
    removed = dataset.subset(drop) if drop.any() else None
    return kept, removed


# --------------------------------------------------------------------------
# Stratified folds


@dataclass(frozen=True)
class SplitPlan:
    """Fold index per pattern (aligned with the dataset rows)."""

    folds: np.ndarray
    k: int
    seed: int = 0
    repeat: int = 0

    def test_index(self, fold):
        return np.flatnonzero(self.folds == fold)

    def train_index(self, fold):
        return np.flatnonzero(self.folds != fold)

    def split(self, dataset, fold):
        """(train, test) datasets for one fold."""
        return dataset.subset(self.train_index(fold)), dataset.subset(self.test_index(fold))


def stratified_kfold(dataset, k, seed=0, repeat=0):
    """Assign every pattern to one of ``k`` folds, stratified by class.

    Each class is shuffled and dealt round-robin, continuing the deal from
    one class to the next, so per-fold class counts are floor or ceil of
    ``n_c / k`` and fold sizes differ by at most one.
    """
    k = int(k)
    if k < 2:
        raise DatasetError("k must be at least 2")
    counts = dataset.class_counts()
    if min(counts.values()) < k:
        raise DatasetError(f"class counts {counts} are smaller than k={k}")
    rng = make_rng(seed)
    order = [
        members[rng.permutation(len(members))]
        for members in (np.flatnonzero(dataset.labels == c) for c in (-1, 1))
    ]
    folds = np.empty(dataset.n, dtype=np.int64)
    folds[np.concatenate(order)] = np.arange(dataset.n) % k
    return SplitPlan(folds=_frozen(folds), k=k, seed=seed, repeat=repeat)


def expected_fold_range(n_class, k):
    return math.floor(n_class / k), math.ceil(n_class / k)
