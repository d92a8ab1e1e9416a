"""Synthetic patterns by convex combination of nearest-neighbour seed pairs.

Every synthetic pattern is ``x_i + delta * (x_h - x_i)`` where ``x_i`` is
drawn uniformly from a pool, ``x_h`` uniformly from the ``k`` nearest
neighbours of ``x_i`` in the same pool and ``delta`` independently from
``U[0, 1]`` (or a user supplied law). Also contains the tools used to
measure how the resampled distribution differs from the original one.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.base import BaseEstimator

from .dataset import Dataset, DatasetError
from .utils import check_matrix, check_signed_labels, make_rng

__all__ = [
    "CLASS_DEPENDENT",
    "CLASS_INDEPENDENT",
    "OversamplePlan",
    "SyntheticBatch",
    "ShrinkageReport",
    "knn_indices",
    "convex_oversample",
    "variance_factor",
    "shrinkage_report",
    "ConvexOverSampler",
]

CLASS_DEPENDENT = "class_dependent"
CLASS_INDEPENDENT = "class_independent"


def uniform_delta(rng, size):
    return rng.random(size)


@dataclass(frozen=True)
class OversamplePlan:
    """How many synthetic patterns to draw and from which pools.

    ``quotas`` optionally fixes the per-class counts (``{-1: a, 1: b}``,
    summing to ``m``) in class-dependent mode; otherwise ``m`` is shared
    between the classes in proportion to their sizes.
    """

    m: int
    k: int = 5
    class_mode: str = CLASS_DEPENDENT
    delta_law: object = None
    seed: int = 0
    quotas: dict = None

    def __post_init__(self):
        if self.m < 0:
            raise DatasetError("m must be non-negative")
        if self.k < 1:
            raise DatasetError("k must be at least 1")
        if self.class_mode not in (CLASS_DEPENDENT, CLASS_INDEPENDENT):
            raise DatasetError(f"unknown class mode {self.class_mode!r}")
        if self.quotas is not None:
            if self.class_mode != CLASS_DEPENDENT:
                raise DatasetError("quotas only apply to class-dependent over-sampling")
            if sum(self.quotas.values()) != self.m or min(self.quotas.values()) < 0:
                raise DatasetError(f"quotas {self.quotas} do not add up to m={self.m}")


@dataclass(frozen=True, eq=False)
class SyntheticBatch:
    """Generated patterns with their seed-pair lineage.

    ``seed_i``/``seed_h`` hold the dataset ids of the two seeds; ``seed_class``
    is the shared class of the seeds in class-dependent mode and 0 otherwise.
    """

    patterns: np.ndarray
    seed_i: np.ndarray
    seed_h: np.ndarray
    delta: np.ndarray
    seed_class: np.ndarray

    @property
    def m(self):
        return len(self.patterns)

    def to_dataset(self, first_id, naive_labels=False, feature_names=None):
        """Wrap as a synthetic :class:`Dataset`.

        By default the patterns are unlabeled; ``naive_labels`` gives each
        pattern its seeds' class instead (the SMOTE convention).
        """
        if naive_labels and np.any(self.seed_class == 0):
            raise DatasetError("naive labels need class-dependent seeds")
        return Dataset(
            features=self.patterns,
            labels=self.seed_class if naive_labels else np.zeros(self.m, int),
            ids=first_id + np.arange(self.m),
            synthetic=np.ones(self.m, bool),
            labeled=np.full(self.m, bool(naive_labels)),
            feature_names=feature_names,
        )


def _sq_distances(pool, rows):
    diff = pool[rows][:, None, :] - pool[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def knn_indices(pool, query_index, k):
    """Indices of the ``k`` nearest (Euclidean) neighbours of one pool row.

    The query row itself is excluded, but exact duplicates of it are not.
    Ties are broken by the smaller index.
    """
    pool = check_matrix(pool, "pool")
    n = len(pool)
    if not 1 <= k < n:
        raise DatasetError(f"need 1 <= k < n, got k={k}, n={n}")
    dist = _sq_distances(pool, np.array([query_index]))[0]
    dist[query_index] = np.inf
    return np.argsort(dist, kind="stable")[:k]


def _neighbour_sets(pool, rows, k):
    """Sorted-by-index k-NN sets for each of ``rows``."""
    out = np.empty((len(rows), k), dtype=np.int64)
    # keep the (chunk, n, d) difference tensor around 16M floats
    chunk = max(1, 16_000_000 // pool.size)
    for start in range(0, len(rows), chunk):
        block = rows[start : start + chunk]
        dist = _sq_distances(pool, block)
        dist[np.arange(len(block)), block] = np.inf
        nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
        out[start : start + chunk] = np.sort(nearest, axis=1)
    return out


def _draw_pairs(pool, count, k, rng, delta_law):
    """Draw ``count`` (i, h, delta) triples from one pool (row indices)."""
    n = len(pool)
    if n <= k:
        raise DatasetError(f"pool of {n} patterns is too small for k={k}")
    first = rng.integers(n, size=count)
    slot = rng.integers(k, size=count)
    delta = np.asarray(delta_law(rng, count), dtype=float)
    if np.any((delta < 0) | (delta > 1)):
        raise DatasetError("delta law produced values outside [0, 1]")
    if k == n - 1:
        # every other row is a neighbour; skip the distance computation
        second = slot + (slot >= first)
    else:
        unique, inverse = np.unique(first, return_inverse=True)
        table = _neighbour_sets(pool, unique, k)
        second = table[inverse, slot]
    return first, second, delta


def _class_quotas(counts, m):
    """Split m between classes proportionally to ``counts`` (largest remainder)."""
    total = counts[-1] + counts[1]
    raw = {c: m * counts[c] / total for c in (-1, 1)}
    quotas = {c: int(np.floor(raw[c])) for c in (-1, 1)}
    left = m - sum(quotas.values())
    for c in sorted((-1, 1), key=lambda c: (-(raw[c] - quotas[c]), c))[:left]:
        quotas[c] += 1
    return quotas


def convex_oversample(dataset, plan):
    """Generate ``plan.m`` synthetic patterns from ``dataset``.

    In class-dependent mode both seeds of a pattern come from the same
    class; in class-independent mode the whole dataset is one pool and
    labels are ignored.
    """
    dataset.require_numeric()
    rng = make_rng(plan.seed)
    delta_law = plan.delta_law or uniform_delta
    X = dataset.features

    if plan.class_mode == CLASS_INDEPENDENT:
        pools = [(0, np.arange(dataset.n), plan.m)]
    else:
        counts = dataset.class_counts()
        quotas = plan.quotas or _class_quotas(counts, plan.m)
        pools = []
        for c in (-1, 1):
            if quotas.get(c, 0) == 0:
                continue
            members = np.flatnonzero(dataset.labeled & (dataset.labels == c))
            if len(members) <= plan.k:
                raise DatasetError(
                    f"quota of {quotas[c]} for class {c:+d} is infeasible: "
                    f"{len(members)} patterns, k={plan.k}"
                )
            pools.append((c, members, quotas[c]))

    parts = []
    for cls, members, count in pools:
        first, second, delta = _draw_pairs(X[members], count, plan.k, rng, delta_law)
        i_rows, h_rows = members[first], members[second]
        parts.append((i_rows, h_rows, delta, np.full(count, cls)))

    if not parts:
        d = X.shape[1]
        empty = np.empty(0, dtype=np.int64)
        return SyntheticBatch(np.empty((0, d)), empty, empty, np.empty(0), empty)
    i_rows, h_rows, delta, cls = (np.concatenate(p) for p in zip(*parts))
    xi, xh = X[i_rows], X[h_rows]
    # same combination as xi + delta (xh - xi), but exact at delta 0 and 1
    patterns = (1.0 - delta)[:, None] * xi + delta[:, None] * xh
    return SyntheticBatch(
        patterns=patterns,
        seed_i=dataset.ids[i_rows],
        seed_h=dataset.ids[h_rows],
        delta=delta,
        seed_class=cls.astype(np.int64),
    )


def variance_factor(delta):
    """Variance multiplier ``1 - 2 delta + 2 delta**2`` of a convex combination
    of two i.i.d. normal seeds; lies in [0.5, 1]."""
    d = np.asarray(delta, dtype=float)
    if np.any((d < 0) | (d > 1)) or np.any(np.isnan(d)):
        raise ValueError(f"delta must lie in [0, 1], got {delta}")
    out = 1.0 - 2.0 * d + 2.0 * d * d
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ShrinkageReport:
    variance_factor_empirical: np.ndarray
    eigvals_original: np.ndarray
    eigvals_synthetic: np.ndarray
    eigval_ratios: np.ndarray
    principal_angles: np.ndarray
    mean_shift: np.ndarray = field(default=None)


def _sorted_eigh(X):
    cov = np.atleast_2d(np.cov(X, rowvar=False))
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    return np.clip(vals[order], 0.0, None), vecs[:, order]


def shrinkage_report(original, batch):
    """Compare covariance structure of the synthetic batch to its source.

    Eigenvectors of the two covariance matrices are paired so that the sum
    of absolute inner products is maximal; angles are reported in degrees.
    """
    X = original.features if isinstance(original, Dataset) else check_matrix(original)
    S = batch.patterns if isinstance(batch, SyntheticBatch) else check_matrix(batch)
    if len(X) < 2 or len(S) < 2 or X.shape[1] != S.shape[1]:
        raise ValueError("need two non-trivial samples of the same dimension")
    vals_o, vecs_o = _sorted_eigh(X)
    vals_s, vecs_s = _sorted_eigh(S)
    overlap = np.abs(vecs_o.T @ vecs_s)
    _, match = linear_sum_assignment(-overlap)
    cosines = np.clip(overlap[np.arange(len(match)), match], 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(vals_o > 0, vals_s[match] / vals_o, np.nan)
        var_o = X.var(axis=0, ddof=1)
        factor = np.where(var_o > 0, S.var(axis=0, ddof=1) / var_o, np.nan)
    return ShrinkageReport(
        variance_factor_empirical=factor,
        eigvals_original=vals_o,
        eigvals_synthetic=vals_s,
        eigval_ratios=ratios,
        principal_angles=np.degrees(np.arccos(cosines)),
        mean_shift=S.mean(axis=0) - X.mean(axis=0),
    )


class ConvexOverSampler(BaseEstimator):
    """Estimator wrapper around :func:`convex_oversample`.

    Parameters
    ----------
    n_synthetic : int or dict
        Total number of synthetic patterns, or per-class counts.
    k_neighbors : int
    class_mode : {"class_dependent", "class_independent"}
    random_state : int
    """

    def __init__(self, n_synthetic=None, k_neighbors=5, class_mode=CLASS_DEPENDENT,
                 random_state=0):
        self.n_synthetic = n_synthetic
        self.k_neighbors = k_neighbors
        self.class_mode = class_mode
        self.random_state = random_state

    def _plan(self, n):
        m = self.n_synthetic if self.n_synthetic is not None else n
        quotas = None
        if isinstance(m, dict):
            quotas = {int(c): int(v) for c, v in m.items()}
            quotas = {-1: quotas.get(-1, 0), 1: quotas.get(1, 0)}
            m = sum(quotas.values())
        return OversamplePlan(m=int(m), k=self.k_neighbors, class_mode=self.class_mode,
                              seed=self.random_state, quotas=quotas)

    def sample(self, X, y=None):
        """Return the :class:`SyntheticBatch` for ``(X, y)``."""
        X = check_matrix(X)
        if y is None:
            if self.class_mode == CLASS_DEPENDENT:
                raise ValueError("class-dependent over-sampling needs labels")
            y = np.ones(len(X), int)
        ds = Dataset(features=X, labels=check_signed_labels(y))
        self.batch_ = convex_oversample(ds, self._plan(len(X)))
        return self.batch_

    def fit_resample(self, X, y):
        """Original data followed by synthetic patterns labelled with their
        seeds' class (SMOTE-style naive labelling)."""
        if self.class_mode != CLASS_DEPENDENT:
            raise ValueError("naive labels are only defined for class-dependent seeds")
        X = check_matrix(X)
        batch = self.sample(X, y)
        return np.vstack([X, batch.patterns]), np.concatenate([np.asarray(y), batch.seed_class])
