"""Imbalance-aware classification metrics and cross-dataset rank statistics."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

__all__ = [
    "MetricsReport",
    "RankTable",
    "FriedmanResult",
    "metrics",
    "mean_ranks",
    "friedman_test",
    "rank_table",
    "betainc_regularized",
    "f_cdf",
    "f_ppf",
]


@dataclass(frozen=True)
class MetricsReport:
    """Accuracy, mean sensitivity (MAcc) and geometric mean of sensitivities.

    A class absent from ``y_true`` gets sensitivity 1 and the matching
    ``*_undefined`` flag is set.
    """

    acc: float
    macc: float
    gm: float
    s_pos: float
    s_neg: float
    tp: int
    fp: int
    tn: int
    fn: int
    positive_class: int = 1
    s_pos_undefined: bool = False
    s_neg_undefined: bool = False

    @property
    def n(self):
        return self.tp + self.fp + self.tn + self.fn


def metrics(y_true, y_pred, positive_class=1):
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred differ in length")
    if y_true.size == 0:
        raise ValueError("cannot score an empty prediction")
    pos_true = y_true == positive_class
    pos_pred = y_pred == positive_class
    tp = int(np.sum(pos_true & pos_pred))
    fn = int(np.sum(pos_true & ~pos_pred))
    tn = int(np.sum(~pos_true & ~pos_pred))
    fp = int(np.sum(~pos_true & pos_pred))
    s_pos = tp / (tp + fn) if tp + fn else 1.0
    s_neg = tn / (tn + fp) if tn + fp else 1.0
    return MetricsReport(
        acc=(tp + tn) / y_true.size,
        macc=(s_pos + s_neg) / 2,
        gm=math.sqrt(s_pos * s_neg),
        s_pos=s_pos,
        s_neg=s_neg,
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        positive_class=positive_class,
        s_pos_undefined=tp + fn == 0,
        s_neg_undefined=tn + fp == 0,
    )


# --------------------------------------------------------------------------
# F distribution


def _betacf(a, b, x, max_iter=500, eps=1e-15):
    """Continued fraction of the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc_regularized(a, b, x):
    """Regularized incomplete beta ``I_x(a, b)``."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return float(x)
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    # the fraction converges fast only below the mean; use symmetry above it
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def f_cdf(x, dfn, dfd):
    if x <= 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    return betainc_regularized(dfn / 2.0, dfd / 2.0, dfn * x / (dfn * x + dfd))


def f_ppf(p, dfn, dfd, xtol=1e-9):
    """Quantile of the F distribution by bisection on :func:`f_cdf`."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    lo, hi = 0.0, 1.0
    while f_cdf(hi, dfn, dfd) < p:
        lo, hi = hi, hi * 2.0
    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        if f_cdf(mid, dfn, dfd) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# --------------------------------------------------------------------------
# Ranks and the Friedman / Iman-Davenport test


@dataclass(frozen=True)
class FriedmanResult:
    chi2: float
    f_value: float
    critical_f: float
    alpha: float
    reject: bool
    n_datasets: int
    n_methods: int


@dataclass(frozen=True)
class RankTable:
    """Scores and ranks (1 = best, ties averaged) of methods over datasets."""

    scores: np.ndarray
    ranks: np.ndarray
    mean_ranks: np.ndarray
    methods: tuple = ()
    datasets: tuple = ()
    friedman: FriedmanResult = None

    @property
    def friedman_chi2(self):
        return None if self.friedman is None else self.friedman.chi2

    @property
    def iman_davenport_f(self):
        return None if self.friedman is None else self.friedman.f_value

    @property
    def critical_f(self):
        return None if self.friedman is None else self.friedman.critical_f


def mean_ranks(scores, higher_is_better=True, methods=(), datasets=()):
    """Rank the methods (columns) within each dataset (row) and average."""
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 2:
        raise ValueError("scores must be a datasets x methods matrix")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    keyed = -scores if higher_is_better else scores
    ranks = rankdata(keyed, method="average", axis=1)
    return RankTable(
        scores=scores,
        ranks=ranks,
        mean_ranks=ranks.mean(axis=0),
        methods=tuple(methods),
        datasets=tuple(datasets),
    )


def friedman_test(table, alpha=0.05):
    """Friedman chi-square and its Iman-Davenport F correction.

    ``table`` is a :class:`RankTable` or a datasets x methods rank matrix.
    The critical value is the ``1 - alpha`` quantile of F with
    ``(k - 1, (k - 1)(N - 1))`` degrees of freedom.
    """
    ranks = table.ranks if isinstance(table, RankTable) else np.asarray(table, dtype=float)
    n, k = ranks.shape
    if n < 2 or k < 3:
        raise ValueError(f"need at least 2 datasets and 3 methods, got {n} x {k}")
    r = ranks.mean(axis=0)
    chi2 = 12.0 * n / (k * (k + 1)) * (np.sum(r**2) - k * (k + 1) ** 2 / 4.0)
    chi2 = max(chi2, 0.0)
    denom = n * (k - 1) - chi2
    f_value = math.inf if denom <= 1e-12 * n * k else (n - 1) * chi2 / denom
    critical = f_ppf(1.0 - alpha, k - 1, (k - 1) * (n - 1))
    return FriedmanResult(
        chi2=float(chi2),
        f_value=float(f_value),
        critical_f=critical,
        alpha=alpha,
        reject=bool(f_value > critical),
        n_datasets=n,
        n_methods=k,
    )


def rank_table(scores, higher_is_better=True, alpha=0.05, methods=(), datasets=()):
    """:func:`mean_ranks` plus the Friedman test when it is defined."""
    table = mean_ranks(scores, higher_is_better, methods, datasets)
    n, k = table.ranks.shape
    if n >= 2 and k >= 3:
        table = RankTable(**{**table.__dict__, "friedman": friedman_test(table, alpha)})
    return table
