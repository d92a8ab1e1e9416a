"""Soft-margin kernel SVM trained by sequential minimal optimization.

The dual solved here is

    min_a  1/2 a^T Q a - e^T a,   0 <= a_i <= C_i,   y^T a = 0,

with ``Q_ij = y_i y_j K(x_i, x_j)`` and one box bound per pattern, so that
labeled and unlabeled patterns can carry different costs in the same
solve. Pairs are chosen by the maximal-violating-pair rule with second
order information for the second index; the stopping rule is the usual
KKT gap ``max_up(-yG) - min_low(-yG) < tol``.
"""

import warnings
from dataclasses import dataclass, field

import numba as nb
import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_is_fitted

from .utils import check_matrix, check_xy

__all__ = [
    "KernelSpec",
    "SvmModel",
    "DualSolution",
    "kernel_eval",
    "kernel_matrix",
    "hinge_loss",
    "solve_dual",
    "train_svm",
    "decision_value",
    "predict",
    "primal_objective",
    "KernelSVC",
]

MODEL_FORMAT = "synthssl-svm 1"
FULL_CACHE_LIMIT = 4000


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "rbf"
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "rbf"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.kind == "rbf" and not self.gamma > 0:
            raise ValueError("rbf kernel needs gamma > 0")


def kernel_matrix(spec, A, B):
    """Gram matrix between the rows of ``A`` and ``B``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    inner = A @ B.T
    if spec.kind == "linear":
        return inner
    sq = np.einsum("ij,ij->i", A, A)[:, None] + np.einsum("ij,ij->i", B, B)[None, :] - 2 * inner
    return np.exp(-spec.gamma * np.maximum(sq, 0.0))


def kernel_eval(spec, x, z):
    x = np.asarray(x, dtype=float).ravel()
    z = np.asarray(z, dtype=float).ravel()
    if x.shape != z.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {z.shape}")
    if spec.kind == "linear":
        return float(x @ z)
    diff = x - z
    return float(np.exp(-spec.gamma * (diff @ diff)))


def hinge_loss(y, o):
    """``max(0, 1 - y*o)``; vectorized."""
    out = np.maximum(0.0, 1.0 - np.asarray(y) * np.asarray(o, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# SMO


@nb.njit(cache=True)
def _smo_loop(K, y, C, alpha, G, tol, max_iter, trace):
    # K is symmetric; only rows are read so memory access stays contiguous
    n = y.shape[0]
    diag = np.empty(n)
    for t in range(n):
        diag[t] = K[t, t]
    record = trace.shape[0] > 1
    if record:
        acc = 0.0
        for t in range(n):
            acc += alpha[t] * (G[t] - 1.0)
        trace[0] = 0.5 * acc
    it = 0
    while it < max_iter:
        gmax = -np.inf
        i = -1
        for t in range(n):
            if (y[t] > 0 and alpha[t] < C[t]) or (y[t] < 0 and alpha[t] > 0.0):
                v = -y[t] * G[t]
                if v > gmax:
                    gmax = v
                    i = t
        if i < 0:
            return it, True

        # the stopping gap is gathered in the same pass as the choice of j
        gmin = np.inf
        j = -1
        best = np.inf
        kii = diag[i]
        Ki = K[i]
        for t in range(n):
            if (y[t] > 0 and alpha[t] > 0.0) or (y[t] < 0 and alpha[t] < C[t]):
                v = -y[t] * G[t]
                if v < gmin:
                    gmin = v
                b = gmax - v
                if b > 0.0:
                    a = kii + diag[t] - 2.0 * Ki[t]
                    if a <= 0.0:
                        a = 1e-12
                    score = -(b * b) / a
                    if score < best:
                        best = score
                        j = t
        if gmax - gmin < tol or j < 0:
            return it, True

        ai_old = alpha[i]
        aj_old = alpha[j]
        ci = C[i]
        cj = C[j]
        ai = ai_old
        aj = aj_old
        if y[i] != y[j]:
            quad = kii + diag[j] + 2.0 * (y[i] * y[j] * Ki[j])
            if quad <= 0.0:
                quad = 1e-12
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            ai += delta
            aj += delta
            if diff > 0.0:
                if aj < 0.0:
                    aj = 0.0
                    ai = diff
            else:
                if ai < 0.0:
                    ai = 0.0
                    aj = -diff
            if diff > ci - cj:
                if ai > ci:
                    ai = ci
                    aj = ci - diff
            else:
                if aj > cj:
                    aj = cj
                    ai = cj + diff
        else:
            quad = kii + diag[j] - 2.0 * (y[i] * y[j] * Ki[j])
            if quad <= 0.0:
                quad = 1e-12
            delta = (G[i] - G[j]) / quad
            total = ai + aj
            ai -= delta
            aj += delta
            if total > ci:
                if ai > ci:
                    ai = ci
                    aj = total - ci
            else:
                if aj < 0.0:
                    aj = 0.0
                    ai = total
            if total > cj:
                if aj > cj:
                    aj = cj
                    ai = total - cj
            else:
                if ai < 0.0:
                    ai = 0.0
                    aj = total
        alpha[i] = ai
        alpha[j] = aj
        dai = (ai - ai_old) * y[i]
        daj = (aj - aj_old) * y[j]
        Kj = K[j]
        for t in range(n):
            G[t] += y[t] * (Ki[t] * dai + Kj[t] * daj)
        it += 1
        if record and it < trace.shape[0]:
            acc = 0.0
            for t in range(n):
                acc += alpha[t] * (G[t] - 1.0)
            trace[it] = 0.5 * acc
    return it, False


def _bias(y, C, alpha, G):
    yG = y * G
    upper = alpha >= C
    lower = alpha <= 0
    free = ~(upper | lower)
    if free.any():
        rho = yG[free].mean()
    else:
        ub_mask = (upper & (y < 0)) | (lower & (y > 0))
        lb_mask = (upper & (y > 0)) | (lower & (y < 0))
        ub = yG[ub_mask].min() if ub_mask.any() else np.inf
        lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
        if np.isfinite(ub) and np.isfinite(lb):
            rho = (ub + lb) / 2
        else:
            rho = ub if np.isfinite(ub) else (lb if np.isfinite(lb) else 0.0)
    return -float(rho)


@dataclass
class DualSolution:
    alpha: np.ndarray
    bias: float
    n_iter: int
    converged: bool
    objective_trace: np.ndarray = field(repr=False, default=None)
    gradient: np.ndarray = field(repr=False, default=None)

    def coef(self, y):
        return self.alpha * y


def solve_dual(K, y, costs, tol=1e-3, max_iter=None, alpha0=None, record=False):
    """Run SMO on a precomputed Gram matrix.

    ``alpha0`` warm-starts the solver and must be feasible for ``costs``.
    With ``record`` the dual objective (minimisation form) after every
    iteration is returned in ``objective_trace``.
    """
    y = np.asarray(y, dtype=float)
    C = np.asarray(costs, dtype=float)
    n = len(y)
    if max_iter is None:
        max_iter = max(100_000, 100 * n)
    K = np.ascontiguousarray(K, dtype=float)
    if alpha0 is None:
        alpha = np.zeros(n)
        G = -np.ones(n)
    else:
        alpha = np.array(alpha0, dtype=float)
        slack = 1e-12 * max(1.0, C.max())
        if np.any(alpha < -slack) or np.any(alpha > C + slack) or abs(alpha @ y) > 1e-8 * max(1.0, C.max()):
            raise ValueError("warm start is not feasible")
        # absorb rounding left over from earlier solver updates
        alpha = np.clip(alpha, 0.0, C)
        G = y * (K @ (alpha * y)) - 1.0
    trace = np.empty(max_iter + 1 if record else 1)
    n_iter, converged = _smo_loop(K, y, C, alpha, G, float(tol), int(max_iter), trace)
    return DualSolution(
        alpha=alpha,
        bias=_bias(y, C, alpha, G),
        n_iter=n_iter,
        converged=converged,
        objective_trace=trace[: n_iter + 1] if record else None,
        gradient=G,
    )


@dataclass(eq=False)
class SvmModel:
    """A trained kernel SVM.

    ``dual_coef`` holds ``alpha_i * y_i`` for each support vector;
    ``alpha``, ``labels`` and ``costs`` refer to every training pattern.
    """

    support_vectors: np.ndarray
    dual_coef: np.ndarray
    bias: float
    kernel: KernelSpec
    per_pattern_costs: np.ndarray = None
    alpha: np.ndarray = None
    labels: np.ndarray = None
    support: np.ndarray = None
    converged: bool = True
    n_iter: int = 0
    objective_trace: np.ndarray = field(default=None, repr=False)

    @property
    def dual_objective_trace(self):
        """Dual objective (maximisation form) after each SMO iteration."""
        return None if self.objective_trace is None else -self.objective_trace

    def decision_function(self, X):
        X = check_matrix(X)
        if X.shape[1] != self.support_vectors.shape[1]:
            raise ValueError(
                f"dimension mismatch: model has {self.support_vectors.shape[1]} features, "
                f"input has {X.shape[1]}"
            )
        if len(self.dual_coef) == 0:
            return np.full(len(X), self.bias)
        return kernel_matrix(self.kernel, X, self.support_vectors) @ self.dual_coef + self.bias

    def predict(self, X):
        return np.where(self.decision_function(X) >= 0, 1, -1)

    # flat text serialization -------------------------------------------------

    def to_text(self):
        lines = [
            MODEL_FORMAT,
            f"kernel {self.kernel.kind} {self.kernel.gamma!r}",
            f"bias {self.bias!r}",
            f"support {len(self.dual_coef)} {self.support_vectors.shape[1]}",
        ]
        for c, row in zip(self.dual_coef, self.support_vectors):
            lines.append(" ".join([repr(float(c))] + [repr(float(v)) for v in row]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0].strip() != MODEL_FORMAT:
            raise ValueError(f"not a {MODEL_FORMAT!r} model")
        _, kind, gamma = lines[1].split()
        bias = float(lines[2].split()[1])
        _, n_sv, d = lines[3].split()
        n_sv, d = int(n_sv), int(d)
        rows = np.array([[float(v) for v in ln.split()] for ln in lines[4 : 4 + n_sv]])
        rows = rows.reshape(n_sv, d + 1)
        return cls(
            support_vectors=rows[:, 1:],
            dual_coef=rows[:, 0],
            bias=bias,
            kernel=KernelSpec(kind, float(gamma)),
        )


def _model_from_solution(X, y, costs, kernel, sol, sv_eps=0.0):
    support = np.flatnonzero(sol.alpha > sv_eps)
    return SvmModel(
        support_vectors=X[support],
        dual_coef=(sol.alpha * y)[support],
        bias=sol.bias,
        kernel=kernel,
        per_pattern_costs=np.asarray(costs, dtype=float),
        alpha=sol.alpha,
        labels=y,
        support=support,
        converged=sol.converged,
        n_iter=sol.n_iter,
        objective_trace=sol.objective_trace,
    )


def train_svm(X, y, costs=1.0, kernel=None, tol=1e-3, max_iter=None, record=True,
              gram=None):
    """Train a soft-margin SVM with per-pattern costs.

    Parameters
    ----------
    X : array of shape (n, d)
    y : array of -1/+1
    costs : float or array of shape (n,)
        Upper bound of each dual variable.
    kernel : KernelSpec, default rbf with gamma=1
    tol : float
        KKT gap at which SMO stops.
    max_iter : int, optional
        SMO iteration budget. When exhausted a ``ConvergenceWarning`` is
        emitted and the returned model has ``converged=False``.
    gram : array, optional
        Precomputed kernel matrix of ``X``.
    """
    X, y = check_xy(X, y)
    if not (np.any(y == 1) and np.any(y == -1)):
        raise ValueError("training data must contain both classes")
    kernel = kernel or KernelSpec()
    costs = np.broadcast_to(np.asarray(costs, dtype=float), y.shape).copy()
    if np.any(costs <= 0):
        raise ValueError("costs must be positive")
    K = kernel_matrix(kernel, X, X) if gram is None else gram
    sol = solve_dual(K, y, costs, tol=tol, max_iter=max_iter, record=record)
    if not sol.converged:
        warnings.warn(
            f"SMO stopped after {sol.n_iter} iterations without reaching tol={tol}",
            ConvergenceWarning,
            stacklevel=2,
        )
    return _model_from_solution(X, y.astype(float), costs, kernel, sol)


def decision_value(model, x):
    """``sum_i alpha_i y_i k(x_i, x) + b`` for one vector or a batch."""
    x = np.asarray(x, dtype=float)
    out = model.decision_function(x.reshape(1, -1) if x.ndim == 1 else x)
    return float(out[0]) if x.ndim == 1 else out


def predict(model, X):
    """Sign of the decision value; exactly zero maps to +1."""
    return model.predict(X)


def primal_objective(K, coef, bias, y, costs):
    """``1/2 ||w||^2 + sum_i C_i hinge(y_i, o_i)`` for a kernel expansion
    ``w = sum_i coef_i phi(x_i)`` over the same patterns as ``K``."""
    return objective_from_products(K @ coef, coef, bias, y, costs)


def objective_from_products(Kc, coef, bias, y, costs):
    """:func:`primal_objective` given ``Kc = K @ coef`` already computed."""
    return float(0.5 * coef @ Kc + np.sum(costs * np.maximum(0.0, 1.0 - y * (Kc + bias))))


class KernelSVC(ClassifierMixin, BaseEstimator):
    """Binary kernel SVM with the scikit-learn estimator interface.

    Parameters
    ----------
    C : float
        Cost of the hinge loss; scaled per sample by ``sample_weight``.
    kernel : {"rbf", "linear"}
    gamma : float
        RBF width, ``k(x, z) = exp(-gamma ||x - z||^2)``.
    tol : float
    max_iter : int or None
    """

    def __init__(self, C=1.0, kernel="rbf", gamma=1.0, tol=1e-3, max_iter=None):
        self.C = C
        self.kernel = kernel
        self.gamma = gamma
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y, sample_weight=None):
        X = check_matrix(X)
        y = np.asarray(y)
        self.classes_ = np.unique(y)
        if len(self.classes_) != 2:
            raise ValueError(f"need exactly two classes, got {self.classes_}")
        signed = np.where(y == self.classes_[1], 1, -1)
        costs = self.C * (np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight))
        self.model_ = train_svm(X, signed, costs, KernelSpec(self.kernel, self.gamma),
                                tol=self.tol, max_iter=self.max_iter, record=False)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return self.model_.decision_function(X)

    def predict(self, X):
        return self.classes_[(self.decision_function(X) >= 0).astype(int)]
