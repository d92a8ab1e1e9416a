"""Semi-supervised SVM trained by label switching, and majority-vote
ensembles of such models built on independently over-sampled data.

The objective is

    1/2 ||w||^2 + lam * sum_i hinge(y_i, o_i) + lam_u * sum_j hinge(y*_j, o*_j)

over the expansion (w, b) and the labels y* of the unlabeled patterns,
with the number of positive y* fixed to ``round(r * m)``. The labels start
from the supervised SVM's ranking; then, for an unlabeled cost that grows
geometrically up to ``lam_u``, the best +1/-1 pair is switched and the SVM
retrained until no switch lowers the loss.
"""

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_is_fitted

from .dataset import Dataset
from .oversampler import CLASS_DEPENDENT, OversamplePlan, convex_oversample
from .svm import (
    KernelSpec,
    SvmModel,
    hinge_loss,
    kernel_matrix,
    objective_from_products,
    solve_dual,
    train_svm,
)
from .utils import check_matrix, check_xy, derive_seed, round_half_up

__all__ = [
    "S3vmConfig",
    "S3vmResult",
    "EnsembleModel",
    "unlabeled_loss",
    "init_labels",
    "switch_gain",
    "train_s3vm",
    "train_ensemble",
    "ensemble_predict",
    "S3VMClassifier",
    "SyntheticS3VMClassifier",
]


@dataclass(frozen=True)
class S3vmConfig:
    lambda_labeled: float = 1.0
    lambda_unlabeled: float = 1.0
    balance_ratio: float = 0.5
    anneal_start: float = 1e-5
    anneal_multiplier: float = 2.0
    kernel: KernelSpec = field(default_factory=KernelSpec)
    gain_eps: float = 1e-8
    tol: float = 1e-3

    def __post_init__(self):
        if not (self.lambda_labeled > 0 and self.lambda_unlabeled > 0):
            raise ValueError("costs must be positive")
        if not 0.0 <= self.balance_ratio <= 1.0:
            raise ValueError("balance_ratio must lie in [0, 1]")
        if not 0.0 < self.anneal_start <= 1.0 or not self.anneal_multiplier > 1.0:
            raise ValueError("annealing needs 0 < start <= 1 and multiplier > 1")
        if not self.gain_eps > 0:
            raise ValueError("gain_eps must be positive")

    def stage_costs(self):
        """Unlabeled cost of each annealing stage, ending exactly at lambda*."""
        costs = []
        c = self.anneal_start * self.lambda_unlabeled
        while c < self.lambda_unlabeled:
            costs.append(c)
            c *= self.anneal_multiplier
        costs.append(self.lambda_unlabeled)
        return costs


@dataclass(eq=False)
class S3vmResult:
    """Fitted model, inferred labels and an audit trail of the search.

    ``objective_trace[t]`` is the objective (at the cost of stage
    ``trace_stage[t]``) after the t-th retrain; ``positive_counts`` holds the
    number of +1 labels after every switch.
    """

    model: SvmModel
    synthetic_labels: np.ndarray
    objective_trace: np.ndarray
    trace_stage: np.ndarray
    stage_costs: list
    switch_count: int
    positive_counts: np.ndarray

    @property
    def objective(self):
        return float(self.objective_trace[-1]) if len(self.objective_trace) else float("nan")

    def predict(self, X):
        return self.model.predict(X)

    def to_dict(self):
        return {
            "synthetic_labels": self.synthetic_labels.tolist(),
            "objective_trace": self.objective_trace.tolist(),
            "trace_stage": self.trace_stage.tolist(),
            "stage_costs": list(self.stage_costs),
            "switch_count": self.switch_count,
        }


def unlabeled_loss(o):
    """Hinge loss under the better of the two labels: ``max(0, 1 - |o|)``."""
    out = np.maximum(0.0, 1.0 - np.abs(np.asarray(o, dtype=float)))
    return float(out) if out.ndim == 0 else out


def _top_fraction(values, r):
    values = np.asarray(values, dtype=float)
    n_pos = round_half_up(r * len(values))
    order = np.argsort(-values, kind="stable")
    labels = -np.ones(len(values), dtype=np.int64)
    labels[order[:n_pos]] = 1
    return labels


def init_labels(model, unlabeled, r):
    """+1 for the ``round(r*m)`` patterns the model scores highest (ties by
    index), -1 for the rest. ``model`` may also be a vector of decision
    values, in which case ``unlabeled`` is ignored."""
    if isinstance(model, SvmModel):
        values = model.decision_function(unlabeled)
    else:
        values = model
    return _top_fraction(values, r)


def switch_gain(o_j, o_z):
    """Loss decrease from relabelling a +1 pattern (output ``o_j``) as -1
    and a -1 pattern (output ``o_z``) as +1."""
    before = hinge_loss(1, o_j) + hinge_loss(-1, o_z)
    after = hinge_loss(-1, o_j) + hinge_loss(1, o_z)
    return before - after


def _best_switch(outputs, labels):
    """Highest-gain admissible (+1, -1) pair; gain is -inf if none exists."""
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == -1)
    if len(pos) == 0 or len(neg) == 0:
        return -1, -1, -np.inf
    o = outputs
    gain_pos = hinge_loss(1, o[pos]) - hinge_loss(-1, o[pos])
    gain_neg = hinge_loss(-1, o[neg]) - hinge_loss(1, o[neg])
    a, b = int(np.argmax(gain_pos)), int(np.argmax(gain_neg))
    return int(pos[a]), int(neg[b]), float(gain_pos[a] + gain_neg[b])


def _labeled_arrays(labeled):
    if isinstance(labeled, Dataset):
        labeled.require_numeric()
        mask = labeled.labeled
        return labeled.features[mask], labeled.labels[mask]
    X, y = labeled
    return check_xy(X, y)


def _solve(K, y, costs, config, alpha0, context):
    sol = solve_dual(K, y, costs, tol=config.tol, alpha0=alpha0)
    if not sol.converged:
        warnings.warn(f"SMO did not converge ({context})", ConvergenceWarning, stacklevel=3)
    return sol


def train_s3vm(labeled, unlabeled, config=None):
    """Fit an S3VM by annealed label switching.

    Parameters
    ----------
    labeled : Dataset or (X, y)
        Labeled patterns; both classes must be present.
    unlabeled : array of shape (m, d)
        Patterns without labels, e.g. synthetic ones. ``m = 0`` reduces to a
        plain SVM on the labeled data.
    config : S3vmConfig
    """
    config = config or S3vmConfig()
    Xl, yl = _labeled_arrays(labeled)
    if not (np.any(yl == 1) and np.any(yl == -1)):
        raise ValueError("labeled data must contain both classes")
    U = np.empty((0, Xl.shape[1])) if unlabeled is None else np.asarray(unlabeled, dtype=float)
    if U.size == 0:
        model = train_svm(Xl, yl, config.lambda_labeled, config.kernel, tol=config.tol, record=False)
        return S3vmResult(model, np.empty(0, np.int64), np.empty(0), np.empty(0, np.int64), [], 0,
                          np.empty(0, np.int64))
    U = check_matrix(U, "unlabeled")
    if U.shape[1] != Xl.shape[1]:
        raise ValueError("labeled and unlabeled data differ in dimension")

    n, m = len(Xl), len(U)
    X = np.vstack([Xl, U])
    K = kernel_matrix(config.kernel, X, X)
    yl = yl.astype(float)

    sol = _solve(K[:n, :n], yl, np.full(n, config.lambda_labeled), config, None, "initial SVM")
    outputs = K[n:, :n] @ (sol.alpha * yl) + sol.bias
    y_u = _top_fraction(outputs, config.balance_ratio).astype(float)
    y = np.concatenate([yl, y_u])
    alpha = np.concatenate([sol.alpha, np.zeros(m)])

    trace, trace_stage, positive_counts = [], [], []
    switches = 0
    stage_costs = config.stage_costs()
    for stage, cost in enumerate(stage_costs):
        costs = np.concatenate([np.full(n, config.lambda_labeled), np.full(m, cost)])
        sol = _solve(K, y, costs, config, alpha, f"stage {stage}")
        alpha = sol.alpha
        coef, bias = alpha * y, sol.bias
        # the solver gradient is y * (K @ coef) - 1
        Kc = y * (sol.gradient + 1.0)
        obj = objective_from_products(Kc, coef, bias, y, costs)
        trace.append(obj)
        trace_stage.append(stage)
        while True:
            outputs = Kc[n:] + bias
            j, z, gain = _best_switch(outputs, y_u)
            if not gain > config.gain_eps:
                break
            y_u[j], y_u[z] = -1.0, 1.0
            y[n + j], y[n + z] = -1.0, 1.0
            # swapping the two dual values keeps y^T alpha = 0 and the box
            alpha[n + j], alpha[n + z] = alpha[n + z], alpha[n + j]
            switches += 1
            positive_counts.append(int(np.sum(y_u == 1)))

            sol = _solve(K, y, costs, config, alpha, f"stage {stage}, switch {switches}")
            alpha = sol.alpha
            new_coef, new_bias = alpha * y, sol.bias
            new_Kc = y * (sol.gradient + 1.0)
            new_obj = objective_from_products(new_Kc, new_coef, new_bias, y, costs)
            # the previous expansion is always a candidate for the new labels
            old_obj = objective_from_products(Kc, coef, bias, y, costs)
            if new_obj <= old_obj:
                coef, bias, Kc, obj = new_coef, new_bias, new_Kc, new_obj
            else:
                obj = old_obj
            trace.append(obj)
            trace_stage.append(stage)

    support = np.flatnonzero(coef != 0)
    model = SvmModel(
        support_vectors=X[support],
        dual_coef=coef[support],
        bias=float(bias),
        kernel=config.kernel,
        per_pattern_costs=costs,
        alpha=np.abs(coef),
        labels=y,
        support=support,
        converged=True,
    )
    return S3vmResult(
        model=model,
        synthetic_labels=y_u.astype(np.int64),
        objective_trace=np.asarray(trace),
        trace_stage=np.asarray(trace_stage, dtype=np.int64),
        stage_costs=stage_costs,
        switch_count=switches,
        positive_counts=np.asarray(positive_counts, dtype=np.int64),
    )


# --------------------------------------------------------------------------
# Ensembles


@dataclass(eq=False)
class EnsembleModel:
    """Members are ``(over-sampling seed, S3vmResult)`` pairs."""

    members: list

    @property
    def member_count(self):
        return len(self.members)

    def predict(self, X):
        return ensemble_predict(self, X)

    def member_predictions(self, X):
        return np.array([res.predict(X) for _, res in self.members])


def train_ensemble(labeled, plan, config=None, members=51):
    """Train ``members`` S3VMs, each on its own over-sampled batch used as
    unlabeled data. Member ``j`` over-samples with a seed derived from
    ``(plan.seed, j)``."""
    if members < 1 or members % 2 == 0:
        raise ValueError(f"member count must be odd, got {members}")
    if not isinstance(labeled, Dataset):
        X, y = _labeled_arrays(labeled)
        labeled = Dataset(features=X, labels=y)
    out = []
    for j in range(members):
        seed = derive_seed(plan.seed, "member", j)
        try:
            batch = convex_oversample(labeled, replace(plan, seed=seed))
            result = train_s3vm(labeled, batch.patterns, config)
        except Exception as exc:
            raise RuntimeError(f"ensemble member {j} failed: {exc}") from exc
        out.append((seed, result))
    return EnsembleModel(out)


def ensemble_predict(ensemble, X):
    """Majority vote of the members (an odd count, so never tied)."""
    votes = ensemble.member_predictions(check_matrix(X)).sum(axis=0)
    return np.where(votes > 0, 1, -1)


# --------------------------------------------------------------------------
# scikit-learn style estimators


class _SignedClassesMixin:
    def _encode(self, y):
        y = np.asarray(y)
        self.classes_ = np.unique(y)
        if len(self.classes_) != 2:
            raise ValueError(f"need exactly two classes, got {self.classes_}")
        return np.where(y == self.classes_[1], 1, -1)

    def _config(self, y_signed):
        r = self.balance_ratio
        if r is None:
            r = float(np.mean(y_signed == 1))
        return S3vmConfig(
            lambda_labeled=self.C,
            lambda_unlabeled=self.C_unlabeled,
            balance_ratio=r,
            anneal_start=self.anneal_start,
            anneal_multiplier=self.anneal_multiplier,
            kernel=KernelSpec(self.kernel, self.gamma),
            tol=self.tol,
        )

    def predict(self, X):
        check_is_fitted(self, "classes_")
        signed = self._predict_signed(check_matrix(X))
        return self.classes_[(signed > 0).astype(int)]


class S3VMClassifier(_SignedClassesMixin, ClassifierMixin, BaseEstimator):
    """Label-switching S3VM.

    Parameters
    ----------
    C, C_unlabeled : float
        Costs of the labeled and unlabeled hinge terms.
    kernel, gamma : kernel definition
    balance_ratio : float or None
        Fraction of unlabeled patterns assigned to ``classes_[1]``; ``None``
        uses the labeled class ratio.
    """

    def __init__(self, C=1.0, C_unlabeled=1.0, kernel="rbf", gamma=1.0, balance_ratio=None,
                 anneal_start=1e-5, anneal_multiplier=2.0, tol=1e-3):
        self.C = C
        self.C_unlabeled = C_unlabeled
        self.kernel = kernel
        self.gamma = gamma
        self.balance_ratio = balance_ratio
        self.anneal_start = anneal_start
        self.anneal_multiplier = anneal_multiplier
        self.tol = tol

    def fit(self, X, y, X_unlabeled=None):
        X = check_matrix(X)
        signed = self._encode(y)
        self.result_ = train_s3vm((X, signed), X_unlabeled, self._config(signed))
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "result_")
        return self.result_.model.decision_function(X)

    def _predict_signed(self, X):
        return self.result_.model.predict(X)

    @property
    def transduction_(self):
        check_is_fitted(self, "result_")
        return self.classes_[(self.result_.synthetic_labels > 0).astype(int)]


class SyntheticS3VMClassifier(_SignedClassesMixin, ClassifierMixin, BaseEstimator):
    """Over-sample the training data by convex combinations and use the
    synthetic patterns as unlabeled data of an S3VM (or of an odd-sized
    majority-vote ensemble of S3VMs when ``n_members > 1``).

    ``n_synthetic`` is a total count, a ``{class: count}`` dict keyed by the
    original class labels, or ``None`` for as many patterns as ``X`` has.
    """

    def __init__(self, n_synthetic=None, k_neighbors=5, class_mode=CLASS_DEPENDENT, n_members=1,
                 C=1.0, C_unlabeled=1.0, kernel="rbf", gamma=1.0, balance_ratio=None,
                 anneal_start=1e-5, anneal_multiplier=2.0, tol=1e-3, random_state=0):
        self.n_synthetic = n_synthetic
        self.k_neighbors = k_neighbors
        self.class_mode = class_mode
        self.n_members = n_members
        self.C = C
        self.C_unlabeled = C_unlabeled
        self.kernel = kernel
        self.gamma = gamma
        self.balance_ratio = balance_ratio
        self.anneal_start = anneal_start
        self.anneal_multiplier = anneal_multiplier
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, y):
        X = check_matrix(X)
        signed = self._encode(y)
        m, quotas = self.n_synthetic, None
        if m is None:
            m = len(X)
        if isinstance(m, dict):
            quotas = {(1 if c == self.classes_[1] else -1): int(v) for c, v in m.items()}
            quotas = {-1: quotas.get(-1, 0), 1: quotas.get(1, 0)}
            m = sum(quotas.values())
        plan = OversamplePlan(m=int(m), k=self.k_neighbors, class_mode=self.class_mode,
                              seed=self.random_state, quotas=quotas)
        labeled = Dataset(features=X, labels=signed)
        self.ensemble_ = train_ensemble(labeled, plan, self._config(signed), self.n_members)
        self.n_features_in_ = X.shape[1]
        return self

    def _predict_signed(self, X):
        return ensemble_predict(self.ensemble_, X)
