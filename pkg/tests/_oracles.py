"""Independent reference implementations used only by the tests."""

import itertools

import numpy as np
from cvxopt import matrix, solvers

from synthssl.s3vm import S3vmConfig
from synthssl.svm import KernelSpec, kernel_matrix

solvers.options.update(show_progress=False, abstol=1e-10, reltol=1e-10, feastol=1e-10)


def knn_by_sort(pool, q, k):
    """Neighbours of row ``q`` by a stable sort of squared distances."""
    d = np.sum((pool - pool[q]) ** 2, axis=1)
    order = [i for i in sorted(range(len(pool)), key=lambda i: (d[i], i)) if i != q]
    return order[:k]


def svm_optimum(K, y, costs):
    """Optimal soft-margin objective 0.5 b'Kb + sum C_i hinge, via the dual QP.

    By strong duality the primal minimum equals the dual maximum
    sum(a) - 0.5 a'Qa, so the bias never has to be recovered.
    """
    n = len(y)
    Q = np.outer(y, y) * K + 1e-12 * np.eye(n)
    P, q = matrix(Q), matrix(-np.ones(n))
    G = matrix(np.vstack([-np.eye(n), np.eye(n)]))
    h = matrix(np.r_[np.zeros(n), costs])
    A, b = matrix(y.reshape(1, -1).astype(float)), matrix(0.0)
    a = np.ravel(solvers.qp(P, q, G, h, A, b)["x"])
    return float(a.sum() - 0.5 * a @ Q @ a)


def brute_force_s3vm(Xl, yl, U, config):
    """Minimum objective over every labeling of ``U`` with round-half-up(r*m)
    positives, each solved to optimality."""
    m = len(U)
    n_pos = int(np.floor(config.balance_ratio * m + 0.5 + 1e-9))
    X = np.vstack([Xl, U])
    K = kernel_matrix(config.kernel, X, X)
    costs = np.r_[np.full(len(Xl), config.lambda_labeled), np.full(m, config.lambda_unlabeled)]
    best, best_labels = np.inf, None
    for pos in itertools.combinations(range(m), n_pos):
        yu = -np.ones(m)
        yu[list(pos)] = 1
        value = svm_optimum(K, np.r_[yl, yu].astype(float), costs)
        if value < best:
            best, best_labels = value, yu
    return best, best_labels


def random_instance(rng):
    """Small two-cluster problem: 2-4 labeled and 2-10 unlabeled points,
    r equal to the true positive share of the unlabeled points."""
    nl = int(rng.integers(2, 5))
    m = int(rng.integers(2, 11))
    yl = np.r_[[-1, 1], rng.choice([-1, 1], nl - 2)]
    yu = rng.choice([-1, 1], m)
    if len(set(yu)) < 2:
        yu[0] = -yu[0]
    Xl = rng.normal(size=(nl, 2))
    Xl[:, 0] += 1.5 * yl
    U = rng.normal(size=(m, 2))
    U[:, 0] += 1.5 * yu
    kernel = KernelSpec("linear") if rng.random() < 0.5 else KernelSpec("rbf", 0.5)
    config = S3vmConfig(kernel=kernel, balance_ratio=float(np.mean(yu == 1)), tol=1e-6)
    return Xl, yl.astype(float), U, config
