import math
import warnings

import numpy as np
import pytest
from _oracles import svm_optimum
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.exceptions import ConvergenceWarning
from sklearn.svm import SVC

from synthssl.svm import (
    KernelSpec,
    KernelSVC,
    SvmModel,
    decision_value,
    hinge_loss,
    kernel_eval,
    kernel_matrix,
    predict,
    primal_objective,
    solve_dual,
    train_svm,
)

LINEAR = KernelSpec("linear")


def blobs(n, seed, gap=3.0, d=2):
    rng = np.random.default_rng(seed)
    y = np.repeat([-1.0, 1.0], n // 2)
    X = rng.normal(scale=0.5, size=(n, d))
    X[:, 0] += gap / 2 * y
    return X, y


@pytest.fixture(scope="module")
def one_d():
    return train_svm([[0.0], [2.0]], [-1, 1], 1e3, LINEAR)


class TestKernels:
    def test_rbf_self(self):
        assert kernel_eval(KernelSpec("rbf", 3.0), [1, 2, 3], [1, 2, 3]) == 1.0

    def test_linear(self):
        assert kernel_eval(LINEAR, [1, 2], [3, 4]) == 11.0

    def test_rbf_ln2(self):
        z = [math.sqrt(math.log(2)), 0.0]
        assert kernel_eval(KernelSpec("rbf", 1.0), [0, 0], z) == pytest.approx(0.5, abs=1e-15)

    def test_mismatch(self):
        with pytest.raises(ValueError):
            kernel_eval(LINEAR, [1, 2], [1, 2, 3])

    def test_matrix_matches_pointwise(self):
        rng = np.random.default_rng(0)
        A, B = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
        spec = KernelSpec("rbf", 0.7)
        K = kernel_matrix(spec, A, B)
        for i in range(4):
            for j in range(5):
                assert K[i, j] == pytest.approx(kernel_eval(spec, A[i], B[j]), rel=1e-12)

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            KernelSpec("rbf", 0.0)
        with pytest.raises(ValueError):
            KernelSpec("poly")


@pytest.mark.parametrize("y, o, expected", [(1, 2, 0.0), (1, 0, 1.0), (-1, 0.5, 1.5)])
def test_hinge(y, o, expected):
    assert hinge_loss(y, o) == expected


class TestAnalyticMargin:
    def test_boundary_and_margin(self, one_d):
        assert decision_value(one_d, [1.0]) == pytest.approx(0.0, abs=1e-3)
        assert decision_value(one_d, [0.0]) == pytest.approx(-1.0, abs=1e-3)
        assert decision_value(one_d, [2.0]) == pytest.approx(1.0, abs=1e-3)
        w = float(one_d.dual_coef @ one_d.support_vectors[:, 0])
        assert w == pytest.approx(1.0, abs=1e-3)

    def test_sign_flip_at_one(self, one_d):
        lo, hi = 0.0, 2.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if decision_value(one_d, [mid]) < 0 else (lo, mid)
        assert lo == pytest.approx(1.0, abs=1e-3)

    def test_tie_predicts_positive(self):
        model = SvmModel(support_vectors=np.zeros((1, 1)), dual_coef=np.zeros(1), bias=0.0, kernel=LINEAR)
        assert predict(model, [[5.0]]).tolist() == [1]

    def test_batch_equals_rows(self, one_d):
        X = np.linspace(-1, 3, 9)[:, None]
        assert predict(one_d, X).tolist() == [int(predict(one_d, x[None])[0]) for x in X]


def test_conflicting_duplicates_hit_the_box():
    model = train_svm([[1.0], [1.0], [0.0], [3.0]], [-1, 1, -1, 1], [0.1, 0.1, 10, 10], LINEAR)
    np.testing.assert_allclose(model.alpha[:2], 0.1, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_separable_blobs_fit_perfectly(seed):
    X, y = blobs(40, seed)
    model = train_svm(X, y, 10.0, KernelSpec("rbf", 1.0))
    assert np.all(model.predict(X) == y)


@given(st.integers(0, 2**32 - 1), st.sampled_from([0.1, 1.0, 10.0]), st.booleans())
@settings(max_examples=30, deadline=None)
def test_kkt_and_feasibility(seed, C, linear):
    X, y = blobs(30, seed, gap=1.0)
    tol = 1e-3
    kernel = LINEAR if linear else KernelSpec("rbf", 0.5)
    model = train_svm(X, y, C, kernel, tol=tol)
    a = model.alpha
    assert np.all(a >= 0) and np.all(a <= C + 1e-12)
    assert abs(a @ y) < 1e-6
    o = model.decision_function(X)
    free = (a > 1e-8) & (a < C - 1e-8)
    assert np.all(np.abs(y[free] * o[free] - 1) <= 10 * tol)
    assert np.all(y[a <= 1e-12] * o[a <= 1e-12] >= 1 - 10 * tol)
    assert np.all(y[a >= C - 1e-12] * o[a >= C - 1e-12] <= 1 + 10 * tol)
    trace = model.dual_objective_trace
    assert np.all(np.diff(trace) >= -1e-12)


@pytest.mark.parametrize("seed", range(8))
def test_objective_matches_qp_oracle(seed):
    X, y = blobs(26, seed, gap=1.0)
    costs = np.random.default_rng(seed).uniform(0.2, 5.0, size=26)
    kernel = KernelSpec("rbf", 0.8)
    model = train_svm(X, y, costs, kernel, tol=1e-6)
    K = kernel_matrix(kernel, X, X)
    coef = model.alpha * y
    ours = primal_objective(K, coef, model.bias, y, costs)
    assert ours == pytest.approx(svm_optimum(K, y, costs), rel=1e-4)


@pytest.mark.parametrize("seed", range(3))
def test_matches_libsvm(seed):
    X, y = blobs(60, seed, gap=1.0)
    ours = train_svm(X, y, 1.0, KernelSpec("rbf", 0.5), tol=1e-5)
    ref = SVC(C=1.0, gamma=0.5, tol=1e-5).fit(X, y)
    grid = np.random.default_rng(seed).normal(size=(50, 2))
    np.testing.assert_allclose(ours.decision_function(grid), ref.decision_function(grid), atol=2e-3)


@pytest.mark.parametrize("seed", range(5))
def test_cost_scaling_keeps_separable_fit(seed):
    X, y = blobs(30, seed)
    accs = [np.mean(train_svm(X, y, C, LINEAR).predict(X) == y) for C in (0.1, 1.0, 10.0, 100.0)]
    assert all(b >= a for a, b in zip(accs, accs[1:]))


def test_warm_start_reaches_same_solution():
    X, y = blobs(40, 1, gap=1.0)
    K = kernel_matrix(KernelSpec("rbf", 1.0), X, X)
    cold = solve_dual(K, y, np.ones(40), tol=1e-6)
    warm = solve_dual(K, y, np.full(40, 2.0), tol=1e-6, alpha0=cold.alpha)
    ref = solve_dual(K, y, np.full(40, 2.0), tol=1e-6)
    np.testing.assert_allclose(warm.alpha, ref.alpha, atol=1e-3)
    with pytest.raises(ValueError, match="warm start"):
        solve_dual(K, y, np.ones(40), alpha0=np.full(40, 5.0))


def test_non_convergence_is_flagged():
    X, y = blobs(40, 2, gap=0.5)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        model = train_svm(X, y, 10.0, max_iter=2)
    assert not model.converged
    assert any(issubclass(w.category, ConvergenceWarning) for w in caught)


def test_one_class_rejected():
    with pytest.raises(ValueError):
        train_svm([[0.0], [1.0]], [1, 1])


def test_text_round_trip():
    X, y = blobs(30, 3)
    model = train_svm(X, y, 1.0, KernelSpec("rbf", 0.3))
    text = model.to_text()
    assert text.startswith("synthssl-svm 1\n")
    back = SvmModel.from_text(text)
    grid = np.random.default_rng(0).normal(size=(20, 2))
    np.testing.assert_array_equal(back.decision_function(grid), model.decision_function(grid))
    with pytest.raises(ValueError):
        SvmModel.from_text("something else\n")


class TestEstimator:
    def test_string_labels(self):
        X, y = blobs(30, 4)
        labels = np.where(y > 0, "yes", "no")
        clf = KernelSVC(C=10.0, gamma=1.0).fit(X, labels)
        assert set(clf.predict(X)) <= {"yes", "no"}
        assert clf.score(X, labels) == 1.0

    def test_params(self):
        clf = KernelSVC(C=3.0)
        assert clf.get_params()["C"] == 3.0
        assert clf.set_params(gamma=0.2).gamma == 0.2
