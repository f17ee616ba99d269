"""SMO solver checks: closed forms, dual feasibility, KKT residuals, grid search."""

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from volclass.errors import ConfigError, ConvergenceError, ShapeError, TrainingDataError
from volclass.svm import (
    DEFAULT_C_GRID,
    DEFAULT_GAMMA_GRID,
    SvmModel,
    grid_search,
    kernel_matrix,
    svm_decision,
    svm_fit,
    svm_predict,
)

from helpers import kkt_violation_oracle, svm_dual_objective

rng = np.random.default_rng(31415)


def blob_dataset(seed, n_per_class=12, dim=3, shift=1.0):
    """Two gaussian clouds at +-shift along every axis."""
    local = np.random.default_rng(seed)
    pos = local.standard_normal((n_per_class, dim)) + shift
    neg = local.standard_normal((n_per_class, dim)) - shift
    x = np.concatenate([pos, neg])
    y = np.concatenate([np.ones(n_per_class), -np.ones(n_per_class)])
    perm = local.permutation(2 * n_per_class)
    return x[perm], y[perm]


def full_alpha(model, n):
    """Per-training-point alphas reconstructed from the stored support coefficients."""
    alpha = np.zeros(n)
    alpha[model.support_indices] = np.abs(model.dual_coef)
    return alpha


# --- kernels ---------------------------------------------------------------


def test_kernel_literals():
    a = np.array([[1.0, 2.0]])
    b = np.array([[3.0, -1.0]])
    npt.assert_allclose(kernel_matrix(a, b, "linear"), [[1.0]])
    # ||a-b||^2 = 4 + 9 = 13
    npt.assert_allclose(kernel_matrix(a, b, "rbf", gamma=0.5), [[np.exp(-6.5)]])
    npt.assert_allclose(kernel_matrix(a, a, "rbf", gamma=2.0), [[1.0]])


def test_rbf_gram_is_symmetric_positive_semidefinite():
    x = rng.standard_normal((15, 4))
    k = kernel_matrix(x, x, "rbf", gamma=0.7)
    npt.assert_allclose(k, k.T, atol=1e-12)
    assert np.linalg.eigvalsh(k).min() > -1e-10


# --- closed-form and separability checks ------------------------------------


def test_two_point_problem_matches_hand_solution():
    # minimal dual: alpha1 = alpha2 = 0.5, b = 0, f(x) = x, margin 2
    x = np.array([[-1.0], [1.0]])
    y = np.array([-1.0, 1.0])
    model = svm_fit(x, y, kernel="linear", C=10.0)
    assert np.array_equal(model.support_indices, [0, 1])
    npt.assert_allclose(model.dual_coef, [-0.5, 0.5], atol=1e-6)
    assert abs(model.bias) < 1e-6
    npt.assert_allclose(svm_decision(model, np.array([0.5])), 0.5, atol=1e-6)
    # both support vectors sit exactly on the margin
    for xi, yi in zip(x, y):
        npt.assert_allclose(yi * svm_decision(model, xi), 1.0, atol=1e-6)
    assert svm_predict(model, np.array([0.3])) == 1
    assert svm_predict(model, np.array([-0.3])) == -1
    # dual objective at the optimum: sum(alpha) - 1/2 (ay)'K(ay) = 1 - 0.5
    npt.assert_allclose(model.objective_history[-1], 0.5, atol=1e-12)


def test_xor_needs_the_nonlinear_kernel():
    x = np.array([[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]])
    y = np.array([1.0, 1.0, -1.0, -1.0])
    nonlinear = svm_fit(x, y, kernel="rbf", gamma=1.0, C=100.0)
    assert np.array_equal(svm_predict(nonlinear, x), y)
    linear = svm_fit(x, y, kernel="linear", C=100.0)
    assert np.mean(svm_predict(linear, x) == y) <= 0.75


# --- dual feasibility and KKT conditions on random data ----------------------


def test_feasibility_and_kkt_on_many_random_datasets():
    for trial in range(50):
        x, y = blob_dataset(seed=500 + trial, n_per_class=6 + trial % 10, shift=0.5)
        model = svm_fit(x, y, kernel="rbf", gamma=0.5, C=1.0)
        alpha = full_alpha(model, len(y))
        assert np.all(alpha >= 0.0) and np.all(alpha <= 1.0)  # exact box bounds
        assert abs(np.sum(model.dual_coef)) < 1e-6  # sum alpha_i y_i = 0
        decisions = svm_decision(model, x)
        worst = kkt_violation_oracle(alpha, y, decisions, C=1.0)
        assert worst < 1e-3
        npt.assert_allclose(worst, model.kkt_residual, atol=1e-9)
        # dual objective never decreases (allow eps for bound snapping)
        assert np.all(np.diff(model.objective_history) >= -1e-10)
        gram = kernel_matrix(x, x, "rbf", gamma=0.5)
        npt.assert_allclose(
            model.objective_history[-1],
            svm_dual_objective(alpha, y, gram),
            atol=1e-8,
        )


@settings(deadline=None, max_examples=25)
@given(st.integers(0, 10_000), st.integers(4, 12), st.integers(1, 3))
def test_feasibility_holds_for_arbitrary_small_problems(seed, n, dim):
    local = np.random.default_rng(seed)
    x = local.standard_normal((n, dim))
    y = np.where(local.standard_normal(n) > 0, 1.0, -1.0)
    y[0], y[1] = 1.0, -1.0  # both classes present
    model = svm_fit(x, y, kernel="rbf", gamma=1.0, C=1.0)
    alpha = full_alpha(model, n)
    assert np.all((alpha >= 0.0) & (alpha <= 1.0))
    assert abs(np.sum(model.dual_coef)) < 1e-6
    assert kkt_violation_oracle(alpha, y, svm_decision(model, x), C=1.0) < 1e-3


# --- invariances --------------------------------------------------------------


def test_flipping_labels_negates_the_decision_function():
    x, y = blob_dataset(seed=77, shift=0.8)
    probes = rng.standard_normal((20, x.shape[1]))
    a = svm_fit(x, y, kernel="rbf", gamma=0.5, C=1.0, tol=1e-8)
    b = svm_fit(x, -y, kernel="rbf", gamma=0.5, C=1.0, tol=1e-8)
    npt.assert_allclose(svm_decision(a, probes), -svm_decision(b, probes), atol=1e-6)


def test_rbf_model_is_translation_invariant():
    x, y = blob_dataset(seed=78, shift=0.8)
    offset = np.array([10.0, -4.0, 2.5])
    probes = rng.standard_normal((20, 3))
    a = svm_fit(x, y, kernel="rbf", gamma=0.5, C=1.0, tol=1e-8)
    b = svm_fit(x + offset, y, kernel="rbf", gamma=0.5, C=1.0, tol=1e-8)
    npt.assert_allclose(
        svm_decision(a, probes), svm_decision(b, probes + offset), atol=1e-6
    )


def test_linear_svm_feature_scaling_compensated_by_penalty():
    # scaling x by c and C by 1/c^2 rescales the dual but keeps f identical
    x, y = blob_dataset(seed=79, shift=1.5)
    scale = 7.5
    a = svm_fit(x, y, kernel="linear", C=1.0, tol=1e-7)
    b = svm_fit(x * scale, y, kernel="linear", C=1.0 / scale**2, tol=1e-7)
    da = svm_decision(a, x)
    db = svm_decision(b, x * scale)
    npt.assert_allclose(da, db, atol=1e-4)
    confident = np.abs(da) > 1e-3
    assert np.array_equal(
        svm_predict(a, x)[confident], svm_predict(b, x * scale)[confident]
    )


def test_duplicating_a_non_support_point_changes_nothing():
    x, y = blob_dataset(seed=80, shift=2.0)
    model = svm_fit(x, y, kernel="rbf", gamma=0.5, C=1.0, tol=1e-6)
    alpha = full_alpha(model, len(y))
    idle = int(np.flatnonzero(alpha == 0.0)[0])
    x2 = np.concatenate([x, x[idle : idle + 1]])
    y2 = np.concatenate([y, y[idle : idle + 1]])
    again = svm_fit(x2, y2, kernel="rbf", gamma=0.5, C=1.0, tol=1e-6)
    probes = rng.standard_normal((30, x.shape[1]))
    npt.assert_allclose(
        svm_decision(model, probes), svm_decision(again, probes), atol=1e-4
    )


# --- error handling -----------------------------------------------------------


def test_single_class_and_bad_labels_are_rejected():
    x = rng.standard_normal((6, 2))
    with pytest.raises(TrainingDataError):
        svm_fit(x, np.ones(6), kernel="linear", C=1.0)
    with pytest.raises(TrainingDataError):
        svm_fit(x, np.array([0, 1, 0, 1, 0, 1]), kernel="linear", C=1.0)


def test_kernel_configuration_is_validated():
    x = np.array([[-1.0], [1.0]])
    y = np.array([-1.0, 1.0])
    with pytest.raises(ConfigError):
        svm_fit(x, y, kernel="rbf", C=1.0)  # rbf needs gamma
    with pytest.raises(ConfigError):
        svm_fit(x, y, kernel="linear", gamma=0.5, C=1.0)
    with pytest.raises(ConfigError):
        svm_fit(x, y, kernel="poly", C=1.0)
    with pytest.raises(ConfigError):
        svm_fit(x, y, kernel="linear", C=0.0)


def test_iteration_cap_raises_with_residual():
    x, y = blob_dataset(seed=81, n_per_class=20, shift=0.3)
    with pytest.raises(ConvergenceError) as info:
        svm_fit(x, y, kernel="rbf", gamma=0.5, C=1.0, max_iter=1)
    assert info.value.residual > 0.0


def test_decision_validates_probe_shape():
    x = np.array([[-1.0, 0.0], [1.0, 0.0]])
    y = np.array([-1.0, 1.0])
    model = svm_fit(x, y, kernel="linear", C=1.0)
    with pytest.raises(ShapeError):
        svm_decision(model, np.zeros(3))
    with pytest.raises(ShapeError):
        svm_decision(model, np.zeros((4, 3)))
    single = svm_decision(model, np.array([0.25, 0.0]))
    batch = svm_decision(model, np.array([[0.25, 0.0]]))
    assert isinstance(single, float)
    npt.assert_allclose(batch, [single])


def test_zero_decision_predicts_positive():
    # documented tie rule: sign(0) -> +1
    empty = SvmModel(
        kernel="linear",
        gamma=None,
        C=1.0,
        support_vectors=np.zeros((0, 2)),
        dual_coef=np.zeros(0),
        bias=0.0,
        support_indices=np.zeros(0, dtype=int),
        kkt_residual=0.0,
        objective_history=np.zeros(1),
        n_iter=0,
    )
    assert svm_decision(empty, np.array([3.0, -2.0])) == 0.0
    assert svm_predict(empty, np.array([3.0, -2.0])) == 1


# --- grid search ---------------------------------------------------------------


def test_grid_search_is_deterministic_and_honours_single_point_grids():
    x, y = blob_dataset(seed=90, shift=2.0)
    first = grid_search(x, y, kernel="rbf", c_grid=(0.1, 1.0), gamma_grid=(0.1, 1.0),
                        inner_folds=4, seed=5)
    second = grid_search(x, y, kernel="rbf", c_grid=(0.1, 1.0), gamma_grid=(0.1, 1.0),
                         inner_folds=4, seed=5)
    assert first == second
    only = grid_search(x, y, kernel="rbf", c_grid=(2.0,), gamma_grid=(0.25,),
                       inner_folds=4, seed=5)
    assert only == (2.0, 0.25)


def test_grid_search_ties_prefer_smaller_hyperparameters():
    # well-separated blobs: every cell reaches 100% inner accuracy
    x, y = blob_dataset(seed=91, shift=4.0)
    c, gamma, table = grid_search(
        x, y, kernel="rbf", c_grid=(10.0, 1.0), gamma_grid=(1.0, 0.5),
        inner_folds=4, seed=2, return_table=True,
    )
    assert max(table.values()) == 1.0
    assert (c, gamma) == (1.0, 0.5)


def test_grid_search_picks_a_wide_enough_gamma_for_xor_clusters():
    local = np.random.default_rng(92)
    corners = np.array([[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]])
    x = np.concatenate([c + 0.15 * local.standard_normal((6, 2)) for c in corners])
    y = np.concatenate([np.ones(12), -np.ones(12)])
    c, gamma, table = grid_search(
        x, y, kernel="rbf", c_grid=(1.0, 10.0), gamma_grid=(1e-4, 1.0),
        inner_folds=4, seed=3, return_table=True,
    )
    assert gamma == 1.0
    best = table[(c, gamma)]
    for cc in (1.0, 10.0):
        assert best > table[(cc, 1e-4)]


def test_grid_search_with_linear_kernel_ignores_gamma_grid():
    x, y = blob_dataset(seed=93, shift=3.0)
    c, gamma = grid_search(x, y, kernel="linear", c_grid=(1.0,),
                           gamma_grid=DEFAULT_GAMMA_GRID, inner_folds=4, seed=1)
    assert c == 1.0 and gamma is None


def test_grid_search_rejects_empty_grids():
    x, y = blob_dataset(seed=94)
    with pytest.raises(ConfigError):
        grid_search(x, y, kernel="rbf", c_grid=(), gamma_grid=(1.0,), inner_folds=4, seed=0)
    with pytest.raises(ConfigError):
        grid_search(x, y, kernel="rbf", c_grid=(1.0,), gamma_grid=(), inner_folds=4, seed=0)


def test_default_grids_match_documented_values():
    assert DEFAULT_C_GRID == (0.01, 0.1, 1.0, 10.0, 100.0)
    assert DEFAULT_GAMMA_GRID == (1e-4, 1e-3, 1e-2, 1e-1, 1.0)
