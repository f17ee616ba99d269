"""Soft-margin SVM trained by sequential minimal optimization.

The dual problem

    max_a  sum(a) - 1/2 (a y)' K (a y)   s.t.  0 <= a_i <= C,  sum(a_i y_i) = 0

is solved with maximal-violating-pair working sets (Platt 1998; Keerthi
et al. 2001): each step picks the pair (i, j) that most violates the
KKT conditions and applies the analytic two-variable update with box
clipping.  Convergence is declared when the violation gap

    max_{i in I_low} F_i  -  min_{i in I_up} F_i   <   2 * tol

closes, where F_i = sum_j a_j y_j K_ij - y_i.  Placing the bias at the
midpoint of the two extremes then bounds every per-point KKT violation
by tol.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ConvergenceError, ShapeError, TrainingDataError
from .evaluation import fold_complement, stratified_kfold

DEFAULT_C_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)
DEFAULT_GAMMA_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)

# alphas this close to the box edge are snapped onto it so support-vector
# membership and the "0 <= a <= C exactly" invariant are unambiguous
_BOUND_SNAP = 1e-12


def _check_kernel(kernel, gamma):
    if kernel == "linear":
        if gamma is not None:
            raise ConfigError("gamma is meaningless for the linear kernel")
    elif kernel == "rbf":
        if gamma is None:
            raise ConfigError("rbf kernel requires gamma")
        if not gamma > 0:
            raise ConfigError(f"gamma must be positive, got {gamma}")
    else:
        raise ConfigError(f"unknown kernel {kernel!r}; choose 'linear' or 'rbf'")


def kernel_matrix(a, b, kernel, gamma=None):
    """Pairwise kernel values K[i, j] = k(a_i, b_j) for row-vector sets."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(
            "kernel operands must be 2-D with equal width",
            expected=a.shape,
            actual=b.shape,
        )
    if kernel == "linear":
        return a @ b.T
    if kernel == "rbf":
        sq = (
            np.sum(a * a, axis=1)[:, None]
            + np.sum(b * b, axis=1)[None, :]
            - 2.0 * (a @ b.T)
        )
        np.maximum(sq, 0.0, out=sq)  # clamp negative rounding dust
        return np.exp(-gamma * sq)
    raise ConfigError(f"unknown kernel {kernel!r}")


@dataclass
class SvmModel:
    """Fitted classifier: f(x) = sum_i dual_coef_i K(sv_i, x) + bias."""

    kernel: str
    gamma: float | None
    C: float
    support_vectors: np.ndarray  # [m, d]
    dual_coef: np.ndarray  # [m], alpha_i * y_i
    bias: float
    support_indices: np.ndarray  # positions of the SVs in the training set
    kkt_residual: float  # worst per-point violation at convergence
    objective_history: np.ndarray  # dual objective before/after every update
    n_iter: int


def svm_fit(features, labels, kernel="rbf", C=1.0, gamma=None, tol=1e-3,
            max_iter=100_000):
    """Solve the soft-margin dual for labels in {-1, +1}.

    Raises TrainingDataError unless both classes are present,
    ConvergenceError (with the final KKT residual attached) if the
    violation gap has not closed within ``max_iter`` pair updates.
    """
    _check_kernel(kernel, gamma)
    if not C > 0:
        raise ConfigError(f"penalty C must be positive, got {C}")
    if not tol > 0:
        raise ConfigError(f"tolerance must be positive, got {tol}")
    x = np.asarray(features, dtype=float)
    if x.ndim != 2:
        raise ShapeError("feature matrix must be 2-D", actual=x.shape)
    y = np.asarray(labels, dtype=float)
    if y.shape != (x.shape[0],):
        raise ShapeError(
            "one label per sample required", expected=(x.shape[0],), actual=y.shape
        )
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise TrainingDataError("labels must be -1 or +1")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise TrainingDataError("training set must contain both classes")

    n = x.shape[0]
    C = float(C)
    K = kernel_matrix(x, x, kernel, gamma)
    alpha = np.zeros(n)
    # F_i = f(x_i) - y_i without the bias term; starts at -y since alpha = 0
    F = -y.copy()
    snap = _BOUND_SNAP * max(1.0, C)
    history = [0.0]

    step = 0
    while True:
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y < 0) & (alpha < C)) | ((y > 0) & (alpha > 0))
        up_idx = np.flatnonzero(up)
        low_idx = np.flatnonzero(low)
        i = int(up_idx[np.argmin(F[up_idx])])
        j = int(low_idx[np.argmax(F[low_idx])])
        gap = F[j] - F[i]
        if gap < 2.0 * tol:
            break
        if step >= max_iter:
            raise ConvergenceError(
                f"violation gap {gap:.3e} after {max_iter} pair updates",
                residual=gap / 2.0,
            )

        s = y[i] * y[j]
        if s < 0:
            lo = max(0.0, alpha[j] - alpha[i])
            hi = min(C, C + alpha[j] - alpha[i])
        else:
            lo = max(0.0, alpha[i] + alpha[j] - C)
            hi = min(C, alpha[i] + alpha[j])
        eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if eta > 0.0:
            a_j = alpha[j] + y[j] * (F[i] - F[j]) / eta
            a_j = min(max(a_j, lo), hi)
        else:
            # flat direction (duplicate points): objective is linear in the
            # step, so the sign of the slope picks an endpoint
            a_j = hi if y[j] * (F[i] - F[j]) > 0.0 else lo
        if a_j == alpha[j]:
            raise ConvergenceError(
                "working-set update made no progress", residual=gap / 2.0
            )
        a_j = 0.0 if a_j < snap else (C if a_j > C - snap else a_j)
        a_i = alpha[i] - s * (a_j - alpha[j])
        a_i = min(max(a_i, 0.0), C)
        a_i = 0.0 if a_i < snap else (C if a_i > C - snap else a_i)

        F += y[i] * (a_i - alpha[i]) * K[:, i] + y[j] * (a_j - alpha[j]) * K[:, j]
        alpha[i] = a_i
        alpha[j] = a_j
        ay = alpha * y
        history.append(float(alpha.sum() - 0.5 * (ay @ K @ ay)))
        step += 1

    bias = -0.5 * (F[i] + F[j])
    margins = y * (K @ (alpha * y) + bias)
    violation = np.where(
        alpha <= 0.0,
        np.maximum(0.0, 1.0 - margins),
        np.where(alpha >= C, np.maximum(0.0, margins - 1.0), np.abs(margins - 1.0)),
    )
    sv = np.flatnonzero(alpha > 0.0)
    return SvmModel(
        kernel=kernel,
        gamma=gamma,
        C=C,
        support_vectors=x[sv].copy(),
        dual_coef=(alpha * y)[sv],
        bias=float(bias),
        support_indices=sv,
        kkt_residual=float(violation.max()),
        objective_history=np.asarray(history),
        n_iter=step,
    )


def svm_decision(model, features):
    """Decision value f(x); scalar for a single feature vector, array for rows."""
    arr = np.asarray(features, dtype=float)
    if arr.ndim not in (1, 2):
        raise ShapeError("features must be a vector or a matrix", actual=arr.shape)
    probes = arr[None, :] if arr.ndim == 1 else arr
    width = model.support_vectors.shape[1]
    if probes.shape[1] != width:
        raise ShapeError(
            "feature length mismatch", expected=width, actual=probes.shape[1]
        )
    if model.support_vectors.shape[0] == 0:
        values = np.full(probes.shape[0], model.bias)
    else:
        k = kernel_matrix(probes, model.support_vectors, model.kernel, model.gamma)
        values = k @ model.dual_coef + model.bias
    return float(values[0]) if arr.ndim == 1 else values


def svm_predict(model, features):
    """Class label(s) in {-1, +1}; sign(0) maps to +1."""
    values = svm_decision(model, features)
    if isinstance(values, float):
        return 1 if values >= 0.0 else -1
    return np.where(values >= 0.0, 1, -1)


def grid_search(features, labels, kernel="rbf", c_grid=DEFAULT_C_GRID,
                gamma_grid=DEFAULT_GAMMA_GRID, inner_folds=4, seed=0, tol=1e-3,
                max_iter=100_000, return_table=False):
    """Pick (C, gamma) by mean stratified k-fold accuracy.

    Cells are visited in ascending (C, gamma) order and only strictly
    better accuracy replaces the incumbent, so ties resolve toward the
    smaller penalty first and the smaller width second.  For the linear
    kernel the gamma axis collapses to None.  With ``return_table`` the
    full {(C, gamma): accuracy} map is returned as a third element.
    """
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float)
    if len(c_grid) == 0 or (kernel == "rbf" and len(gamma_grid) == 0):
        raise ConfigError("hyperparameter grids must be non-empty")
    cs = tuple(sorted(float(c) for c in c_grid))
    gammas = (None,) if kernel == "linear" else tuple(sorted(float(g) for g in gamma_grid))

    folds = stratified_kfold(y, inner_folds, seed)
    splits = [(fold_complement(folds, f), folds[f]) for f in range(len(folds))]

    best = None
    best_acc = -1.0
    table = {}
    for c in cs:
        for gamma in gammas:
            scores = []
            for train_idx, test_idx in splits:
                model = svm_fit(
                    x[train_idx], y[train_idx], kernel=kernel, C=c, gamma=gamma,
                    tol=tol, max_iter=max_iter,
                )
                scores.append(np.mean(svm_predict(model, x[test_idx]) == y[test_idx]))
            accuracy = float(np.mean(scores))
            table[(c, gamma)] = accuracy
            if accuracy > best_acc:
                best_acc = accuracy
                best = (c, gamma)
    if return_table:
        return best[0], best[1], table
    return best
