"""Independent oracles used across the test suite.

Everything here is deliberately naive: nested Python loops and direct
formula transcriptions. None of it shares code with the production
kernels it checks.
"""

import numpy as np


def conv3d_oracle(x, kernels, bias, stride, padding):
    """Direct-sum 3D cross-correlation, seven nested loops."""
    c_in, d, h, w = x.shape
    c_out, c_k, kd, kh, kw = kernels.shape
    assert c_in == c_k
    sd, sh, sw = stride
    pd, ph, pw = padding
    xp = np.zeros((c_in, d + 2 * pd, h + 2 * ph, w + 2 * pw))
    xp[:, pd:pd + d, ph:ph + h, pw:pw + w] = x
    do = (d + 2 * pd - kd) // sd + 1
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    out = np.zeros((c_out, do, ho, wo))
    for o in range(c_out):
        for od in range(do):
            for oh in range(ho):
                for ow in range(wo):
                    acc = 0.0
                    for c in range(c_in):
                        for i in range(kd):
                            for j in range(kh):
                                for k in range(kw):
                                    acc += (
                                        xp[c, od * sd + i, oh * sh + j, ow * sw + k]
                                        * kernels[o, c, i, j, k]
                                    )
                    out[o, od, oh, ow] = acc + (bias[o] if bias is not None else 0.0)
    return out


def maxpool3d_oracle(x, window, stride):
    """Window-max oracle; returns the pooled array only."""
    c, d, h, w = x.shape
    wd, wh, ww = window
    sd, sh, sw = stride
    do = (d - wd) // sd + 1
    ho = (h - wh) // sh + 1
    wo = (w - ww) // sw + 1
    out = np.empty((c, do, ho, wo))
    for ci in range(c):
        for od in range(do):
            for oh in range(ho):
                for ow in range(wo):
                    best = -np.inf
                    for i in range(wd):
                        for j in range(wh):
                            for k in range(ww):
                                v = x[ci, od * sd + i, oh * sh + j, ow * sw + k]
                                if v > best:
                                    best = v
                    out[ci, od, oh, ow] = best
    return out


def matmul_oracle(a, b):
    """Triple-loop matrix product."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def conv_extent_oracle(in_extent, kernel, stride, padding):
    """Output-extent law, computed axis by axis."""
    return tuple(
        (n + 2 * p - k) // s + 1
        for n, k, s, p in zip(in_extent, kernel, stride, padding)
    )


def auc_pair_oracle(scores, labels):
    """All-pairs Mann-Whitney AUC; ties count one half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def roc_trapezoid_oracle(scores, labels):
    """Area under the empirical ROC curve by trapezoidal integration."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    thresholds = np.unique(scores)[::-1]
    points = [(0.0, 0.0)]
    for t in thresholds:
        predicted = scores >= t
        tpr = np.sum(predicted & (labels == 1)) / n_pos
        fpr = np.sum(predicted & (labels == 0)) / n_neg
        points.append((fpr, tpr))
    points.append((1.0, 1.0))
    area = 0.0
    for (x0, y0), (x1, y1) in zip(points[:-1], points[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def covariance_eig_oracle(x):
    """PCA reference route: eigendecomposition of the d x d covariance matrix.

    Returns (eigenvalues descending, components as rows) with each component
    oriented so its largest-magnitude entry is positive.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    comps = eigvecs[:, order].T
    for row in comps:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1.0
    return eigvals, comps


def svm_dual_objective(alpha, labels, gram):
    """Soft-margin dual objective W(alpha), written directly from its formula."""
    alpha = np.asarray(alpha, dtype=float)
    ay = alpha * np.asarray(labels, dtype=float)
    return float(alpha.sum() - 0.5 * ay @ gram @ ay)


def kkt_violation_oracle(alpha, labels, decisions, C, atol=1e-9):
    """Largest soft-margin KKT violation over the training set.

    alpha == 0  requires y*f >= 1; interior alpha requires y*f == 1;
    alpha == C  requires y*f <= 1.
    """
    alpha = np.asarray(alpha, dtype=float)
    margins = np.asarray(labels, dtype=float) * np.asarray(decisions, dtype=float)
    worst = 0.0
    for a, m in zip(alpha, margins):
        if a <= atol:
            worst = max(worst, 1.0 - m)
        elif a >= C - atol:
            worst = max(worst, m - 1.0)
        else:
            worst = max(worst, abs(m - 1.0))
    return worst


def numeric_gradient(f, x, step=1e-5):
    """Per-coordinate central finite differences of scalar f at x."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def directional_derivative(f, x, v, step=1e-6):
    """Central finite difference of scalar f along direction v."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    hi = f(x + step * v)
    lo = f(x - step * v)
    return (hi - lo) / (2.0 * step)


def relative_error(a, b, floor=1e-8):
    """Symmetric relative error with an absolute floor for tiny values."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def gradient_gap(a, b, floor=1e-12):
    """Norm-relative gradient disagreement: ||a-b|| / (||a|| + ||b||).

    The usual gradient-check statistic: a wrong adjoint anywhere moves it
    to O(1e-1), while finite-difference rounding noise on individually tiny
    coordinates stays far below 1e-6.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)
