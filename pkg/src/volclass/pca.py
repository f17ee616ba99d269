"""Principal component analysis built for very wide feature matrices.

The fit works on the n x n Gram matrix of centered samples instead of the
d x d covariance matrix, which is the only feasible route when d is on the
order of 10^5-10^6 voxels and n is a couple hundred subjects. Both routes
share their nonzero spectrum; components are recovered by mapping Gram
eigenvectors back through the data matrix.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

# Gram eigenvalues at or below this fraction of the largest are treated as
# numerically zero (rank deficiency / centering artifacts).
_RANK_REL_TOL = 1e-10


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray            # [d]
    components: np.ndarray      # [r, d], rows orthonormal, eigenvalue-descending
    eigenvalues: np.ndarray     # [r], covariance eigenvalues (non-negative)
    k: int                      # components retained for transform

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        total = self.eigenvalues.sum()
        if total <= 0:
            return np.zeros_like(self.eigenvalues)
        return self.eigenvalues / total


def pca_fit(samples, variance_target=0.95) -> PcaModel:
    """Fit on rows of ``samples``; keep the smallest k reaching the target.

    All-identical samples produce a k=0 model (with a warning) rather than
    an error: downstream callers see zero-length feature vectors.
    """
    if not 0.0 < variance_target <= 1.0:
        raise ConfigError(f"variance_target must be in (0, 1], got {variance_target}")
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError("samples must be a 2-D matrix [n, d]", actual=x.shape)
    n, d = x.shape
    if n < 2:
        raise ShapeError("PCA needs at least two samples", expected=">= 2", actual=n)

    mean = x.mean(axis=0)
    centered = x - mean
    gram = centered @ centered.T  # [n, n]
    gram_vals, gram_vecs = np.linalg.eigh(gram)
    order = np.argsort(gram_vals)[::-1]
    gram_vals = gram_vals[order]
    gram_vecs = gram_vecs[:, order]

    # Relative cutoff alone is not enough: centering identical rows leaves
    # ~eps*|x| cancellation residue, whose Gram spectrum is tiny but positive.
    # Floor eigenvalues at the largest value that residue alone can produce.
    scale = max(1.0, float(np.abs(x).max()))
    noise_floor = n * d * (8.0 * np.finfo(x.dtype).eps * scale) ** 2
    cutoff = max(gram_vals[0] * _RANK_REL_TOL, noise_floor)
    keep = gram_vals > cutoff
    rank = int(np.count_nonzero(keep))
    if rank == 0:
        warnings.warn(
            "all samples are identical after centering; PCA keeps no components",
            UserWarning,
            stacklevel=2,
        )
        return PcaModel(
            mean=mean,
            components=np.zeros((0, d)),
            eigenvalues=np.zeros(0),
            k=0,
        )

    gram_vals = gram_vals[:rank]
    gram_vecs = gram_vecs[:, :rank]
    # unit-norm covariance eigenvectors: v_i = X_c^T u_i / sqrt(mu_i);
    # stored C-contiguous so a serialized copy multiplies bit-identically
    components = np.ascontiguousarray((centered.T @ gram_vecs / np.sqrt(gram_vals)).T)
    eigenvalues = gram_vals / (n - 1)

    # deterministic orientation: largest-magnitude coordinate positive
    for row in components:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1.0

    ratios = eigenvalues / eigenvalues.sum()
    k = int(np.searchsorted(np.cumsum(ratios), variance_target) + 1)
    k = min(k, rank)
    return PcaModel(mean=mean, components=components, eigenvalues=eigenvalues, k=k)


def pca_transform(model: PcaModel, sample) -> np.ndarray:
    """Project onto the retained components: (x - mean) @ components[:k].T."""
    x = np.asarray(sample, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None]
    if x.ndim != 2 or x.shape[1] != model.mean.shape[0]:
        raise ShapeError(
            "sample length does not match the fitted feature count",
            expected=model.mean.shape[0],
            actual=x.shape,
        )
    z = (x - model.mean) @ model.components[: model.k].T
    return z[0] if single else z


def pca_reconstruct(model: PcaModel, reduced) -> np.ndarray:
    """Map reduced coordinates back to feature space (adds the mean back)."""
    z = np.asarray(reduced, dtype=np.float64)
    single = z.ndim == 1
    if single:
        z = z[None]
    r = z.shape[1]
    if r > model.components.shape[0]:
        raise ShapeError(
            "more coordinates than fitted components",
            expected=f"<= {model.components.shape[0]}",
            actual=r,
        )
    x = z @ model.components[:r] + model.mean
    return x[0] if single else x
