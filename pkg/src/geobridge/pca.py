"""Top-3 principal components of positional embeddings, mapped to RGB."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

RANK_TOL = 1e-10


@dataclass
class PCAResult:
    mean: np.ndarray
    components: np.ndarray  # (k, width), orthonormal rows
    variances: np.ndarray
    scores: np.ndarray  # (N, k)
    rgb: np.ndarray  # (N, 3) in [0, 1]

    def reconstruct(self) -> np.ndarray:
        return self.mean + self.scores @ self.components


def pca_rgb(vectors: np.ndarray, n_components: int = 3) -> PCAResult:
    """Eigendecomposition of the covariance; scores min-max scaled per channel.

    Channels beyond the data rank are filled with 0.5 (with a warning).
    """
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 4 or X.shape[1] < 3:
        raise ValueError(f"need at least 4 samples of width >= 3, got {X.shape}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (X.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    scale = max(evals[0], 0.0)
    rank = int(np.sum(evals > RANK_TOL * max(scale, 1.0)))
    k = min(n_components, rank)
    comps = evecs[:, :k].T
    # fix the sign so the largest-magnitude loading is positive
    for j in range(k):
        if comps[j, np.argmax(np.abs(comps[j]))] < 0:
            comps[j] = -comps[j]
    scores = Xc @ comps.T
    rgb = np.full((X.shape[0], n_components), 0.5)
    for j in range(k):
        s = scores[:, j]
        lo, hi = s.min(), s.max()
        rgb[:, j] = (s - lo) / (hi - lo) if hi > lo else 0.5
    if k < n_components:
        warnings.warn(f"embedding rank {rank} < {n_components}; padding channels with 0.5", RuntimeWarning)
    return PCAResult(mean, comps, evals[:k], scores, rgb)
