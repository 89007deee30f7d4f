"""Principal component analysis through a cyclic Jacobi eigensolver."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


def jacobi_eigh(a: np.ndarray, tol: float = 1e-14, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and column eigenvectors of a symmetric matrix."""
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("matrix must be square")
    v = np.eye(n)
    scale = max(np.abs(a).max(), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                v = v @ rot
    vals = np.diag(a).copy()
    order = np.argsort(-vals, kind="stable")
    return vals[order], v[:, order]


class PCAResult(NamedTuple):
    projected: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    mean: np.ndarray


def pca_project(rows, k: int) -> PCAResult:
    """Project mean-centred rows onto the top-``k`` principal directions.

    Each component is sign-normalised so that its largest-magnitude entry is
    positive.  Variances use the unbiased (n - 1) sample covariance.
    """
    x = np.asarray(rows, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("rows must be a 2-D matrix")
    n, d = x.shape
    if n < 2:
        raise ValueError("PCA needs at least two rows")
    if not 1 <= k <= d:
        raise ValueError(f"k must lie in [1, {d}], got {k}")
    mu = x.mean(axis=0)
    centred = x - mu
    cov = centred.T @ centred / (n - 1)
    vals, vecs = jacobi_eigh(cov)
    comps = vecs[:, :k].T.copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    variances = np.clip(vals[:k], 0.0, None)
    return PCAResult(centred @ comps.T, comps, variances, mu)
