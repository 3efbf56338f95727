"""Closed-form spectral helpers for symmetric 2x2 matrices.

Everything downstream works with 2x2 covariance blocks, so we use exact
eigendecomposition formulas instead of iterative solvers. This keeps
square roots bit-stable and cheap.
"""

import numpy as np


def eigh2(m):
    """Eigendecomposition of a symmetric 2x2 matrix.

    Returns (eigvals, eigvecs) with eigvals ascending and eigvecs[:, i]
    the unit eigenvector for eigvals[i].
    """
    m = np.asarray(m, dtype=float)
    if m.shape != (2, 2):
        raise ValueError(f"expected 2x2 matrix, got shape {m.shape}")
    if abs(m[0, 1] - m[1, 0]) > 1e-12 * max(1.0, np.abs(m).max()):
        raise ValueError("matrix is not symmetric")
    a, b, c = m[0, 0], 0.5 * (m[0, 1] + m[1, 0]), m[1, 1]
    half_tr = 0.5 * (a + c)
    # discriminant of the characteristic polynomial, always >= 0
    disc = np.sqrt(max(0.25 * (a - c) ** 2 + b * b, 0.0))
    lo, hi = half_tr - disc, half_tr + disc
    if disc <= 1e-300 or abs(b) == 0.0:
        if a <= c:
            vecs = np.eye(2)
        else:
            vecs = np.array([[0.0, 1.0], [1.0, 0.0]])
        if a > c:
            lo, hi = c, a
        else:
            lo, hi = a, c
        return np.array([lo, hi]), vecs
    # eigenvector for lo: (b, lo - a), normalized
    v1 = np.array([b, lo - a])
    v1 /= np.linalg.norm(v1)
    v2 = np.array([-v1[1], v1[0]])
    return np.array([lo, hi]), np.column_stack([v1, v2])


def from_eigh2(vals, vecs):
    """Reassemble a symmetric matrix from eigh2 output."""
    return (vecs * vals) @ vecs.T


def sqrtm_psd2(m):
    """Symmetric PSD square root of a symmetric PSD 2x2 matrix."""
    vals, vecs = eigh2(m)
    if vals[0] < -1e-10 * max(1.0, abs(vals[1])):
        raise ValueError(f"matrix is not PSD (eigenvalues {vals})")
    return from_eigh2(np.sqrt(np.clip(vals, 0.0, None)), vecs)


def inv_sqrtm_psd2(m):
    """Inverse symmetric square root of a positive definite 2x2 matrix."""
    vals, vecs = eigh2(m)
    if vals[0] <= 0.0:
        raise ValueError(f"matrix is not positive definite (eigenvalues {vals})")
    return from_eigh2(1.0 / np.sqrt(vals), vecs)
