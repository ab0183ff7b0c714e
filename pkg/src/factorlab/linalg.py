"""Small dense linear algebra helpers shared by every other module.

The heavy lifting is done by LAPACK through numpy. This module adds input
validation, descending order and a deterministic sign convention so that
singular vectors can be compared across runs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class LinalgError(ValueError):
    """Raised on invalid input to a kernel routine."""


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Return ``m`` as a finite 2-D float array or raise ``LinalgError``."""
    arr = np.asarray(m, dtype=float)
    if arr.ndim != 2:
        raise LinalgError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise LinalgError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``m = U diag(s) V^T`` with ``k = min(rows, cols)`` components."""

    left_vectors: np.ndarray
    singular_values: np.ndarray
    right_vectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.left_vectors * self.singular_values) @ self.right_vectors.T

    def triple(self, k: int = 0):
        """Return ``(sigma_k, u_k, v_k)`` (zero-based)."""
        return (float(self.singular_values[k]), self.left_vectors[:, k].copy(),
                self.right_vectors[:, k].copy())


@dataclass(frozen=True)
class RankPolicy:
    """Thresholds deciding which singular values count as nonzero."""

    relative_threshold: float = 1e-4
    absolute_threshold: float = 1e-8

    def __post_init__(self):
        if not (self.relative_threshold > 0 and self.absolute_threshold > 0):
            raise LinalgError("rank thresholds must be strictly positive")

    def cutoff(self, sigma_max: float) -> float:
        return max(self.relative_threshold * sigma_max, self.absolute_threshold)

    def count(self, singular_values) -> int:
        s = np.asarray(singular_values, dtype=float)
        if s.size == 0:
            return 0
        return int(np.sum(s > self.cutoff(float(s.max()))))


# entries of a unit vector below this are round-off and never decide its sign
SIGN_ZERO_TOL = 1e-8


def _fix_signs(u: np.ndarray, v: np.ndarray) -> None:
    """Flip paired columns in place so that the first nonzero entry of u is positive."""
    for k in range(u.shape[1]):
        col = u[:, k]
        nz = np.flatnonzero(np.abs(col) > SIGN_ZERO_TOL)
        if nz.size and col[nz[0]] < 0:
            u[:, k] = -col
            v[:, k] = -v[:, k]


def svd(m) -> SvdResult:
    """Thin SVD with descending singular values and deterministic signs."""
    a = as_matrix(m)
    if a.size == 0:
        r, c = a.shape
        return SvdResult(np.zeros((r, 0)), np.zeros(0), np.zeros((c, 0)))
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    v = vt.T.copy()
    u = u.copy()
    _fix_signs(u, v)
    return SvdResult(u, s, v)


def singular_values(m) -> np.ndarray:
    """Descending singular values only (no vectors)."""
    return np.linalg.svd(as_matrix(m), compute_uv=False)


def symmetric_eigen(h, sym_tol: float = 1e-10):
    """Eigen-decomposition of a symmetric matrix, eigenvalues descending.

    Each eigenvector is signed so that its first nonzero entry is positive.
    """
    a = as_matrix(h, "h")
    if a.shape[0] != a.shape[1]:
        raise LinalgError(f"symmetric_eigen needs a square matrix, got {a.shape}")
    scale = max(np.abs(a).max(), 1.0) if a.size else 1.0
    if a.size and np.abs(a - a.T).max() > sym_tol * scale:
        raise LinalgError("matrix is not symmetric within tolerance")
    w, q = np.linalg.eigh(0.5 * (a + a.T))
    order = np.argsort(-w, kind="stable")
    w = w[order]
    q = q[:, order].copy()
    dummy = np.zeros_like(q)
    _fix_signs(q, dummy)
    return w, q


def nuclear_norm(m) -> float:
    return float(np.sum(singular_values(m)))


def numerical_rank(m, policy: RankPolicy | None = None) -> int:
    policy = policy or RankPolicy()
    return policy.count(singular_values(m))


def orthonormal_basis(basis, tol: float = 1e-10) -> np.ndarray:
    """Orthonormalize the columns of ``basis``; reject dependent columns."""
    b = as_matrix(basis, "basis")
    if b.shape[1] == 0:
        return b
    s = singular_values(b)
    if s[-1] <= tol * max(s[0], 1e-300):
        raise LinalgError("basis columns are linearly dependent")
    q, _ = np.linalg.qr(b)
    return q


def principal_angles(basis_a, basis_b) -> np.ndarray:
    """Principal angles (ascending, radians) between two column spaces.

    Small angles come from sines and large ones from cosines, which keeps
    both ends accurate.
    """
    qa = orthonormal_basis(basis_a)
    qb = orthonormal_basis(basis_b)
    if qa.shape[0] != qb.shape[0]:
        raise LinalgError("bases live in different ambient dimensions")
    k = min(qa.shape[1], qb.shape[1])
    if k == 0:
        return np.zeros(0)
    if qa.shape[1] < qb.shape[1]:
        qa, qb = qb, qa
    cos = np.clip(np.linalg.svd(qa.T @ qb, compute_uv=False), 0.0, 1.0)[:k]
    resid = qb - qa @ (qa.T @ qb)
    sin = np.clip(np.sort(np.linalg.svd(resid, compute_uv=False))[:k], 0.0, 1.0)
    angles = np.where(cos > np.sqrt(0.5), np.arcsin(sin), np.arccos(cos))
    return np.sort(angles)


def masked_frobenius(m, mask) -> float:
    a = as_matrix(m)
    p = np.asarray(mask, dtype=float)
    if p.shape != a.shape:
        raise LinalgError(f"mask shape {p.shape} does not match {a.shape}")
    return float(np.sqrt(np.sum((a * p) ** 2)))


def top_singular_subspace(m, k: int):
    """Left and right orthonormal bases of the top-``k`` singular subspaces."""
    res = svd(m)
    return res.left_vectors[:, :k], res.right_vectors[:, :k]
