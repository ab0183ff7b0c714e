"""Hessian structure, critical-point classification and escape directions.

Parameter vector layout used throughout: the rows of A in order (entry
``A[i, k]`` at index ``i*d + k``), followed by the columns of B in order
(entry ``B[k, j]`` at index ``d*d + j*d + k``). With ``a_i`` the i-th row of
A and ``b_j`` the j-th column of B, the model output is ``W_ij = a_i . b_j``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import (FactorPair, effective_output, gradient_norm, output_rank_policy,
                       residual_matrix, risk_gradient, empirical_risk)
from .linalg import masked_frobenius, singular_values, svd, symmetric_eigen
from .observation import IncompleteMatrix

MAX_FULL_HESSIAN_D = 8


class NotCriticalError(ValueError):
    """The point handed to a classifier is not near-critical."""


class LandscapeViolation(RuntimeError):
    """A near-critical point that is neither a global minimum nor a strict saddle."""

    def __init__(self, min_eigenvalue: float, residual: float):
        super().__init__(
            f"critical point with residual {residual:.3e} has no negative curvature "
            f"(min eigenvalue {min_eigenvalue:.3e})")
        self.min_eigenvalue = min_eigenvalue
        self.residual = residual


def pack(theta: FactorPair) -> np.ndarray:
    return np.concatenate([theta.a.ravel(), theta.b.T.ravel()])


def unpack(vec, d: int) -> FactorPair:
    vec = np.asarray(vec, dtype=float)
    return FactorPair(vec[: d * d].reshape(d, d).copy(), vec[d * d:].reshape(d, d).T.copy())


def jacobian(theta: FactorPair, m: IncompleteMatrix) -> np.ndarray:
    """Rows: d W_ij / d theta for each observed (i, j), in row-major order."""
    d = theta.d
    rows, cols = np.nonzero(m.mask)
    jac = np.zeros((len(rows), 2 * d * d))
    for k, (i, j) in enumerate(zip(rows, cols)):
        jac[k, i * d:(i + 1) * d] = theta.b[:, j]
        jac[k, d * d + j * d: d * d + (j + 1) * d] = theta.a[i, :]
    return jac


def hessian_first_term(theta: FactorPair, m: IncompleteMatrix) -> np.ndarray:
    """Gauss-Newton part (2/n) J^T J."""
    jac = jacobian(theta, m)
    return (2.0 / m.n) * jac.T @ jac


def hessian_second_term(theta: FactorPair, m: IncompleteMatrix) -> np.ndarray:
    """Residual-curvature part (2/n) [[0, dM (x) I], [dM^T (x) I, 0]]."""
    d = theta.d
    k = np.kron(residual_matrix(theta, m), np.eye(d))
    h = np.zeros((2 * d * d, 2 * d * d))
    h[: d * d, d * d:] = k
    h[d * d:, : d * d] = k.T
    return (2.0 / m.n) * h


def hessian(theta: FactorPair, m: IncompleteMatrix) -> np.ndarray:
    return hessian_first_term(theta, m) + hessian_second_term(theta, m)


def fd_hessian(theta: FactorPair, m: IncompleteMatrix, h: float = 1e-5) -> np.ndarray:
    """Central differences of the analytic gradient (symmetrized)."""
    d = theta.d
    x0 = pack(theta)
    out = np.zeros((x0.size, x0.size))
    for k in range(x0.size):
        e = np.zeros_like(x0)
        e[k] = h
        gp = pack(risk_gradient(unpack(x0 + e, d), m))
        gm = pack(risk_gradient(unpack(x0 - e, d), m))
        out[:, k] = (gp - gm) / (2 * h)
    return 0.5 * (out + out.T)


def fd_gradient(theta: FactorPair, m: IncompleteMatrix, h: float = 1e-6) -> np.ndarray:
    """Central differences of the empirical risk, packed layout."""
    d = theta.d
    x0 = pack(theta)
    g = np.zeros_like(x0)
    for k in range(x0.size):
        e = np.zeros_like(x0)
        e[k] = h
        g[k] = (empirical_risk(unpack(x0 + e, d), m) - empirical_risk(unpack(x0 - e, d), m)) / (2 * h)
    return g


# ----------------------------------------------------------------------------
# analytic spectrum of the residual-curvature term


@dataclass(frozen=True)
class SaddleSpectrum:
    sigmas: np.ndarray          # singular values of dM, descending
    scale: float                # 2/n
    d: int

    @property
    def levels(self) -> list:
        """``(eigenvalue, multiplicity)`` pairs, positive levels first."""
        pos = [(self.scale * s, self.d) for s in self.sigmas]
        neg = [(-self.scale * s, self.d) for s in self.sigmas[::-1]]
        return pos + neg

    @property
    def top_gap(self) -> float:
        s = self.sigmas
        return float(s[0] - (s[1] if s.size > 1 else 0.0))

    def eigenvalues(self) -> np.ndarray:
        """Full multiset (length 2 d^2), descending."""
        vals = np.concatenate([np.repeat(self.scale * self.sigmas, self.d),
                               np.repeat(-self.scale * self.sigmas, self.d)])
        return np.sort(vals)[::-1]


def saddle_spectrum(delta_m, n: int) -> SaddleSpectrum:
    dm = np.asarray(delta_m, dtype=float)
    return SaddleSpectrum(singular_values(dm), 2.0 / n, dm.shape[0])


def analytic_eigenvectors(delta_m, k: int, sign: int) -> np.ndarray:
    """The d eigenvectors of the residual-curvature term for level ``sign * sigma_k``.

    Built from the k-th singular pair (u, v) of dM as [u (x) e_i ; sign * v (x) e_i] / sqrt(2),
    i = 1..d, returned as columns.
    """
    res = svd(delta_m)
    u = res.left_vectors[:, k]
    v = res.right_vectors[:, k]
    d = u.size
    eye = np.eye(d)
    cols = [np.concatenate([np.kron(u, eye[i]), sign * np.kron(v, eye[i])]) / np.sqrt(2)
            for i in range(d)]
    return np.column_stack(cols)


def unique_top_singular_check(delta_m, gap_tol: float = 1e-6) -> bool:
    s = singular_values(delta_m)
    s2 = s[1] if s.size > 1 else 0.0
    return bool(s[0] - s2 > gap_tol * s[0])


# ----------------------------------------------------------------------------
# critical points


def default_critical_tol(m: IncompleteMatrix) -> float:
    return 1e-7 * (1.0 + float(np.linalg.norm(m.values)))


@dataclass(frozen=True)
class CriticalPointClass:
    kind: str                    # "StrictSaddle" or "GlobalMinimum"
    certificate: float           # min eigenvalue or residual norm
    grad_norm: float
    residual_norm: float

    @property
    def is_saddle(self) -> bool:
        return self.kind == "StrictSaddle"


def classify_critical_point(theta: FactorPair, m: IncompleteMatrix, tol: float | None = None,
                            grad_tol: float | None = None) -> CriticalPointClass:
    """Global minimum if the fit is exact, otherwise demand negative curvature.

    Raises ``LandscapeViolation`` for an inexact point with no negative
    curvature, and ``NotCriticalError`` when the gradient is too large.
    """
    tol = default_critical_tol(m) if tol is None else tol
    grad_tol = tol if grad_tol is None else grad_tol
    gn = gradient_norm(theta, m)
    if gn > grad_tol:
        raise NotCriticalError(f"gradient norm {gn:.3e} exceeds {grad_tol:.3e}")
    resid = masked_frobenius(residual_matrix(theta, m), m.mask)
    if resid <= tol:
        return CriticalPointClass("GlobalMinimum", resid, gn, resid)
    if theta.d > MAX_FULL_HESSIAN_D:
        raise ValueError(f"full Hessian analysis is limited to d <= {MAX_FULL_HESSIAN_D}")
    lam, _ = symmetric_eigen(hessian(theta, m))
    lmin = float(lam[-1])
    if lmin < -tol:
        return CriticalPointClass("StrictSaddle", lmin, gn, resid)
    raise LandscapeViolation(lmin, resid)


def refine_critical_point(theta: FactorPair, m: IncompleteMatrix, grad_tol: float | None = None,
                          max_iter: int = 100):
    """Newton iteration on the gradient map to land on a nearby critical point.

    Uses a least-squares Newton step (the Hessian is singular along the
    factorization's symmetry directions) with backtracking on the gradient
    norm. Returns ``(theta, grad_norm, converged)``.
    """
    grad_tol = default_critical_tol(m) * 1e-2 if grad_tol is None else grad_tol
    d = theta.d
    x = pack(theta)
    g = pack(risk_gradient(theta, m))
    gn = float(np.linalg.norm(g))
    for _ in range(max_iter):
        if gn <= grad_tol:
            return unpack(x, d), gn, True
        h = hessian(unpack(x, d), m)
        step = np.linalg.lstsq(h, -g, rcond=1e-12)[0]
        t = 1.0
        while t > 1e-6:
            xn = x + t * step
            gnew = pack(risk_gradient(unpack(xn, d), m))
            gnn = float(np.linalg.norm(gnew))
            if gnn < gn:
                break
            t *= 0.5
        else:
            break
        x, g, gn = xn, gnew, gnn
    return unpack(x, d), gn, gn <= grad_tol


# ----------------------------------------------------------------------------
# escape direction


@dataclass(frozen=True)
class EscapeDirection:
    sigma1: float
    u1: np.ndarray
    v1: np.ndarray
    gap: float
    well_defined: bool


def escape_direction(theta_c: FactorPair, m: IncompleteMatrix, gap_floor: float = 1e-9) -> EscapeDirection:
    """Top singular triple of (M - W_c) on the mask."""
    res = svd(-residual_matrix(theta_c, m))
    s = res.singular_values
    gap = float(s[0] - (s[1] if s.size > 1 else 0.0))
    return EscapeDirection(float(s[0]), res.left_vectors[:, 0].copy(),
                           res.right_vectors[:, 0].copy(), gap, gap > gap_floor)


def rank_increment_alignment(w_c, w_probe, k: int, u1, v1):
    """Overlap of the newly grown direction of W with (u1, v1).

    The part of ``w_probe`` outside the top-``k`` left and right singular
    subspaces of ``w_c`` is the rank increment; its top singular pair is
    compared with the predicted direction. Returns ``(|<u,u1>|, |<v,v1>|)``.
    """
    res_c = svd(w_c)
    uc = res_c.left_vectors[:, :k]
    vc = res_c.right_vectors[:, :k]
    dim = uc.shape[0]
    e = (np.eye(dim) - uc @ uc.T) @ np.asarray(w_probe) @ (np.eye(dim) - vc @ vc.T)
    r = svd(e)
    return abs(float(r.left_vectors[:, 0] @ u1)), abs(float(r.right_vectors[:, 0] @ v1))


def restricted_min_eigenvalue(theta: FactorPair, m: IncompleteMatrix, k: int) -> float:
    """Smallest Hessian eigenvalue on the tangent of the rank-k manifold through theta.

    The manifold keeps the rows of A and the columns of B inside the span of
    the top-k right singular vectors of W_aug.
    """
    d = theta.d
    waug = np.vstack([theta.a, theta.b.T])
    q = svd(waug).right_vectors[:, :k]
    basis = np.kron(np.eye(2 * d), q)          # (2 d^2, 2 d k)
    hr = basis.T @ hessian(theta, m) @ basis
    lam, _ = symmetric_eigen(0.5 * (hr + hr.T))
    return float(lam[-1])


# ----------------------------------------------------------------------------
# trajectory analysis


@dataclass
class PlateauAnalysis:
    index: int
    rank: int
    refined: bool
    grad_norm: float
    classification: CriticalPointClass | None = None
    violation: str | None = None
    escape: EscapeDirection | None = None
    assumption_holds: bool = False
    alignment: tuple | None = None
    next_rank: int | None = None
    notes: list = field(default_factory=list)


def analyze_plateaus(traj, m: IncompleteMatrix, gap_tol: float = 1e-6) -> list:
    """Refine, classify and check the escape direction of every plateau.

    A transition qualifies for the alignment check when the plateau's top
    residual singular value is unique (gap_tol) and the next plateau has a
    larger effective rank. The probe is the last record of the plateau.
    """
    out = []
    plats = traj.plateaus
    policy = output_rank_policy(m)
    for idx, p in enumerate(plats):
        theta_c, gn, ok = refine_critical_point(p.theta, m)
        pa = PlateauAnalysis(index=idx, rank=p.effective_rank, refined=ok, grad_norm=gn)
        if not ok:
            pa.notes.append("refinement did not reach a critical point")
            out.append(pa)
            continue
        try:
            pa.classification = classify_critical_point(theta_c, m)
        except LandscapeViolation as exc:
            pa.violation = str(exc)
        esc = escape_direction(theta_c, m)
        pa.escape = esc
        dm = residual_matrix(theta_c, m)
        pa.assumption_holds = esc.well_defined and unique_top_singular_check(dm, gap_tol)
        if idx + 1 < len(plats):
            pa.next_rank = plats[idx + 1].effective_rank
            if (pa.classification is not None and pa.classification.is_saddle
                    and pa.assumption_holds and pa.next_rank > pa.rank):
                w_c = effective_output(theta_c, m)
                k = policy.count(singular_values(w_c))
                w_probe = effective_output(traj.theta_at(p.end_index), m)
                pa.alignment = rank_increment_alignment(w_c, w_probe, k, esc.u1, esc.v1)
        out.append(pa)
    return out
