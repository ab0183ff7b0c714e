"""Two-factor model W = AB, its masked loss, gradient descent and trajectory tools."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.signal import find_peaks

from .linalg import (RankPolicy, as_matrix, orthonormal_basis, principal_angles,
                     singular_values, svd)
from .observation import IncompleteMatrix, build_observation_graph


class TrainingDivergence(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"loss became non-finite ({loss}) at step {step}")
        self.step = step
        self.loss = loss


@dataclass(frozen=True)
class FactorPair:
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = as_matrix(self.a, "a")
        b = as_matrix(self.b, "b")
        if a.shape[1] != b.shape[0]:
            raise ValueError(f"inner dimensions differ: {a.shape} vs {b.shape}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def w(self) -> np.ndarray:
        return self.a @ self.b

    @property
    def d(self) -> int:
        return self.a.shape[0]

    @classmethod
    def zeros(cls, d: int) -> "FactorPair":
        return cls(np.zeros((d, d)), np.zeros((d, d)))

    @classmethod
    def random(cls, d: int, variance: float, seed=None) -> "FactorPair":
        rng = np.random.default_rng(seed)
        std = np.sqrt(variance)
        return cls(rng.normal(0.0, std, (d, d)), rng.normal(0.0, std, (d, d)))


def _n(m: IncompleteMatrix, n=None) -> int:
    n = m.n if n is None else n
    if n <= 0:
        raise ValueError("empirical risk needs at least one observation")
    return n


def residual_matrix(theta: FactorPair, m: IncompleteMatrix) -> np.ndarray:
    """(AB - M) on observed entries, zero elsewhere."""
    return (theta.w - m.values) * m.maskf


def empirical_risk(theta: FactorPair, m: IncompleteMatrix, n=None) -> float:
    r = residual_matrix(theta, m)
    return float(np.sum(r * r) / _n(m, n))


def risk_gradient(theta: FactorPair, m: IncompleteMatrix, n=None) -> FactorPair:
    """Gradient of the empirical risk: ((2/n) dM B^T, (2/n) A^T dM)."""
    c = 2.0 / _n(m, n)
    r = residual_matrix(theta, m)
    return FactorPair(c * r @ theta.b.T, c * theta.a.T @ r)


def gradient_norm(theta: FactorPair, m: IncompleteMatrix) -> float:
    g = risk_gradient(theta, m)
    return float(np.sqrt(np.sum(g.a ** 2) + np.sum(g.b ** 2)))


def augmented(theta: FactorPair) -> np.ndarray:
    """Vertical stack of A over B^T."""
    return np.vstack([theta.a, theta.b.T])


def gd_step(theta: FactorPair, m: IncompleteMatrix, lr: float, n=None) -> FactorPair:
    """One plain gradient-descent step (no guard)."""
    g = risk_gradient(theta, m, n)
    return FactorPair(theta.a - lr * g.a, theta.b - lr * g.b)


def effective_output(theta_or_w, m: IncompleteMatrix) -> np.ndarray:
    """W with rows and columns that carry no observation set to zero.

    Those rows/cols only hold the untouched initialization noise.
    """
    w = theta_or_w.w if isinstance(theta_or_w, FactorPair) else np.array(theta_or_w, dtype=float)
    g = build_observation_graph(m)
    keep_r = np.zeros(m.d, dtype=bool)
    keep_c = np.zeros(m.d, dtype=bool)
    keep_r[list(g.row_vertices)] = True
    keep_c[list(g.col_vertices)] = True
    out = w.copy()
    out[~keep_r, :] = 0.0
    out[:, ~keep_c] = 0.0
    return out


def default_learning_rate(m: IncompleteMatrix, fraction: float = 0.05) -> float:
    """Step size scaled to the curvature near a fit, ~ n / (2 sigma_1(M_S))."""
    s1 = float(singular_values(m.values)[0])
    return fraction * m.n / (2.0 * s1)


def output_rank_policy(m: IncompleteMatrix, floor: float = 1e-2) -> RankPolicy:
    """Rank policy for W on a plateau: ignores growth still at init scale."""
    s1 = float(singular_values(m.values)[0])
    return RankPolicy(1e-4, floor * s1)


def factor_rank_policy(m: IncompleteMatrix, floor: float = 1e-2) -> RankPolicy:
    """Rank policy for A, B^T and W_aug, whose scale is ~ sqrt of W's."""
    s1 = float(singular_values(m.values)[0])
    return RankPolicy(1e-4, floor * np.sqrt(s1))


# ----------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    init_variance: float = 1e-8
    learning_rate: Optional[float] = None   # None -> default_learning_rate
    max_steps: int = 200_000
    loss_tolerance: float = 1e-10
    record_stride: int = 10
    rng_seed: int = 0
    plateau_grad_threshold: Optional[float] = None  # None -> valley detection
    plateau_prominence: float = 2.0
    plateau_min_length: int = 5
    plateau_rank_floor: float = 1e-2

    def __post_init__(self):
        if not self.init_variance > 0:
            raise ValueError("init_variance must be positive")
        if self.learning_rate is not None and not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.max_steps < 1 or self.record_stride < 1 or self.plateau_min_length < 1:
            raise ValueError("step counts must be positive")
        if not (0 < self.loss_tolerance < 1):
            raise ValueError("loss_tolerance must lie in (0, 1)")
        if self.plateau_grad_threshold is not None and not self.plateau_grad_threshold > 0:
            raise ValueError("plateau_grad_threshold must be positive")
        if not self.plateau_prominence > 1:
            raise ValueError("plateau_prominence is a ratio and must exceed 1")

    def with_(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


@dataclass
class PlateauRecord:
    start_step: int
    end_step: int
    mid_step: int
    effective_rank: int
    output_snapshot: np.ndarray
    residual_top_singular: tuple
    theta: FactorPair
    start_index: int = 0
    end_index: int = 0
    grad_threshold: float = 0.0


@dataclass
class Trajectory:
    d: int
    steps: np.ndarray
    loss: np.ndarray
    grad_norm: np.ndarray
    sv_w: np.ndarray
    sv_a: np.ndarray
    sv_b: np.ndarray
    sv_waug: np.ndarray
    states: np.ndarray                  # (records, 2 d^2) packed (A, B)
    converged: bool
    final_lr: float
    lr_halvings: int
    snapshots: list = field(default_factory=list)
    plateaus: list = field(default_factory=list)

    def __len__(self):
        return len(self.steps)

    def theta_at(self, index: int) -> FactorPair:
        d = self.d
        s = self.states[index]
        return FactorPair(s[: d * d].reshape(d, d).copy(), s[d * d:].reshape(d, d).copy())

    def index_of(self, step: int) -> int:
        k = int(np.searchsorted(self.steps, step))
        if k >= len(self.steps) or self.steps[k] != step:
            raise KeyError(f"step {step} was not recorded")
        return k

    def header(self) -> list:
        cols = ["step", "loss", "grad_norm"]
        for name in ("sv_w", "sv_a", "sv_b", "sv_waug"):
            cols += [f"{name}_{k}" for k in range(1, self.d + 1)]
        return cols

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(self.header())
            for k in range(len(self.steps)):
                row = [str(int(self.steps[k])), repr(float(self.loss[k])),
                       repr(float(self.grad_norm[k]))]
                for arr in (self.sv_w, self.sv_a, self.sv_b, self.sv_waug):
                    row += [repr(float(x)) for x in arr[k]]
                wr.writerow(row)


def loss_rounding_slack(r: np.ndarray, loss: float, mmax: float, n: int) -> float:
    """Size of floating-point noise in the loss, used by the monotonicity guard."""
    eps = np.finfo(float).eps
    return 16 * eps * (loss + float(np.abs(r).sum()) * mmax / n)


def _pack(a, b):
    return np.concatenate([a.ravel(), b.ravel()])


def train(m: IncompleteMatrix, cfg: TrainConfig | None = None, init: FactorPair | None = None):
    """Gradient descent from small Gaussian initialization.

    A step that would raise the loss is retried at half the learning rate and
    the halved rate is kept from then on. Returns ``(final, trajectory)``.
    """
    cfg = cfg or TrainConfig()
    d = m.d
    n = m.n
    if n == 0:
        raise ValueError("cannot train without observations")
    lr = cfg.learning_rate if cfg.learning_rate is not None else default_learning_rate(m)
    if init is None:
        init = FactorPair.random(d, cfg.init_variance, cfg.rng_seed)
    a = init.a.copy()
    b = init.b.copy()
    M = m.values
    P = m.maskf
    c = 2.0 / n
    mmax = float(np.abs(M).max())

    rec_steps, rec_loss, rec_grad = [], [], []
    rec_sw, rec_sa, rec_sb, rec_sg, rec_state = [], [], [], [], []

    def record(step, loss, ga, gb):
        rec_steps.append(step)
        rec_loss.append(loss)
        rec_grad.append(np.sqrt(np.sum(ga * ga) + np.sum(gb * gb)))
        rec_sw.append(np.linalg.svd(a @ b, compute_uv=False))
        rec_sa.append(np.linalg.svd(a, compute_uv=False))
        rec_sb.append(np.linalg.svd(b, compute_uv=False))
        rec_sg.append(np.linalg.svd(np.vstack([a, b.T]), compute_uv=False))
        rec_state.append(_pack(a, b))

    with np.errstate(over="ignore", invalid="ignore"):  # non-finite loss is raised as divergence below
        r = (a @ b - M) * P
        loss = float(np.sum(r * r) / n)
    halvings = 0
    step = 0
    converged = False
    while True:
        if not np.isfinite(loss):
            raise TrainingDivergence(step, loss)
        ga = c * r @ b.T
        gb = c * a.T @ r
        done = loss < cfg.loss_tolerance or step >= cfg.max_steps
        if step % cfg.record_stride == 0 or done:
            record(step, loss, ga, gb)
        if done:
            converged = loss < cfg.loss_tolerance
            break
        slack = loss_rounding_slack(r, loss, mmax, n)
        for _ in range(80):
            a_new = a - lr * ga
            b_new = b - lr * gb
            r_new = (a_new @ b_new - M) * P
            loss_new = float(np.sum(r_new * r_new) / n)
            if loss_new <= loss + slack:
                break
            lr *= 0.5
            halvings += 1
        else:
            raise TrainingDivergence(step + 1, loss_new)
        a, b, r, loss = a_new, b_new, r_new, loss_new
        step += 1

    traj = Trajectory(
        d=d,
        steps=np.array(rec_steps, dtype=np.int64),
        loss=np.array(rec_loss),
        grad_norm=np.array(rec_grad),
        sv_w=np.array(rec_sw),
        sv_a=np.array(rec_sa),
        sv_b=np.array(rec_sb),
        sv_waug=np.array(rec_sg),
        states=np.array(rec_state),
        converged=converged,
        final_lr=lr,
        lr_halvings=halvings,
    )
    traj.plateaus = detect_plateaus(traj, cfg, m)
    keep = set(range(0, len(traj), 100))
    keep |= {traj.index_of(p.mid_step) for p in traj.plateaus}
    keep.add(len(traj) - 1)
    traj.snapshots = [(int(traj.steps[k]), traj.theta_at(k)) for k in sorted(keep)]
    return FactorPair(a, b), traj


# ----------------------------------------------------------------------------
# plateaus


def _runs(flags: np.ndarray):
    runs, k, total = [], 0, len(flags)
    while k < total:
        if flags[k]:
            j = k
            while j + 1 < total and flags[j + 1]:
                j += 1
            runs.append((k, j))
            k = j + 1
        else:
            k += 1
    return runs


def _valley_segments(g: np.ndarray, prominence: float):
    """Plateau index ranges found as valleys of log-gradient between peaks.

    Each valley's plateau is the contiguous run around its minimum lying below
    the geometric mean of that minimum and the lower neighbouring peak.
    """
    logg = np.log(np.maximum(g, 1e-300))
    peaks, _ = find_peaks(logg, prominence=np.log(prominence))
    bounds = [0] + list(peaks) + [len(g) - 1]
    out = []
    for left, right in zip(bounds[:-1], bounds[1:]):
        seg = logg[left:right + 1]
        kmin = left + int(np.argmin(seg))
        ref = []
        if left in peaks:
            ref.append(logg[left])
        if right in peaks:
            ref.append(logg[right])
        if not ref:
            ref.append(seg.max())
        level = 0.5 * (logg[kmin] + min(ref))
        s = e = kmin
        while s > left and logg[s - 1] <= level:
            s -= 1
        while e < right and logg[e + 1] <= level:
            e += 1
        out.append((s, e, float(np.exp(level))))
    return out


def detect_plateaus(traj: Trajectory, cfg: TrainConfig, m: IncompleteMatrix) -> list:
    """Stretches of small gradient norm, each summarized at its midpoint.

    With ``cfg.plateau_grad_threshold`` set, plateaus are the runs below that
    absolute threshold. Otherwise they are valleys of the log-gradient curve
    separated by peaks of at least ``cfg.plateau_prominence`` (a ratio).
    A converged run always ends with a terminal plateau, even a short one.
    """
    last = len(traj) - 1
    if cfg.plateau_grad_threshold is not None:
        thr = cfg.plateau_grad_threshold
        cand = [(s, e, thr) for s, e in _runs(traj.grad_norm < thr)]
    else:
        cand = _valley_segments(traj.grad_norm, cfg.plateau_prominence)
    out = []
    for s, e, thr in cand:
        terminal = e == last and traj.converged
        if e - s + 1 < cfg.plateau_min_length and not terminal:
            continue
        out.append((s, e, thr))
    if traj.converged and (not out or out[-1][1] != last):
        out.append((last, last, float(traj.grad_norm[last]) * 2))
    policy = output_rank_policy(m, cfg.plateau_rank_floor)
    records = []
    for s, e, thr in out:
        mid = (s + e) // 2
        theta = traj.theta_at(mid)
        w = effective_output(theta, m)
        res = svd((m.values - theta.w) * m.maskf)
        records.append(PlateauRecord(
            start_step=int(traj.steps[s]), end_step=int(traj.steps[e]),
            mid_step=int(traj.steps[mid]),
            effective_rank=policy.count(singular_values(w)),
            output_snapshot=w, residual_top_singular=res.triple(0), theta=theta,
            start_index=s, end_index=e, grad_threshold=thr))
    return records


def plateau_ranks(traj: Trajectory) -> list:
    return [p.effective_rank for p in traj.plateaus]


# ----------------------------------------------------------------------------
# invariant-manifold monitors


@dataclass(frozen=True)
class HimtResult:
    holds: bool
    ranks: tuple
    max_angle: float


def himt_check(theta: FactorPair, policy: RankPolicy | None = None,
               angle_tol: float = 1e-2) -> HimtResult:
    """Check rank(A) = rank(B^T) = rank(W_aug) and alignment of row(A) with col(B).

    For aligned balanced factors the singular values of W_aug are sqrt(2)
    times those of A and B, so its absolute cutoff is scaled accordingly.
    """
    policy = policy or RankPolicy()
    aug_policy = RankPolicy(policy.relative_threshold, policy.absolute_threshold * np.sqrt(2.0))
    sa = svd(theta.a)
    sb = svd(theta.b)
    ra = policy.count(sa.singular_values)
    rb = policy.count(sb.singular_values)
    rg = aug_policy.count(singular_values(augmented(theta)))
    max_angle = 0.0
    if ra == rb and ra > 0:
        ang = principal_angles(sa.right_vectors[:, :ra], sb.left_vectors[:, :rb])
        max_angle = float(ang.max())
    elif ra != rb:
        max_angle = float(np.pi / 2)
    holds = ra == rb == rg and max_angle <= angle_tol
    return HimtResult(holds, (ra, rb, rg), max_angle)


def _span_residuals(vectors: np.ndarray, q: np.ndarray):
    """Per-vector norm and distance to span(q); vectors are rows."""
    proj = vectors @ q @ q.T
    return np.linalg.norm(vectors, axis=1), np.linalg.norm(vectors - proj, axis=1)


def _in_span(vectors, q, tol) -> bool:
    norms, res = _span_residuals(vectors, q)
    return bool(np.all(res <= tol * norms))


def manifold_membership(theta: FactorPair, basis, tol: float = 1e-10) -> bool:
    """Every row of A and every column of B lies in span(basis)."""
    q = orthonormal_basis(np.column_stack(basis) if isinstance(basis, (list, tuple)) else basis)
    return _in_span(theta.a, q, tol) and _in_span(theta.b.T, q, tol)


def sub_manifold_membership(theta: FactorPair, comp, basis, tol: float = 1e-10) -> bool:
    """Component rows of A / cols of B in span(basis); all other rows/cols zero."""
    rows, cols = (comp.rows, comp.cols) if hasattr(comp, "rows") else comp
    q = orthonormal_basis(np.column_stack(basis) if isinstance(basis, (list, tuple)) else basis)
    d = theta.d
    rmask = np.zeros(d, dtype=bool)
    cmask = np.zeros(d, dtype=bool)
    rmask[list(rows)] = True
    cmask[list(cols)] = True
    a_in, a_out = theta.a[rmask], theta.a[~rmask]
    b_in, b_out = theta.b.T[cmask], theta.b.T[~cmask]
    if a_out.size and np.abs(a_out).max() > tol:
        return False
    if b_out.size and np.abs(b_out).max() > tol:
        return False
    return _in_span(a_in, q, tol) and _in_span(b_in, q, tol)


def balance_matrix(theta: FactorPair) -> np.ndarray:
    """A^T A - B B^T, conserved by the gradient flow."""
    return theta.a.T @ theta.a - theta.b @ theta.b.T
