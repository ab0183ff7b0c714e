"""Reference completions: minimum nuclear norm, minimum rank and greedy low-rank learning."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .dynamics import TrainConfig, default_learning_rate, loss_rounding_slack
from .linalg import RankPolicy, nuclear_norm, numerical_rank, svd
from .observation import IncompleteMatrix, components_of


class OracleError(RuntimeError):
    pass


HEURISTIC_UPPER_BOUND = "HEURISTIC_UPPER_BOUND"


@dataclass
class OracleResult:
    completion: np.ndarray
    objective: float
    method: str
    certified: bool
    certificate: dict = field(default_factory=dict)

    @property
    def rank(self) -> int:
        return numerical_rank(self.completion, RankPolicy(1e-8, 1e-10))

    @property
    def nuclear_norm(self) -> float:
        return nuclear_norm(self.completion)

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "objective": float(self.objective),
            "rank": int(self.rank),
            "nuclear_norm": float(self.nuclear_norm),
            "certified": bool(self.certified),
            "completion": [[float(x) for x in row] for row in self.completion],
            "certificate": _jsonable(self.certificate),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


# ----------------------------------------------------------------------------
# minimum nuclear norm


@dataclass
class ConvexSolverConfig:
    max_iterations: int = 50_000
    step_size: float = 1.0
    primal_tolerance: float = 1e-9
    objective_tolerance: float = 1e-10

    def __post_init__(self):
        if not (self.max_iterations > 0 and self.step_size > 0
                and self.primal_tolerance > 0 and self.objective_tolerance > 0):
            raise ValueError("solver parameters must be positive")


def singular_value_threshold(x: np.ndarray, tau: float) -> np.ndarray:
    """Proximal map of tau * nuclear norm."""
    u, s, vt = np.linalg.svd(x, full_matrices=False)
    return (u * np.maximum(s - tau, 0.0)) @ vt


def min_nuclear_norm_general(m: IncompleteMatrix, cfg: ConvexSolverConfig | None = None) -> OracleResult:
    """Douglas-Rachford splitting for min ||W||_* subject to W = M on the mask."""
    cfg = cfg or ConvexSolverConfig()
    if m.n == 0:
        raise OracleError("no observations")
    p = m.mask
    mv = m.values
    scale = max(1.0, float(np.linalg.norm(mv)))
    z = mv.copy()
    x = z.copy()
    gap = np.inf
    it = 0
    converged = False
    for it in range(1, cfg.max_iterations + 1):
        x_new = z.copy()
        x_new[p] = mv[p]
        y = singular_value_threshold(2 * x_new - z, cfg.step_size)
        z = z + y - x_new
        gap = float(np.linalg.norm(y - x_new))
        move = float(np.linalg.norm(x_new - x))
        x = x_new
        if gap < cfg.primal_tolerance * scale and move < cfg.primal_tolerance * scale:
            converged = True
            break
    x = x.copy()
    x[p] = mv[p]
    return OracleResult(
        completion=x, objective=nuclear_norm(x), method="douglas_rachford",
        certified=converged,
        certificate={"iterations": it, "last_gap": gap, "converged": converged})


def min_nuclear_norm_bipartite_blocks(m: IncompleteMatrix) -> OracleResult:
    """Sum of block nuclear norms; valid when every component is a complete block."""
    comps = components_of(m)
    if not len(comps):
        raise OracleError("no observations")
    for c in comps:
        if not c.is_complete:
            raise OracleError(
                f"component rows {list(c.rows)} x cols {list(c.cols)} is not complete bipartite")
    w = np.zeros((m.d, m.d))
    parts = []
    for c in comps:
        block = m.values[np.ix_(c.rows, c.cols)]
        w[np.ix_(c.rows, c.cols)] = block
        parts.append(nuclear_norm(block))
    return OracleResult(completion=w, objective=float(sum(parts)), method="block_analytic",
                        certified=True, certificate={"block_nuclear_norms": parts})


# ----------------------------------------------------------------------------
# rank one feasibility


def rank1_completion_feasible(m: IncompleteMatrix, rtol: float = 1e-8):
    """Exact test for a rank-1 completion, with a witness when one exists.

    On each component, fix one row factor to +1 and propagate log-magnitudes
    and signs along a BFS spanning tree; every remaining edge must agree.
    """
    d = m.d
    logx = np.zeros(d)
    sgx = np.zeros(d)
    logy = np.zeros(d)
    sgy = np.zeros(d)
    vals = m.values
    for comp in components_of(m):
        adj_r: dict = {}
        adj_c: dict = {}
        for i, j in comp.edges:
            adj_r.setdefault(i, []).append(j)
            adj_c.setdefault(j, []).append(i)
        root = comp.rows[0]
        seen_r = {root}
        seen_c: set = set()
        logx[root], sgx[root] = 0.0, 1.0
        queue = deque([("r", root)])
        while queue:
            kind, k = queue.popleft()
            if kind == "r":
                for j in adj_r[k]:
                    if j not in seen_c:
                        seen_c.add(j)
                        logy[j] = np.log(abs(vals[k, j])) - logx[k]
                        sgy[j] = np.sign(vals[k, j]) * sgx[k]
                        queue.append(("c", j))
            else:
                for i in adj_c[k]:
                    if i not in seen_r:
                        seen_r.add(i)
                        logx[i] = np.log(abs(vals[i, k])) - logy[k]
                        sgx[i] = np.sign(vals[i, k]) * sgy[k]
                        queue.append(("r", i))
        for i, j in comp.edges:
            pred = sgx[i] * sgy[j] * np.exp(logx[i] + logy[j])
            if abs(pred - vals[i, j]) > rtol * abs(vals[i, j]):
                return False, None
    x = sgx * np.exp(logx)
    y = sgy * np.exp(logy)
    witness = np.outer(x, y)
    witness[m.mask] = vals[m.mask]
    return True, witness


# ----------------------------------------------------------------------------
# minimum rank search


def _als_batch(m: IncompleteMatrix, r: int, restarts: int, rng, iters: int, ridge: float):
    """Alternating least squares on ``restarts`` independent rank-r starts at once."""
    d = m.d
    p = m.maskf
    mv = m.values
    scale = np.linalg.norm(mv) / np.sqrt(max(d * r, 1))
    x = rng.normal(0, 1, (restarts, d, r)) * np.sqrt(scale)
    y = rng.normal(0, 1, (restarts, d, r)) * np.sqrt(scale)
    eye = ridge * np.eye(r)

    def solve(fixed, mask, vals):
        # rows i: min sum_j mask_ij (f_j . z_i - vals_ij)^2
        g = np.einsum("ij,bjk,bjl->bikl", mask, fixed, fixed) + eye
        rhs = np.einsum("ij,ij,bjk->bik", mask, vals, fixed)
        return np.linalg.solve(g, rhs[..., None])[..., 0]

    hist = []
    for _ in range(iters):
        x = solve(y, p, mv)
        y = solve(x, p.T, mv.T)
        res = np.sqrt(np.sum(((np.einsum("bik,bjk->bij", x, y) - mv) * p) ** 2, axis=(1, 2)))
        hist.append(res.min())
        if res.min() < 1e-12 * max(1.0, np.linalg.norm(mv)):
            break
    return x, y, res


def min_rank_search(m: IncompleteMatrix, restarts: int = 50, fit_tol: float = 1e-6,
                    seed: int = 0, iters: int = 3000, ridge: float = 1e-12) -> OracleResult:
    """Smallest rank that fits the observations.

    Ranks 0 and 1 are decided exactly; for r >= 2 the answer is the first
    rank reached by multi-restart ALS and is only an upper bound.
    ``fit_tol`` is relative to the Frobenius norm of the observed data.
    """
    scale = max(1.0, float(np.linalg.norm(m.values)))
    if m.n == 0:
        return OracleResult(np.zeros((m.d, m.d)), 0, "exact_rank0", True, {"rank": 0})
    ok, witness = rank1_completion_feasible(m)
    if ok:
        return OracleResult(witness, 1, "exact_rank1", True, {"rank": 1})
    rng = np.random.default_rng(seed)
    best_res = {}
    for r in range(2, m.d):
        x, y, res = _als_batch(m, r, restarts, rng, iters, ridge)
        k = int(np.argmin(res))
        best_res[r] = float(res[k] / scale)
        if res[k] <= fit_tol * scale:
            w = x[k] @ y[k].T
            w[m.mask] = m.values[m.mask]
            return OracleResult(w, r, HEURISTIC_UPPER_BOUND, False,
                                {"rank": r, "restarts": restarts,
                                 "successes": int(np.sum(res <= fit_tol * scale)),
                                 "best_relative_residual": best_res})
    # full rank always fits: fill the gaps generically
    w = m.values.copy()
    free = ~m.mask
    w[free] = rng.normal(0, 1, int(free.sum())) * scale / m.d
    if numerical_rank(w) != m.d:
        raise OracleError("generic fill did not reach full rank")
    return OracleResult(w, m.d, HEURISTIC_UPPER_BOUND if m.d > 1 else "exact_rank1",
                        m.d <= 1, {"rank": m.d, "best_relative_residual": best_res})


# ----------------------------------------------------------------------------
# greedy low-rank learning


@dataclass
class GlrlStage:
    rank: int
    loss: float
    grad_norm: float
    steps: int
    converged: bool
    output: np.ndarray


def _factor_loss_grad(u, v, mv, p, n):
    r = (u @ v.T - mv) * p
    loss = float(np.sum(r * r) / n)
    return loss, (2.0 / n) * r @ v, (2.0 / n) * r.T @ u, r


def glrl(m: IncompleteMatrix, cfg: TrainConfig | None = None, eps_rel: float = 1e-6,
         stage_grad_tol: float = 1e-9):
    """Greedy low-rank learning: add one rank at a time along the top residual direction.

    Each stage appends eps*u, eps*v (eps = eps_rel * sigma_1 of the masked
    negative gradient) to the current factors and runs gradient descent
    inside that rank until the gradient is below ``stage_grad_tol``. Stages
    stop once the loss is below ``cfg.loss_tolerance``.
    Returns ``(result, stage_outputs)``.
    """
    cfg = cfg or TrainConfig()
    d, n = m.d, m.n
    mv, p = m.values, m.maskf
    mmax = float(np.abs(mv).max())
    lr0 = cfg.learning_rate if cfg.learning_rate is not None else default_learning_rate(m)
    u = np.zeros((d, 0))
    v = np.zeros((d, 0))
    stages = []
    loss = float(np.sum((mv * p) ** 2) / n)
    for rank in range(1, d + 1):
        if loss < cfg.loss_tolerance:
            break
        neg_grad = (2.0 / n) * (mv - u @ v.T) * p
        sig, uu, vv = svd(neg_grad).triple(0)
        eps = eps_rel * sig
        u = np.column_stack([u, eps * uu])
        v = np.column_stack([v, eps * vv])
        lr = lr0
        loss, gu, gv, r = _factor_loss_grad(u, v, mv, p, n)
        steps = 0
        gn = float(np.sqrt(np.sum(gu ** 2) + np.sum(gv ** 2)))
        while steps < cfg.max_steps and gn >= stage_grad_tol:
            slack = loss_rounding_slack(r, loss, mmax, n)
            for _ in range(80):
                un, vn = u - lr * gu, v - lr * gv
                ln, gun, gvn, rn = _factor_loss_grad(un, vn, mv, p, n)
                if ln <= loss + slack:
                    break
                lr *= 0.5
            u, v, loss, gu, gv, r = un, vn, ln, gun, gvn, rn
            gn = float(np.sqrt(np.sum(gu ** 2) + np.sum(gv ** 2)))
            steps += 1
        ok = gn < stage_grad_tol
        stages.append(GlrlStage(rank, loss, gn, steps, ok, u @ v.T))
    w = u @ v.T
    all_ok = all(s.converged for s in stages)
    res = OracleResult(
        completion=w, objective=float(u.shape[1]), method="glrl", certified=False,
        certificate={"stage_losses": [s.loss for s in stages],
                     "stage_steps": [s.steps for s in stages],
                     "stages_converged": all_ok, "final_loss": loss})
    return res, [s.output for s in stages]


def nuclear_norm_oracle(m: IncompleteMatrix, cfg: ConvexSolverConfig | None = None) -> OracleResult:
    """Block-analytic value when every component is a complete block, else the convex solver."""
    if all(c.is_complete for c in components_of(m)):
        return min_nuclear_norm_bipartite_blocks(m)
    return min_nuclear_norm_general(m, cfg)




def single_entry_rank_drop_value(m: IncompleteMatrix) -> float:
    """Value of the one missing entry that makes the completion singular.

    The determinant is affine in the missing entry: det(x) = det(0) + x * cofactor.
    """
    free = np.argwhere(~m.mask)
    if len(free) != 1:
        raise OracleError(f"need exactly one missing entry, found {len(free)}")
    i, j = free[0]
    w = m.values.copy()
    w[i, j] = 0.0
    cof = np.linalg.det(np.delete(np.delete(w, i, axis=0), j, axis=1)) * (-1) ** (i + j)
    if abs(cof) < 1e-12:
        raise OracleError("cofactor vanishes; the determinant does not depend on the entry")
    return float(-np.linalg.det(w) / cof)


__all__ = [
    "OracleResult", "ConvexSolverConfig", "OracleError", "HEURISTIC_UPPER_BOUND",
    "singular_value_threshold", "min_nuclear_norm_general", "min_nuclear_norm_bipartite_blocks",
    "rank1_completion_feasible", "min_rank_search", "glrl", "nuclear_norm_oracle",
    "single_entry_rank_drop_value",
]
