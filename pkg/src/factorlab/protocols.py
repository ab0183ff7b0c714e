"""Experiment protocols: scenario runs, random-sampling study, init-scale sweeps, census."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import (TrainConfig, effective_output, factor_rank_policy, himt_check,
                       output_rank_policy, train)
from .landscape import analyze_plateaus
from .linalg import RankPolicy, nuclear_norm, singular_values
from .observation import (ConnectivityClass, IncompleteMatrix, canonical_pattern,
                          classify_connectivity, enumerate_pattern_classes)
from .oracles import (glrl, min_nuclear_norm_bipartite_blocks, min_nuclear_norm_general,
                      min_rank_search, nuclear_norm_oracle)
from .plots import write_svg
from .scenarios import Scenario, generate_random_instance


def learned_rank(w, policy: RankPolicy | None = None) -> int:
    return (policy or RankPolicy()).count(singular_values(w))


def extrapolated_rank(sv_by_variance, policy: RankPolicy | None = None,
                      shrink_factor: float = 10.0) -> int:
    """Rank in the small-initialization limit from a ladder of runs.

    ``sv_by_variance`` lists singular-value tuples for decreasing init
    variance. A value counts when it is significant at the smallest variance
    and did not shrink by ``shrink_factor`` or more since the previous rung.
    """
    policy = policy or RankPolicy()
    last = np.asarray(sv_by_variance[-1], dtype=float)
    cut = policy.cutoff(float(last.max()) if last.size else 0.0)
    keep = last > cut
    if len(sv_by_variance) > 1:
        prev = np.asarray(sv_by_variance[-2], dtype=float)
        keep &= ~(last * shrink_factor <= prev)
    return int(keep.sum())


# ----------------------------------------------------------------------------
# scenario runs


@dataclass
class PropertyResult:
    passed: bool
    value: object
    expected: object
    detail: str = ""


@dataclass
class RunReport:
    scenario: str
    connectivity: str
    learned_rank: int
    learned_nuclear_norm: float
    oracle_rank: int | None
    oracle_nuclear_norm: float | None
    plateau_summary: list
    properties: dict
    files: list = field(default_factory=list)
    seconds: float = 0.0
    final_output: list = field(default_factory=list)
    singular_values: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.properties.values())

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario,
            "connectivity": self.connectivity,
            "learned_rank": self.learned_rank,
            "learned_nuclear_norm": self.learned_nuclear_norm,
            "oracle_rank": self.oracle_rank,
            "oracle_nuclear_norm": self.oracle_nuclear_norm,
            "final_output": self.final_output,
            "singular_values": self.singular_values,
            "plateaus": self.plateau_summary,
            "properties": {k: {"passed": bool(v.passed), "value": _plain(v.value),
                               "expected": _plain(v.expected), "detail": v.detail}
                           for k, v in self.properties.items()},
            "passed": self.passed,
            "files": self.files,
            "seconds": self.seconds,
        }


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    return x


@dataclass
class RunContext:
    m: IncompleteMatrix
    cfg: TrainConfig
    final: object
    traj: object
    output: np.ndarray
    oracle: dict
    _analysis: list | None = None

    @property
    def analysis(self):
        if self._analysis is None:
            self._analysis = analyze_plateaus(self.traj, self.m)
        return self._analysis


def himt_fraction(traj, m: IncompleteMatrix, angle_tol: float = 1e-2) -> float:
    policy = factor_rank_policy(m)
    holds = [himt_check(traj.theta_at(k), policy, angle_tol).holds for k in range(len(traj))]
    return float(np.mean(holds))


def crossing_steps(traj, m: IncompleteMatrix, count: int = 2):
    """First recorded step at which each of the top singular values of W passes the plateau cutoff."""
    cut = output_rank_policy(m).absolute_threshold
    out = []
    for k in range(count):
        above = np.flatnonzero(traj.sv_w[:, k] > cut)
        out.append(int(traj.steps[above[0]]) if above.size else None)
    return out


def critical_point_audit(analysis) -> dict:
    refined = [a for a in analysis if a.refined]
    return {
        "plateaus": len(analysis),
        "refined": len(refined),
        "strict_saddles": sum(1 for a in refined if a.classification and a.classification.is_saddle),
        "global_minima": sum(1 for a in refined if a.classification and not a.classification.is_saddle),
        "violations": sum(1 for a in refined if a.violation),
    }


def escape_alignments(analysis) -> list:
    return [(a.index, a.rank, a.next_rank, a.alignment) for a in analysis if a.alignment is not None]


def _evaluate(name: str, want, ctx: RunContext) -> PropertyResult:
    m, traj, w = ctx.m, ctx.traj, ctx.output
    if name == "final_rank":
        r = learned_rank(w)
        return PropertyResult(r == want, r, want)
    if name == "rank_above_oracle":
        r, o = learned_rank(w), ctx.oracle["rank"].objective
        return PropertyResult(r > o, r, f"> {o}")
    if name == "matches_min_rank":
        r, o = learned_rank(w), ctx.oracle["rank"].objective
        return PropertyResult(r == o, r, o)
    if name == "nuclear_norm":
        target, tol = want
        v = nuclear_norm(w)
        return PropertyResult(abs(v - target) <= tol, v, target, f"tol {tol}")
    if name == "nuclear_oracle_agreement":
        gen = min_nuclear_norm_general(m).objective
        blk = min_nuclear_norm_bipartite_blocks(m).objective
        rel = abs(gen - blk) / max(abs(blk), 1e-300)
        return PropertyResult(rel <= want, rel, want, f"general {gen:.10g} block {blk:.10g}")
    if name == "himt_fraction":
        frac_min, angle_tol = want
        frac = himt_fraction(traj, m, angle_tol)
        return PropertyResult(frac >= frac_min, frac, frac_min)
    if name == "plateau_ranks":
        ranks = tuple(p.effective_rank for p in traj.plateaus)
        return PropertyResult(ranks == tuple(want), ranks, tuple(want))
    if name == "rank_steps_by_one":
        steps = [(a.rank, a.next_rank) for a in ctx.analysis
                 if a.next_rank is not None and a.assumption_holds]
        ok = all(nr - r == 1 for r, nr in steps)
        return PropertyResult(ok, steps, "+1 per qualifying transition")
    if name == "first_plateau_entries":
        targets, tol = want
        plats = [p for p in traj.plateaus if p.effective_rank >= 1]
        if not plats:
            return PropertyResult(False, None, targets, "no plateau of rank >= 1")
        snap = plats[0].output_snapshot
        err = max(abs(snap[i, j] - v) for (i, j), v in targets.items())
        vals = {f"{i},{j}": float(snap[i, j]) for (i, j) in targets}
        return PropertyResult(err <= tol, vals, {f"{i},{j}": v for (i, j), v in targets.items()},
                              f"max error {err:.3e}, tol {tol}")
    if name == "symmetric":
        pairs, tol = want
        err = max(abs(w[a] - w[b]) for a, b in pairs)
        return PropertyResult(err <= tol, err, tol)
    if name == "glrl_completion":
        target, tol = want
        err = float(np.abs(ctx.oracle["glrl"].completion - np.asarray(target)).max())
        return PropertyResult(err <= tol, err, tol)
    if name == "missing_entry_value":
        (i, j), target, tol = want
        return PropertyResult(abs(w[i, j] - target) <= tol, float(w[i, j]), target, f"tol {tol}")
    if name == "sweep_toward":
        (i, j), target, variances = want
        rows = init_scale_sweep(m, variances, reps=1, seed=ctx.cfg.rng_seed, positions=[(i, j)],
                                base=ctx.cfg)
        errs = [abs(r[f"w_{i}_{j}"] - target) for r in rows]
        ok = all(b < a for a, b in zip(errs, errs[1:]))
        return PropertyResult(ok, [r[f"w_{i}_{j}"] for r in rows], target,
                              "distance to target strictly decreasing over the sweep")
    if name == "simultaneous_crossing":
        t1, t2 = crossing_steps(traj, m, 2)
        if t1 is None or t2 is None:
            return PropertyResult(False, (t1, t2), want, "a singular value never crossed")
        rel = abs(t1 - t2) / max(t1, t2)
        return PropertyResult(rel <= want, rel, want, f"steps {t1}, {t2}")
    if name == "critical_point_audit":
        audit = critical_point_audit(ctx.analysis)
        return PropertyResult(audit["violations"] == 0, audit, "0 violations")
    if name == "escape_alignment":
        al = escape_alignments(ctx.analysis)
        worst = min((min(a[3]) for a in al), default=None)
        ok = worst is None or worst >= want
        return PropertyResult(ok, al, f">= {want}", f"{len(al)} qualifying transitions")
    raise KeyError(f"unknown expected property {name!r}")


def run_oracles(m: IncompleteMatrix, which, cfg: TrainConfig | None = None) -> dict:
    out = {}
    if "nuclear" in which:
        out["nuclear"] = nuclear_norm_oracle(m)
    if "rank" in which:
        out["rank"] = min_rank_search(m)
    if "glrl" in which:
        out["glrl"] = glrl(m, cfg)[0]
    return out


def plateau_summary(traj) -> list:
    return [{"start_step": p.start_step, "end_step": p.end_step, "mid_step": p.mid_step,
             "effective_rank": p.effective_rank,
             "residual_sigma1": float(p.residual_top_singular[0])} for p in traj.plateaus]


def write_trajectory_plots(traj, out: Path, prefix: str = "") -> list:
    files = []
    p = out / f"{prefix}loss.svg"
    write_svg(p, {"loss": (traj.steps, traj.loss), "grad norm": (traj.steps, traj.grad_norm)},
              title="training loss and gradient norm")
    files.append(str(p))
    for key, label in (("sv_w", "W"), ("sv_a", "A"), ("sv_b", "B"), ("sv_waug", "W_aug")):
        arr = getattr(traj, key)
        p = out / f"{prefix}{key}.svg"
        write_svg(p, {f"s{k + 1}": (traj.steps, arr[:, k]) for k in range(arr.shape[1])},
                  title=f"singular values of {label}")
        files.append(str(p))
    return files


def run_scenario(s: Scenario, out_dir=None, overrides: dict | None = None,
                 plots: bool = True) -> RunReport:
    """Train, run oracles and monitors, evaluate expected properties, write artifacts."""
    t0 = time.time()
    m = s.instance()
    cfg = TrainConfig(**{**s.train, **(overrides or {})})
    final, traj = train(m, cfg)
    w = effective_output(final, m)
    oracle = run_oracles(m, s.oracles, cfg)
    ctx = RunContext(m, cfg, final, traj, w, oracle)
    props = {}
    for name, want in s.expected.items():
        try:
            props[name] = _evaluate(name, want, ctx)
        except Exception as exc:  # a failing component marks the property failed
            props[name] = PropertyResult(False, None, want, f"error: {exc}")
    report = RunReport(
        scenario=s.name,
        connectivity=classify_connectivity(m).value,
        learned_rank=learned_rank(w),
        learned_nuclear_norm=nuclear_norm(w),
        oracle_rank=int(oracle["rank"].objective) if "rank" in oracle else None,
        oracle_nuclear_norm=float(oracle["nuclear"].objective) if "nuclear" in oracle else None,
        plateau_summary=plateau_summary(traj),
        properties=props,
        final_output=w.tolist(),
        singular_values=singular_values(w).tolist(),
    )
    if out_dir is not None:
        out = Path(out_dir) / s.name
        out.mkdir(parents=True, exist_ok=True)
        traj.write_csv(out / "trajectory.csv")
        report.files.append(str(out / "trajectory.csv"))
        with open(out / "oracles.json", "w") as fh:
            json.dump({k: v.to_json() for k, v in oracle.items()}, fh, indent=2)
        report.files.append(str(out / "oracles.json"))
        if plots:
            report.files += write_trajectory_plots(traj, out)
        report.seconds = time.time() - t0
        with open(out / "report.json", "w") as fh:
            json.dump(report.to_json(), fh, indent=2)
        report.files.append(str(out / "report.json"))
    report.seconds = time.time() - t0
    report._ctx = ctx
    return report


# ----------------------------------------------------------------------------
# random-sampling study


FIG1_LADDER = (1e-16, 1e-24)


def _write_rows(path, rows: list) -> None:
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(rows[0].keys()), lineterminator="\n")
        wr.writeheader()
        for row in rows:
            wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


@dataclass
class Fig1Result:
    rows: list
    summary: dict


def reproduce_fig1(d: int = 4, ranks=(1, 2, 3), offsets=(-1, 0, 1), reps: int = 10, seed: int = 0,
                   variances=FIG1_LADDER, out_dir=None) -> Fig1Result:
    """Random rank-r instances sampled around n = 2rd - r^2, compared with the oracles.

    Learned rank uses :func:`extrapolated_rank` over the init-variance ladder;
    learned nuclear norm is taken at the smallest variance.
    """
    rows = []
    for r in ranks:
        for off in offsets:
            n = 2 * r * d - r * r + off
            for rep in range(reps):
                key = [seed, r, n, rep]
                m = generate_random_instance(d, r, n, key)
                cls = classify_connectivity(m)
                svs, outs = [], []
                for v in variances:
                    f, _ = train(m, TrainConfig(init_variance=v, rng_seed=key))
                    w = effective_output(f, m)
                    outs.append(w)
                    svs.append(singular_values(w))
                lr_ = extrapolated_rank(svs)
                orank = min_rank_search(m, seed=key)
                onuc = nuclear_norm_oracle(m)
                row = {"r": r, "n": n, "offset": off, "rep": rep, "connectivity": cls.value,
                       "learned_rank": lr_, "learned_nuclear_norm": nuclear_norm(outs[-1]),
                       "oracle_rank": int(orank.objective), "oracle_rank_certified": orank.certified,
                       "oracle_nuclear_norm": float(onuc.objective), "nuclear_method": onuc.method}
                for k, s in enumerate(svs[-1]):
                    row[f"sv_{k + 1}"] = float(s)
                rows.append(row)
    summary = summarize_fig1(rows)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_rows(out / "fig1.csv", rows)
        with open(out / "fig1_summary.json", "w") as fh:
            json.dump(summary, fh, indent=2)
    return Fig1Result(rows, summary)


def summarize_fig1(rows: list) -> dict:
    con = [r for r in rows if r["connectivity"] == ConnectivityClass.CONNECTED.value]
    cb = [r for r in rows if r["connectivity"] == ConnectivityClass.DISCONNECTED_COMPLETE_BIPARTITE.value]
    gen = [r for r in rows if r["connectivity"] == ConnectivityClass.DISCONNECTED.value]

    def rate(sel, pred):
        return (sum(1 for r in sel if pred(r)) / len(sel)) if sel else None

    return {
        "connected_runs": len(con),
        "connected_min_rank_rate": rate(con, lambda r: r["learned_rank"] == r["oracle_rank"]),
        "complete_bipartite_runs": len(cb),
        "complete_bipartite_nuclear_rate": rate(
            cb, lambda r: abs(r["learned_nuclear_norm"] - r["oracle_nuclear_norm"])
            <= 1e-2 * r["oracle_nuclear_norm"]),
        "disconnected_runs": len(gen),
        "disconnected_rank_suboptimal": sum(1 for r in gen if r["learned_rank"] > r["oracle_rank"]),
    }


# ----------------------------------------------------------------------------
# init-scale sweep


def init_scale_sweep(m: IncompleteMatrix, variances, reps: int = 1, seed: int = 0,
                     positions=None, out_path=None, base: TrainConfig | None = None) -> list:
    """Final singular values and unobserved entries across init variances.

    Each row carries the extrapolated rank computed from the ladder up to
    that variance for the same repetition.
    """
    variances = [float(v) for v in variances]
    if any(v <= 0 for v in variances):
        raise ValueError("variances must be positive")
    if any(b >= a for a, b in zip(variances, variances[1:])):
        raise ValueError("variances must be strictly descending")
    if positions is None:
        positions = [tuple(int(t) for t in p) for p in np.argwhere(~m.mask)]
    base = base or TrainConfig()
    rows = []
    for rep in range(reps):
        svs = []
        for v in variances:
            f, tr = train(m, base.with_(init_variance=v, rng_seed=[seed, rep]))
            w = effective_output(f, m)
            svs.append(singular_values(w))
            row = {"variance": v, "rep": rep, "converged": tr.converged,
                   "extrapolated_rank": extrapolated_rank(svs),
                   "numerical_rank": learned_rank(w)}
            for k, s in enumerate(svs[-1]):
                row[f"sv_{k + 1}"] = float(s)
            for (i, j) in positions:
                row[f"w_{i}_{j}"] = float(f.w[i, j])
            rows.append(row)
    if out_path is not None:
        _write_rows(out_path, rows)
    return rows


# ----------------------------------------------------------------------------
# pattern census


CENSUS_VARIANCE = 1e-16


def pattern_string(mask) -> str:
    return "/".join("".join(str(int(x)) for x in row) for row in np.asarray(mask, dtype=int))


def orbit(mask) -> list:
    """All distinct masks equivalent to ``mask`` (row/col permutations and transpose)."""
    import itertools
    p = np.asarray(mask).astype(bool)
    d = p.shape[0]
    seen = {}
    for base in (p, p.T):
        for rp in itertools.permutations(range(d)):
            for cp in itertools.permutations(range(d)):
                img = base[list(rp)][:, list(cp)]
                seen.setdefault(img.tobytes(), img.copy())
    return [seen[k] for k in sorted(seen)]


def _rank1_truth(d: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    while True:
        x = rng.standard_normal(d)
        y = rng.standard_normal(d)
        if np.all(np.abs(x) > 0.1) and np.all(np.abs(y) > 0.1):
            return np.outer(x, y)


def census(d: int = 3, seed: int = 0, variance: float = CENSUS_VARIANCE, out_dir=None) -> dict:
    """Equivalence classes per sample size, each trained on a fixed rank-1 truth.

    Also trains every member of the orbit of the disconnected complete-bipartite
    class at n = 2d - 1 (the 2x2 block plus singleton family for d = 3).
    """
    truth = _rank1_truth(d, seed)
    cfg = TrainConfig(init_variance=variance, rng_seed=seed)
    counts, rows = [], []
    for n in range(1, d * d + 1):
        reps = enumerate_pattern_classes(d, n)
        counts.append(len(reps))
        for k, mask in enumerate(reps):
            m = IncompleteMatrix(truth, mask)
            f, _ = train(m, cfg)
            w = effective_output(f, m)
            rk = learned_rank(w)
            rows.append({"n": n, "class_index": k, "pattern": pattern_string(mask),
                         "connectivity": classify_connectivity(m).value,
                         "learned_rank": rk, "lowest_rank_reached": rk == 1})
    family_rows = []
    n_fam = 2 * d - 1
    for mask in enumerate_pattern_classes(d, n_fam):
        m0 = IncompleteMatrix(truth, mask)
        if classify_connectivity(m0) is not ConnectivityClass.DISCONNECTED_COMPLETE_BIPARTITE:
            continue
        for member in orbit(mask):
            m = IncompleteMatrix(truth, member)
            f, tr = train(m, cfg)
            w = effective_output(f, m)
            family_rows.append({"pattern": pattern_string(member),
                                "canonical": pattern_string(canonical_pattern(member)),
                                "learned_rank": learned_rank(w),
                                "plateau_ranks": [p.effective_rank for p in tr.plateaus]})
    result = {"d": d, "counts": counts, "classes": rows, "disconnected_family": family_rows}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_rows(out / "census.csv", rows)
        _write_rows(out / "census_disconnected_family.csv",
                    [{**r, "plateau_ranks": " ".join(map(str, r["plateau_ranks"]))} for r in family_rows])
        with open(out / "census_counts.json", "w") as fh:
            json.dump({"d": d, "counts": counts}, fh, indent=2)
    return result
