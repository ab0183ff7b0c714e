"""Command-line entry point."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


from .dynamics import TrainConfig, TrainingDivergence, effective_output, train
from .linalg import nuclear_norm, singular_values
from .observation import (ObservationError, classify_connectivity, components_of, enumerate_pattern_classes,
                          load_matrix)
from .oracles import glrl, min_rank_search, nuclear_norm_oracle
from .protocols import (census, init_scale_sweep, learned_rank, pattern_string, plateau_summary,
                        reproduce_fig1, run_scenario, write_trajectory_plots)
from .scenarios import get_scenario

PUBLISHED_CENSUS_COUNTS = (1, 2, 4, 5, 3, 4, 2, 1, 1)
FIG1_THRESHOLDS = {"connected": 0.8, "complete_bipartite": 0.9}
FIG4_SWEEP = tuple(10.0 ** -k for k in range(2, 9))


class UsageError(Exception):
    pass


def _float_list(text: str) -> list:
    try:
        vals = [float(t) for t in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _out(path) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2))


def cmd_connectivity(args) -> int:
    m = load_matrix(args.file, allow_zero=args.allow_zero)
    comps = components_of(m)
    _emit({"class": classify_connectivity(m).value,
           "components": [{"rows": list(map(int, c.rows)), "cols": list(map(int, c.cols)),
                           "edges": len(c.edges), "complete_bipartite": c.is_complete}
                          for c in comps]})
    return 0


def cmd_train(args) -> int:
    m = load_matrix(args.file, allow_zero=args.allow_zero)
    kw = {"rng_seed": args.seed}
    if args.init_var is not None:
        kw["init_variance"] = args.init_var
    if args.lr is not None:
        kw["learning_rate"] = args.lr
    if args.max_steps is not None:
        kw["max_steps"] = args.max_steps
    try:
        cfg = TrainConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    final, traj = train(m, cfg)
    w = effective_output(final, m)
    summary = {"connectivity": classify_connectivity(m).value, "converged": traj.converged,
               "steps": int(traj.steps[-1]), "final_loss": float(traj.loss[-1]),
               "learning_rate": traj.final_lr, "lr_halvings": traj.lr_halvings,
               "learned_rank": learned_rank(w), "nuclear_norm": nuclear_norm(w),
               "singular_values": singular_values(w).tolist(), "output": w.tolist(),
               "plateaus": plateau_summary(traj)}
    out = _out(args.out)
    if out is not None:
        traj.write_csv(out / "trajectory.csv")
        write_trajectory_plots(traj, out)
        with open(out / "summary.json", "w") as fh:
            json.dump(summary, fh, indent=2)
    _emit(summary)
    return 0


def cmd_oracle(args) -> int:
    m = load_matrix(args.file, allow_zero=args.allow_zero)
    if args.kind == "nuclear":
        res = nuclear_norm_oracle(m)
    elif args.kind == "rank":
        res = min_rank_search(m)
    else:
        res = glrl(m)[0]
    obj = res.to_json()
    out = _out(args.out)
    if out is not None:
        with open(out / f"oracle_{args.kind}.json", "w") as fh:
            json.dump(obj, fh, indent=2)
    _emit(obj)
    return 0


def cmd_enumerate(args) -> int:
    if not 1 <= args.d <= 4:
        raise UsageError("--d must be between 1 and 4")
    sizes = [args.n] if args.n is not None else range(1, args.d * args.d + 1)
    result = []
    for n in sizes:
        if not 1 <= n <= args.d * args.d:
            raise UsageError(f"--n must be between 1 and {args.d * args.d}")
        reps = enumerate_pattern_classes(args.d, n)
        result.append({"n": n, "count": len(reps),
                       "classes": [{"pattern": pattern_string(p),
                                    "connectivity": classify_connectivity(p).value}
                                   for p in reps]})
    _emit(result)
    return 0


def cmd_sweep(args) -> int:
    m = load_matrix(args.file, allow_zero=args.allow_zero)
    out = _out(args.out)
    try:
        rows = init_scale_sweep(m, args.variances, reps=args.reps, seed=args.seed,
                                out_path=(out / "sweep.csv") if out else None)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    _emit(rows)
    return 0


def _scenario_block(names, seed, out) -> tuple:
    reports, ok = [], True
    for name in names:
        overrides = {} if seed is None else {"rng_seed": seed}
        rep = run_scenario(get_scenario(name), out_dir=out, overrides=overrides)
        reports.append(rep.to_json())
        ok &= rep.passed
    return reports, ok


def reproduce(target: str, seed: int | None = None, out=None) -> tuple:
    """Run a reproduction target; returns ``(result_json, passed)``."""
    out = _out(out)
    if target == "fig2":
        reports, ok = _scenario_block(("M1", "M2", "M3"), seed, out)
        return {"target": target, "scenarios": reports}, ok
    if target == "coincident":
        reports, ok = _scenario_block(("coincident2x2",), seed, out)
        return {"target": target, "scenarios": reports}, ok
    if target == "fig4":
        reports, ok = _scenario_block(("fig4",), seed, out)
        m = get_scenario("fig4").instance()
        rows = init_scale_sweep(m, FIG4_SWEEP, reps=1, seed=0 if seed is None else seed,
                                positions=[(0, 1), (1, 0), (1, 2), (2, 1)],
                                out_path=(out / "fig4_sweep.csv") if out else None)
        asym = [max(abs(r["w_0_1"] - r["w_1_0"]), abs(r["w_1_2"] - r["w_2_1"])) for r in rows]
        return {"target": target, "scenarios": reports,
                "sweep": [{"variance": r["variance"], "asymmetry": a} for r, a in zip(rows, asym)]}, ok
    if target == "fig1":
        res = reproduce_fig1(seed=0 if seed is None else seed, out_dir=out)
        s = res.summary
        checks = {
            "connected_min_rank_rate": s["connected_min_rank_rate"] is not None
            and s["connected_min_rank_rate"] >= FIG1_THRESHOLDS["connected"],
            "complete_bipartite_nuclear_rate": s["complete_bipartite_nuclear_rate"] is None
            or s["complete_bipartite_nuclear_rate"] >= FIG1_THRESHOLDS["complete_bipartite"],
            "disconnected_rank_suboptimal": s["disconnected_rank_suboptimal"] >= 1,
        }
        return {"target": target, "summary": s, "checks": checks}, all(checks.values())
    if target == "census":
        res = census(3, seed=0 if seed is None else seed, out_dir=out)
        con5 = [r for r in res["classes"] if r["n"] == 5 and r["connectivity"] == "Connected"]
        checks = {
            "counts_match_published": tuple(res["counts"]) == PUBLISHED_CENSUS_COUNTS,
            "connected_n5_lowest_rank": all(r["lowest_rank_reached"] for r in con5),
            "disconnected_family_size": len(res["disconnected_family"]) == 9,
            "disconnected_family_rank2": all(r["learned_rank"] == 2 for r in res["disconnected_family"]),
        }
        return {"target": target, "counts": res["counts"], "published_counts": list(PUBLISHED_CENSUS_COUNTS),
                "checks": checks, "disconnected_family": res["disconnected_family"]}, all(checks.values())
    raise UsageError(f"unknown target {target!r}")


def cmd_reproduce(args) -> int:
    result, ok = reproduce(args.target, args.seed, args.out)
    result["passed"] = bool(ok)
    if args.out:
        with open(Path(args.out) / f"{args.target}_result.json", "w") as fh:
            json.dump(result, fh, indent=2, default=float)
    _emit(result)
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="factorlab", description="Matrix factorization implicit-bias lab")
    sub = p.add_subparsers(dest="command", required=True)

    def with_file(sp):
        sp.add_argument("file")
        sp.add_argument("--allow-zero", action="store_true", help="accept observed zeros")
        return sp

    with_file(sub.add_parser("connectivity", help="observation graph class and components"))

    sp = with_file(sub.add_parser("train", help="gradient descent from small initialization"))
    sp.add_argument("--init-var", type=float)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--max-steps", type=int)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")

    sp = sub.add_parser("oracle", help="nuclear-norm, min-rank or greedy low-rank oracle")
    sp.add_argument("kind", choices=("nuclear", "rank", "glrl"))
    with_file(sp)
    sp.add_argument("--out")

    sp = sub.add_parser("enumerate", help="sampling-pattern equivalence classes")
    sp.add_argument("--d", type=int, required=True)
    sp.add_argument("--n", type=int)

    sp = with_file(sub.add_parser("sweep", help="final solution across init variances"))
    sp.add_argument("--variances", type=_float_list, required=True)
    sp.add_argument("--reps", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")

    sp = sub.add_parser("reproduce", help="run a reproduction target")
    sp.add_argument("target", choices=("fig1", "fig2", "fig4", "census", "coincident"))
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    return p


COMMANDS = {"connectivity": cmd_connectivity, "train": cmd_train, "oracle": cmd_oracle,
            "enumerate": cmd_enumerate, "sweep": cmd_sweep, "reproduce": cmd_reproduce}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ObservationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDivergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
