"""Command-line entry point.

Every command reads an INI config (see ``fairmech.config``), prints a short
report and writes ``<out>/<command>.csv``.  Each CSV starts with ``# key=value``
manifest lines that identify the run.

Exit codes: 0 ok, 2 configuration error, 3 infeasible instance, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
import time
from pathlib import Path

from . import __version__
from .approx import make_policy, plan_bucketed, plan_early_stop, policy_values
from .config import config_hash, load_config
from .dynamic_solver import DynamicSolver
from .errors import ConfigError, InfeasibleError, NumericalError, ParameterError
from .sim import EXPERIMENT_COLUMNS, experiment_grid, monte_carlo, reachable_states, verify_epic, verify_ir
from .static_solver import solve_static

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# CSV with manifest header


def write_csv(path, manifest: dict, columns, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        for key, value in manifest.items():
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])
    return path


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return x


def read_csv(path):
    """Return ``(manifest, rows)``; rows are dicts of strings."""
    manifest, lines = {}, []
    with Path(path).open(newline="") as fh:
        for line in fh:
            if line.startswith("# ") and not lines:
                key, _, value = line[2:].rstrip("\n").partition("=")
                manifest[key] = value
            else:
                lines.append(line)
    return manifest, list(csv.DictReader(lines))


# ---------------------------------------------------------------------------
# commands


def _policy(args, config):
    scheme = args.scheme or "exact"
    if scheme == "exact":
        return None, DynamicSolver(config.profile, config.alphas, delta=config.delta)
    if args.epsilon is None:
        raise ParameterError(f"--scheme {scheme} needs --epsilon")
    if scheme == "early_stop":
        plan = plan_early_stop(config.T, config.delta, config.alphas, args.epsilon)
    else:
        if args.beta is None:
            raise ParameterError("--scheme bucketed needs --beta")
        plan = plan_bucketed(config.T, config.delta, config.alphas, args.epsilon, args.beta)
    return plan, make_policy(plan, config.profile)


def cmd_solve_static(args, config):
    sol = solve_static(config.profile.round(1), config.n, config.alpha1, config.alpha2)
    row = {**dataclasses.asdict(sol.rule), **{k: v for k, v in dataclasses.asdict(sol).items() if k != "rule"}}
    print(f"gamma={sol.rule.gamma:.10g} eta1={sol.rule.eta1:.10g} eta2={sol.rule.eta2:.10g}")
    print(f"P(G1)={sol.prob_g1:.10g} P(G2)={sol.prob_g2:.10g}")
    print(f"seller={sol.seller_utility:.10g} buyer1={sol.buyer_utility_1:.10g} buyer2={sol.buyer_utility_2:.10g}")
    return list(row), [row], 0


def cmd_solve_dynamic(args, config):
    solver = DynamicSolver(config.profile, config.alphas, delta=config.delta)
    top = solver.solve()
    root_mech = solver.solve_round(solver.root())
    print(f"mu={top.mu:.10g} nu1={top.nu1:.10g} nu2={top.nu2:.10g}")
    print(f"round 1 regime: {root_mech.regime}" + (f" threshold={root_mech.threshold:.10g}" if root_mech.threshold is not None else ""))
    print(f"memo size={solver.memo_size} oracle calls={solver.oracle_calls}")
    cols = ["t", "key", "r1", "r2", "regime", "threshold", "d1", "d2", "d0", "zeta1", "zeta2", "feasible", "mu", "nu1", "nu2"]
    rows = []
    for s in reachable_states(solver):
        m, v = solver.solve_round(s), solver.interim(s)
        rows.append({
            "t": s.t, "key": repr(s.key), "r1": s.r1, "r2": s.r2, "regime": m.regime,
            "threshold": "" if m.threshold is None else m.threshold,
            "d1": m.deltas.d1, "d2": m.deltas.d2, "d0": m.deltas.d0,
            "zeta1": m.zeta1, "zeta2": m.zeta2, "feasible": v.feasible,
            "mu": v.mu, "nu1": v.nu1, "nu2": v.nu2,
        })
    return cols, rows, solver.oracle_calls


def _summary_rows(summary):
    rows = [{"metric": "revenue", "mean": summary.mean_revenue, "se": summary.se_revenue}]
    for g in (1, 2):
        rows.append({"metric": f"utility_group{g}", "mean": float(summary.mean_utility[g - 1]), "se": float(summary.se_utility[g - 1])})
        rows.append({"metric": f"share_group{g}", "mean": float(summary.mean_share[g - 1]), "se": float(summary.se_share[g - 1])})
    for t, (p1, p2) in enumerate(summary.round_probs, start=1):
        rows.append({"metric": f"prob_group1_round{t}", "mean": float(p1), "se": ""})
        rows.append({"metric": f"prob_group2_round{t}", "mean": float(p2), "se": ""})
    return rows


def cmd_simulate(args, config):
    plan, policy = _policy(args, config)
    policy.solve()
    summary = monte_carlo(config, policy, args.replications)
    print(f"replications={summary.replications}")
    print(f"revenue={summary.mean_revenue:.6g} +- {summary.se_revenue:.2g}")
    for g in (1, 2):
        print(f"group {g}: utility={summary.mean_utility[g-1]:.6g} share={summary.mean_share[g-1]:.6g} "
              f"(target {config.alphas[g-1]:.4g})")
    return ["metric", "mean", "se"], _summary_rows(summary), policy.oracle_calls


def cmd_approx(args, config):
    if args.scheme in (None, "exact") and args.epsilon is None:
        args.scheme = "exact"
    elif args.scheme in (None, "exact"):
        args.scheme = "early_stop"
    plan, policy = _policy(args, config)
    policy.solve()
    values = policy_values(policy, config.delta)
    summary = monte_carlo(config, policy, args.replications)
    calls = policy.oracle_calls
    rows = [{"metric": "scheme", "value": args.scheme}]
    if plan is not None:
        rows += [
            {"metric": "t0", "value": plan.t0},
            {"metric": "bucket_len", "value": plan.bucket_len},
            {"metric": "oracle_bound", "value": plan.oracle_bound},
            {"metric": "complexity_bound", "value": plan.complexity_bound},
            {"metric": "guarantee_group1", "value": plan.guarantee[0]},
            {"metric": "guarantee_group2", "value": plan.guarantee[1]},
        ]
    rows += [
        {"metric": "oracle_calls", "value": calls},
        {"metric": "mu", "value": values.mu},
        {"metric": "share_group1", "value": float(summary.mean_share[0])},
        {"metric": "share_group2", "value": float(summary.mean_share[1])},
        {"metric": "se_share_group1", "value": float(summary.se_share[0])},
        {"metric": "se_share_group2", "value": float(summary.se_share[1])},
    ]
    for r in rows:
        print(f"{r['metric']}: {r['value']}")
    return ["metric", "value"], rows, calls


def cmd_verify(args, config):
    solver = DynamicSolver(config.profile, config.alphas, delta=config.delta)
    epic = verify_epic(config, solver=solver)
    ir = verify_ir(config, solver=solver)
    print(f"max EPIC violation: {epic.max_gain:.3e} (ex post {epic.max_gain_ex_post:.3e})")
    print(f"max IR violation: {ir.max_violation:.3e}")
    rows = [
        {"check": "epic_interim", "value": epic.max_gain, "states": epic.states_checked},
        {"check": "epic_ex_post", "value": epic.max_gain_ex_post, "states": epic.states_checked},
        {"check": "ir", "value": ir.max_violation, "states": ir.states_checked},
    ]
    return ["check", "value", "states"], rows, solver.oracle_calls


def cmd_experiment(args, config):
    cells = experiment_grid(config, replications=args.replications)
    rows = [{c: getattr(cell, c) for c in EXPERIMENT_COLUMNS} for cell in cells]
    for cell in cells:
        flag = "" if cell.feasible else "  infeasible"
        print(f"alpha=({cell.alpha1:.1f},{cell.alpha2:.1f}) d_seller={cell.d_seller:+.5f} "
              f"d_group1={cell.d_group1:+.5f} d_group2={cell.d_group2:+.5f}{flag}")
    return list(EXPERIMENT_COLUMNS), rows, sum(c.oracle_calls for c in cells)


COMMANDS = {
    "solve-static": cmd_solve_static,
    "solve-dynamic": cmd_solve_dynamic,
    "simulate": cmd_simulate,
    "approx": cmd_approx,
    "verify": cmd_verify,
    "experiment": cmd_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairmech", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, metavar="PATH")
        p.add_argument("--out", default=".", metavar="DIR")
        p.add_argument("--seed", type=int)
        p.add_argument("--replications", type=int)
        p.add_argument("--scheme", choices=["exact", "early_stop", "bucketed"])
        p.add_argument("--epsilon", type=float)
        p.add_argument("--beta", type=float)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    try:
        config = load_config(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.replications is not None:
            overrides["replications"] = args.replications
        config = dataclasses.replace(config, **overrides)
        columns, rows, calls = COMMANDS[args.command](args, config)
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (NumericalError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    manifest = {
        "command": args.command,
        "config": args.config,
        "config_hash": config_hash(args.config),
        "seed": config.seed,
        "replications": config.replications,
        "scheme": args.scheme or "",
        "epsilon": "" if args.epsilon is None else args.epsilon,
        "beta": "" if args.beta is None else args.beta,
        "version": __version__,
        "wall_clock": f"{time.perf_counter() - start:.3f}",
        "oracle_calls": calls,
    }
    path = write_csv(Path(args.out) / f"{args.command}.csv", manifest, columns, rows)
    print(f"wrote {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
