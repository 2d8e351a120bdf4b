"""Command-line front-end.

Subcommands: ``run`` (single instance -> solve report + trace CSVs),
``sweep`` (sweep spec -> aggregate CSV), ``oracle-check`` (tiny instance
-> brute-force comparison CSV), ``baseline`` (baseline metrics only).
Exit codes: 0 success, 2 infeasible instance, 3 non-convergence.
"""

import argparse
import csv
import os
import sys
from dataclasses import replace

from .scenario import load_config, simulate_scenario
from .metrics import energy_efficiency, write_report_csv
from .solver import SolverParams, dinkelbach_solve, write_solve_report
from .oracle import OracleConfig, oracle_max_ee
from .experiments import baseline_policy, run_sweep, emit_results, load_sweep_spec

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_NO_CONVERGENCE = 3


def _load(args):
    config, layout = load_config(args.config)
    if args.seed is not None:
        config = replace(config, rng_seed=args.seed)
    return config, layout


def _params(args) -> SolverParams:
    return SolverParams(paper_signs=getattr(args, "paper_signs", False))


def _cmd_run(args) -> int:
    config, layout = _load(args)
    snapshots = simulate_scenario(config, layout)
    base = baseline_policy(snapshots, config)
    report = dinkelbach_solve(snapshots, config, _params(args), seed_policies=[base])
    os.makedirs(args.out, exist_ok=True)
    write_solve_report(report, args.out)
    if report.policy is not None:
        _, metrics = energy_efficiency(report.policy, snapshots, config)
        write_report_csv(metrics, snapshots, os.path.join(args.out, "metrics.csv"))
    if not report.feasible:
        return EXIT_INFEASIBLE
    if not report.converged:
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


def _cmd_baseline(args) -> int:
    config, layout = _load(args)
    snapshots = simulate_scenario(config, layout)
    policy = baseline_policy(snapshots, config)
    eff, metrics = energy_efficiency(policy, snapshots, config)
    os.makedirs(args.out, exist_ok=True)
    write_report_csv(metrics, snapshots, os.path.join(args.out, "baseline_metrics.csv"))
    with open(os.path.join(args.out, "baseline_summary.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["efficiency_bit_per_j"])
        w.writerow([repr(eff)])
    return EXIT_OK


def _cmd_sweep(args) -> int:
    config, layout = _load(args)
    spec = load_sweep_spec(args.sweep)
    table = run_sweep(spec, config, layout, _params(args))
    emit_results(table, args.out)
    if all(row["n"] == 0 for row in table):
        return EXIT_INFEASIBLE
    return EXIT_OK


def _cmd_oracle_check(args) -> int:
    config, layout = _load(args)
    ocfg = OracleConfig(power_grid_points=args.grid, ps_grid_points=args.grid)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    any_feasible = False
    for rep in range(args.reps):
        cfg = replace(config, rng_seed=config.rng_seed + rep)
        snapshots = simulate_scenario(cfg, layout)
        oracle = oracle_max_ee(snapshots, cfg, ocfg)
        base = baseline_policy(snapshots, cfg)
        report = dinkelbach_solve(snapshots, cfg, _params(args), seed_policies=[base])
        solver_eff = report.efficiency if report.feasible else float("nan")
        gap = oracle.value - solver_eff if oracle.feasible else float("nan")
        any_feasible |= oracle.feasible and report.feasible
        rows.append([cfg.rng_seed, repr(oracle.value if oracle.feasible else
                                        float("nan")),
                     repr(solver_eff), repr(gap), repr(oracle.grid_slack)])
    path = os.path.join(args.out, "oracle_check.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "oracle_efficiency", "solver_efficiency", "gap",
                    "grid_slack"])
        w.writerows(rows)
    return EXIT_OK if any_feasible else EXIT_INFEASIBLE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="v2xee",
        description="Energy-efficiency optimization for wireless-powered "
                    "vehicle-to-roadside networks")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="scenario JSON file")
        p.add_argument("--seed", type=int, default=None, help="override rng_seed")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--paper-signs", action="store_true",
                       help="use the literal published multiplier-update signs")

    p_run = sub.add_parser("run", help="solve one instance")
    common(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_base = sub.add_parser("baseline", help="evaluate the baseline policy only")
    common(p_base)
    p_base.set_defaults(func=_cmd_baseline)

    p_sweep = sub.add_parser("sweep", help="run a parameter sweep")
    common(p_sweep)
    p_sweep.add_argument("--sweep", required=True, help="sweep spec JSON file")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_oracle = sub.add_parser("oracle-check",
                              help="compare against the brute-force oracle")
    common(p_oracle)
    p_oracle.add_argument("--reps", type=int, default=5)
    p_oracle.add_argument("--grid", type=int, default=48)
    p_oracle.set_defaults(func=_cmd_oracle_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
