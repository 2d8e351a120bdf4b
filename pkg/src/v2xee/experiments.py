"""Baseline policy, parameter sweeps, and result emission.

The baseline is the natural non-adaptive reference (the published
comparison never defines its own): every resource block goes to the
best-gain object, the split is fixed at one half, and each vehicle's
budget is shared equally across its objects and then across each object's
granted RBs.  Feasibility is not enforced for the baseline; sweep rows
report it as-is.

Sweeps hold the channel seeds fixed across swept values (seed depends only
on the repetition), so trend assertions compare like against like.
"""

import csv
import json
from dataclasses import dataclass, replace

import numpy as np

from .scenario import ScenarioConfig, Layout, simulate_scenario
from .metrics import Policy, FEASIBILITY_TOL, energy_efficiency, constraint_residuals
from .solver import SolverParams, dinkelbach_solve

__all__ = [
    "SweepSpec",
    "SWEEPABLE",
    "baseline_policy",
    "run_sweep",
    "emit_results",
    "parse_results",
    "load_sweep_spec",
]

SWEEPABLE = ("num_objects", "velocity", "num_rbs", "min_rate",
             "conversion_efficiency", "charging_capacity")


@dataclass(frozen=True)
class SweepSpec:
    """One swept parameter, its values, and the repetition/seed plan."""

    parameter: str
    values: tuple
    repetitions: int = 10
    seed_base: int = 0

    def __post_init__(self):
        if self.parameter not in SWEEPABLE:
            raise ValueError(f"parameter must be one of {SWEEPABLE}")
        vals = tuple(self.values)
        if not vals:
            raise ValueError("value list must be nonempty")
        if any(b < a for a, b in zip(vals, vals[1:])) and \
           any(b > a for a, b in zip(vals, vals[1:])):
            raise ValueError("value list must be monotone")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        object.__setattr__(self, "values", vals)


def load_sweep_spec(path) -> SweepSpec:
    with open(path) as fh:
        raw = json.load(fh)
    return SweepSpec(parameter=raw["parameter"], values=tuple(raw["values"]),
                     repetitions=raw.get("repetitions", 10),
                     seed_base=raw.get("seed_base", 0))


def baseline_policy(snapshots, config: ScenarioConfig) -> Policy:
    """Equal-power, half-split, best-gain-per-RB reference policy."""
    n = config.num_vehicles
    m = snapshots[0].num_objects
    b = config.num_rbs
    policy = Policy.zeros(n, m, b, len(snapshots))
    for k, snap in enumerate(snapshots):
        sig = np.zeros((n, m, b))
        gains = np.where(snap.served[:, :, None], snap.gains, -np.inf)
        winner = np.argmax(gains, axis=1)                     # (N, B)
        ii, rr = np.meshgrid(np.arange(n), np.arange(b), indexing="ij")
        sig[ii, winner, rr] = 1.0
        sig *= snap.active[:, None, None]
        sig *= snap.served[:, :, None]
        counts = snap.served.sum(axis=1)                      # objects per vehicle
        rb_per_obj = sig.sum(axis=2)                          # (N, M)
        with np.errstate(divide="ignore", invalid="ignore"):
            per_link = np.where(
                rb_per_obj > 0,
                config.vehicle_power_budget
                / (np.maximum(counts, 1)[:, None] * np.maximum(rb_per_obj, 1)),
                0.0)
        policy.assignment[..., k] = sig
        policy.powers[..., k] = sig * per_link[:, :, None]
    return policy


def _apply_sweep_value(parameter: str, value, config: ScenarioConfig,
                       layout: Layout) -> tuple[ScenarioConfig, Layout]:
    if parameter == "num_objects":
        return config, replace(layout, objects_per_vehicle=int(value),
                               object_positions=None)
    field = {"velocity": "velocity", "num_rbs": "num_rbs", "min_rate": "min_rate",
             "conversion_efficiency": "conversion_efficiency",
             "charging_capacity": "min_charge"}[parameter]
    if field == "num_rbs":
        value = int(value)
    return replace(config, **{field: value}), layout


def _point_metrics(policy: Policy, snapshots, config: ScenarioConfig) -> dict:
    eff, report = energy_efficiency(policy, snapshots, config)
    m = snapshots[0].num_objects
    L = len(snapshots)
    allocated = float((policy.assignment * policy.powers).sum()) / (m * L)
    charging = float(report.charging.sum()) / (config.num_vehicles * L)
    return {"power_per_object": allocated, "charging": charging,
            "energy_efficiency": eff}


def run_sweep(spec: SweepSpec, base_config: ScenarioConfig, base_layout: Layout,
              params: SolverParams | None = None) -> list:
    """Solve every (value, repetition) point and aggregate mean +/- std.

    Returns rows ``{sweep_value, metric, mean, std, n, method}``.  The
    solver run seeds its candidate pool with the baseline, so a feasible
    point never reports a solver efficiency below the baseline's.  Points
    where every repetition is infeasible carry ``n == 0``.
    """
    params = params or SolverParams()
    rows = []
    for value in spec.values:
        config, layout = _apply_sweep_value(spec.parameter, value, base_config,
                                            base_layout)
        samples = {("solver", met): [] for met in
                   ("power_per_object", "charging", "energy_efficiency")}
        samples.update({("baseline", met): [] for met in
                        ("power_per_object", "charging", "energy_efficiency")})
        for rep in range(spec.repetitions):
            cfg = replace(config, rng_seed=spec.seed_base + rep)
            snapshots = simulate_scenario(cfg, layout)
            base = baseline_policy(snapshots, cfg)
            report = dinkelbach_solve(snapshots, cfg, params, seed_policies=[base])
            if not report.feasible or report.policy is None:
                continue
            for method, pol in (("solver", report.policy), ("baseline", base)):
                point = _point_metrics(pol, snapshots, cfg)
                for met, val in point.items():
                    samples[(method, met)].append(val)
        for (method, met), vals in samples.items():
            arr = np.asarray(vals, dtype=float)
            n = arr.size
            mean = float(arr.mean()) if n else float("nan")
            std = float(arr.std(ddof=1)) if n > 1 else 0.0 if n else float("nan")
            rows.append({"sweep_value": value, "metric": met, "mean": mean,
                         "std": std, "n": n, "method": method})
    return rows


_HEADER = ["sweep_value", "metric", "mean", "std", "n", "method"]


def emit_results(table: list, out_dir, plot_data: bool = True) -> list:
    """Write the aggregate CSV (and a plot-data CSV); byte-deterministic."""
    import os
    if not table:
        raise ValueError("empty result table")
    os.makedirs(out_dir, exist_ok=True)
    paths = [os.path.join(out_dir, "sweep_results.csv")]
    with open(paths[0], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_HEADER)
        for row in table:
            w.writerow([repr(row["sweep_value"]), row["metric"], repr(row["mean"]),
                        repr(row["std"]), row["n"], row["method"]])
    if plot_data:
        path = os.path.join(out_dir, "sweep_plot_data.csv")
        paths.append(path)
        series = sorted({(r["metric"], r["method"]) for r in table})
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["series", "x", "y", "err"])
            for met, method in series:
                for r in table:
                    if r["metric"] == met and r["method"] == method:
                        w.writerow([f"{met}:{method}", repr(r["sweep_value"]),
                                    repr(r["mean"]), repr(r["std"])])
    return paths


def parse_results(path) -> list:
    """Read back an emitted results CSV into row dicts."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for raw in reader:
            rows.append({"sweep_value": _literal(raw["sweep_value"]),
                         "metric": raw["metric"], "mean": _literal(raw["mean"]),
                         "std": _literal(raw["std"]), "n": int(raw["n"]),
                         "method": raw["method"]})
    return rows


def _literal(text: str):
    value = float(text)
    return int(value) if value == int(value) and "." not in text and "e" not in text \
        else value
