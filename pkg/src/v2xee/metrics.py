"""Exact evaluation of power, charging, SINR, capacity, and energy efficiency.

All operations are pure functions of ``(policy, snapshot(s), config)``.
Powers are watts, per-link rates bit/s, horizon capacity bits; energy
efficiency is bit/J and invariant to the interval duration because the
duration multiplies capacity and consumed energy symmetrically.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .scenario import NetworkSnapshot, ScenarioConfig

__all__ = [
    "Policy",
    "MetricsReport",
    "DegeneratePolicyError",
    "UndefinedEfficiencyError",
    "vehicle_power",
    "interference",
    "interference_tensor",
    "wireless_charging",
    "charging_tensor",
    "object_power",
    "sinr",
    "sinr_tensor",
    "rate_tensor",
    "total_capacity",
    "energy_efficiency",
    "constraint_residuals",
    "validate_policy",
    "report_to_csv_rows",
    "write_report_csv",
]

FEASIBILITY_TOL = 1e-6


class DegeneratePolicyError(ValueError):
    """An assigned link has a zero information split (SINR undefined)."""


class UndefinedEfficiencyError(ValueError):
    """Total consumed power is zero, so the efficiency ratio is undefined."""


@dataclass
class Policy:
    """Decision variables over the full horizon, shape (N, M, B, L) each.

    ``assignment`` is {0,1}-valued (or [0,1] while relaxed) and must be
    zero outside the per-interval association sets.  Where a link is
    assigned, the two split ratios must sum to one.
    """

    powers: np.ndarray      # W
    ps_info: np.ndarray     # information-decoding split, in (0, 1)
    ps_energy: np.ndarray   # harvesting split, in (0, 1)
    assignment: np.ndarray  # RB indicator

    @classmethod
    def zeros(cls, num_vehicles: int, num_objects: int, num_rbs: int,
              num_intervals: int) -> "Policy":
        shape = (num_vehicles, num_objects, num_rbs, num_intervals)
        return cls(powers=np.zeros(shape), ps_info=np.full(shape, 0.5),
                   ps_energy=np.full(shape, 0.5), assignment=np.zeros(shape))

    def copy(self) -> "Policy":
        return Policy(self.powers.copy(), self.ps_info.copy(),
                      self.ps_energy.copy(), self.assignment.copy())

    def at_interval(self, interval: int) -> tuple:
        """(powers, ps_info, ps_energy, assignment) slices for a 1-based interval."""
        l = interval - 1
        return (self.powers[..., l], self.ps_info[..., l],
                self.ps_energy[..., l], self.assignment[..., l])


@dataclass
class MetricsReport:
    """Exact network metrics for one policy over the horizon."""

    vehicle_power: np.ndarray       # (N, L) W
    charging: np.ndarray            # (N, M, L) W, zero outside associations
    object_power: np.ndarray        # (N, M, L) W, zero outside associations
    rates: np.ndarray               # (N, M, L) bit/s
    total_power: float              # Eq.-style per-interval sum of watts
    total_capacity: float           # bits over the horizon
    energy_efficiency: float        # bit/J
    constraint_residuals: dict      # name -> worst normalized signed slack


def validate_policy(policy: Policy, snapshots, config: ScenarioConfig,
                    binary: bool = True, tol: float = FEASIBILITY_TOL) -> None:
    """Raise ``ValueError`` on structural policy violations.

    Checks nonnegative powers, the split-sum identity on assigned links,
    per-(vehicle, RB) exclusivity, the power budget, association masking,
    and (optionally) that the assignment is binary.
    """
    if (policy.powers < 0).any():
        raise ValueError("negative transmit power")
    sig = policy.assignment
    if (sig < -tol).any() or (sig > 1 + tol).any():
        raise ValueError("assignment outside [0, 1]")
    if binary and not np.isin(np.round(sig, 9), (0.0, 1.0)).all():
        raise ValueError("assignment is not binary")
    for snap in snapshots:
        p, wi, we, s = policy.at_interval(snap.interval)
        if (s[~snap.served, :] > tol).any():
            raise ValueError("assignment outside association sets")
        mask = s > tol
        if mask.any() and np.abs(wi[mask] + we[mask] - 1.0).max() > tol:
            raise ValueError("split ratios do not sum to 1 on assigned links")
        if (s.sum(axis=1) > 1 + tol).any():
            raise ValueError("multiple objects share a (vehicle, RB)")
        spent = (s * p).sum(axis=(1, 2))
        if (spent > config.vehicle_power_budget * (1 + tol)).any():
            raise ValueError("vehicle power budget exceeded")


# ---------------------------------------------------------------------------
# per-interval cores


def _tx_power(p: np.ndarray, s: np.ndarray) -> np.ndarray:
    """(N, B) per-vehicle per-RB radiated power."""
    return (s * p).sum(axis=1)


def interference_tensor(policy: Policy, snapshot: NetworkSnapshot) -> np.ndarray:
    """I[i, j, r]: co-RB power from other vehicles at object j (cross gains)."""
    p, _, _, s = policy.at_interval(snapshot.interval)
    txp = _tx_power(p, s)                               # (N, B)
    total = np.einsum("ir,ijr->jr", txp, snapshot.gains)  # (M, B)
    own = txp[:, None, :] * snapshot.gains              # (N, M, B)
    return np.maximum(total[None, :, :] - own, 0.0)


def interference(policy: Policy, snapshot: NetworkSnapshot, target: tuple) -> float:
    """Interference at ``target = (i, j, r)`` for this snapshot's interval."""
    i, j, r = target
    return float(interference_tensor(policy, snapshot)[i, j, r])


def vehicle_power(policy: Policy, snapshot: NetworkSnapshot,
                  config: ScenarioConfig) -> np.ndarray:
    """Per-vehicle consumption: static power plus radiated power, (N,)."""
    p, _, _, s = policy.at_interval(snapshot.interval)
    return config.static_vehicle_power + (s * p).sum(axis=(1, 2))


def charging_tensor(policy: Policy, snapshot: NetworkSnapshot,
                    config: ScenarioConfig) -> np.ndarray:
    """C[i, j]: harvested power at object j, both streams split by ps_energy."""
    p, _, we, s = policy.at_interval(snapshot.interval)
    intf = interference_tensor(policy, snapshot)
    eta = config.conversion_efficiency
    ambient = (eta * we * s * (intf + config.noise_floor)).sum(axis=2)
    desired = (eta * we * s * p * snapshot.gains).sum(axis=2)
    return (ambient + desired) * snapshot.served


def wireless_charging(policy: Policy, snapshot: NetworkSnapshot,
                      config: ScenarioConfig, link: tuple) -> float:
    i, j = link
    return float(charging_tensor(policy, snapshot, config)[i, j])


def object_power(charging, config: ScenarioConfig):
    """Residual consumption max{P_rx - C, 0}; accepts scalars or arrays."""
    return np.maximum(config.object_rx_power - np.asarray(charging, dtype=float), 0.0)


def sinr_tensor(policy: Policy, snapshot: NetworkSnapshot,
                config: ScenarioConfig) -> np.ndarray:
    """gamma[i, j, r] with the actual realized interference."""
    p, wi, _, s = policy.at_interval(snapshot.interval)
    if ((s > FEASIBILITY_TOL) & (wi <= 0.0)).any():
        raise DegeneratePolicyError("assigned link with zero information split")
    intf = interference_tensor(policy, snapshot)
    num = wi * p * snapshot.gains
    den = config.processing_noise + wi * (intf + config.noise_floor)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def sinr(policy: Policy, snapshot: NetworkSnapshot, config: ScenarioConfig,
         link: tuple) -> float:
    i, j, r = link
    return float(sinr_tensor(policy, snapshot, config)[i, j, r])


def rate_tensor(policy: Policy, snapshot: NetworkSnapshot,
                config: ScenarioConfig) -> np.ndarray:
    """Per-link Shannon rates summed over RBs: (N, M) bit/s."""
    _, _, _, s = policy.at_interval(snapshot.interval)
    gamma = sinr_tensor(policy, snapshot, config)
    return (config.bandwidth * s * np.log2(1.0 + gamma)).sum(axis=2)


def total_capacity(policy: Policy, snapshots, config: ScenarioConfig):
    """Horizon capacity in bits and the per-link rate stack (N, M, L) in bit/s."""
    rates = np.stack([rate_tensor(policy, snap, config) for snap in snapshots], axis=-1)
    return float(rates.sum() * config.interval_duration), rates


def energy_efficiency(policy: Policy, snapshots, config: ScenarioConfig):
    """Energy efficiency (bit/J) plus the full :class:`MetricsReport`."""
    n = config.num_vehicles
    m = snapshots[0].num_objects
    L = len(snapshots)
    ev = np.zeros((n, L))
    chg = np.zeros((n, m, L))
    ero = np.zeros((n, m, L))
    for k, snap in enumerate(snapshots):
        ev[:, k] = vehicle_power(policy, snap, config)
        chg[:, :, k] = charging_tensor(policy, snap, config)
        ero[:, :, k] = object_power(chg[:, :, k], config) * snap.served
    capacity, rates = total_capacity(policy, snapshots, config)
    total_power = float(ero.sum() + ev.sum())
    energy = total_power * config.interval_duration
    if energy <= 0.0:
        raise UndefinedEfficiencyError("total consumed energy is zero")
    efficiency = capacity / energy
    residuals = constraint_residuals(policy, snapshots, config)
    report = MetricsReport(vehicle_power=ev, charging=chg, object_power=ero,
                           rates=rates, total_power=total_power,
                           total_capacity=capacity, energy_efficiency=efficiency,
                           constraint_residuals=residuals)
    return efficiency, report


def residual_scales(config: ScenarioConfig) -> tuple[float, float]:
    """Normalizers for the rate and charge slacks (QoS floors when set)."""
    rate_scale = config.min_rate if config.min_rate > 0 else config.bandwidth
    charge_scale = config.min_charge if config.min_charge > 0 \
        else max(config.object_rx_power, 1e-30)
    return rate_scale, charge_scale


def constraint_residuals(policy: Policy, snapshots, config: ScenarioConfig,
                         charging_bound: np.ndarray | None = None) -> dict:
    """Worst signed slack per constraint, normalized to be scale-free.

    Feasible iff every value is >= 0 (up to tolerance); the split-sum
    equality reports minus its largest absolute deviation.  ``charging_bound``
    (N, M, L), when given, adds the surrogate charging-cap slack ``c7``.
    """
    rate_scale, charge_scale = residual_scales(config)
    c1 = c2 = c3 = c4 = c5 = c6 = np.inf
    for snap in snapshots:
        p, wi, we, s = policy.at_interval(snap.interval)
        mask = (s > FEASIBILITY_TOL) & snap.served[:, :, None]
        rates = rate_tensor(policy, snap, config)
        chg = charging_tensor(policy, snap, config)
        served = snap.served
        if served.any():
            c1 = min(c1, float(((rates - config.min_rate)[served] / rate_scale).min()))
            c4 = min(c4, float(((chg - config.min_charge)[served] / charge_scale).min()))
        if mask.any():
            c2 = min(c2, float(-np.abs(wi[mask] + we[mask] - 1.0).max()))
            c6 = min(c6, float(np.minimum(wi[mask], we[mask]).min()))
        c3 = min(c3, float((1.0 - s.sum(axis=1)).min()))
        spent = (s * p).sum(axis=(1, 2))
        c5 = min(c5, float(((config.vehicle_power_budget - spent)
                            / config.vehicle_power_budget).min()))
    out = {"c1": c1, "c2": c2, "c3": c3, "c4": c4, "c5": c5, "c6": c6}
    if charging_bound is not None:
        scale = max(config.object_rx_power, 1e-30)
        c7 = np.inf
        for k, snap in enumerate(snapshots):
            if snap.served.any():
                slack = (config.object_rx_power - charging_bound[:, :, k])[snap.served]
                c7 = min(c7, float(slack.min() / scale))
        out["c7"] = c7
    return {k: (v if np.isfinite(v) else np.inf) for k, v in out.items()}


# ---------------------------------------------------------------------------
# serialization


def report_to_csv_rows(report: MetricsReport, snapshots) -> list:
    """One row per served (vehicle, object, interval) plus a totals row."""
    rows = [["vehicle", "object", "interval", "rate_bps", "charging_w",
             "object_power_w", "vehicle_power_w"]]
    for k, snap in enumerate(snapshots):
        for i in range(snap.num_vehicles):
            for j in np.flatnonzero(snap.served[i]):
                rows.append([i, int(j), snap.interval,
                             repr(float(report.rates[i, j, k])),
                             repr(float(report.charging[i, j, k])),
                             repr(float(report.object_power[i, j, k])),
                             repr(float(report.vehicle_power[i, k]))])
    rows.append(["total", "", "", repr(report.total_capacity), "", "",
                 repr(report.total_power)])
    return rows


def write_report_csv(report: MetricsReport, snapshots, path) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(report_to_csv_rows(report, snapshots))
