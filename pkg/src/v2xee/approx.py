"""Convexifying surrogates: the concave log rate bound, worst-case-interference
SINR, the idealized charging bound, and the relaxed object power.

The rate surrogate replaces ``log2(1 + g)`` with the tight concave lower
bound ``slope * log2(g) + offset`` re-expanded at each iterate; base-2 logs
are used throughout so tightness at the expansion point is exact.
"""

from dataclasses import dataclass

import numpy as np

from .scenario import NetworkSnapshot, ScenarioConfig
from .metrics import Policy

__all__ = [
    "ExpansionPointError",
    "SCACoefficients",
    "update_coefficients",
    "coefficients_like",
    "bounded_sinr",
    "bounded_sinr_tensor",
    "bounded_rate",
    "bounded_rate_tensor",
    "bounded_charging",
    "bounded_charging_tensor",
    "relaxed_object_power",
    "default_worst_case_interference",
    "log_bound",
]

LN2 = float(np.log(2.0))


class ExpansionPointError(ValueError):
    """Coefficients requested at a nonpositive expansion SINR."""


@dataclass(frozen=True)
class SCACoefficients:
    """Per-link bound coefficients at one iterate.

    ``slope`` lies in (0, 1) for any finite positive expansion point and
    ``slope * log2(g0) + offset == log2(1 + g0)`` exactly there.  Links that
    were never expanded keep (0, 0), which is still a valid lower bound.
    """

    slope: np.ndarray
    offset: np.ndarray
    iteration: int = 0


def update_coefficients(prev_sinr: np.ndarray, iteration: int = 1) -> SCACoefficients:
    """Coefficients expanded at ``prev_sinr`` (> 0 elementwise)."""
    g0 = np.asarray(prev_sinr, dtype=float)
    if (g0 <= 0).any():
        raise ExpansionPointError("expansion SINR must be > 0 elementwise")
    slope = g0 / (g0 + 1.0)
    offset = np.log2(1.0 + g0) - slope * np.log2(g0)
    return SCACoefficients(slope=slope, offset=offset, iteration=iteration)


def coefficients_like(shape) -> SCACoefficients:
    """All-zero coefficients (a valid, maximally loose bound)."""
    return SCACoefficients(slope=np.zeros(shape), offset=np.zeros(shape), iteration=0)


def log_bound(coeffs: SCACoefficients, gamma: np.ndarray) -> np.ndarray:
    """Evaluate ``slope * log2(gamma) + offset`` (``-inf`` where gamma == 0)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        lg = np.where(gamma > 0, np.log2(np.maximum(gamma, 1e-300)), -np.inf)
        out = coeffs.slope * lg + coeffs.offset
    return np.where(coeffs.slope == 0.0, coeffs.offset, out)


# ---------------------------------------------------------------------------
# worst-case interference


def default_worst_case_interference(snapshots, config: ScenarioConfig) -> np.ndarray:
    """Per-link tolerable interference (N, M, B, L).

    Uses the realized cross gains with every interferer at full budget, so
    it upper-bounds any actual interference a feasible policy can create;
    the surrogate rate then never overstates the true rate.  A scalar
    ``config.worst_case_interference`` overrides it.
    """
    n, b = config.num_vehicles, config.num_rbs
    m = snapshots[0].num_objects
    out = np.empty((n, m, b, len(snapshots)))
    for k, snap in enumerate(snapshots):
        total = snap.gains.sum(axis=0, keepdims=True)       # (1, M, B)
        out[..., k] = config.vehicle_power_budget * (total - snap.gains)
    return out


def worst_case_tensor(snapshots, config: ScenarioConfig) -> np.ndarray:
    if config.worst_case_interference is not None:
        n, b = config.num_vehicles, config.num_rbs
        return np.full((n, snapshots[0].num_objects, b, len(snapshots)),
                       config.worst_case_interference)
    return default_worst_case_interference(snapshots, config)


# ---------------------------------------------------------------------------
# surrogate link quantities


def bounded_sinr_tensor(powers: np.ndarray, ps_info: np.ndarray,
                        gains: np.ndarray, worst_interference: np.ndarray,
                        config: ScenarioConfig) -> np.ndarray:
    """SINR with the actual interference replaced by the fixed worst case."""
    num = ps_info * powers * gains
    den = config.processing_noise + ps_info * (worst_interference + config.noise_floor)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def bounded_sinr(policy: Policy, snapshot: NetworkSnapshot, config: ScenarioConfig,
                 link: tuple, worst_interference) -> float:
    i, j, r = link
    p, wi, _, _ = policy.at_interval(snapshot.interval)
    w = np.asarray(worst_interference, dtype=float)
    w_ijr = w[i, j, r] if w.ndim else float(w)
    return float(bounded_sinr_tensor(p[i, j, r], wi[i, j, r],
                                     snapshot.gains[i, j, r], w_ijr, config))


def bounded_rate_tensor(powers, ps_info, assignment, gains, coeffs: SCACoefficients,
                        worst_interference, config: ScenarioConfig) -> np.ndarray:
    """Surrogate per-link rates summed over RBs, (N, M) bit/s.

    Links with zero assignment contribute nothing even when their bound is
    ``-inf`` (unassigned zero-power links).
    """
    gamma = bounded_sinr_tensor(powers, ps_info, gains, worst_interference, config)
    per_rb = config.bandwidth * log_bound(coeffs, gamma)
    per_rb = np.where(assignment > 0, per_rb, 0.0)
    return (assignment * per_rb).sum(axis=2)


def bounded_rate(policy: Policy, coeffs: SCACoefficients, snapshot: NetworkSnapshot,
                 config: ScenarioConfig, link: tuple, worst_interference) -> float:
    """Surrogate rate for one (vehicle, object) pair at this interval."""
    i, j = link
    l = snapshot.interval - 1
    p, wi, _, s = policy.at_interval(snapshot.interval)
    w = np.asarray(worst_interference, dtype=float)
    w_l = w[..., l] if w.ndim == 4 else w
    gamma = bounded_sinr_tensor(p, wi, snapshot.gains, w_l, config)
    if ((s[i, j] > 0) & (gamma[i, j] <= 0)).any():
        raise ValueError("assigned RB with nonpositive surrogate SINR")
    sub = SCACoefficients(coeffs.slope[..., l], coeffs.offset[..., l], coeffs.iteration)
    per_rb = config.bandwidth * log_bound(sub, gamma)[i, j]
    return float((s[i, j] * np.where(s[i, j] > 0, per_rb, 0.0)).sum())


def bounded_charging_tensor(powers, ps_energy, assignment, gains,
                            worst_interference, config: ScenarioConfig,
                            served: np.ndarray) -> np.ndarray:
    """Idealized harvest bound (N, M): the desired-signal stream is taken
    whole (no split factor), interference at the worst-case level."""
    eta = config.conversion_efficiency
    ambient = (eta * ps_energy * assignment
               * (worst_interference + config.noise_floor)).sum(axis=2)
    desired = (eta * assignment * powers * gains).sum(axis=2)
    return (ambient + desired) * served


def bounded_charging(policy: Policy, snapshot: NetworkSnapshot, config: ScenarioConfig,
                     link: tuple, worst_interference) -> float:
    i, j = link
    l = snapshot.interval - 1
    p, _, we, s = policy.at_interval(snapshot.interval)
    w = np.asarray(worst_interference, dtype=float)
    w_l = w[..., l] if w.ndim == 4 else np.broadcast_to(w, p.shape)
    tensor = bounded_charging_tensor(p, we, s, snapshot.gains, w_l, config,
                                     snapshot.served)
    return float(tensor[i, j])


def relaxed_object_power(charging_bound, config: ScenarioConfig):
    """Linearized object consumption ``P_rx - C_bound`` (no clamp).

    Negative values flag a charging-cap (C7) violation; the solver keeps
    its iterates inside the cap, so inside the pipeline this stays >= 0.
    """
    return config.object_rx_power - np.asarray(charging_bound, dtype=float)
