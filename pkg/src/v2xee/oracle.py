"""Independent brute-force verification on tiny instances.

Enumerates every exclusivity-respecting binary assignment, grids the power
and split of each assigned link jointly, and evaluates either the exact
efficiency (original problem) or the transformed surrogate objective.  The
reported grid slack is the largest objective change across the immediate
grid neighbors of the winner, so optimality claims stay honest about
discretization.  Also hosts the 1-D per-link Lagrangian grid searches used
to verify the closed-form updates.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .scenario import ScenarioConfig
from .metrics import Policy, FEASIBILITY_TOL
from .approx import LN2, SCACoefficients, worst_case_tensor

__all__ = [
    "OracleConfig",
    "OracleResult",
    "oracle_max_ee",
    "oracle_max_transformed",
    "grid_max_ps_ratio",
    "grid_max_power",
    "ps_link_lagrangian",
    "power_link_lagrangian",
]


@dataclass(frozen=True)
class OracleConfig:
    """Grid resolution and the instance caps the enumeration tolerates."""

    power_grid_points: int = 64   # per link, log-spaced over [0, budget]
    ps_grid_points: int = 64      # per link, interior points of (0, 1)
    max_vehicles: int = 2
    max_objects_per_vehicle: int = 2
    max_rbs: int = 2
    max_intervals: int = 2
    max_joint_points: float = 5e7
    chunk: int = 1 << 16

    def __post_init__(self):
        if self.power_grid_points < 8 or self.ps_grid_points < 8:
            raise ValueError("grid sizes must be >= 8")


@dataclass
class OracleResult:
    value: float          # best exact efficiency, or best transformed objective
    policy: Policy | None
    grid_slack: float
    feasible: bool
    assignments_tried: int = 0


def _check_caps(snapshots, config: ScenarioConfig, ocfg: OracleConfig) -> None:
    if config.num_vehicles > ocfg.max_vehicles:
        raise ValueError("instance exceeds oracle vehicle cap")
    if config.num_rbs > ocfg.max_rbs:
        raise ValueError("instance exceeds oracle RB cap")
    if len(snapshots) > ocfg.max_intervals:
        raise ValueError("instance exceeds oracle interval cap")
    for snap in snapshots:
        if snap.served.sum(axis=1).max(initial=0) > ocfg.max_objects_per_vehicle:
            raise ValueError("instance exceeds oracle per-vehicle object cap")


def _grids(config: ScenarioConfig, ocfg: OracleConfig):
    npow = ocfg.power_grid_points
    p_values = np.concatenate([
        [0.0], np.geomspace(config.vehicle_power_budget * 1e-4,
                            config.vehicle_power_budget, npow - 1)])
    w_values = (np.arange(ocfg.ps_grid_points) + 0.5) / ocfg.ps_grid_points
    return p_values, w_values


def _enumerate_assignments(snapshots, config: ScenarioConfig):
    """Yield link lists [(k, i, j, r), ...] for every admissible assignment.

    Choices respect exclusivity by construction; when a minimum rate or
    charge applies, assignments leaving any served pair uncovered in some
    interval are pruned (they are infeasible outright).
    """
    slots = []
    for k, snap in enumerate(snapshots):
        for i in range(config.num_vehicles):
            objs = np.flatnonzero(snap.served[i])
            if objs.size == 0:
                continue
            for r in range(config.num_rbs):
                slots.append((k, i, r, [None] + objs.tolist()))
    must_cover = config.min_rate > 0 or config.min_charge > 0
    pairs = [(k, i, j)
             for k, snap in enumerate(snapshots)
             for i in range(config.num_vehicles)
             for j in np.flatnonzero(snap.served[i])]
    for combo in itertools.product(*(choices for *_, choices in slots)):
        links = [(k, i, j, r)
                 for (k, i, r, _), j in zip(slots, combo) if j is not None]
        if must_cover:
            covered = {(k, i, j) for (k, i, j, _) in links}
            if any(p not in covered for p in pairs):
                continue
        yield links


class _LinkSystem:
    """Precomputed structure for vectorized batch evaluation of one assignment."""

    def __init__(self, links, snapshots, config: ScenarioConfig,
                 worst: np.ndarray | None, coeffs=None):
        self.links = links
        self.config = config
        self.n = len(links)
        n_cfg = config.num_vehicles
        self.gain = np.array([snapshots[k].gains[i, j, r] for k, i, j, r in links])
        if worst is not None:
            self.worst = np.array([worst[i, j, r, k] for k, i, j, r in links])
        else:
            self.worst = None
        if coeffs is not None:
            self.slope = np.array([coeffs[k].slope[i, j, r] for k, i, j, r in links])
            self.offset = np.array([coeffs[k].offset[i, j, r] for k, i, j, r in links])
        # cross[v, s]: gain from source link s's vehicle to victim link v's object
        self.cross = np.zeros((self.n, self.n))
        for v, (kv, iv, jv, rv) in enumerate(links):
            for s, (ks, is_, js, rs) in enumerate(links):
                if ks == kv and rs == rv and is_ != iv:
                    self.cross[v, s] = snapshots[kv].gains[is_, jv, rv]
        pair_list = sorted({(k, i, j) for k, i, j, _ in links})
        self.pair_index = {p: a for a, p in enumerate(pair_list)}
        self.pair_of_link = np.array([self.pair_index[(k, i, j)]
                                      for k, i, j, _ in links], dtype=int)
        self.n_pairs = len(pair_list)
        group_list = sorted({(k, i) for k, i, _, _ in links})
        self.group_index = {g: a for a, g in enumerate(group_list)}
        self.group_of_link = np.array([self.group_index[(k, i)]
                                       for k, i, _, _ in links], dtype=int)
        self.n_groups = len(group_list)
        self.served_pairs_total = int(sum(s.served.sum() for s in snapshots))
        self.e_base = (config.static_vehicle_power * n_cfg * len(snapshots)
                       + config.object_rx_power * self.served_pairs_total)

    def _group_sum(self, link_vals: np.ndarray, n_out: int, idx: np.ndarray):
        out = np.zeros((link_vals.shape[0], n_out))
        np.add.at(out.T, idx, link_vals.T)
        return out

    def evaluate_true(self, p: np.ndarray, w: np.ndarray):
        """Exact efficiency and feasibility for batches (S, n_links)."""
        cfg = self.config
        intf = p @ self.cross.T
        num = w * p * self.gain
        den = cfg.processing_noise + w * (intf + cfg.noise_floor)
        gamma = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
        rate_links = cfg.bandwidth * np.log2(1.0 + gamma)
        charge_links = cfg.conversion_efficiency * (1.0 - w) \
            * (intf + cfg.noise_floor + p * self.gain)
        pair_rate = self._group_sum(rate_links, self.n_pairs, self.pair_of_link)
        pair_charge = self._group_sum(charge_links, self.n_pairs, self.pair_of_link)
        spent = self._group_sum(p, self.n_groups, self.group_of_link)
        feas = (spent <= cfg.vehicle_power_budget * (1 + FEASIBILITY_TOL)).all(axis=1)
        feas &= (pair_rate >= cfg.min_rate * (1 - FEASIBILITY_TOL) - 1e-12).all(axis=1)
        feas &= (pair_charge >= cfg.min_charge * (1 - FEASIBILITY_TOL) - 1e-30).all(axis=1)
        energy = self.e_base - np.minimum(pair_charge, cfg.object_rx_power).sum(axis=1) \
            + p.sum(axis=1)
        lam = rate_links.sum(axis=1) / energy
        return lam, feas

    def evaluate_transformed(self, p: np.ndarray, w: np.ndarray, lam: float):
        """Surrogate objective R~ - lam*E~ and C1/C4/C5/C7 feasibility."""
        cfg = self.config
        num = w * p * self.gain
        den = cfg.processing_noise + w * (self.worst + cfg.noise_floor)
        gamma = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            lg = np.where(gamma > 0, np.log2(np.maximum(gamma, 1e-300)), -np.inf)
        rate_links = cfg.bandwidth * np.where(
            self.slope > 0, self.slope * lg + self.offset, self.offset)
        charge_links = cfg.conversion_efficiency * (
            (1.0 - w) * (self.worst + cfg.noise_floor) + p * self.gain)
        pair_rate = self._group_sum(rate_links, self.n_pairs, self.pair_of_link)
        pair_charge = self._group_sum(charge_links, self.n_pairs, self.pair_of_link)
        spent = self._group_sum(p, self.n_groups, self.group_of_link)
        feas = (spent <= cfg.vehicle_power_budget * (1 + FEASIBILITY_TOL)).all(axis=1)
        feas &= (pair_rate >= cfg.min_rate * (1 - FEASIBILITY_TOL) - 1e-12).all(axis=1)
        feas &= (pair_charge >= cfg.min_charge * (1 - FEASIBILITY_TOL) - 1e-30).all(axis=1)
        feas &= (pair_charge <= cfg.object_rx_power * (1 + FEASIBILITY_TOL)).all(axis=1)
        energy = self.e_base - pair_charge.sum(axis=1) + p.sum(axis=1)
        obj = rate_links.sum(axis=1) - lam * energy
        return obj, feas


def _decode(flat: np.ndarray, n_links: int, n_combined: int) -> np.ndarray:
    out = np.empty((flat.size, n_links), dtype=np.int64)
    rest = flat.copy()
    for pos in range(n_links):
        out[:, pos] = rest % n_combined
        rest //= n_combined
    return out


def _search_assignment(system: _LinkSystem, p_values, w_values, mode, lam,
                       ocfg: OracleConfig):
    """Best (value, flat index) over the joint grid of one assignment."""
    n_links = system.n
    nc = p_values.size * w_values.size
    total = nc ** n_links
    if total > ocfg.max_joint_points:
        raise ValueError(
            f"joint grid of {total:.2e} points exceeds the oracle budget; "
            "reduce grid sizes or instance size")
    best_val, best_flat = -np.inf, -1
    for start in range(0, total, ocfg.chunk):
        flat = np.arange(start, min(start + ocfg.chunk, total), dtype=np.int64)
        combined = _decode(flat, n_links, nc)
        p = p_values[combined // w_values.size]
        w = w_values[combined % w_values.size]
        if mode == "true":
            val, feas = system.evaluate_true(p, w)
        else:
            val, feas = system.evaluate_transformed(p, w, lam)
        val = np.where(feas, val, -np.inf)
        k = int(np.argmax(val))
        if val[k] > best_val:
            best_val, best_flat = float(val[k]), int(flat[k])
    return best_val, best_flat


def _neighbor_slack(system, p_values, w_values, mode, lam, best_flat, best_val,
                    ocfg) -> float:
    """Max objective change across the winner's immediate grid neighbors."""
    n_links = system.n
    nc = p_values.size * w_values.size
    base = _decode(np.array([best_flat], dtype=np.int64), n_links, nc)[0]
    cand = []
    for pos in range(n_links):
        pi, wi = divmod(int(base[pos]), w_values.size)
        for dpi, dwi in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            qi, vi = pi + dpi, wi + dwi
            if 0 <= qi < p_values.size and 0 <= vi < w_values.size:
                row = base.copy()
                row[pos] = qi * w_values.size + vi
                cand.append(row)
    if not cand:
        return 0.0
    combined = np.array(cand)
    p = p_values[combined // w_values.size]
    w = w_values[combined % w_values.size]
    if mode == "true":
        val, feas = system.evaluate_true(p, w)
    else:
        val, feas = system.evaluate_transformed(p, w, lam)
    diffs = np.abs(val[feas] - best_val)
    return float(diffs.max()) if diffs.size else 0.0


def _policy_from_links(links, combined, p_values, w_values, nw, shape) -> Policy:
    policy = Policy.zeros(*shape)
    for pos, (k, i, j, r) in enumerate(links):
        c = int(combined[pos])
        policy.assignment[i, j, r, k] = 1.0
        policy.powers[i, j, r, k] = p_values[c // nw]
        policy.ps_info[i, j, r, k] = w_values[c % nw]
        policy.ps_energy[i, j, r, k] = 1.0 - w_values[c % nw]
    return policy


def _run_oracle(snapshots, config, ocfg, mode, lam=0.0, coeffs=None):
    _check_caps(snapshots, config, ocfg)
    worst = worst_case_tensor(snapshots, config) if mode == "transformed" else None
    p_values, w_values = _grids(config, ocfg)
    nw = w_values.size
    shape = (config.num_vehicles, snapshots[0].num_objects, config.num_rbs,
             len(snapshots))
    best = OracleResult(value=-np.inf, policy=None, grid_slack=0.0, feasible=False)
    tried = 0
    best_system, best_flat = None, -1
    for links in _enumerate_assignments(snapshots, config):
        tried += 1
        if not links:
            if config.min_rate <= 0 and config.min_charge <= 0:
                empty = Policy.zeros(*shape)
                e_base = (config.static_vehicle_power * config.num_vehicles
                          * len(snapshots)
                          + config.object_rx_power
                          * sum(int(s.served.sum()) for s in snapshots))
                val = 0.0 - (lam * e_base if mode == "transformed" else 0.0)
                if val > best.value:
                    best = OracleResult(val, empty, 0.0, True, tried)
                    best_system, best_flat = None, -1
            continue
        system = _LinkSystem(links, snapshots, config, worst, coeffs)
        val, flat = _search_assignment(system, p_values, w_values, mode, lam, ocfg)
        if flat >= 0 and val > best.value:
            combined = _decode(np.array([flat], dtype=np.int64), system.n,
                               p_values.size * nw)[0]
            best = OracleResult(val, _policy_from_links(links, combined, p_values,
                                                        w_values, nw, shape),
                                0.0, True, tried)
            best_system, best_flat = system, flat
    best.assignments_tried = tried
    if best.feasible and best_system is not None:
        best.grid_slack = _neighbor_slack(best_system, p_values, w_values, mode,
                                          lam, best_flat, best.value, ocfg)
    return best


def oracle_max_ee(snapshots, config: ScenarioConfig,
                  ocfg: OracleConfig | None = None) -> OracleResult:
    """Exhaustive maximum of the exact efficiency under C1-C6."""
    return _run_oracle(snapshots, config, ocfg or OracleConfig(), "true")


def oracle_max_transformed(snapshots, config: ScenarioConfig, lam: float,
                           coeffs_per_interval,
                           ocfg: OracleConfig | None = None) -> OracleResult:
    """Exhaustive maximum of ``R~ - lam*E~`` under C1-C7 (surrogate forms)."""
    return _run_oracle(snapshots, config, ocfg or OracleConfig(), "transformed",
                       lam=lam, coeffs=coeffs_per_interval)


# ---------------------------------------------------------------------------
# 1-D per-link Lagrangian grids (closed-form verification)


def ps_link_lagrangian(w, *, slope, offset, rate_mult, ps_price, power, gain,
                       proc_noise, worst_plus_noise, bandwidth):
    """Split-dependent per-link terms: bounded rate minus the split price."""
    w = np.asarray(w, dtype=float)
    num = w * power * gain
    den = proc_noise + w * worst_plus_noise
    gamma = np.divide(num, den, out=np.zeros_like(w, dtype=float), where=den > 0)
    with np.errstate(divide="ignore"):
        lg = np.where(gamma > 0, np.log2(np.maximum(gamma, 1e-300)), -np.inf)
    return (1.0 + rate_mult) * bandwidth * (slope * lg + offset) - ps_price * w


def power_link_lagrangian(p, *, slope, offset, rate_mult, lam, eta, gain,
                          charge_mult, cap_mult, power_mult, ps, proc_noise,
                          worst_plus_noise, bandwidth):
    """Power-dependent per-link terms: bounded rate, consumption priced at the
    working ratio, harvest credit, and the charge/cap/budget multipliers."""
    p = np.asarray(p, dtype=float)
    num = ps * p * gain
    den = proc_noise + ps * worst_plus_noise
    gamma = np.divide(num, den, out=np.zeros_like(p, dtype=float), where=den > 0)
    with np.errstate(divide="ignore"):
        lg = np.where(gamma > 0, np.log2(np.maximum(gamma, 1e-300)), -np.inf)
    rate = (1.0 + rate_mult) * bandwidth * (slope * lg + offset)
    linear = (lam - lam * eta * gain - charge_mult * gain + cap_mult * gain
              + power_mult)
    return rate - linear * p


def grid_max_ps_ratio(points: int = 10_000, **kw) -> float:
    """Grid argmax of :func:`ps_link_lagrangian` over [0, 1]."""
    w = np.linspace(0.0, 1.0, points)
    return float(w[np.argmax(ps_link_lagrangian(w, **kw))])


def grid_max_power(budget: float, points: int = 10_000, refine: bool = True,
                   **kw) -> float:
    """Grid argmax of :func:`power_link_lagrangian` over [0, budget].

    With ``refine`` a second equally-fine grid brackets the first winner, so
    the argmax is resolved well beyond the coarse spacing while remaining a
    pure function-evaluation search.
    """
    p = np.linspace(0.0, budget, points)
    best = float(p[np.argmax(power_link_lagrangian(p, **kw))])
    if refine:
        span = budget / (points - 1)
        p2 = np.linspace(max(0.0, best - span), min(budget, best + span), points)
        best = float(p2[np.argmax(power_link_lagrangian(p2, **kw))])
    return best
