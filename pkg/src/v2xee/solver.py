"""Three-level energy-efficiency optimizer.

Outer loop: Dinkelbach iterations on the efficiency parameter (maximize
``R - lam * E``, update ``lam`` to the achieved ratio until the transformed
optimum hits zero).  Middle loop: successive re-expansion of the concave
rate-bound coefficients.  Inner loop: Lagrangian dual with closed-form
primal updates for the split ratio and transmit power, marginal-benefit RB
assignment, and projected sub-gradient multiplier updates.

Two engineering safeguards on top of the faithful pipeline, both recorded
in the solve report: the outer loop keeps the previous policy whenever the
new inner solution does not improve the tight transformed objective (makes
the efficiency trace nondecreasing under inexact inner solves), and a final
coordinate search refines the returned policy against the *exact* metrics,
because the surrogate idealizes harvesting and therefore biases the split
ratio.  The reported trace comes from the un-polished pipeline.
"""

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .scenario import NetworkSnapshot, ScenarioConfig
from .metrics import (Policy, FEASIBILITY_TOL, constraint_residuals,
                      energy_efficiency, residual_scales, validate_policy)
from .approx import (LN2, SCACoefficients, bounded_charging_tensor,
                     bounded_rate_tensor, bounded_sinr_tensor,
                     update_coefficients, worst_case_tensor)

__all__ = [
    "SolverParams",
    "DualState",
    "DinkelbachState",
    "SolveReport",
    "AssignmentError",
    "ps_ratio_closed_form",
    "power_closed_form",
    "marginal_benefit",
    "assign_resource_blocks",
    "subgradient_step",
    "inner_dual_solve",
    "dinkelbach_objective",
    "dinkelbach_solve",
    "feasibility_probe",
    "write_solve_report",
]

_PRICE_FLOOR = 1e-12


class AssignmentError(ValueError):
    """RB assignment requested for a vehicle with no candidate objects."""


@dataclass
class SolverParams:
    """Tolerances, iteration caps, and switches for the solve pipeline."""

    tol_dink: float = 1e-6     # relative stop on the transformed objective
    tol_sca: float = 1e-4      # stop on bound-coefficient change
    tol_dual: float = 1e-4     # stop on normalized multiplier change
    max_dink: int = 50
    max_sca: int = 30
    max_dual: int = 500
    min_dual: int = 5
    patience: int = 30         # dual iterations without a better iterate
    step0: float = 0.1         # base sub-gradient step, per-constraint normalized
    eps_theta: float = 1e-12   # power closed-form denominator safeguard
    ps_floor: float = 1e-9     # interior clamp honoring the open split bounds
    ps_price_override: float | None = None  # fixed split price; None = lam*eta*(I~+N0W)
    paper_signs: bool = False  # literal published multiplier-update signs
    polish_passes: int = 2     # exact-metric coordinate-search passes (0 disables)
    polish_grid: int = 9


@dataclass
class DualState:
    """Lagrange multipliers for one interval, all kept >= 0.

    ``ps_mult`` prices the split-sum coupling and divides in the split
    closed form; its residual vanishes identically once the energy split is
    set to one minus the information split, so it acts as a fixed price.
    """

    rate_mult: np.ndarray    # (N, M)  minimum-rate constraint
    ps_mult: np.ndarray      # (N, M, B) split-sum coupling
    rb_mult: np.ndarray      # (N, B)  RB exclusivity
    charge_mult: np.ndarray  # (N, M)  minimum-charge constraint
    power_mult: np.ndarray   # (N,)    power budget
    cap_mult: np.ndarray     # (N, M)  charging cap (surrogate validity)
    step0: float = 0.1
    iteration: int = 0

    @classmethod
    def fresh(cls, n: int, m: int, b: int, step0: float = 0.1) -> "DualState":
        return cls(rate_mult=np.zeros((n, m)), ps_mult=np.ones((n, m, b)),
                   rb_mult=np.zeros((n, b)), charge_mult=np.zeros((n, m)),
                   power_mult=np.zeros(n), cap_mult=np.zeros((n, m)), step0=step0)

    def copy(self) -> "DualState":
        return DualState(self.rate_mult.copy(), self.ps_mult.copy(),
                         self.rb_mult.copy(), self.charge_mult.copy(),
                         self.power_mult.copy(), self.cap_mult.copy(),
                         self.step0, self.iteration)


@dataclass
class DinkelbachState:
    """Outer-loop state: current ratio, transformed objective, trace."""

    efficiency: float = 0.0
    objective: float = 0.0
    iteration: int = 0
    trace: list = field(default_factory=list)  # (k, efficiency, objective, violation)


@dataclass
class SolveReport:
    """Outcome of a full solve."""

    policy: Policy | None
    efficiency: float            # exact metrics at the returned policy
    surrogate_efficiency: float  # final Dinkelbach ratio (pre-polish)
    objective_gap: float         # |R~ - lam*E~| in bits at the final iterate
    residuals: dict              # normalized signed slacks, c1..c7
    iterations: dict             # per-loop-level counts
    converged: bool
    feasible: bool
    trace: list                  # (k, efficiency, objective, max violation)
    notes: str = ""


# ---------------------------------------------------------------------------
# closed-form primal updates


def _clamp_unit(h):
    return np.clip(h, 0.0, 1.0)


def ps_ratio_from_params(slope, rate_mult, ps_price, proc_noise, worst_plus_noise,
                         bandwidth):
    """Information-split stationary point, clamped to [0, 1].

    Solves ``price = d(rate bound)/d(split)`` via the quadratic discriminant;
    a nonpositive price returns the upper clamp (rate gain is free), zero
    processing noise returns the lower clamp (the bound no longer depends on
    the split).
    """
    slope = np.asarray(slope, dtype=float)
    bm = 1.0 + np.asarray(rate_mult, dtype=float)
    price = np.asarray(ps_price, dtype=float)
    x = np.asarray(worst_plus_noise, dtype=float)
    np_ = float(proc_noise)
    out = np.ones(np.broadcast_shapes(slope.shape, bm.shape, price.shape, x.shape))
    pos = price > 0.0
    if np_ == 0.0:
        return np.where(pos, 0.0, out)
    disc = (x * bm * 4.0 * LN2 * bandwidth * np_ * price * slope
            + (LN2 * np_ * price) ** 2)
    disc = np.maximum(disc, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = (np.sqrt(disc) - LN2 * price * np_) / (2.0 * x * LN2 * price)
        # Vanishing worst-case level: the stationarity equation turns linear.
        h_lin = bm * bandwidth * slope / (LN2 * price)
    h = np.where(x > 0.0, h, h_lin)
    return np.where(pos, _clamp_unit(h), out)


def power_closed_form_from_params(slope, rate_mult, lam, eta, gain, charge_mult,
                                  cap_mult, power_mult, bandwidth, budget,
                                  eps_theta=1e-12):
    """Transmit-power stationary point, safeguarded.

    A nonpositive denominator means the marginal value of power never meets
    its price; the budget cap is returned and the projection/budget
    multiplier takes over.  Candidates are capped at the vehicle budget.
    """
    theta = (lam + (np.asarray(cap_mult, dtype=float) - charge_mult - lam * eta)
             * gain + power_mult)
    num = np.asarray(slope, dtype=float) * bandwidth * (1.0 + np.asarray(rate_mult))
    with np.errstate(divide="ignore", invalid="ignore"):
        p = num / (LN2 * theta)
    p = np.where(theta > eps_theta, np.maximum(p, 0.0),
                 np.where(num > 0.0, budget, 0.0))
    return np.minimum(p, budget)


def ps_ratio_closed_form(dual: DualState, coeffs: SCACoefficients,
                         config: ScenarioConfig, worst_interference,
                         link: tuple | None = None):
    """Optimal information split per link; energy split is its complement."""
    out = ps_ratio_from_params(coeffs.slope, dual.rate_mult[:, :, None],
                               dual.ps_mult, config.processing_noise,
                               np.asarray(worst_interference) + config.noise_floor,
                               config.bandwidth)
    if link is None:
        return out
    i, j, r = link
    return float(out[i, j, r])


def power_closed_form(dual: DualState, coeffs: SCACoefficients,
                      snapshot: NetworkSnapshot, config: ScenarioConfig,
                      lam: float, eps_theta: float = 1e-12,
                      link: tuple | None = None):
    """Optimal transmit power per link given the current multipliers."""
    out = power_closed_form_from_params(
        coeffs.slope, dual.rate_mult[:, :, None], lam,
        config.conversion_efficiency, snapshot.gains,
        dual.charge_mult[:, :, None], dual.cap_mult[:, :, None],
        dual.power_mult[:, None, None], config.bandwidth,
        config.vehicle_power_budget, eps_theta)
    if link is None:
        return out
    i, j, r = link
    return float(out[i, j, r])


def marginal_benefit(dual: DualState, coeffs: SCACoefficients, ps_info: np.ndarray,
                     powers: np.ndarray, snapshot: NetworkSnapshot,
                     config: ScenarioConfig, worst_interference) -> np.ndarray:
    """Per-link RB score whose argmax decides the assignment, (N, M, B)."""
    bm = 1.0 + dual.rate_mult[:, :, None]
    w = config.bandwidth
    x = np.asarray(worst_interference) + config.noise_floor
    wi = np.maximum(ps_info, 1e-300)
    denom = np.asarray(worst_interference) + config.processing_noise / wi \
        + config.noise_floor
    signal = powers * snapshot.gains
    with np.errstate(divide="ignore", invalid="ignore"):
        log_term = np.where(signal > 0.0, np.log2(np.maximum(signal, 1e-300) / denom),
                            -np.inf)
    correction = (x * ps_info) / (LN2 * (x * ps_info + config.processing_noise))
    # Links without a usable bound (zero slope) score on the offset alone; a
    # large negative stand-in for log(0) keeps 0 * inf out of the argmax.
    braced = np.where(np.isneginf(log_term), -1e30, log_term - correction)
    rate_part = np.where(coeffs.slope > 0.0, coeffs.slope * braced, 0.0)
    score = (w * rate_part * bm
             + w * coeffs.offset * bm + dual.ps_mult - dual.rb_mult[:, None, :])
    return np.where(snapshot.served[:, :, None], score, -np.inf)


def assign_resource_blocks(dual: DualState, coeffs: SCACoefficients,
                           ps_info: np.ndarray, powers: np.ndarray,
                           snapshot: NetworkSnapshot, config: ScenarioConfig,
                           worst_interference) -> np.ndarray:
    """One-hot RB assignment by marginal benefit, ties to the lowest index.

    Every RB of every active vehicle is granted to its best candidate
    object; inactive vehicles receive nothing.
    """
    if (snapshot.active & ~snapshot.served.any(axis=1)).any():
        raise AssignmentError("active vehicle with empty candidate set")
    score = marginal_benefit(dual, coeffs, ps_info, powers, snapshot, config,
                             worst_interference)
    score = np.nan_to_num(score, nan=-np.inf)
    n, m, b = score.shape
    sig = np.zeros((n, m, b))
    winner = np.argmax(score, axis=1)          # (N, B), first max wins ties
    ii, rr = np.meshgrid(np.arange(n), np.arange(b), indexing="ij")
    sig[ii, winner, rr] = 1.0
    sig *= snapshot.active[:, None, None]
    sig *= snapshot.served[:, :, None]
    return sig


# ---------------------------------------------------------------------------
# dual updates


def subgradient_step(dual: DualState, primal: dict, config: ScenarioConfig,
                     params: SolverParams, lam_ref: float) -> DualState:
    """One projected multiplier update from the bracketed residuals.

    Default direction is standard dual ascent (a violated constraint drives
    its multiplier up); ``params.paper_signs`` applies the published signs
    literally instead.  Steps follow ``step0 / sqrt(t)`` with residuals
    normalized per constraint and prices scaled to the working ratio so the
    multipliers live on the scale the closed forms expect.
    """
    t = dual.iteration + 1
    base = params.step0 / np.sqrt(t)
    sign = 1.0 if params.paper_signs else -1.0
    served = primal["served"]
    sig = primal["assignment"]
    rate_scale, charge_scale = residual_scales(config)
    price = max(lam_ref, _PRICE_FLOOR)

    def unit(res):
        # Normalized subgradient: unit trust region keeps a constraint that
        # just became satisfied from crashing its multiplier in one step.
        return np.clip(res, -1.0, 1.0)

    res_rate = unit((primal["rate_bound"] - config.min_rate) / rate_scale)
    assigned = sig.sum(axis=2)
    we_agg = np.divide((sig * primal["ps_energy"]).sum(axis=2), assigned,
                       out=np.full(assigned.shape, 0.5), where=assigned > 0)
    denom = config.conversion_efficiency * np.maximum(we_agg, params.ps_floor)
    res_charge = unit((primal["charge_bound"] - config.min_charge)
                      / (denom * charge_scale))
    res_cap = unit((config.object_rx_power - primal["charge_bound"])
                   / (denom * charge_scale))
    res_rb = 1.0 - sig.sum(axis=1)
    spent = (sig * primal["powers"]).sum(axis=(1, 2))
    res_budget = unit((config.vehicle_power_budget - spent)
                      / config.vehicle_power_budget)
    res_ps = sig * (1.0 - primal["ps_info"] - primal["ps_energy"])

    def proj(x):
        return np.maximum(x, 0.0)

    new = dual.copy()
    new.rate_mult = proj(dual.rate_mult + sign * base * res_rate) * served
    new.ps_mult = proj(dual.ps_mult + sign * base * config.bandwidth * res_ps
                       * (dual.ps_mult > 0))
    new.rb_mult = proj(dual.rb_mult + sign * base * config.bandwidth * res_rb)
    new.charge_mult = proj(dual.charge_mult + sign * base * price * res_charge) * served
    new.cap_mult = proj(dual.cap_mult + sign * base * price * res_cap) * served
    new.power_mult = proj(dual.power_mult + sign * base * price * res_budget)
    new.iteration = t
    return new


def _dual_delta(old: DualState, new: DualState, config: ScenarioConfig,
                lam_ref: float) -> float:
    price = max(lam_ref, _PRICE_FLOOR)
    w = config.bandwidth
    return max(
        np.abs(new.rate_mult - old.rate_mult).max(initial=0.0),
        np.abs(new.rb_mult - old.rb_mult).max(initial=0.0) / w,
        np.abs(new.charge_mult - old.charge_mult).max(initial=0.0) / price,
        np.abs(new.cap_mult - old.cap_mult).max(initial=0.0) / price,
        np.abs(new.power_mult - old.power_mult).max(initial=0.0) / price,
    )


# ---------------------------------------------------------------------------
# per-interval dual solve


@dataclass
class _IntervalSolution:
    powers: np.ndarray
    ps_info: np.ndarray
    ps_energy: np.ndarray
    assignment: np.ndarray
    objective: float        # coefficient-surrogate F for this interval
    objective_tight: float  # tight-surrogate F for this interval
    surrogate_rate: float
    surrogate_energy: float
    min_residual: float
    feasible: bool


def _surrogate_energy(powers, ps_energy, assignment, charge_bound, snapshot,
                      config) -> float:
    spent = (assignment * powers).sum(axis=(1, 2))
    relaxed = (config.object_rx_power - charge_bound)[snapshot.served].sum()
    return float(relaxed + config.static_vehicle_power * config.num_vehicles
                 + spent.sum())


def _true_charging(powers, ps_energy, assignment, snapshot, config) -> np.ndarray:
    """Exact per-pair harvest at this iterate (actual interference)."""
    txp = (assignment * powers).sum(axis=1)
    total = np.einsum("ir,ijr->jr", txp, snapshot.gains)
    intf = np.maximum(total[None, :, :] - txp[:, None, :] * snapshot.gains, 0.0)
    eta = config.conversion_efficiency
    c = (eta * ps_energy * assignment
         * (intf + config.noise_floor + powers * snapshot.gains)).sum(axis=2)
    return c * snapshot.served


def _iterate_metrics(powers, ps_info, ps_energy, assignment, coeffs, snapshot,
                     config, worst_l, lam):
    rate_b = bounded_rate_tensor(powers, ps_info, assignment, snapshot.gains,
                                 coeffs, worst_l, config)
    chg_b = bounded_charging_tensor(powers, ps_energy, assignment, snapshot.gains,
                                    worst_l, config, snapshot.served)
    energy = _surrogate_energy(powers, ps_energy, assignment, chg_b, snapshot, config)
    rate_sum = float(rate_b[snapshot.served].sum())
    gamma = bounded_sinr_tensor(powers, ps_info, snapshot.gains, worst_l, config)
    tight = float((config.bandwidth * assignment * np.log2(1.0 + gamma)).sum())
    rate_scale, charge_scale = residual_scales(config)
    served = snapshot.served
    # Iterate selection checks the exact minimum-charge slack: the idealized
    # harvest bound overstates charging, so its slack alone would admit
    # iterates the exact constraint rejects.
    chg_true = _true_charging(powers, ps_energy, assignment, snapshot, config)
    res = [
        float(((rate_b - config.min_rate)[served] / rate_scale).min()),
        float(((chg_true - config.min_charge)[served] / charge_scale).min()),
        float(((config.object_rx_power - chg_b)[served] / charge_scale).min()),
    ]
    return rate_b, chg_b, rate_sum, energy, tight, min(res)


def _ensure_coverage(sig: np.ndarray, score: np.ndarray,
                     snapshot: NetworkSnapshot) -> np.ndarray:
    """Reassign surplus RBs so every served object holds at least one.

    The marginal-benefit argmax can starve weak objects (their boosted score
    is negative, so the rate multiplier cannot rescue them); with QoS floors
    an uncovered object makes the whole interval infeasible.  Each uncovered
    object takes the surplus RB where it scores best relative to the current
    holder; deterministic, exclusivity preserved.
    """
    if ((sig.sum(axis=2) > 0) | ~snapshot.served).all():
        return sig
    sig = sig.copy()
    for i in range(sig.shape[0]):
        objs = np.flatnonzero(snapshot.served[i])
        if objs.size == 0 or (sig[i, objs].sum(axis=1) > 0).all():
            continue
        for j in objs:
            if sig[i, j].sum() > 0:
                continue
            holders = sig[i].argmax(axis=0)           # per-RB current object
            counts = sig[i].sum(axis=1)               # per-object RB counts
            donor_rbs = [r for r in range(sig.shape[2])
                         if sig[i, :, r].sum() > 0 and counts[holders[r]] > 1]
            if not donor_rbs:
                continue
            loss = [score[i, j, r] - score[i, holders[r], r] for r in donor_rbs]
            r = donor_rbs[int(np.argmax(loss))]
            sig[i, holders[r], r] = 0.0
            sig[i, j, r] = 1.0
    return sig


def _solve_interval(lam: float, coeffs: SCACoefficients, snapshot: NetworkSnapshot,
                    config: ScenarioConfig, params: SolverParams,
                    worst_l: np.ndarray, dual: DualState):
    """Inner dual loop for one interval; returns the best binarized iterate."""
    served3 = snapshot.served[:, :, None]
    if params.ps_price_override is not None:
        dual.ps_mult = np.full_like(dual.ps_mult, params.ps_price_override)
    else:
        # The split-coupling residual vanishes identically (the energy split
        # is the complement of the information split), so this multiplier
        # stays at its initial value and acts as a price on decoding.  Price
        # it at the exact-metric marginal value of the energy stream at the
        # equal-share reference power: harvested watts are worth the working
        # ratio.
        counts = snapshot.served.sum(axis=1)
        share = np.divide(config.vehicle_power_budget,
                          counts * config.num_rbs,
                          out=np.zeros(config.num_vehicles), where=counts > 0)
        dual.ps_mult = lam * config.conversion_efficiency \
            * (worst_l + config.noise_floor
               + share[:, None, None] * snapshot.gains)
    best = None
    iterations = 0
    since_improve = 0
    n, m, b = snapshot.gains.shape
    ii, rr = np.meshgrid(np.arange(n), np.arange(b), indexing="ij")
    active3 = (snapshot.active[:, None, None] * snapshot.served[:, :, None])
    for t in range(1, params.max_dual + 1):
        iterations = t
        wi = ps_ratio_closed_form(dual, coeffs, config, worst_l)
        wi = np.where(served3, np.clip(wi, params.ps_floor, 1.0 - params.ps_floor), 0.5)
        pw = power_closed_form(dual, coeffs, snapshot, config, lam,
                               params.eps_theta) * served3
        score = np.nan_to_num(marginal_benefit(dual, coeffs, wi, pw, snapshot,
                                               config, worst_l), nan=-np.inf)
        sig = np.zeros((n, m, b))
        sig[ii, np.argmax(score, axis=1), rr] = 1.0
        sig *= active3
        if config.min_rate > 0 or config.min_charge > 0:
            sig = _ensure_coverage(sig, score, snapshot)
        powers = pw * sig
        spent = powers.sum(axis=(1, 2))
        over = spent > config.vehicle_power_budget
        if over.any():
            scale = np.where(over, config.vehicle_power_budget
                             / np.maximum(spent, 1e-300), 1.0)
            powers *= scale[:, None, None]
        if config.min_charge > 0:
            # Primal projection onto the minimum-charge set: cap the decoding
            # split so the energy stream of each assigned link can deliver
            # the floor by itself (interference only helps).  Uses the final
            # budget-projected powers.
            recv = np.where(sig > 0, powers * snapshot.gains, np.inf)
            we_need = config.min_charge / (config.conversion_efficiency
                                           * (recv + config.noise_floor))
            wi = np.minimum(wi, np.where(we_need < 1.0, 1.0 - we_need, 1.0))
            wi = np.maximum(wi, params.ps_floor)
        we = np.where(served3, 1.0 - wi, 0.5)
        rate_b, chg_b, rate_sum, energy, tight, min_res = _iterate_metrics(
            powers, wi, we, sig, coeffs, snapshot, config, worst_l, lam)
        sol = _IntervalSolution(
            powers=powers, ps_info=wi, ps_energy=we, assignment=sig,
            objective=rate_sum - lam * energy,
            objective_tight=tight - lam * energy,
            surrogate_rate=rate_sum, surrogate_energy=energy,
            min_residual=min_res, feasible=min_res >= -FEASIBILITY_TOL)
        improved = False
        if best is None:
            best, improved = sol, True
        elif sol.feasible and (not best.feasible or sol.objective > best.objective):
            margin = params.tol_sca * (abs(best.objective) + 1.0)
            improved = not best.feasible or sol.objective > best.objective + margin
            best = sol
        elif not best.feasible and sol.min_residual > best.min_residual:
            best, improved = sol, True
        since_improve = 0 if improved else since_improve + 1
        primal = {"served": snapshot.served, "assignment": sig, "powers": powers,
                  "ps_info": wi, "ps_energy": we, "rate_bound": rate_b,
                  "charge_bound": chg_b}
        new_dual = subgradient_step(dual, primal, config, params, lam)
        delta = _dual_delta(dual, new_dual, config, lam)
        dual = new_dual
        if t >= params.min_dual and (delta < params.tol_dual
                                     or since_improve >= params.patience):
            break
    return best, dual, iterations


def inner_dual_solve(lam: float, coeffs: SCACoefficients, snapshot: NetworkSnapshot,
                     config: ScenarioConfig, params: SolverParams | None = None,
                     worst_interference=None, dual: DualState | None = None):
    """Solve one interval's concave subproblem at a fixed ratio ``lam``.

    Returns a single-interval :class:`Policy` (binary assignment, budget
    projected onto the cap when violated) and the final :class:`DualState`.
    Evaluate the policy against ``replace(snapshot, interval=1)``.
    """
    params = params or SolverParams()
    if worst_interference is None:
        worst_l = worst_case_tensor([snapshot], config)[..., 0]
    else:
        worst_l = np.broadcast_to(np.asarray(worst_interference, dtype=float),
                                  snapshot.gains.shape)
    if dual is None:
        dual = DualState.fresh(config.num_vehicles, snapshot.num_objects,
                               config.num_rbs, params.step0)
    sol, dual, _ = _solve_interval(lam, coeffs, snapshot, config, params,
                                   worst_l, dual.copy())
    policy = Policy(powers=sol.powers[..., None], ps_info=sol.ps_info[..., None],
                    ps_energy=sol.ps_energy[..., None],
                    assignment=sol.assignment[..., None])
    return policy, dual


# ---------------------------------------------------------------------------
# surrogate horizon objective


def dinkelbach_objective(policy: Policy, snapshots, config: ScenarioConfig,
                         lam: float, coeffs_per_interval=None,
                         worst_interference=None) -> float:
    """Transformed objective ``R~ - lam * E~`` in bits over the horizon.

    Without explicit coefficients the rate bound is expanded at the policy
    itself (tight), making the value a pure function of the policy.
    """
    if worst_interference is None:
        worst = worst_case_tensor(snapshots, config)
    else:
        worst = np.asarray(worst_interference, dtype=float)
        if worst.ndim == 0:
            n, m, b = snapshots[0].gains.shape
            worst = np.full((n, m, b, len(snapshots)), float(worst))
    total = 0.0
    for k, snap in enumerate(snapshots):
        p, wi, we, s = policy.at_interval(snap.interval)
        worst_l = worst[..., k]
        gamma = bounded_sinr_tensor(p, wi, snap.gains, worst_l, config)
        if coeffs_per_interval is None:
            rate = float((config.bandwidth * s * np.log2(1.0 + gamma)).sum())
        else:
            c = coeffs_per_interval[k]
            rate_b = bounded_rate_tensor(p, wi, s, snap.gains, c, worst_l, config)
            rate = float(rate_b[snap.served].sum())
        chg_b = bounded_charging_tensor(p, we, s, snap.gains, worst_l, config,
                                        snap.served)
        energy = _surrogate_energy(p, we, s, chg_b, snap, config)
        total += rate - lam * energy
    return total * config.interval_duration


def _surrogate_ratio(policy: Policy, snapshots, config, worst) -> tuple[float, float]:
    """Tight surrogate rate sum and surrogate energy sum (per-interval units)."""
    rate = 0.0
    energy = 0.0
    for k, snap in enumerate(snapshots):
        p, wi, we, s = policy.at_interval(snap.interval)
        worst_l = worst[..., k]
        gamma = bounded_sinr_tensor(p, wi, snap.gains, worst_l, config)
        rate += float((config.bandwidth * s * np.log2(1.0 + gamma)).sum())
        chg_b = bounded_charging_tensor(p, we, s, snap.gains, worst_l, config,
                                        snap.served)
        energy += _surrogate_energy(p, we, s, chg_b, snap, config)
    return rate, energy


# ---------------------------------------------------------------------------
# feasibility probe and exact-metric evaluation


def _coverage_assignment(snapshot: NetworkSnapshot, config: ScenarioConfig) -> np.ndarray:
    """Best-gain RB assignment that covers every object first, (N, M, B)."""
    n, m, b = snapshot.gains.shape
    sig = np.zeros((n, m, b))
    for i in range(n):
        if not snapshot.active[i]:
            continue
        objs = np.flatnonzero(snapshot.served[i])
        free = list(range(b))
        order = objs[np.argsort(-snapshot.gains[i, objs, :].max(axis=1))]
        for j in order:
            if not free:
                break
            r = free[int(np.argmax(snapshot.gains[i, j, free]))]
            sig[i, j, r] = 1.0
            free.remove(r)
        for r in free:
            sig[i, objs[int(np.argmax(snapshot.gains[i, objs, r]))], r] = 1.0
    return sig


def _probe_policy_at_scale(snapshots, config: ScenarioConfig, scale: float) -> Policy:
    n = config.num_vehicles
    m = snapshots[0].num_objects
    policy = Policy.zeros(n, m, config.num_rbs, len(snapshots))
    for k, snap in enumerate(snapshots):
        sig = _coverage_assignment(snap, config)
        links = sig.sum(axis=(1, 2))
        share = np.divide(config.vehicle_power_budget * scale, links,
                          out=np.zeros(n), where=links > 0)
        policy.assignment[..., k] = sig
        policy.powers[..., k] = sig * share[:, None, None]
    return policy


def _combined_residuals(policy: Policy, snapshots, config, worst) -> dict:
    """Exact c1..c6 plus the surrogate charging-cap slack c7."""
    n, m, b = snapshots[0].gains.shape
    bound = np.empty((n, m, len(snapshots)))
    for k, snap in enumerate(snapshots):
        p, _, we, s = policy.at_interval(snap.interval)
        bound[:, :, k] = bounded_charging_tensor(p, we, s, snap.gains, worst[..., k],
                                                 config, snap.served)
    return constraint_residuals(policy, snapshots, config, charging_bound=bound)


def _min_residual(res: dict) -> float:
    return min(res.values())


def feasibility_probe(snapshots, config: ScenarioConfig, worst=None):
    """Phase-1 probe: full-budget coverage policy with a half split.

    Searches a scalar power scale maximizing the worst normalized slack
    (the charging-cap constraint is anti-monotone in power, so full budget
    alone is not the most feasible point).  Returns ``(policy, slack)``;
    a negative slack declares the instance infeasible.
    """
    if worst is None:
        worst = worst_case_tensor(snapshots, config)
    scales = np.concatenate([np.geomspace(1e-3, 1.0, 24), np.linspace(0.05, 1.0, 20)])
    best_policy, best_slack = None, -np.inf
    for s in np.unique(scales):
        pol = _probe_policy_at_scale(snapshots, config, float(s))
        slack = _min_residual(_combined_residuals(pol, snapshots, config, worst))
        if slack > best_slack:
            best_policy, best_slack = pol, slack
    return best_policy, best_slack


def _true_efficiency(policy: Policy, snapshots, config) -> float:
    lam, _ = energy_efficiency(policy, snapshots, config)
    return lam


# ---------------------------------------------------------------------------
# exact-metric polish


def _interval_truth(powers, ps_info, ps_energy, sig, snapshot, config, worst_l):
    """Exact per-interval (rate sum, power sum, min normalized residual).

    The residual covers the QoS floors, the budget, the split bounds, and
    the surrogate charging cap; exclusivity and the split sum hold by
    construction in the polished policy.
    """
    txp = (sig * powers).sum(axis=1)
    total = np.einsum("ir,ijr->jr", txp, snapshot.gains)
    intf = np.maximum(total[None, :, :] - txp[:, None, :] * snapshot.gains, 0.0)
    den = config.processing_noise + ps_info * (intf + config.noise_floor)
    num = ps_info * powers * snapshot.gains
    gamma = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    rates = (config.bandwidth * sig * np.log2(1.0 + gamma)).sum(axis=2)
    eta = config.conversion_efficiency
    recv = intf + config.noise_floor + powers * snapshot.gains
    chg = (eta * ps_energy * sig * recv).sum(axis=2) * snapshot.served
    chg_b = bounded_charging_tensor(powers, ps_energy, sig, snapshot.gains,
                                    worst_l, config, snapshot.served)
    spent = (sig * powers).sum(axis=(1, 2))
    served = snapshot.served
    energy = (np.maximum(config.object_rx_power - chg, 0.0)[served].sum()
              + config.static_vehicle_power * config.num_vehicles + spent.sum())
    rate_scale, charge_scale = residual_scales(config)
    mask = (sig > 0)
    res = min(
        float(((rates - config.min_rate)[served] / rate_scale).min()),
        float(((chg - config.min_charge)[served] / charge_scale).min()),
        float(((config.vehicle_power_budget - spent)
               / config.vehicle_power_budget).min()),
        float(((config.object_rx_power - chg_b)[served]).min()
              / max(config.object_rx_power, 1e-30)),
        float(np.minimum(ps_info, ps_energy)[mask].min()) if mask.any() else np.inf,
    )
    return float(rates[served].sum()), energy, res


def _polish(policy: Policy, snapshots, config: ScenarioConfig, worst,
            params: SolverParams) -> Policy:
    """Coordinate search on the exact efficiency, feasibility preserved.

    Coordinates: one information-split value per assigned (vehicle, object,
    interval) and one power scale per (vehicle, interval).  The surrogate
    biases the split toward decoding because its harvest bound ignores the
    split; this pass removes that bias against the true metrics.  Interval
    quantities are cached so a coordinate move re-evaluates one interval.
    """
    if params.polish_passes <= 0:
        return policy
    pol = policy.copy()
    L = len(snapshots)

    def interval_state(k):
        snap = snapshots[k]
        return _interval_truth(pol.powers[..., k], pol.ps_info[..., k],
                               pol.ps_energy[..., k], pol.assignment[..., k],
                               snap, config, worst[..., k])

    rates = np.empty(L)
    energies = np.empty(L)
    resids = np.empty(L)
    for k in range(L):
        rates[k], energies[k], resids[k] = interval_state(k)
    if resids.min() < -FEASIBILITY_TOL:
        return policy

    def objective_at(k):
        r, e, res = interval_state(k)
        other_res = np.delete(resids, k).min() if L > 1 else np.inf
        if min(res, other_res) < -FEASIBILITY_TOL:
            return -np.inf, (r, e, res)
        rate_total = rates.sum() - rates[k] + r
        energy_total = energies.sum() - energies[k] + e
        return rate_total / energy_total, (r, e, res)

    current = rates.sum() / energies.sum()

    def line_search(setter, lo, hi, value0, k):
        nonlocal current
        grid = np.linspace(lo, hi, params.polish_grid)
        best_v, best_f, best_state = value0, current, None
        for stage in range(2):
            for v in grid:
                setter(v)
                f, state = objective_at(k)
                if f > best_f:
                    best_v, best_f, best_state = v, f, state
            if stage == 0:
                span = (hi - lo) / max(params.polish_grid - 1, 1)
                grid = np.linspace(max(lo, best_v - span),
                                   min(hi, best_v + span), 5)
        setter(best_v)
        if best_state is not None:
            rates[k], energies[k], resids[k] = best_state
            current = best_f

    for _ in range(params.polish_passes):
        for k, snap in enumerate(snapshots):
            sig = pol.assignment[..., k]
            for i in range(config.num_vehicles):
                for j in np.flatnonzero(snap.served[i]):
                    rbs = np.flatnonzero(sig[i, j] > 0)
                    if rbs.size == 0:
                        continue

                    def set_split(v, i=i, j=j, k=k, rbs=rbs):
                        pol.ps_info[i, j, rbs, k] = v
                        pol.ps_energy[i, j, rbs, k] = 1.0 - v

                    line_search(set_split, params.ps_floor, 1.0 - params.ps_floor,
                                float(pol.ps_info[i, j, rbs[0], k]), k)
            for i in range(config.num_vehicles):
                base = pol.powers[i, :, :, k].copy()
                spent = (sig[i] * base).sum()
                if spent <= 0:
                    continue
                hi = config.vehicle_power_budget / spent

                def set_scale(v, i=i, k=k, base=base):
                    pol.powers[i, :, :, k] = base * v

                line_search(set_scale, 1e-3, hi, 1.0, k)
            for i in range(config.num_vehicles):
                spent = (sig[i] * pol.powers[i, :, :, k]).sum()
                for j in np.flatnonzero(snap.served[i]):
                    rbs = np.flatnonzero(sig[i, j] > 0)
                    pair_base = pol.powers[i, j, rbs, k].copy()
                    pair_spent = pair_base.sum()
                    if pair_spent <= 0:
                        continue
                    hi = 1.0 + (config.vehicle_power_budget - spent) / pair_spent

                    def set_pair(v, i=i, j=j, k=k, rbs=rbs, pair_base=pair_base):
                        pol.powers[i, j, rbs, k] = pair_base * v

                    line_search(set_pair, 1e-3, max(hi, 1e-3), 1.0, k)
                    spent = (sig[i] * pol.powers[i, :, :, k]).sum()
    return pol


# ---------------------------------------------------------------------------
# full pipeline


def dinkelbach_solve(snapshots, config: ScenarioConfig,
                     params: SolverParams | None = None,
                     seed_policies=()) -> SolveReport:
    """Run the full pipeline over the horizon and report exact metrics.

    The returned policy is the exact-metric best among the optimized
    iterate, the phase-1 probe, and any ``seed_policies`` that pass the
    feasibility filter, refined by the exact-metric polish.
    """
    params = params or SolverParams()
    worst = worst_case_tensor(snapshots, config)
    n = config.num_vehicles
    m = snapshots[0].num_objects
    b = config.num_rbs
    L = len(snapshots)

    probe, probe_slack = feasibility_probe(snapshots, config, worst)
    if probe_slack < -FEASIBILITY_TOL:
        res = _combined_residuals(probe, snapshots, config, worst)
        return SolveReport(policy=None, efficiency=0.0, surrogate_efficiency=0.0,
                           objective_gap=np.inf, residuals=res,
                           iterations={"dinkelbach": 0, "sca": 0, "dual": 0},
                           converged=False, feasible=False, trace=[],
                           notes=f"phase-1 probe infeasible (slack {probe_slack:.3e})")

    # Initial bound coefficients: expanded at the dense equal-power half-split
    # reference so every candidate link carries a usable bound.
    coeffs = []
    for k, snap in enumerate(snapshots):
        counts = snap.served.sum(axis=1)
        share = np.divide(config.vehicle_power_budget, counts * b,
                          out=np.zeros(n), where=counts > 0)
        p_ref = np.broadcast_to(share[:, None, None], (n, m, b))
        gamma = bounded_sinr_tensor(p_ref, 0.5, snap.gains, worst[..., k], config)
        slope = np.zeros((n, m, b))
        offset = np.zeros((n, m, b))
        mask = snap.served[:, :, None] & (gamma > 0)
        if mask.any():
            c = update_coefficients(gamma[mask])
            slope[mask], offset[mask] = c.slope, c.offset
        coeffs.append(SCACoefficients(slope=slope, offset=offset, iteration=0))

    def refresh_coefficients(policy: Policy, iteration: int):
        for k, snap in enumerate(snapshots):
            p, wi, _, s = policy.at_interval(snap.interval)
            gamma = bounded_sinr_tensor(p, wi, snap.gains, worst[..., k], config)
            mask = (s > 0) & (gamma > 0)
            if mask.any():
                c = update_coefficients(gamma[mask])
                slope = coeffs[k].slope.copy()
                offset = coeffs[k].offset.copy()
                slope[mask], offset[mask] = c.slope, c.offset
                coeffs[k] = SCACoefficients(slope, offset, iteration)

    duals = [DualState.fresh(n, m, b, params.step0) for _ in range(L)]
    prev = probe
    rate0, energy0 = _surrogate_ratio(prev, snapshots, config, worst)
    state = DinkelbachState(efficiency=max(rate0, 0.0) / energy0)
    total_sca = 0
    total_dual = 0
    converged = False

    for k_iter in range(1, params.max_dink + 1):
        state.iteration = k_iter
        lam = state.efficiency
        refresh_coefficients(prev, k_iter)

        candidate = prev.copy()
        pass_objective = None
        objective_anchor = None
        for c_iter in range(1, params.max_sca + 1):
            total_sca += 1
            max_change = 0.0
            objective = 0.0
            for k, snap in enumerate(snapshots):
                sol, duals[k], used = _solve_interval(
                    lam, coeffs[k], snap, config, params, worst[..., k], duals[k])
                total_dual += used
                objective += sol.objective
                candidate.powers[..., k] = sol.powers
                candidate.ps_info[..., k] = sol.ps_info
                candidate.ps_energy[..., k] = sol.ps_energy
                candidate.assignment[..., k] = sol.assignment
                gamma = bounded_sinr_tensor(sol.powers, sol.ps_info, snap.gains,
                                            worst[..., k], config)
                mask = (sol.assignment > 0) & (gamma > 0)
                if mask.any():
                    cnew = update_coefficients(gamma[mask])
                    slope = coeffs[k].slope.copy()
                    offset = coeffs[k].offset.copy()
                    change = np.abs(slope[mask] - cnew.slope).max(initial=0.0)
                    slope[mask], offset[mask] = cnew.slope, cnew.offset
                    coeffs[k] = SCACoefficients(slope, offset, c_iter)
                    max_change = max(max_change, change)
            if objective_anchor is None:
                objective_anchor = abs(objective)
            stalled = (pass_objective is not None
                       and abs(objective - pass_objective)
                       <= params.tol_sca * max(abs(objective), objective_anchor, 1.0))
            pass_objective = objective
            if max_change < params.tol_sca or stalled:
                break

        # Accept the candidate only if it improves the tight transformed
        # objective at the current ratio; the previous policy scores zero
        # there by construction, so the ratio trace cannot decrease.
        cand_rate, cand_energy = _surrogate_ratio(candidate, snapshots, config, worst)
        f_cand = cand_rate - lam * cand_energy
        cand_res = _combined_residuals(candidate, snapshots, config, worst)
        cand_ok = _min_residual(cand_res) >= -FEASIBILITY_TOL
        if cand_ok and f_cand > 0.0:
            prev = candidate.copy()
            best_rate, best_energy, f_best = cand_rate, cand_energy, f_cand
        else:
            best_rate, best_energy = _surrogate_ratio(prev, snapshots, config, worst)
            f_best = 0.0
        violation = max(0.0, -_min_residual(
            _combined_residuals(prev, snapshots, config, worst)))
        state.objective = f_best * config.interval_duration
        state.trace.append((k_iter, state.efficiency, state.objective, violation))
        new_lam = best_rate / best_energy
        # Relative stop: the transformed optimum vanishes against the
        # objective scale lam * E~ (both in rate units).
        if f_best <= params.tol_dink * max(new_lam * best_energy, 1e-300):
            state.efficiency = max(state.efficiency, new_lam)
            converged = True
            break
        state.efficiency = new_lam

    # Exact-metric selection among the optimized policy, the probe, and any
    # caller-provided seeds, then polish.
    pool = [("optimized", prev), ("probe", probe)]
    pool += [(f"seed{idx}", p) for idx, p in enumerate(seed_policies)]
    chosen, chosen_lam, chosen_name = None, -np.inf, ""
    for name, cand in pool:
        res = _combined_residuals(cand, snapshots, config, worst)
        if _min_residual(res) < -FEASIBILITY_TOL:
            continue
        lam_true = _true_efficiency(cand, snapshots, config)
        if lam_true > chosen_lam:
            chosen, chosen_lam, chosen_name = cand, lam_true, name
    if chosen is None:  # probe passed phase 1, so this cannot trigger
        chosen, chosen_name = probe, "probe"

    polished = _polish(chosen, snapshots, config, worst, params)
    final_res = _combined_residuals(polished, snapshots, config, worst)
    final_lam = _true_efficiency(polished, snapshots, config)
    validate_policy(polished, snapshots, config)
    return SolveReport(
        policy=polished,
        efficiency=final_lam,
        surrogate_efficiency=state.efficiency,
        objective_gap=abs(state.objective),
        residuals=final_res,
        iterations={"dinkelbach": state.iteration, "sca": total_sca,
                    "dual": total_dual},
        converged=converged,
        feasible=_min_residual(final_res) >= -FEASIBILITY_TOL,
        trace=state.trace,
        notes=f"selected {chosen_name}",
    )


# ---------------------------------------------------------------------------
# serialization


def write_solve_report(report: SolveReport, out_dir, stem: str = "solve") -> list:
    """Write the summary CSV and the per-iteration trace CSV; returns paths."""
    import os
    os.makedirs(out_dir, exist_ok=True)
    summary = os.path.join(out_dir, f"{stem}_report.csv")
    trace = os.path.join(out_dir, f"{stem}_trace.csv")
    with open(summary, "w", newline="") as fh:
        w = csv.writer(fh)
        res_keys = sorted(report.residuals)
        w.writerow(["efficiency_bit_per_j", "surrogate_efficiency", "objective_gap",
                    "converged", "feasible", "iters_dinkelbach", "iters_sca",
                    "iters_dual"] + [f"slack_{k}" for k in res_keys])
        w.writerow([repr(report.efficiency), repr(report.surrogate_efficiency),
                    repr(report.objective_gap), int(report.converged),
                    int(report.feasible), report.iterations["dinkelbach"],
                    report.iterations["sca"], report.iterations["dual"]]
                   + [repr(float(report.residuals[k])) for k in res_keys])
    with open(trace, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "efficiency", "objective_bits", "max_violation"])
        for row in report.trace:
            w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])
    return [summary, trace]
