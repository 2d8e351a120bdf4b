import numpy as np
import pytest

from v2xee.approx import SCACoefficients, update_coefficients, worst_case_tensor
from v2xee.metrics import energy_efficiency
from v2xee.oracle import grid_max_power, grid_max_ps_ratio
from v2xee.scenario import Layout, simulate_scenario
from v2xee.solver import (AssignmentError, DualState, SolverParams,
                          assign_resource_blocks, dinkelbach_objective,
                          dinkelbach_solve, feasibility_probe, inner_dual_solve,
                          marginal_benefit, power_closed_form_from_params,
                          ps_ratio_from_params, subgradient_step)
from conftest import make_config, make_snapshots

LN2 = np.log(2.0)


def draw_ps_params(rng):
    """Random per-link parameters with the split optimum spread over the
    interior and both clamp regions."""
    w = 10.0 ** rng.uniform(4, 7)
    np_ = 10.0 ** rng.uniform(-9, -5)
    x = 10.0 ** rng.uniform(-8, -4)
    beta = rng.uniform(0.0, 3.0)
    slope = rng.uniform(0.05, 0.99)
    crit = (1.0 + beta) * w * np_ * slope / (LN2 * x)
    price = crit * 10.0 ** rng.uniform(-1.5, 1.5)
    return dict(slope=slope, rate_mult=beta, ps_price=price, proc_noise=np_,
                worst_plus_noise=x, bandwidth=w)


def draw_power_params(rng):
    w = 10.0 ** rng.uniform(4, 7)
    lam = 10.0 ** rng.uniform(3, 8)
    eta = rng.uniform(0.5, 0.9)
    gain = 10.0 ** rng.uniform(-4, -0.5)
    theta_g = rng.uniform(0.0, 0.8) * lam
    pi_g = rng.uniform(0.0, 0.5) * lam
    power_mult = rng.uniform(0.0, 0.5) * lam
    slope = rng.uniform(0.05, 0.99)
    beta = rng.uniform(0.0, 3.0)
    denom = lam + (pi_g - theta_g - lam * eta) * gain + power_mult
    if denom <= 1e-6 * lam:
        return None
    p_star = slope * w * (1.0 + beta) / (LN2 * denom)
    budget = p_star * 10.0 ** rng.uniform(0.2, 1.2)
    return dict(slope=slope, rate_mult=beta, lam=lam, eta=eta, gain=gain,
                charge_mult=theta_g, cap_mult=pi_g, power_mult=power_mult,
                bandwidth=w, budget=budget)


# ---------------------------------------------------------------------------
# split-ratio closed form


def test_ps_ratio_zero_processing_noise_clamps_low():
    assert ps_ratio_from_params(0.5, 0.0, 1.0, 0.0, 1e-7, 1e6) == 0.0


def test_ps_ratio_clamps_high():
    # A tiny price pushes the stationary point far above one.
    got = ps_ratio_from_params(0.9, 0.0, 1e-9, 1e-6, 1e-7, 1e6)
    assert got == 1.0


def test_ps_ratio_nonpositive_price_returns_upper_clamp():
    assert ps_ratio_from_params(0.5, 0.0, 0.0, 1e-6, 1e-7, 1e6) == 1.0
    assert ps_ratio_from_params(0.5, 0.0, -1.0, 1e-6, 1e-7, 1e6) == 1.0


def test_ps_ratio_matches_grid_oracle(rng):
    hits = 0
    for _ in range(60):
        kw = draw_ps_params(rng)
        closed = float(ps_ratio_from_params(
            kw["slope"], kw["rate_mult"], kw["ps_price"], kw["proc_noise"],
            kw["worst_plus_noise"], kw["bandwidth"]))
        grid = grid_max_ps_ratio(points=10_000, offset=0.3, power=1e-2, gain=1e-3,
                                 **kw)
        assert closed == pytest.approx(grid, abs=1e-3)
        hits += 1
    assert hits == 60


def test_ps_ratio_stationarity_interior(rng):
    # Central difference of the per-link terms vanishes at interior optima.
    from v2xee.oracle import ps_link_lagrangian
    for _ in range(40):
        kw = draw_ps_params(rng)
        closed = float(ps_ratio_from_params(
            kw["slope"], kw["rate_mult"], kw["ps_price"], kw["proc_noise"],
            kw["worst_plus_noise"], kw["bandwidth"]))
        if not 0.01 < closed < 0.99:
            continue
        h = 1e-6
        args = dict(offset=0.3, power=1e-2, gain=1e-3, **kw)
        up = ps_link_lagrangian(closed + h, **args)
        dn = ps_link_lagrangian(closed - h, **args)
        scale = kw["bandwidth"] * (1.0 + kw["rate_mult"])
        assert abs((up - dn) / (2 * h)) / scale < 1e-3


# ---------------------------------------------------------------------------
# power closed form


def test_power_zero_slope_gives_zero():
    got = power_closed_form_from_params(0.0, 1.0, 1e6, 0.7, 1e-3, 0.0, 0.0, 0.0,
                                        1e6, 0.05)
    assert got == 0.0


def test_power_nonpositive_denominator_returns_cap():
    # Harvest credit exceeds the energy price: power is free in the surrogate.
    got = power_closed_form_from_params(0.5, 0.0, 1e6, 0.9, 2.0, 0.0, 0.0, 0.0,
                                        1e6, 0.05)
    assert got == 0.05


def test_power_matches_grid_oracle(rng):
    checked = 0
    while checked < 50:
        kw = draw_power_params(rng)
        if kw is None:
            continue
        closed = float(power_closed_form_from_params(
            kw["slope"], kw["rate_mult"], kw["lam"], kw["eta"], kw["gain"],
            kw["charge_mult"], kw["cap_mult"], kw["power_mult"], kw["bandwidth"],
            kw["budget"]))
        grid = grid_max_power(kw["budget"], points=10_000, offset=0.3, ps=0.6,
                              proc_noise=1e-7, worst_plus_noise=1e-7,
                              slope=kw["slope"], rate_mult=kw["rate_mult"],
                              lam=kw["lam"], eta=kw["eta"], gain=kw["gain"],
                              charge_mult=kw["charge_mult"], cap_mult=kw["cap_mult"],
                              power_mult=kw["power_mult"], bandwidth=kw["bandwidth"])
        assert closed == pytest.approx(grid, rel=1e-3)
        checked += 1


def test_power_stationarity_interior(rng):
    from v2xee.oracle import power_link_lagrangian
    checked = 0
    while checked < 30:
        kw = draw_power_params(rng)
        if kw is None:
            continue
        closed = float(power_closed_form_from_params(
            kw["slope"], kw["rate_mult"], kw["lam"], kw["eta"], kw["gain"],
            kw["charge_mult"], kw["cap_mult"], kw["power_mult"], kw["bandwidth"],
            kw["budget"]))
        if not 0.01 * kw["budget"] < closed < 0.99 * kw["budget"]:
            continue
        h = 1e-6 * kw["budget"]
        args = dict(offset=0.3, ps=0.6, proc_noise=1e-7, worst_plus_noise=1e-7,
                    slope=kw["slope"], rate_mult=kw["rate_mult"], lam=kw["lam"],
                    eta=kw["eta"], gain=kw["gain"], charge_mult=kw["charge_mult"],
                    cap_mult=kw["cap_mult"], power_mult=kw["power_mult"],
                    bandwidth=kw["bandwidth"])
        up = power_link_lagrangian(closed + h, **args)
        dn = power_link_lagrangian(closed - h, **args)
        scale = kw["bandwidth"] * (1.0 + kw["rate_mult"]) / closed
        assert abs((up - dn) / (2 * h)) / scale < 1e-3
        checked += 1


# ---------------------------------------------------------------------------
# resource-block assignment


def one_interval_instance(**over):
    config = make_config(num_intervals=1, **over)
    snaps = simulate_scenario(config, Layout(objects_per_vehicle=2))
    return config, snaps[0]


def test_assignment_single_candidate():
    config, snap = one_interval_instance(num_vehicles=1)
    # Restrict to one served object.
    snap.served[0, 1] = False
    n, m, b = snap.gains.shape
    dual = DualState.fresh(n, m, b)
    coeffs = SCACoefficients(np.full((n, m, b), 0.5), np.full((n, m, b), 1.0))
    wi = np.full((n, m, b), 0.5)
    pw = np.full((n, m, b), 1e-3)
    worst = np.zeros((n, m, b))
    sig = assign_resource_blocks(dual, coeffs, wi, pw, snap, config, worst)
    assert (sig[0, 0, :] == 1.0).all()
    assert sig[0, 1:, :].sum() == 0


def test_assignment_tie_breaks_to_lowest_index():
    config, snap = one_interval_instance(num_vehicles=1)
    n, m, b = snap.gains.shape
    # Identical parameters for both candidates -> identical scores.
    snap.gains[0, 1, :] = snap.gains[0, 0, :]
    dual = DualState.fresh(n, m, b)
    coeffs = SCACoefficients(np.full((n, m, b), 0.5), np.full((n, m, b), 1.0))
    wi = np.full((n, m, b), 0.5)
    pw = np.full((n, m, b), 1e-3)
    worst = np.zeros((n, m, b))
    score = marginal_benefit(dual, coeffs, wi, pw, snap, config, worst)
    np.testing.assert_allclose(score[0, 0], score[0, 1])
    sig = assign_resource_blocks(dual, coeffs, wi, pw, snap, config, worst)
    assert (sig[0, 0, :] == 1.0).all()


def test_assignment_agrees_with_two_way_lagrangian_oracle(rng):
    # The argmax decision matches evaluating the assignment-dependent
    # Lagrangian slice ((1+beta) * bounded rate + split price - exclusivity
    # price) under either choice and picking the larger, on draws with a
    # clear decision margin.
    config, snap = one_interval_instance(num_vehicles=1)
    n, m, b = snap.gains.shape
    agreements = 0
    total = 0
    for _ in range(200):
        dual = DualState.fresh(n, m, b)
        dual.rate_mult = rng.uniform(0, 2, (n, m))
        dual.ps_mult = rng.uniform(0.1, 2, (n, m, b)) * config.bandwidth * 1e-3
        dual.rb_mult = rng.uniform(0, 1, (n, b)) * config.bandwidth * 1e-3
        g0 = rng.uniform(0.5, 50, (n, m, b))
        coeffs = update_coefficients(g0)
        wi = rng.uniform(0.2, 0.95, (n, m, b))
        pw = 10.0 ** rng.uniform(-4, -2, (n, m, b))
        worst = 10.0 ** rng.uniform(-9, -7, (n, m, b))
        gamma = wi * pw * snap.gains / (config.processing_noise
                                        + wi * (worst + config.noise_floor))
        with np.errstate(divide="ignore"):
            bound = coeffs.slope * np.log2(gamma) + coeffs.offset
        slice_value = (config.bandwidth * (1.0 + dual.rate_mult[:, :, None]) * bound
                       + dual.ps_mult - dual.rb_mult[:, None, :])
        sig = assign_resource_blocks(dual, coeffs, wi, pw, snap, config, worst)
        for r in range(b):
            vals = slice_value[0, :, r]
            margin = abs(vals[0] - vals[1]) / max(abs(vals).max(), 1.0)
            if margin < 0.05:
                continue  # knife-edge draws are not informative
            total += 1
            agreements += sig[0, int(np.argmax(vals)), r] == 1.0
    assert total >= 50
    assert agreements / total >= 0.9


def test_assignment_error_on_empty_candidates():
    config, snap = one_interval_instance(num_vehicles=1)
    snap.served[0, :] = False  # doctored: active vehicle, no candidates
    n, m, b = snap.gains.shape
    dual = DualState.fresh(n, m, b)
    coeffs = SCACoefficients(np.full((n, m, b), 0.5), np.full((n, m, b), 1.0))
    with pytest.raises(AssignmentError):
        assign_resource_blocks(dual, coeffs, np.full((n, m, b), 0.5),
                               np.full((n, m, b), 1e-3), snap, config,
                               np.zeros((n, m, b)))


# ---------------------------------------------------------------------------
# sub-gradient updates


def primal_stub(config, snap, rate=None, charge=None):
    n, m, b = snap.gains.shape
    sig = np.zeros((n, m, b))
    for i in range(n):
        objs = np.flatnonzero(snap.served[i])
        for r in range(b):
            sig[i, objs[r % objs.size], r] = 1.0
    wi = np.full((n, m, b), 0.5)
    return {"served": snap.served, "assignment": sig,
            "powers": sig * 1e-3, "ps_info": wi, "ps_energy": 1.0 - wi,
            "rate_bound": np.full((n, m), config.min_rate if rate is None else rate),
            "charge_bound": np.full((n, m),
                                    config.min_charge if charge is None else charge)}


def test_subgradient_zero_residual_keeps_multiplier():
    config, snap = one_interval_instance()
    n, m, b = snap.gains.shape
    dual = DualState.fresh(n, m, b)
    dual.rate_mult[:] = 0.3
    primal = primal_stub(config, snap)  # rate and charge exactly at the floors
    new = subgradient_step(dual, primal, config, SolverParams(), lam_ref=1.0)
    served = snap.served
    np.testing.assert_allclose(new.rate_mult[served], 0.3)


def test_subgradient_projection_to_zero():
    config, snap = one_interval_instance()
    n, m, b = snap.gains.shape
    dual = DualState.fresh(n, m, b)
    dual.rate_mult[:] = 1e-6
    primal = primal_stub(config, snap, rate=config.min_rate * 100)  # big slack
    new = subgradient_step(dual, primal, config, SolverParams(), lam_ref=1.0)
    assert (new.rate_mult >= 0).all()
    assert new.rate_mult[snap.served].max() == 0.0


def test_subgradient_violation_raises_rate_multiplier():
    # Standard dual ascent: an unmet rate floor drives its multiplier up.
    config, snap = one_interval_instance()
    n, m, b = snap.gains.shape
    dual = DualState.fresh(n, m, b)
    primal = primal_stub(config, snap, rate=0.0)
    new = subgradient_step(dual, primal, config, SolverParams(), lam_ref=1.0)
    assert (new.rate_mult[snap.served] > 0).all()


def test_subgradient_paper_signs_flip_direction():
    config, snap = one_interval_instance()
    n, m, b = snap.gains.shape
    dual = DualState.fresh(n, m, b)
    dual.rate_mult[:] = 0.5
    primal = primal_stub(config, snap, rate=0.0)  # violated
    lit = subgradient_step(dual, primal, config, SolverParams(paper_signs=True),
                           lam_ref=1.0)
    # Literal published sign adds the (negative) residual: multiplier falls.
    assert (lit.rate_mult[snap.served] < 0.5).all()
    assert (lit.rate_mult >= 0).all()


def test_multipliers_nonnegative_across_random_steps(rng):
    config, snap = one_interval_instance()
    n, m, b = snap.gains.shape
    dual = DualState.fresh(n, m, b)
    for t in range(30):
        primal = primal_stub(config, snap,
                             rate=float(rng.uniform(0, 2 * config.min_rate)),
                             charge=float(rng.uniform(0, 4e-3)))
        dual = subgradient_step(dual, primal, config, SolverParams(),
                                lam_ref=float(rng.uniform(0.5, 1e9)))
        for field in (dual.rate_mult, dual.ps_mult, dual.rb_mult,
                      dual.charge_mult, dual.power_mult, dual.cap_mult):
            assert (field >= 0).all()


# ---------------------------------------------------------------------------
# inner dual solve


def tight_coeffs_for(snapshot, config, worst_l):
    from v2xee.approx import bounded_sinr_tensor
    n, m, b = snapshot.gains.shape
    counts = snapshot.served.sum(axis=1)
    share = np.divide(config.vehicle_power_budget, counts * b,
                      out=np.zeros(n), where=counts > 0)
    gamma = bounded_sinr_tensor(np.broadcast_to(share[:, None, None], (n, m, b)),
                                0.5, snapshot.gains, worst_l, config)
    slope = np.zeros((n, m, b))
    offset = np.zeros((n, m, b))
    mask = snapshot.served[:, :, None] & (gamma > 0)
    c = update_coefficients(gamma[mask])
    slope[mask], offset[mask] = c.slope, c.offset
    return SCACoefficients(slope, offset, 0)


def test_inner_dual_solve_trivial_instance_feasible():
    config, snaps = make_snapshots(num_vehicles=1, num_rbs=1, num_intervals=1,
                                   objects_per_vehicle=1, min_rate=1e3,
                                   min_charge=1e-9)
    snap = snaps[0]
    worst = worst_case_tensor(snaps, config)[..., 0]
    coeffs = tight_coeffs_for(snap, config, worst)
    policy, dual = inner_dual_solve(0.5e9, coeffs, snap, config,
                                    worst_interference=worst)
    from dataclasses import replace
    view = replace(snap, interval=1)
    from v2xee.metrics import constraint_residuals
    res = constraint_residuals(policy, [view], config)
    assert min(res.values()) >= -1e-6
    assert policy.assignment.sum() == 1.0


def test_inner_dual_solve_complementary_slackness():
    # With no QoS floors, the rate and charge multipliers settle at zero.
    config, snaps = make_snapshots(num_vehicles=1, num_rbs=2, num_intervals=1,
                                   objects_per_vehicle=2, min_rate=0.0,
                                   min_charge=0.0)
    snap = snaps[0]
    worst = worst_case_tensor(snaps, config)[..., 0]
    coeffs = tight_coeffs_for(snap, config, worst)
    _, dual = inner_dual_solve(1e8, coeffs, snap, config, worst_interference=worst)
    assert dual.rate_mult.max() < 1e-4
    assert dual.charge_mult.max() < 1e-4


def test_inner_dual_solve_deterministic():
    config, snaps = make_snapshots(num_vehicles=2, num_rbs=2, num_intervals=1,
                                   objects_per_vehicle=2)
    snap = snaps[0]
    worst = worst_case_tensor(snaps, config)[..., 0]
    coeffs = tight_coeffs_for(snap, config, worst)
    p1, d1 = inner_dual_solve(1e8, coeffs, snap, config, worst_interference=worst)
    p2, d2 = inner_dual_solve(1e8, coeffs, snap, config, worst_interference=worst)
    np.testing.assert_array_equal(p1.powers, p2.powers)
    np.testing.assert_array_equal(p1.assignment, p2.assignment)
    np.testing.assert_array_equal(d1.rate_mult, d2.rate_mult)


def test_binarization_exactness():
    config, snaps = make_snapshots(num_vehicles=2, num_rbs=3, num_intervals=1,
                                   objects_per_vehicle=3)
    snap = snaps[0]
    worst = worst_case_tensor(snaps, config)[..., 0]
    coeffs = tight_coeffs_for(snap, config, worst)
    policy, _ = inner_dual_solve(5e8, coeffs, snap, config, worst_interference=worst)
    sums = policy.assignment[..., 0].sum(axis=1)
    assert np.isin(sums, (0.0, 1.0)).all()


# ---------------------------------------------------------------------------
# transformed objective and the full pipeline


def test_dinkelbach_objective_at_lambda_zero_is_rate(small_instance):
    config, snaps = small_instance
    probe, _ = feasibility_probe(snaps, config)
    f0 = dinkelbach_objective(probe, snaps, config, 0.0)
    assert f0 >= 0.0


def test_dinkelbach_objective_affine_decreasing(small_instance):
    config, snaps = small_instance
    probe, _ = feasibility_probe(snaps, config)
    lams = np.linspace(0.0, 2e9, 7)
    values = [dinkelbach_objective(probe, snaps, config, lam) for lam in lams]
    diffs = np.diff(values)
    assert (diffs < 0).all()
    assert np.allclose(diffs, diffs[0], rtol=1e-9)  # affine in lambda


def test_feasibility_probe_flags_impossible_qos():
    config, snaps = make_snapshots(min_rate=1e12)
    _, slack = feasibility_probe(snaps, config)
    assert slack < -1e-6


def test_dinkelbach_solve_reports_infeasible_instance():
    config, snaps = make_snapshots(min_rate=1e12)
    report = dinkelbach_solve(snaps, config)
    assert not report.feasible
    assert report.policy is None


def test_dinkelbach_trace_monotone_and_converged():
    effs = []
    for seed in (0, 3, 6, 9):
        config, snaps = make_snapshots(rng_seed=seed)
        report = dinkelbach_solve(snaps, config)
        lams = [row[1] for row in report.trace]
        assert all(b >= a - 1e-9 for a, b in zip(lams, lams[1:]))
        assert report.converged
        assert report.iterations["dinkelbach"] <= 50
        effs.append(report.efficiency)
    assert all(e > 0 for e in effs)


def test_dinkelbach_final_gap_small():
    config, snaps = make_snapshots(rng_seed=3)
    report = dinkelbach_solve(snaps, config)
    worst = worst_case_tensor(snaps, config)
    # |R~ - lam*E~| at the final ratio, evaluated on the pre-polish iterate,
    # is below the relative tolerance recorded by the trace.
    assert report.objective_gap <= 1e-6 * report.surrogate_efficiency * 1.0 \
        * sum(p[2] for p in [(0, 0, 1)])  # placeholder replaced below
    # direct check: final trace row objective against the scale
    k, lam, f, _ = report.trace[-1]
    assert f <= 1e-6 * max(lam, 1.0) * 1.0e1 or f == 0.0


def test_dinkelbach_solve_feasible_residuals():
    for seed in (1, 4, 8):
        config, snaps = make_snapshots(rng_seed=seed)
        report = dinkelbach_solve(snaps, config)
        assert report.feasible
        assert min(report.residuals.values()) >= -1e-6


def test_dinkelbach_solve_deterministic():
    config, snaps = make_snapshots(rng_seed=5)
    r1 = dinkelbach_solve(snaps, config)
    r2 = dinkelbach_solve(snaps, config)
    assert r1.efficiency == r2.efficiency
    np.testing.assert_array_equal(r1.policy.powers, r2.policy.powers)


def test_solver_beats_seed_policies():
    from v2xee.experiments import baseline_policy
    for seed in (0, 2, 6):
        config, snaps = make_snapshots(rng_seed=seed)
        base = baseline_policy(snaps, config)
        report = dinkelbach_solve(snaps, config, seed_policies=[base])
        eff_base, rep = energy_efficiency(base, snaps, config)
        if min(rep.constraint_residuals.values()) >= -1e-6:
            assert report.efficiency >= eff_base - 1e-9
