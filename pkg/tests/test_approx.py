import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from v2xee.approx import (ExpansionPointError, SCACoefficients, bounded_charging,
                          bounded_rate, bounded_sinr, bounded_sinr_tensor,
                          default_worst_case_interference, log_bound,
                          relaxed_object_power, update_coefficients)
from v2xee.metrics import Policy, interference_tensor, sinr_tensor, charging_tensor
from v2xee.scenario import Layout, simulate_scenario
from conftest import make_config, make_snapshots
from test_metrics import full_assignment_policy


def test_coefficients_at_unit_sinr():
    c = update_coefficients(np.array([1.0]))
    assert c.slope[0] == pytest.approx(0.5)
    assert c.offset[0] == pytest.approx(1.0)


def test_coefficients_at_three():
    c = update_coefficients(np.array([3.0]))
    assert c.slope[0] == pytest.approx(0.75)
    assert c.offset[0] == pytest.approx(2.0 - 0.75 * np.log2(3.0))


def test_coefficients_asymptote():
    c = update_coefficients(np.array([1e6]))
    assert abs(c.slope[0] - 1.0) < 1e-5
    # Far out the bound behaves like log2(gamma).
    g = 1e6
    assert c.slope[0] * np.log2(g) + c.offset[0] == pytest.approx(np.log2(1 + g))


def test_nonpositive_expansion_rejected():
    with pytest.raises(ExpansionPointError):
        update_coefficients(np.array([0.0]))
    with pytest.raises(ExpansionPointError):
        update_coefficients(np.array([1.0, -2.0]))


@settings(max_examples=200, deadline=None)
@given(g0=st.floats(1e-6, 1e6), g=st.floats(1e-6, 1e6))
def test_sca_lower_bound_property(g0, g):
    c = update_coefficients(np.array([g0]))
    bound = c.slope[0] * np.log2(g) + c.offset[0]
    assert bound <= np.log2(1.0 + g) + 1e-9


@settings(max_examples=100, deadline=None)
@given(g0=st.floats(1e-6, 1e6))
def test_sca_tightness_at_expansion_point(g0):
    c = update_coefficients(np.array([g0]))
    assert c.slope[0] * np.log2(g0) + c.offset[0] == pytest.approx(
        np.log2(1.0 + g0), abs=1e-9)


def test_coefficient_recursion_fixpoint():
    g0 = np.array([0.3, 2.0, 50.0])
    a = update_coefficients(g0, iteration=1)
    b = update_coefficients(g0, iteration=2)
    np.testing.assert_array_equal(a.slope, b.slope)
    np.testing.assert_array_equal(a.offset, b.offset)


def test_bounded_sinr_equals_sinr_when_worst_equals_actual(rng):
    config, snapshots = make_snapshots()
    policy = full_assignment_policy(config, snapshots, rng=rng)
    snap = snapshots[0]
    actual = interference_tensor(policy, snap)
    p, wi, _, _ = policy.at_interval(snap.interval)
    surrogate = bounded_sinr_tensor(p, wi, snap.gains, actual, config)
    np.testing.assert_allclose(surrogate, sinr_tensor(policy, snap, config))


def test_bounded_sinr_no_interference_no_processing_noise():
    config = make_config(num_vehicles=1, num_rbs=1, num_intervals=1,
                         processing_noise=0.0)
    snapshots = simulate_scenario(config, Layout(objects_per_vehicle=1))
    snap = snapshots[0]
    policy = Policy.zeros(1, 1, 1, 1)
    policy.assignment[0, 0, 0, 0] = 1.0
    policy.powers[0, 0, 0, 0] = 1e-3
    got = bounded_sinr(policy, snap, config, (0, 0, 0), 0.0)
    expect = 1e-3 * snap.gains[0, 0, 0] / config.noise_floor
    assert got == pytest.approx(expect)


def test_bounded_sinr_dominated_by_actual(rng):
    config, snapshots = make_snapshots()
    policy = full_assignment_policy(config, snapshots, rng=rng)
    worst = default_worst_case_interference(snapshots, config)
    for k, snap in enumerate(snapshots):
        p, wi, _, _ = policy.at_interval(snap.interval)
        actual = interference_tensor(policy, snap)
        assert (worst[..., k] >= actual - 1e-18).all()
        surrogate = bounded_sinr_tensor(p, wi, snap.gains, worst[..., k], config)
        assert (surrogate <= sinr_tensor(policy, snap, config) + 1e-12).all()


def test_bounded_rate_tight_at_expansion_with_actual_interference(rng):
    config, snapshots = make_snapshots()
    policy = full_assignment_policy(config, snapshots, rng=rng)
    snap = snapshots[0]
    gamma = sinr_tensor(policy, snap, config)
    # Expand exactly at the actual SINR and use the actual interference as
    # the worst case: the surrogate reproduces the exact rate.
    safe = np.where(gamma > 0, gamma, 1.0)
    coeffs = update_coefficients(safe)
    shape4 = gamma.shape + (len(snapshots),)
    full = SCACoefficients(np.zeros(shape4), np.zeros(shape4))
    full.slope[..., 0] = coeffs.slope
    full.offset[..., 0] = coeffs.offset
    actual4 = np.zeros(shape4)
    actual4[..., 0] = interference_tensor(policy, snap)
    l = 0
    from v2xee.metrics import rate_tensor
    exact = rate_tensor(policy, snap, config)
    for i in range(config.num_vehicles):
        for j in np.flatnonzero(snap.served[i]):
            got = bounded_rate(policy, full, snap, config, (i, int(j)), actual4)
            assert got == pytest.approx(exact[i, j], rel=1e-9, abs=1e-6)


def test_bounded_rate_bound_property_random_gammas(rng):
    gammas = rng.uniform(1e-3, 1e3, size=1000)
    g0 = rng.uniform(1e-3, 1e3, size=1000)
    c = update_coefficients(g0)
    bound = c.slope * np.log2(gammas) + c.offset
    assert (bound <= np.log2(1.0 + gammas) + 1e-9).all()


def test_bounded_rate_zero_when_unassigned():
    config, snapshots = make_snapshots()
    n, m, b = config.num_vehicles, snapshots[0].num_objects, config.num_rbs
    policy = Policy.zeros(n, m, b, len(snapshots))
    shape4 = (n, m, b, len(snapshots))
    coeffs = SCACoefficients(np.full(shape4, 0.5), np.full(shape4, 1.0))
    worst = default_worst_case_interference(snapshots, config)
    snap = snapshots[0]
    for i in range(n):
        for j in np.flatnonzero(snap.served[i]):
            assert bounded_rate(policy, coeffs, snap, config, (i, int(j)), worst) == 0.0


def test_bounded_charging_reduces_to_exact_when_split_is_total(rng):
    # With the full energy split and the actual interference, the idealized
    # bound coincides with the exact charging expression.
    config, snapshots = make_snapshots()
    policy = full_assignment_policy(config, snapshots, wi=0.0, rng=rng)
    policy.ps_info[:] = 0.0
    policy.ps_energy[:] = 1.0
    snap = snapshots[0]
    actual4 = np.zeros(snap.gains.shape + (len(snapshots),))
    actual4[..., 0] = interference_tensor(policy, snap)
    exact = charging_tensor(policy, snap, config)
    for i in range(config.num_vehicles):
        for j in np.flatnonzero(snap.served[i]):
            got = bounded_charging(policy, snap, config, (i, int(j)), actual4)
            assert got == pytest.approx(exact[i, j], rel=1e-12)


def test_bounded_charging_dominates_exact(rng):
    config, snapshots = make_snapshots()
    policy = full_assignment_policy(config, snapshots, wi=0.4, rng=rng)
    snap = snapshots[0]
    actual4 = np.zeros(snap.gains.shape + (len(snapshots),))
    actual4[..., 0] = interference_tensor(policy, snap)
    exact = charging_tensor(policy, snap, config)
    for i in range(config.num_vehicles):
        for j in np.flatnonzero(snap.served[i]):
            got = bounded_charging(policy, snap, config, (i, int(j)), actual4)
            assert got >= exact[i, j] - 1e-18


def test_bounded_charging_zero_without_power_or_split():
    config, snapshots = make_snapshots()
    policy = Policy.zeros(config.num_vehicles, snapshots[0].num_objects,
                          config.num_rbs, len(snapshots))
    policy.ps_energy[:] = 0.0
    worst = default_worst_case_interference(snapshots, config)
    snap = snapshots[0]
    assert bounded_charging(policy, snap, config, (0, 0), worst) == 0.0


def test_relaxed_object_power_values():
    config = make_config(object_rx_power=0.05)
    assert relaxed_object_power(0.0, config) == pytest.approx(0.05)
    assert relaxed_object_power(0.05, config) == pytest.approx(0.0)
    assert relaxed_object_power(0.02, config) == pytest.approx(0.03)
    # No clamp: a cap violation shows up as a negative value.
    assert relaxed_object_power(0.08, config) == pytest.approx(-0.03)


def test_log_bound_handles_zero_slope_and_zero_gamma():
    c = SCACoefficients(slope=np.array([0.0, 0.5]), offset=np.array([0.0, 1.0]))
    out = log_bound(c, np.array([0.0, 0.0]))
    assert out[0] == 0.0
    assert out[1] == -np.inf
