import numpy as np
import pytest

from v2xee.scenario import ScenarioConfig, Layout, simulate_scenario


def make_config(**over) -> ScenarioConfig:
    """Small well-conditioned instance; overrides applied on top."""
    base = dict(
        num_vehicles=2,
        num_rbs=3,
        num_intervals=3,
        bandwidth=1e6,
        noise_psd=4e-14,
        processing_noise=1e-9,
        static_vehicle_power=2e-3,
        object_rx_power=2e-3,
        vehicle_power_budget=4e-2,
        min_rate=5e4,
        min_charge=1e-8,
        conversion_efficiency=0.7,
        road_length=200.0,
        lane_separation=4.0,
        velocity=10.0,
        rng_seed=7,
    )
    base.update(over)
    return ScenarioConfig(**base)


def make_snapshots(config=None, objects_per_vehicle=3, cluster_spread=8.0, **over):
    config = config or make_config(**over)
    layout = Layout(objects_per_vehicle=objects_per_vehicle,
                    cluster_spread=cluster_spread)
    return config, simulate_scenario(config, layout)


@pytest.fixture
def small_instance():
    return make_snapshots()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
