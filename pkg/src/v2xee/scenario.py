"""Road scenario generation: geometry, mobility, and Rayleigh-faded channels.

A scenario is a two-lane road with ``N`` electric vehicles driving past
wireless-powered roadside objects (signs, wearables).  Each time interval
yields a :class:`NetworkSnapshot` holding vehicle/object positions, the
vehicle->object association sets, and a channel power-gain tensor covering
*every* vehicle->object pair (cross gains are needed for interference).

Everything is a pure function of ``(config, seed)``: fading draws come
from per-(interval, object) substreams, so two runs with the same seed are
bit-identical, and an instance with fewer objects or resource blocks is a
pathwise prefix of a bigger one built from the same seed.
"""

import json
from dataclasses import dataclass, asdict, replace

import numpy as np

__all__ = [
    "ConfigurationError",
    "ScenarioConfig",
    "Layout",
    "NetworkSnapshot",
    "build_scenario",
    "advance_mobility",
    "realize_channels",
    "simulate_scenario",
    "pathloss_gains",
    "load_config",
    "save_config",
]

# Substream tags keep object placement and fading draws independent.
_PLACEMENT_TAG = 11
_FADING_TAG = 17

# Roadside objects sit half a lane-width beyond the outer lane edges.
_DISTANCE_FLOOR_M = 1.0


class ConfigurationError(ValueError):
    """Inconsistent scenario configuration or layout."""


@dataclass(frozen=True)
class ScenarioConfig:
    """Physical and constraint parameters of one network instance.

    Powers are in watts, rates in bit/s, distances in meters.  ``bandwidth``
    is per resource block.  ``worst_case_interference`` is the fixed
    tolerable interference level used by the convex surrogate; ``None``
    derives a per-link worst case from the realized gains (every interferer
    at full budget).
    """

    num_vehicles: int = 2
    num_rbs: int = 3
    num_intervals: int = 3
    bandwidth: float = 1e6              # Hz per RB
    noise_psd: float = 4e-14            # W/Hz
    processing_noise: float = 1e-9      # W
    static_vehicle_power: float = 2e-3  # W
    object_rx_power: float = 2e-3       # W
    vehicle_power_budget: float = 4e-2  # W per vehicle per interval
    min_rate: float = 5e4               # bit/s per served object
    min_charge: float = 1e-8            # W per served object
    conversion_efficiency: float = 0.7
    worst_case_interference: float | None = None  # W; None -> derived
    road_length: float = 200.0          # m
    lane_separation: float = 4.0        # m
    velocity: float = 10.0              # m/s
    pathloss_exponent: float = 3.0
    reference_gain: float = 1.0         # power gain at 1 m
    rng_seed: int = 0
    interval_duration: float = 1.0      # s
    mobility_mode: str = "wrap"         # "wrap" | "exit"

    def __post_init__(self):
        if self.num_vehicles < 1 or self.num_rbs < 1 or self.num_intervals < 1:
            raise ConfigurationError("num_vehicles, num_rbs, num_intervals must be >= 1")
        if self.bandwidth <= 0:
            raise ConfigurationError("bandwidth must be > 0")
        if not 0.0 < self.conversion_efficiency < 1.0:
            raise ConfigurationError("conversion_efficiency must lie in (0, 1)")
        if self.vehicle_power_budget <= 0:
            raise ConfigurationError("vehicle_power_budget must be > 0")
        if self.worst_case_interference is not None and self.worst_case_interference < 0:
            raise ConfigurationError("worst_case_interference must be >= 0")
        for name in ("noise_psd", "processing_noise", "static_vehicle_power",
                     "object_rx_power", "min_rate", "min_charge"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if self.road_length <= 0 or self.lane_separation <= 0:
            raise ConfigurationError("road_length and lane_separation must be > 0")
        if self.velocity < 0 or self.interval_duration <= 0:
            raise ConfigurationError("velocity must be >= 0 and interval_duration > 0")
        if self.pathloss_exponent <= 0 or self.reference_gain <= 0:
            raise ConfigurationError("pathloss_exponent and reference_gain must be > 0")
        if self.mobility_mode not in ("wrap", "exit"):
            raise ConfigurationError("mobility_mode must be 'wrap' or 'exit'")

    @property
    def noise_floor(self) -> float:
        """Per-RB thermal noise power N0*W in watts."""
        return self.noise_psd * self.bandwidth


@dataclass(frozen=True)
class Layout:
    """Object placement: a per-vehicle count or absolute positions.

    With ``objects_per_vehicle`` set, each vehicle gets that many objects
    scattered along the roadside near its initial position (x-scatter of
    ``cluster_spread`` meters, random side of the road).
    """

    objects_per_vehicle: int | None = None
    object_positions: np.ndarray | None = None  # (M, 2)
    cluster_spread: float = 8.0

    def __post_init__(self):
        if (self.objects_per_vehicle is None) == (self.object_positions is None):
            raise ConfigurationError(
                "layout needs exactly one of objects_per_vehicle or object_positions")
        if self.objects_per_vehicle is not None and self.objects_per_vehicle < 1:
            raise ConfigurationError("objects_per_vehicle must be >= 1")
        if self.object_positions is not None:
            pos = np.asarray(self.object_positions, dtype=float)
            if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] < 1:
                raise ConfigurationError("object_positions must have shape (M, 2), M >= 1")
            object.__setattr__(self, "object_positions", pos)


@dataclass(frozen=True)
class NetworkSnapshot:
    """State of one time interval (1-based ``interval``).

    ``served[i, j]`` marks object ``j`` as associated with vehicle ``i``;
    columns are one-hot, so association sets are disjoint.  ``gains`` has
    shape (N, M, B) and covers all vehicle->object pairs; it is ``None``
    until :func:`realize_channels` runs.  ``object_ids`` carries the
    per-object (cluster, member) identity that seeds its fading substream.
    A vehicle is *active* when it is on the road and serves at least one
    object.
    """

    interval: int
    vehicle_positions: np.ndarray   # (N, 2)
    object_positions: np.ndarray    # (M, 2)
    object_ids: np.ndarray          # (M, 2) int
    served: np.ndarray              # (N, M) bool
    active: np.ndarray              # (N,) bool
    gains: np.ndarray | None = None  # (N, M, B)

    @property
    def num_vehicles(self) -> int:
        return self.vehicle_positions.shape[0]

    @property
    def num_objects(self) -> int:
        return self.object_positions.shape[0]

    def associations(self) -> tuple:
        """Per-vehicle arrays of served object indices (J_i for this interval)."""
        return tuple(np.flatnonzero(self.served[i]) for i in range(self.num_vehicles))


def _axial_distance(dx: np.ndarray, config: ScenarioConfig) -> np.ndarray:
    dx = np.abs(dx)
    if config.mobility_mode == "wrap":
        return np.minimum(dx, config.road_length - dx)
    return dx


def _distances(vehicle_pos: np.ndarray, object_pos: np.ndarray,
               config: ScenarioConfig) -> np.ndarray:
    """(N, M) vehicle->object distances, floored at 1 m."""
    dx = _axial_distance(vehicle_pos[:, None, 0] - object_pos[None, :, 0], config)
    dy = vehicle_pos[:, None, 1] - object_pos[None, :, 1]
    return np.maximum(np.hypot(dx, dy), _DISTANCE_FLOOR_M)


def pathloss_gains(vehicle_pos: np.ndarray, object_pos: np.ndarray,
                   config: ScenarioConfig) -> np.ndarray:
    """Deterministic log-distance path-loss gains, shape (N, M)."""
    d = _distances(vehicle_pos, object_pos, config)
    return config.reference_gain * d ** (-config.pathloss_exponent)


def _associate(vehicle_pos: np.ndarray, object_pos: np.ndarray,
               on_road: np.ndarray, config: ScenarioConfig) -> np.ndarray:
    """Nearest-vehicle rule: each object joins its closest on-road vehicle."""
    n = vehicle_pos.shape[0]
    m = object_pos.shape[0]
    served = np.zeros((n, m), dtype=bool)
    if not on_road.any():
        return served
    d = _distances(vehicle_pos, object_pos, config)
    d[~on_road, :] = np.inf
    owner = np.argmin(d, axis=0)
    served[owner, np.arange(m)] = True
    return served


def _initial_vehicle_positions(config: ScenarioConfig) -> np.ndarray:
    """Vehicles evenly spaced along the road, alternating between the two lanes."""
    n = config.num_vehicles
    x = (np.arange(n) + 0.5) * config.road_length / n
    y = np.where(np.arange(n) % 2 == 0, 0.0, config.lane_separation)
    return np.column_stack([x, y])


def _place_objects(config: ScenarioConfig, layout: Layout,
                   vehicle_pos: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if layout.object_positions is not None:
        pos = layout.object_positions
        ids = np.column_stack([np.zeros(pos.shape[0], dtype=int),
                               np.arange(pos.shape[0])])
        return pos, ids

    k = layout.objects_per_vehicle
    n = config.num_vehicles
    margin = config.lane_separation / 2.0
    positions = np.empty((n * k, 2))
    ids = np.empty((n * k, 2), dtype=int)
    for i in range(n):
        for m in range(k):
            # One substream per (vehicle, member): the k-object instance is
            # a prefix of any larger one built from the same seed.
            rng = np.random.default_rng(
                np.random.SeedSequence((config.rng_seed, _PLACEMENT_TAG, i, m)))
            u_x, u_side = rng.random(2)
            x = np.mod(vehicle_pos[i, 0] + (2.0 * u_x - 1.0) * layout.cluster_spread,
                       config.road_length)
            y = -margin if u_side < 0.5 else config.lane_separation + margin
            j = i * k + m
            positions[j] = (x, y)
            ids[j] = (i, m)
    return positions, ids


def build_scenario(config: ScenarioConfig, layout: Layout) -> NetworkSnapshot:
    """Construct and realize the interval-1 snapshot.

    Vehicles sit on the two lanes, objects at the roadside; associations
    follow the nearest-vehicle rule.  Raises :class:`ConfigurationError`
    if any vehicle ends up with no objects at interval 1.
    """
    vehicle_pos = _initial_vehicle_positions(config)
    object_pos, object_ids = _place_objects(config, layout, vehicle_pos)
    on_road = np.ones(config.num_vehicles, dtype=bool)
    served = _associate(vehicle_pos, object_pos, on_road, config)
    counts = served.sum(axis=1)
    if (counts == 0).any():
        empty = np.flatnonzero(counts == 0).tolist()
        raise ConfigurationError(f"vehicles {empty} have zero associated objects")
    snapshot = NetworkSnapshot(
        interval=1,
        vehicle_positions=vehicle_pos,
        object_positions=object_pos,
        object_ids=object_ids,
        served=served,
        active=on_road & (counts > 0),
    )
    return realize_channels(snapshot, config)


def advance_mobility(snapshot: NetworkSnapshot, config: ScenarioConfig) -> NetworkSnapshot:
    """Advance one interval: move vehicles, re-derive associations.

    Returns an unrealized snapshot (``gains is None``).  Vehicles wrap
    around or exit depending on ``config.mobility_mode``; a vehicle with
    no nearby objects simply becomes inactive for the interval.
    """
    if snapshot.interval >= config.num_intervals:
        raise ValueError(f"cannot advance past interval {config.num_intervals}")
    pos = snapshot.vehicle_positions.copy()
    pos[:, 0] += config.velocity * config.interval_duration
    if config.mobility_mode == "wrap":
        pos[:, 0] = np.mod(pos[:, 0], config.road_length)
        on_road = np.ones(config.num_vehicles, dtype=bool)
    else:
        on_road = pos[:, 0] <= config.road_length
    served = _associate(pos, snapshot.object_positions, on_road, config)
    return NetworkSnapshot(
        interval=snapshot.interval + 1,
        vehicle_positions=pos,
        object_positions=snapshot.object_positions,
        object_ids=snapshot.object_ids,
        served=served,
        active=on_road & (served.sum(axis=1) > 0),
        gains=None,
    )


def realize_channels(snapshot: NetworkSnapshot, config: ScenarioConfig,
                     seed: int | None = None) -> NetworkSnapshot:
    """Draw Rayleigh fading and attach the gain tensor.

    ``g[i, j, r] = reference_gain * d(i,j)^-alpha * h`` with ``h`` a
    unit-mean exponential draw, independent per (i, j, r, interval).
    Identical seed -> identical gains.
    """
    if seed is None:
        seed = config.rng_seed
    n, m, b = snapshot.num_vehicles, snapshot.num_objects, config.num_rbs
    pl = pathloss_gains(snapshot.vehicle_positions, snapshot.object_positions, config)
    gains = np.empty((n, m, b))
    for j in range(m):
        cluster, member = snapshot.object_ids[j]
        rng = np.random.default_rng(np.random.SeedSequence(
            (seed, _FADING_TAG, snapshot.interval, int(cluster), int(member))))
        # RB-major fill: truncating num_rbs keeps a draw prefix.
        h = rng.standard_exponential((b, n)).T
        gains[:, j, :] = pl[:, j, None] * h
    return replace(snapshot, gains=gains)


def simulate_scenario(config: ScenarioConfig, layout: Layout) -> list[NetworkSnapshot]:
    """Build, advance, and realize all ``num_intervals`` snapshots."""
    snapshots = [build_scenario(config, layout)]
    for _ in range(config.num_intervals - 1):
        snapshots.append(realize_channels(advance_mobility(snapshots[-1], config), config))
    return snapshots


def load_config(path) -> tuple[ScenarioConfig, Layout]:
    """Read a JSON scenario file.  ``rng_seed`` is mandatory.

    The file holds :class:`ScenarioConfig` fields as keys plus a ``layout``
    block with ``objects_per_vehicle`` or ``object_positions``.
    """
    with open(path) as fh:
        raw = json.load(fh)
    if "rng_seed" not in raw:
        raise ConfigurationError("config file must set rng_seed")
    layout_raw = raw.pop("layout", {"objects_per_vehicle": 3})
    known = ScenarioConfig.__dataclass_fields__
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    config = ScenarioConfig(**raw)
    layout = Layout(
        objects_per_vehicle=layout_raw.get("objects_per_vehicle"),
        object_positions=(np.asarray(layout_raw["object_positions"], dtype=float)
                          if "object_positions" in layout_raw else None),
        cluster_spread=layout_raw.get("cluster_spread", 20.0),
    )
    return config, layout


def save_config(config: ScenarioConfig, layout: Layout, path) -> None:
    data = asdict(config)
    if layout.object_positions is not None:
        data["layout"] = {"object_positions": layout.object_positions.tolist(),
                          "cluster_spread": layout.cluster_spread}
    else:
        data["layout"] = {"objects_per_vehicle": layout.objects_per_vehicle,
                          "cluster_spread": layout.cluster_spread}
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
