"""Scenario files: versioned YAML with strict validation and lossless round-trip.

Every section is a frozen dataclass holding plain Python values (floats,
tuples, strings) so that scenarios compare by value. ``build_*`` helpers turn
sections into the runtime objects used by the simulator.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid scenario; the message starts with the dotted path of the offending key."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


# Field kinds used by the generic parser.
def _spec(kind: str, default=dataclasses.MISSING, **extra):
    meta = {"kind": kind, **extra}
    if isinstance(default, (list, dict)):
        return field(default_factory=lambda: default, metadata=meta)
    if default is dataclasses.MISSING:
        return field(metadata=meta)
    return field(default=default, metadata=meta)


@dataclass(frozen=True)
class BoxSpec:
    min: tuple = _spec("vec3")
    max: tuple = _spec("vec3")


@dataclass(frozen=True)
class CylinderSpec:
    center: tuple = _spec("vec2")
    radius: float = _spec("pos")
    z: tuple = _spec("vec2")


@dataclass(frozen=True)
class MapSpec:
    lower: tuple = _spec("vec3")
    upper: tuple = _spec("vec3")
    resolution: float = _spec("pos", 0.1)
    cap: float = _spec("pos", 5.0)
    boxes: tuple = _spec("list", (), item=BoxSpec)
    cylinders: tuple = _spec("list", (), item=CylinderSpec)
    voxel_file: str = _spec("str", "")


@dataclass(frozen=True)
class WindSpec:
    kind: str = _spec("choice", "none", choices=("none", "constant", "gusty"))
    mean: tuple = _spec("vec3", (0.0, 0.0, 0.0))
    variance: float = _spec("nonneg", 1.0)
    correlation_time: float = _spec("pos", 1.0)
    coefficient: float = _spec("pos", 1.0)


@dataclass(frozen=True)
class ObstacleSpec:
    position: tuple = _spec("vec3")
    velocity: tuple = _spec("vec3")
    radius: float = _spec("pos", 0.3)
    pattern: str = _spec("choice", "constant", choices=("constant", "back_and_forth"))
    endpoints: tuple = _spec("vec3list", ())


@dataclass(frozen=True)
class MissionSpec:
    start: tuple = _spec("vec3")
    goal: tuple = _spec("vec3", (0.0, 0.0, 0.0))
    yaw: float = _spec("float", 0.0)


@dataclass(frozen=True)
class ReferenceSpec:
    """Fixed trajectory for tracking-only scenarios (no planner)."""

    waypoints: tuple = _spec("vec3list", ())
    durations: tuple = _spec("floatlist", ())
    laps: int = _spec("posint", 1)


@dataclass(frozen=True)
class VehicleSpec:
    mass: float = _spec("pos", 1.0)
    drag: tuple = _spec("vec3", (0.1, 0.1, 0.05))
    thrust_min: float = _spec("nonneg", 0.5)
    thrust_max: float = _spec("pos", 20.0)
    rate_max: float = _spec("pos", 3.0)
    max_tilt_deg: float = _spec("pos", 45.0)
    radius: float = _spec("pos", 0.2)


@dataclass(frozen=True)
class PlannerSpec:
    static: float = _spec("nonneg", 1e4)
    dynamic: float = _spec("nonneg", 1e4)
    feasibility: float = _spec("nonneg", 1e3)
    time: float = _spec("nonneg", 100.0)
    static_clearance: float = _spec("nonneg", 0.1)
    dynamic_clearance: float = _spec("nonneg", 0.4)
    v_max: float = _spec("pos", 2.0)
    a_max: float = _spec("pos", 6.0)
    delta: float = _spec("pos", 0.1)
    replan_trigger: float = _spec("nonneg", 0.2)
    lookahead: float = _spec("pos", 2.0)
    planning_budget: float = _spec("pos", 0.05)
    prediction_horizon: float = _spec("pos", 3.0)
    piece_length: float = _spec("pos", 1.5)
    max_iterations: int = _spec("posint", 200)


@dataclass(frozen=True)
class FrsSpec:
    eps: float = _spec("pos", 0.01)
    margin: float = _spec("nonneg", 2.0)
    steps: int = _spec("posint", 20)  # propagation length; the bound is held beyond it
    initial_std: tuple = _spec("vec3", (0.02, 0.05, 0.02))  # position, velocity, attitude


@dataclass(frozen=True)
class NmpcSpec:
    horizon: int = _spec("posint", 20)
    dt: float = _spec("pos", 0.05)
    position_weight: float = _spec("nonneg", 100.0)
    velocity_weight: float = _spec("nonneg", 10.0)
    attitude_weight: float = _spec("nonneg", 1.0)
    thrust_weight: float = _spec("pos", 0.1)
    rate_weight: float = _spec("pos", 1.0)
    tilt_weight: float = _spec("nonneg", 1e4)
    max_iterations: int = _spec("posint", 10)


@dataclass(frozen=True)
class ObserverSpec:
    bandwidth: float = _spec("pos", 8.0)
    cutoff_hz: float = _spec("pos", 20.0)
    spread_window: float = _spec("pos", 2.0)


@dataclass(frozen=True)
class SimSpec:
    max_time: float = _spec("pos", 30.0)
    plant_rate: float = _spec("pos", 1000.0)
    control_rate: float = _spec("pos", 100.0)
    warmup: float = _spec("nonneg", 2.0)
    latency: float = _spec("nonneg", 0.03)
    replan_period: float = _spec("pos", 0.1)
    noise_std: float = _spec("nonneg", 0.01)
    wind_ramp: float = _spec("nonneg", 1.0)  # wind fades in over this time (s)
    tilt_limit: bool = _spec("bool", True)  # plant caps roll and pitch at vehicle.max_tilt_deg
    goal_tolerance: float = _spec("pos", 0.3)
    static_replan: bool = _spec("bool", False)
    frs: bool = _spec("bool", True)
    observer: bool = _spec("bool", True)


@dataclass(frozen=True)
class Scenario:
    name: str = _spec("str")
    map: MapSpec = _spec("section", item=MapSpec)
    mission: MissionSpec = _spec("section", item=MissionSpec)
    schema_version: int = _spec("posint", SCHEMA_VERSION)
    seed: int = _spec("int", 0)
    wind: WindSpec = _spec("section", WindSpec(), item=WindSpec)
    obstacles: tuple = _spec("list", (), item=ObstacleSpec)
    reference: ReferenceSpec | None = _spec("optsection", None, item=ReferenceSpec)
    vehicle: VehicleSpec = _spec("section", VehicleSpec(), item=VehicleSpec)
    planner: PlannerSpec = _spec("section", PlannerSpec(), item=PlannerSpec)
    frs: FrsSpec = _spec("section", FrsSpec(), item=FrsSpec)
    nmpc: NmpcSpec = _spec("section", NmpcSpec(), item=NmpcSpec)
    observer: ObserverSpec = _spec("section", ObserverSpec(), item=ObserverSpec)
    sim: SimSpec = _spec("section", SimSpec(), item=SimSpec)

    @property
    def tracking_only(self) -> bool:
        return self.reference is not None

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)

    def with_flags(self, frs: bool | None = None, observer: bool | None = None) -> "Scenario":
        sim = self.sim
        if frs is not None:
            sim = dataclasses.replace(sim, frs=bool(frs))
        if observer is not None:
            sim = dataclasses.replace(sim, observer=bool(observer))
        return dataclasses.replace(self, sim=sim)


# --- parsing -----------------------------------------------------------------

def _number(value, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(key, f"expected a number, got {value!r}")
    value = float(value)
    if not np.isfinite(value):
        raise ConfigError(key, "must be finite")
    return value


def _vector(value, n: int | None, key: str) -> tuple:
    if not isinstance(value, (list, tuple)):
        raise ConfigError(key, f"expected a list of numbers, got {value!r}")
    if n is not None and len(value) != n:
        raise ConfigError(key, f"expected {n} numbers, got {len(value)}")
    return tuple(_number(v, f"{key}[{i}]") for i, v in enumerate(value))


def _convert(f: dataclasses.Field, value, key: str):
    kind = f.metadata["kind"]
    if kind == "float":
        return _number(value, key)
    if kind in ("pos", "nonneg"):
        v = _number(value, key)
        if kind == "pos" and not v > 0:
            raise ConfigError(key, f"must be positive, got {v}")
        if kind == "nonneg" and v < 0:
            raise ConfigError(key, f"must be non-negative, got {v}")
        return v
    if kind in ("int", "posint"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        if kind == "posint" and value < 1:
            raise ConfigError(key, f"must be at least 1, got {value}")
        return value
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true or false, got {value!r}")
        return value
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    if kind == "choice":
        if value not in f.metadata["choices"]:
            raise ConfigError(key, f"must be one of {list(f.metadata['choices'])}, got {value!r}")
        return value
    if kind == "vec3":
        return _vector(value, 3, key)
    if kind == "vec2":
        return _vector(value, 2, key)
    if kind == "floatlist":
        return _vector(value, None, key)
    if kind == "vec3list":
        if not isinstance(value, (list, tuple)):
            raise ConfigError(key, "expected a list of 3-vectors")
        return tuple(_vector(v, 3, f"{key}[{i}]") for i, v in enumerate(value))
    if kind == "list":
        if not isinstance(value, (list, tuple)):
            raise ConfigError(key, "expected a list")
        return tuple(_parse(f.metadata["item"], v, f"{key}[{i}]") for i, v in enumerate(value))
    if kind in ("section", "optsection"):
        if value is None and kind == "optsection":
            return None
        return _parse(f.metadata["item"], value, key)
    raise AssertionError(kind)


def _parse(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(path or "<root>", f"expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for name in data:
        if name not in fields:
            raise ConfigError(f"{path}.{name}" if path else str(name), "unknown key")
    kwargs = {}
    for name, f in fields.items():
        key = f"{path}.{name}" if path else name
        if name in data:
            kwargs[name] = _convert(f, data[name], key)
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ConfigError(key, "missing required key")
    return cls(**kwargs)


def _validate(s: Scenario) -> None:
    if s.schema_version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {s.schema_version} (expected {SCHEMA_VERSION})")
    lo, hi = np.array(s.map.lower), np.array(s.map.upper)
    if np.any(hi <= lo):
        raise ConfigError("map.upper", "must exceed map.lower on every axis")
    for i, c in enumerate(s.map.cylinders):
        if c.z[1] <= c.z[0]:
            raise ConfigError(f"map.cylinders[{i}].z", "top must exceed bottom")
    for i, b in enumerate(s.map.boxes):
        if np.any(np.array(b.max) < np.array(b.min)):
            raise ConfigError(f"map.boxes[{i}].max", "must not be below min")
    for name in ("start", "goal"):
        p = np.array(getattr(s.mission, name))
        if np.any(p < lo) or np.any(p > hi):
            raise ConfigError(f"mission.{name}", "outside the map bounds")
    if s.wind.kind == "gusty" and np.linalg.norm(s.wind.mean) == 0:
        raise ConfigError("wind.mean", "gusty wind needs a non-zero mean")
    for i, ob in enumerate(s.obstacles):
        if ob.pattern == "back_and_forth" and len(ob.endpoints) != 2:
            raise ConfigError(f"obstacles[{i}].endpoints", "back_and_forth needs exactly two endpoints")
    if s.reference is not None:
        r = s.reference
        if len(r.durations) < 1 or len(r.waypoints) != len(r.durations) - 1:
            raise ConfigError("reference.waypoints", "need one fewer waypoint than durations")
        if any(d <= 0 for d in r.durations):
            raise ConfigError("reference.durations", "must be positive")
    if s.vehicle.thrust_min >= s.vehicle.thrust_max:
        raise ConfigError("vehicle.thrust_min", "must be below thrust_max")
    if s.vehicle.max_tilt_deg >= 85.0:
        raise ConfigError("vehicle.max_tilt_deg", "must be below 85")
    ratio = s.sim.plant_rate / s.sim.control_rate
    if abs(ratio - round(ratio)) > 1e-9:
        raise ConfigError("sim.plant_rate", "must be an integer multiple of control_rate")


def scenario_from_dict(data: dict) -> Scenario:
    s = _parse(Scenario, data, "")
    _validate(s)
    return s


def _plain(value) -> Any:
    if dataclasses.is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def scenario_to_dict(s: Scenario) -> dict:
    return _plain(s)


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"YAML syntax error: {exc}") from exc
    except OSError as exc:
        raise ConfigError("<file>", str(exc)) from exc
    s = scenario_from_dict(data)
    if s.map.voxel_file and not Path(s.map.voxel_file).is_absolute():
        s = s.replace(map=dataclasses.replace(s.map, voxel_file=str(path.parent / s.map.voxel_file)))
    return s


SCENARIO_DIR = Path(__file__).resolve().parent / "scenarios"


def resolve_scenario(name) -> Path:
    """Path to a scenario file; bare names fall back to the bundled scenarios."""
    path = Path(name)
    if path.exists():
        return path
    for candidate in (SCENARIO_DIR / path.name, SCENARIO_DIR / f"{path.name}.yaml"):
        if candidate.exists():
            return candidate
    raise ConfigError("<file>", f"no such scenario: {name}")


def apply_overrides(s: Scenario, overrides: dict) -> Scenario:
    """Set dotted keys (``wind.mean``, ``sim.frs``) and re-validate."""
    data = scenario_to_dict(s)
    for dotted, value in overrides.items():
        node = data
        parts = dotted.split(".")
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node or not isinstance(node[part], dict):
                raise ConfigError(dotted, "unknown section")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(dotted, "unknown key")
        node[parts[-1]] = value
    return scenario_from_dict(data)


def dump_scenario(s: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(s), sort_keys=False, default_flow_style=None)


def save_scenario(s: Scenario, path) -> None:
    Path(path).write_text(dump_scenario(s))


# --- runtime objects ------------------------------------------------------------

def build_params(s: Scenario):
    from .dynamics import QuadParams

    v = s.vehicle
    return QuadParams(mass=v.mass, drag=np.diag(v.drag), thrust_min=v.thrust_min, thrust_max=v.thrust_max,
                      rate_max=v.rate_max, max_tilt=np.deg2rad(v.max_tilt_deg), radius=v.radius)


def build_weights(s: Scenario):
    from .planner import PlannerWeights

    return PlannerWeights(**{f.name: getattr(s.planner, f.name) for f in dataclasses.fields(PlannerSpec)})


def build_frs(s: Scenario):
    from .reach import FrsConfig

    sp, sv, sa = s.frs.initial_std
    return FrsConfig(delta=s.planner.delta, steps=s.frs.steps, eps=s.frs.eps, margin=s.frs.margin,
                     initial_shape=np.array([sp**2] * 3 + [sv**2] * 3 + [sa**2] * 3))


def build_nmpc(s: Scenario):
    from .nmpc import NmpcConfig

    n = s.nmpc
    return NmpcConfig(
        horizon=n.horizon, dt=n.dt,
        state_weights=np.array([n.position_weight] * 3 + [n.velocity_weight] * 3 + [n.attitude_weight] * 3),
        input_weights=np.array([n.thrust_weight] + [n.rate_weight] * 3),
        tilt_weight=n.tilt_weight, max_iterations=n.max_iterations,
    )


def build_observer(s: Scenario):
    from .observer import ObserverConfig

    o = s.observer
    return ObserverConfig(bandwidth=o.bandwidth, cutoff_hz=o.cutoff_hz, spread_window=o.spread_window)


def build_map(s: Scenario):
    """Occupancy grid and its distance field."""
    from .esdf import VoxelGrid, build_esdf

    m = s.map
    grid = VoxelGrid.empty(m.lower, m.upper, m.resolution)
    for b in m.boxes:
        grid.add_box(b.min, b.max)
    for c in m.cylinders:
        grid.add_cylinder(c.center, c.radius, c.z[0], c.z[1])
    if m.voxel_file:
        grid.load_voxel_list(m.voxel_file)
    return grid, build_esdf(grid, cap=m.cap)


def build_wind(s: Scenario):
    from .sim.world import WindModel

    w = s.wind
    return WindModel(kind=w.kind, mean=w.mean, variance=w.variance,
                     correlation_time=w.correlation_time, coefficient=w.coefficient)


def build_obstacles(s: Scenario):
    from .sim.world import DynamicObstacle

    return [
        DynamicObstacle(position=o.position, velocity=o.velocity, radius=o.radius, pattern=o.pattern,
                        endpoints=o.endpoints if o.endpoints else None)
        for o in s.obstacles
    ]
