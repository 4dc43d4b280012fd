"""Scenario files: one YAML document drives a whole run.

Every knob has a default matching the shipped ``defaults`` scenario, so a
scenario file only states what differs. Arrivals come either from an
explicit ``requests`` list or from a ``flow`` block (merged Poisson process
across the four roads with a maneuver mix).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from .geometry import IntersectionConfig, Maneuver
from .grid import GridSpec
from .refine import CollisionParams, CostWeights
from .scheduler import MotionRequest, PriorityWeights, TrajectoryLibrary
from .vehicle import NoiseConfig, VehicleSpec


class ScenarioError(ValueError):
    pass


FLOW_MIXES = {
    "flow1": {"left": 0.50, "straight": 0.25, "right": 0.25},
    "flow2": {"left": 0.25, "straight": 0.50, "right": 0.25},
}


@dataclass(frozen=True)
class FlowSpec:
    n: int = 20
    rate: float = 0.8               # per-road arrivals per second
    mix: dict = field(default_factory=lambda: dict(FLOW_MIXES["flow1"]))

    def __post_init__(self):
        if self.n < 0:
            raise ScenarioError("flow n must be nonnegative")
        if self.rate <= 0:
            raise ScenarioError("flow rate must be positive")
        total = sum(self.mix.values())
        if abs(total - 1.0) > 1e-9:
            raise ScenarioError(f"maneuver mix sums to {total}, expected 1")
        for key in self.mix:
            Maneuver.parse(key)


@dataclass(frozen=True)
class RefineSettings:
    weights: CostWeights = CostWeights()
    collision: CollisionParams = CollisionParams()
    knot_dt: float = 0.08
    margin_cells: int = 3
    max_restarts: int = 3


@dataclass
class Scenario:
    name: str = "defaults"
    config: IntersectionConfig = field(default_factory=IntersectionConfig)
    grid: GridSpec | None = None
    vehicle: VehicleSpec = field(default_factory=VehicleSpec)
    v_ref: float = 8.0
    deviation_bound: float = 1.0
    smooth_weights: tuple = (1.0, 1.0, 1.0)
    priority: PriorityWeights = field(default_factory=PriorityWeights)
    rate_av: float = 0.8
    refine: RefineSettings = field(default_factory=RefineSettings)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    flow: FlowSpec | None = None
    requests: list = field(default_factory=list)
    obstacles: list = field(default_factory=list)   # BoxObstacle-compatible dicts
    seed: int = 1
    duration: float = 120.0

    def __post_init__(self):
        if self.grid is None:
            self.grid = GridSpec.for_intersection(self.config)
        if self.flow is None and not self.requests:
            self.flow = FlowSpec()

    def make_library(self) -> TrajectoryLibrary:
        return TrajectoryLibrary(self.config, self.vehicle, self.v_ref,
                                 self.deviation_bound, self.smooth_weights)

    def make_requests(self) -> list:
        if self.requests:
            return list(self.requests)
        return generate_flow(self.flow.mix, self.flow.n, self.flow.rate,
                             self.seed)


def generate_flow(mix, n: int, rate: float, seed,
                  n_roads: int = 4) -> list:
    """Merged Poisson arrivals: per-road rate, roads uniform, mix sampled.

    The union of four independent Poisson streams at ``rate`` each is one
    Poisson stream at ``n_roads * rate`` with uniformly random road labels,
    which is what gets drawn here. Deterministic per seed.
    """
    if isinstance(mix, str):
        if mix not in FLOW_MIXES:
            raise ScenarioError(f"unknown flow mix {mix!r}")
        mix = FLOW_MIXES[mix]
    names = sorted(mix)
    probs = np.array([mix[k] for k in names], dtype=float)
    total = probs.sum()
    if abs(total - 1.0) > 1e-9:
        raise ScenarioError(f"maneuver mix sums to {total}, expected 1")
    rng = np.random.default_rng(seed)
    gaps = rng.exponential(1.0 / (n_roads * rate), size=n)
    arrivals = np.cumsum(gaps)
    roads = rng.integers(1, n_roads + 1, size=n)
    picks = rng.choice(len(names), size=n, p=probs / total)
    return [MotionRequest(i + 1, int(roads[i]),
                          Maneuver.parse(names[picks[i]]),
                          float(round(arrivals[i], 6)))
            for i in range(n)]


_MANEUVER_KEYS = {"id", "road", "maneuver", "arrival"}


def _parse_requests(raw) -> list:
    out = []
    for i, item in enumerate(raw):
        extra = set(item) - _MANEUVER_KEYS
        if extra:
            raise ScenarioError(f"request {i}: unknown keys {sorted(extra)}")
        try:
            out.append(MotionRequest(
                vehicle_id=int(item.get("id", i + 1)),
                road=int(item["road"]),
                maneuver=Maneuver.parse(item["maneuver"]),
                arrival_time=float(item.get("arrival", 0.0))))
        except KeyError as exc:
            raise ScenarioError(f"request {i}: missing {exc}") from None
    ids = [r.vehicle_id for r in out]
    if len(set(ids)) != len(ids):
        raise ScenarioError("request ids must be unique")
    return out


def _take(d: dict, cls, label: str, **renames):
    extra = set(d) - set(cls.__dataclass_fields__) - set(renames)
    if extra:
        raise ScenarioError(f"{label}: unknown keys {sorted(extra)}")
    kwargs = {renames.get(k, k): v for k, v in d.items()}
    return cls(**kwargs)


_TOP_KEYS = {"name", "intersection", "grid", "vehicle", "speed", "priority",
             "refine", "noise", "flow", "requests", "obstacles", "seed",
             "duration"}


def scenario_from_dict(doc: dict, name: str = "scenario") -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a mapping")
    extra = set(doc) - _TOP_KEYS
    if extra:
        raise ScenarioError(f"unknown top-level keys {sorted(extra)}")

    sc = Scenario(name=doc.get("name", name))
    if "intersection" in doc:
        sc.config = _take(doc["intersection"], IntersectionConfig, "intersection")
        sc.grid = None
    if "grid" in doc:
        g = dict(doc["grid"])
        extra = set(g) - {"dx", "dy", "dt"}
        if extra:
            raise ScenarioError(f"grid: unknown keys {sorted(extra)}")
        sc.grid = GridSpec.for_intersection(sc.config, **g)
    if sc.grid is None:
        sc.grid = GridSpec.for_intersection(sc.config)
    if "vehicle" in doc:
        sc.vehicle = _take(doc["vehicle"], VehicleSpec, "vehicle")
    if "speed" in doc:
        s = dict(doc["speed"])
        extra = set(s) - {"v_ref", "deviation_bound", "smooth_weights"}
        if extra:
            raise ScenarioError(f"speed: unknown keys {sorted(extra)}")
        sc.v_ref = float(s.get("v_ref", sc.v_ref))
        sc.deviation_bound = float(s.get("deviation_bound", sc.deviation_bound))
        sc.smooth_weights = tuple(s.get("smooth_weights", sc.smooth_weights))
    if "priority" in doc:
        p = dict(doc["priority"])
        sc.rate_av = float(p.pop("rate_av", sc.rate_av))
        sc.priority = _take(p, PriorityWeights, "priority")
    if "refine" in doc:
        r = dict(doc["refine"])
        weights = _take({k: r.pop(k) for k in ("w_acc", "w_jerk", "w_obstacle")
                         if k in r}, CostWeights, "refine weights")
        coll_keys = ("clearance", "influence", "inflation", "wall_margin")
        collision = _take({k: r.pop(k) for k in coll_keys if k in r},
                          CollisionParams, "refine collision")
        extra = set(r) - {"knot_dt", "margin_cells", "max_restarts"}
        if extra:
            raise ScenarioError(f"refine: unknown keys {sorted(extra)}")
        sc.refine = RefineSettings(
            weights=weights, collision=collision,
            knot_dt=float(r.get("knot_dt", 0.08)),
            margin_cells=int(r.get("margin_cells", 3)),
            max_restarts=int(r.get("max_restarts", 3)))
    if "noise" in doc:
        sc.noise = _take(doc["noise"], NoiseConfig, "noise")
    if "flow" in doc and "requests" in doc:
        raise ScenarioError("give either flow or requests, not both")
    if "flow" in doc:
        f = dict(doc["flow"])
        if isinstance(f.get("mix"), str):
            mix_name = f["mix"]
            if mix_name not in FLOW_MIXES:
                raise ScenarioError(f"unknown flow mix {mix_name!r}")
            f["mix"] = dict(FLOW_MIXES[mix_name])
        sc.flow = _take(f, FlowSpec, "flow")
    if "requests" in doc:
        sc.requests = _parse_requests(doc["requests"])
        sc.flow = None
    if "obstacles" in doc:
        from .refine import BoxObstacle
        sc.obstacles = [_take(o, BoxObstacle, f"obstacle {i}")
                        for i, o in enumerate(doc["obstacles"])]
    sc.seed = int(doc.get("seed", sc.seed))
    sc.duration = float(doc.get("duration", sc.duration))
    if sc.duration <= 0:
        raise ScenarioError("duration must be positive")
    return sc


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if doc is None:
        doc = {}
    base = os.path.splitext(os.path.basename(str(path)))[0]
    return scenario_from_dict(doc, name=base)
