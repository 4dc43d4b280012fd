"""Scenario parsing, strict schemas, and flow generation."""

import numpy as np
import pytest
import yaml

from crossplan.geometry import Maneuver
from crossplan.scenario import (FLOW_MIXES, FlowSpec, Scenario, ScenarioError,
                                generate_flow, load_scenario,
                                scenario_from_dict)
from crossplan.scheduler import MotionRequest

SCENARIO_DIR = "scenarios"


def test_default_scenario():
    sc = Scenario()
    assert sc.flow == FlowSpec()
    assert sc.grid.nx == 40
    assert sc.v_ref == 8.0
    reqs = sc.make_requests()
    assert len(reqs) == 20


def test_flow_mix_tables():
    assert FLOW_MIXES["flow1"] == {"left": 0.50, "straight": 0.25, "right": 0.25}
    assert FLOW_MIXES["flow2"] == {"left": 0.25, "straight": 0.50, "right": 0.25}
    for mix in FLOW_MIXES.values():
        assert sum(mix.values()) == pytest.approx(1.0)


# ------------------------------------------------------------- generation

def test_generate_flow_deterministic():
    a = generate_flow("flow1", 30, 0.8, seed=4)
    b = generate_flow("flow1", 30, 0.8, seed=4)
    c = generate_flow("flow1", 30, 0.8, seed=5)
    assert a == b
    assert a != c


def test_generate_flow_shape():
    reqs = generate_flow("flow2", 50, 0.8, seed=1)
    assert [r.vehicle_id for r in reqs] == list(range(1, 51))
    arrivals = [r.arrival_time for r in reqs]
    assert arrivals == sorted(arrivals)
    assert all(r.arrival_time == round(r.arrival_time, 6) for r in reqs)
    assert {r.road for r in reqs} <= {1, 2, 3, 4}


def test_generate_flow_respects_mix():
    reqs = generate_flow("flow2", 4000, 0.8, seed=2)
    frac = {m: sum(r.maneuver is m for r in reqs) / len(reqs)
            for m in Maneuver}
    assert frac[Maneuver.STRAIGHT] == pytest.approx(0.50, abs=0.03)
    assert frac[Maneuver.LEFT] == pytest.approx(0.25, abs=0.03)
    assert frac[Maneuver.RIGHT] == pytest.approx(0.25, abs=0.03)


def test_generate_flow_mean_gap_matches_rate():
    """Merged process over 4 roads at 0.8/s each: mean gap 1/3.2 s."""
    reqs = generate_flow("flow1", 6000, 0.8, seed=9)
    gaps = np.diff([0.0] + [r.arrival_time for r in reqs])
    assert gaps.mean() == pytest.approx(1 / 3.2, rel=0.05)


def test_generate_flow_rejects_unknown_mix():
    with pytest.raises(ScenarioError):
        generate_flow("flow9", 5, 0.8, seed=1)
    with pytest.raises(ScenarioError):
        generate_flow({"left": 0.6, "right": 0.6}, 5, 0.8, seed=1)


def test_flow_spec_validation():
    with pytest.raises(ScenarioError):
        FlowSpec(n=-1)
    with pytest.raises(ScenarioError):
        FlowSpec(rate=0.0)
    with pytest.raises(ScenarioError):
        FlowSpec(mix={"left": 0.9, "straight": 0.2})


# ---------------------------------------------------------------- parsing

def test_shipped_scenarios_parse():
    sc = load_scenario(f"{SCENARIO_DIR}/four_left.yaml")
    assert sc.name == "four_left"
    assert [r.maneuver for r in sc.requests] == [Maneuver.LEFT] * 4
    assert sc.flow is None

    sc = load_scenario(f"{SCENARIO_DIR}/obstacle.yaml")
    assert len(sc.obstacles) == 1
    assert sc.obstacles[0].cy == pytest.approx(-0.3)

    sc = load_scenario(f"{SCENARIO_DIR}/flow2_40.yaml")
    assert sc.flow.n == 40
    assert sc.flow.mix == FLOW_MIXES["flow2"]
    assert sc.seed == 7


def test_round_trip_through_yaml(tmp_path):
    doc = {
        "name": "trip",
        "grid": {"dx": 0.4, "dy": 0.4, "dt": 0.1},
        "vehicle": {"length": 4.5, "width": 1.9},
        "speed": {"v_ref": 6.0, "deviation_bound": 0.8},
        "priority": {"w_delay": 2.0, "w_wait": 0.25, "rate_av": 0.5},
        "refine": {"w_acc": 3.0, "clearance": 0.4, "knot_dt": 0.1},
        "noise": {"sigma_x": 0.02, "sigma_a": 0.0},
        "flow": {"n": 5, "rate": 1.2, "mix": "flow2"},
        "seed": 42,
        "duration": 60.0,
    }
    path = tmp_path / "trip.yaml"
    path.write_text(yaml.safe_dump(doc))
    sc = load_scenario(path)
    assert sc.name == "trip"
    assert (sc.grid.dx, sc.grid.dt) == (0.4, 0.1)
    assert sc.grid.nx == 20
    assert sc.vehicle.length == 4.5
    assert sc.v_ref == 6.0 and sc.deviation_bound == 0.8
    assert sc.priority.w_delay == 2.0 and sc.priority.w_wait == 0.25
    assert sc.rate_av == 0.5
    assert sc.refine.weights.w_acc == 3.0
    assert sc.refine.collision.clearance == 0.4
    assert sc.refine.knot_dt == 0.1
    assert sc.noise.sigma_x == 0.02 and sc.noise.sigma_a == 0.0
    assert sc.noise.sigma_y == 0.05
    assert sc.flow.n == 5 and sc.flow.rate == 1.2
    assert sc.seed == 42 and sc.duration == 60.0


def test_empty_file_gives_defaults(tmp_path):
    path = tmp_path / "blank.yaml"
    path.write_text("")
    sc = load_scenario(path)
    assert sc.name == "blank"
    assert sc.flow == FlowSpec()


@pytest.mark.parametrize("doc,fragment", [
    ({"wheels": 6}, "unknown top-level"),
    ({"grid": {"dx": 0.2, "size": 9}}, "grid"),
    ({"vehicle": {"mass": 1200}}, "vehicle"),
    ({"speed": {"velocity": 9}}, "speed"),
    ({"flow": {"n": 5, "burst": True}}, "flow"),
    ({"refine": {"w_acc": 1.0, "smoothing": 2}}, "refine"),
    ({"noise": {"sigma_q": 0.1}}, "noise"),
    ({"requests": [{"road": 1, "maneuver": "left", "color": "red"}]},
     "unknown keys"),
    ({"flow": {"n": 3}, "requests": [{"road": 1, "maneuver": "left"}]},
     "not both"),
    ({"duration": -5}, "duration"),
    ({"flow": {"mix": "flow7"}}, "flow7"),
])
def test_strict_schema_rejects_unknowns(doc, fragment):
    with pytest.raises(ScenarioError, match=fragment):
        scenario_from_dict(doc)


def test_request_parsing_rules():
    doc = {"requests": [
        {"road": 2, "maneuver": "left"},
        {"id": 7, "road": 1, "maneuver": "straight", "arrival": 1.5},
    ]}
    sc = scenario_from_dict(doc)
    assert sc.requests[0] == MotionRequest(1, 2, Maneuver.LEFT, 0.0)
    assert sc.requests[1] == MotionRequest(7, 1, Maneuver.STRAIGHT, 1.5)
    with pytest.raises(ScenarioError, match="unique"):
        scenario_from_dict({"requests": [
            {"id": 1, "road": 1, "maneuver": "left"},
            {"id": 1, "road": 2, "maneuver": "left"}]})
    with pytest.raises(ScenarioError, match="missing"):
        scenario_from_dict({"requests": [{"maneuver": "left"}]})


def test_non_mapping_document_rejected():
    with pytest.raises(ScenarioError):
        scenario_from_dict(["not", "a", "mapping"])


def test_make_requests_prefers_explicit_list():
    sc = scenario_from_dict({"requests": [{"road": 3, "maneuver": "right"}]})
    assert sc.make_requests() == [MotionRequest(1, 3, Maneuver.RIGHT, 0.0)]
    sc2 = scenario_from_dict({"flow": {"n": 4}, "seed": 3})
    reqs = sc2.make_requests()
    assert len(reqs) == 4
    assert reqs == generate_flow(FLOW_MIXES["flow1"], 4, 0.8, 3)


def test_make_library_uses_scenario_knobs():
    sc = scenario_from_dict({"speed": {"v_ref": 5.0}})
    lib = sc.make_library()
    assert lib.v_ref == 5.0
    assert lib.vspec == sc.vehicle
