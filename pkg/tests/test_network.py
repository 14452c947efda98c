"""Road geometry, routing, coordinate transforms and scenario configs."""

import json
import math
import shutil

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import straight_network, straight_scenario, write_scenario_files
from microtraffic import (ConfigurationError, InputDomainError, NetworkError,
                          RoadCoord, RoadNetwork, Scenario, SchemaError,
                          global_to_road, is_off_road, list_scenarios,
                          load_network, load_scenario, road_to_global)
from microtraffic.network import Lane


def bent_lane():
    return Lane("bend", [(0.0, 0.0), (10.0, 0.0), (10.0, 10.0)], 3.5)


def test_lane_length_sums_segments():
    assert straight_network().lanes["lane_0"].length == 3000.0
    assert bent_lane().length == 20.0


def test_pose_at_straight_lane():
    lane = straight_network().lanes["lane_0"]
    assert lane.pose_at(100.0) == (100.0, 0.0, 0.0)
    x, y, heading = lane.pose_at(100.0, d=5.0)
    assert (x, y, heading) == (100.0, 5.0, 0.0)


def test_pose_at_vertical_lane_offsets_left():
    lane = Lane("up", [(0.0, 0.0), (0.0, 100.0)], 3.5)
    x, y, heading = lane.pose_at(5.0, d=1.0)
    assert x == pytest.approx(-1.0)
    assert y == pytest.approx(5.0)
    assert heading == pytest.approx(math.pi / 2)


def test_pose_at_vertex_uses_outgoing_segment():
    x, y, heading = bent_lane().pose_at(10.0)
    assert (x, y) == (10.0, 0.0)
    assert heading == pytest.approx(math.pi / 2)


def test_pose_at_bounds_and_extrapolation():
    lane = straight_network().lanes["lane_0"]
    with pytest.raises(InputDomainError):
        lane.pose_at(-1.0)
    with pytest.raises(InputDomainError):
        lane.pose_at(3001.0)
    assert lane.pose_at(3100.0, extrapolate=True) == (3100.0, 0.0, 0.0)
    assert lane.pose_at(-50.0, extrapolate=True) == (-50.0, 0.0, 0.0)


def test_project_signs_and_clamping():
    lane = straight_network().lanes["lane_0"]
    s, d, dist = lane.project(100.0, 2.0)
    assert (s, d, dist) == (100.0, 2.0, 2.0)
    s, d, dist = lane.project(100.0, -2.0)
    assert (s, d, dist) == (100.0, -2.0, 2.0)
    s, d, dist = lane.project(3100.0, 1.0)
    assert s == 3000.0
    assert dist == pytest.approx(math.hypot(100.0, 1.0))


def test_lane_validation():
    with pytest.raises(NetworkError):
        Lane("l", [(0.0, 0.0)], 3.5)
    with pytest.raises(NetworkError):
        Lane("l", [(0.0, 0.0), (math.nan, 1.0)], 3.5)
    with pytest.raises(NetworkError):
        Lane("l", [(0.0, 0.0), (0.0, 0.0), (1.0, 0.0)], 3.5)
    with pytest.raises(NetworkError):
        Lane("l", [(0.0, 0.0), (1.0, 0.0)], 0.0)


def test_network_reference_validation():
    a = Lane("a", [(0.0, 0.0), (10.0, 0.0)], 3.5)
    with pytest.raises(NetworkError, match="duplicate"):
        RoadNetwork((a, Lane("a", [(0.0, 0.0), (10.0, 0.0)], 3.5)))
    with pytest.raises(NetworkError):
        RoadNetwork(())
    with pytest.raises(NetworkError, match="successor"):
        RoadNetwork((Lane("a", [(0.0, 0.0), (10.0, 0.0)], 3.5,
                          successors=("ghost",)),))
    with pytest.raises(NetworkError, match="neighbour"):
        RoadNetwork((Lane("a", [(0.0, 0.0), (10.0, 0.0)], 3.5, left="ghost"),))
    with pytest.raises(NetworkError, match="source"):
        RoadNetwork((a,), sources=("ghost",))
    net = RoadNetwork((a,), sources=("a",), sinks=("a",))
    assert "a" in net and "ghost" not in net


def chain_network():
    a = Lane("a", [(0.0, 0.0), (10.0, 0.0)], 3.5, successors=("b", "c"))
    b = Lane("b", [(10.0, 0.0), (20.0, 0.0)], 3.5, successors=("c",))
    c = Lane("c", [(20.0, 0.0), (30.0, 0.0)], 3.5)
    d = Lane("d", [(0.0, 50.0), (10.0, 50.0)], 3.5)
    return RoadNetwork((a, b, c, d), sources=("a", "d"), sinks=("c", "d"))


def test_shortest_path():
    net = chain_network()
    assert net.shortest_path("a", "a") == ["a"]
    assert net.shortest_path("a", "c") == ["a", "c"]
    assert net.shortest_path("b", "c") == ["b", "c"]
    assert net.shortest_path("a", "d") is None
    with pytest.raises(NetworkError):
        net.shortest_path("a", "ghost")


def test_lane_group_orders_left_to_right():
    net = straight_network(n_lanes=3)
    for lane_id in ("lane_0", "lane_1", "lane_2"):
        assert net.lane_group(lane_id) == ["lane_0", "lane_1", "lane_2"]
    with pytest.raises(NetworkError):
        net.lane_group("ghost")


def test_load_network_schema_errors(tmp_path):
    bad = tmp_path / "net.json"
    bad.write_text("{nope")
    with pytest.raises(SchemaError):
        load_network(bad)
    bad.write_text('{"roads": []}')
    with pytest.raises(SchemaError):
        load_network(bad)
    bad.write_text('{"lanes": [{"id": "a", "width": 3.5}]}')
    with pytest.raises(SchemaError, match="centerline"):
        load_network(bad)
    bad.write_text(json.dumps({"lanes": [
        {"id": "a", "width": 3.5,
         "centerline": [[0.0, 0.0], [1.0, 0.0]],
         "successors": ["ghost"]},
    ]}))
    with pytest.raises(NetworkError):
        load_network(bad)


def test_scenario_files_round_trip(tmp_path):
    path = write_scenario_files(tmp_path, n_lanes=2, ego_speed=10.0,
                                ego_start_s=60.0)
    scenario = load_scenario(path)
    assert scenario.kind == "highway"
    assert scenario.ego_lane == "lane_0"
    assert scenario.ego_speed == 10.0
    assert scenario.ego_start_s == 60.0
    assert scenario.max_steps == 100
    assert sorted(scenario.network.lanes) == ["lane_0", "lane_1"]
    assert scenario.source_path == str(path)


def test_road_global_round_trip_examples():
    net = straight_network(n_lanes=2)
    x, y, heading = road_to_global(net, RoadCoord("lane_1", 120.0, 0.5))
    assert (x, y, heading) == (120.0, -3.0, 0.0)
    rc = global_to_road(net, 120.0, -3.0)
    assert rc.lane_id == "lane_1"
    assert rc.s == pytest.approx(120.0, abs=1e-9)
    assert rc.d == pytest.approx(0.5, abs=1e-9)
    with pytest.raises(NetworkError):
        road_to_global(net, RoadCoord("ghost", 0.0))


@settings(deadline=None, max_examples=60)
@given(lane_i=st.integers(0, 1), s=st.floats(0.0, 3000.0),
       d=st.floats(-1.7, 1.7))
def test_road_global_round_trip_property(lane_i, s, d):
    net = straight_network(n_lanes=2)
    lane_id = f"lane_{lane_i}"
    x, y, _ = road_to_global(net, RoadCoord(lane_id, s, d))
    back = global_to_road(net, x, y)
    assert back is not None
    assert back.lane_id == lane_id
    assert abs(back.s - s) < 1e-6
    assert abs(back.d - d) < 1e-6


def test_off_road_boundary_is_closed():
    net = straight_network()
    assert not is_off_road(net, 1500.0, 1.75)
    assert not is_off_road(net, 1500.0, -1.75)
    assert is_off_road(net, 1500.0, math.nextafter(1.75, 2.0))
    assert is_off_road(net, 1500.0, 2.0)
    assert global_to_road(net, 1500.0, 2.0, tol=0.5) is not None


def test_global_to_road_prefers_nearest_then_id_order():
    net = straight_network(n_lanes=2)
    assert global_to_road(net, 10.0, -1.0).lane_id == "lane_0"
    assert global_to_road(net, 10.0, -2.5).lane_id == "lane_1"
    # midline between the two lanes: equidistant, id order decides
    assert global_to_road(net, 10.0, -1.75).lane_id == "lane_0"


def test_scenario_validation():
    base = straight_scenario()
    with pytest.raises(SchemaError):
        Scenario("rural", base.network, base.demand, 0.1, 100, 0, "lane_0")
    with pytest.raises(SchemaError):
        Scenario("highway", base.network, base.demand, 0.0, 100, 0, "lane_0")
    with pytest.raises(SchemaError):
        Scenario("highway", base.network, base.demand, 0.1, 0, 0, "lane_0")
    with pytest.raises(SchemaError):
        Scenario("highway", base.network, base.demand, 0.1, 100, 0, "ghost")
    with pytest.raises(SchemaError):
        Scenario("highway", base.network, base.demand, 0.1, 100, 0, "lane_0",
                 ego_start_s=9000.0)
    with pytest.raises(SchemaError):
        Scenario("highway", base.network, base.demand, 0.1, 100, 0, "lane_0",
                 ego_speed=-1.0)


def test_bundled_scenarios_parse_with_expected_networks():
    paths = list_scenarios()
    names = [p.name for p in paths]
    assert names == sorted(names)
    by_stem = {p.name.split(".")[0]: load_scenario(p) for p in paths}
    assert set(by_stem) == {"highway_plain", "highway_curve",
                            "urban_block", "urban_grid"}
    assert len(by_stem["highway_plain"].network.lanes) == 3
    assert len(by_stem["highway_curve"].network.lanes) == 3
    assert len(by_stem["urban_block"].network.lanes) == 8
    grid = by_stem["urban_grid"].network
    assert len(grid.lanes) == 24
    assert len(grid.sources) == 20
    assert len(grid.sinks) == 20
    for scenario in by_stem.values():
        assert scenario.kind in ("highway", "urban")
        assert scenario.ego_lane in scenario.network.lanes


def test_list_scenarios_kind_filter():
    assert len(list_scenarios("highway")) == 2
    assert len(list_scenarios("urban")) == 2
    assert list_scenarios("rural") == []


def test_load_scenario_by_kind_picks_uniformly(tmp_path):
    first = write_scenario_files(tmp_path, max_steps=10)
    second = tmp_path / "case2.scenario.json"
    shutil.copy(first, second)

    counts = {first.name: 0, second.name: 0}
    rng = np.random.default_rng(0)
    for _ in range(1000):
        picked = load_scenario("highway", rng, library=tmp_path)
        counts[picked.source_path.rsplit("/", 1)[-1]] += 1
    assert counts[first.name] + counts[second.name] == 1000
    assert abs(counts[first.name] / 1000 - 0.5) < 0.05

    with pytest.raises(ConfigurationError):
        load_scenario("urban", rng, library=tmp_path)
    with pytest.raises(ConfigurationError):
        load_scenario("no-such-thing", rng)
