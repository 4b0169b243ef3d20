import json

import numpy as np
import pytest

from catenav.geometry import (Allocation, ConstantVelocity, DesiredFormation, Obstacle, Params,
                              PiecewiseConstantVelocity, RobotState, ScenarioError, ScenarioSpec,
                              SinusoidalVelocity, neighbor_indices, neighbor_set, validate_scenario)


def two_robot_spec(**kw):
    base = dict(robots=np.array([[0.0, 0.0], [3.0, 0.0]]),
                formation=DesiredFormation(np.array([[10.0, 0.0], [10.0, 3.0]])))
    base.update(kw)
    return ScenarioSpec(**base)


def test_neighbor_set_examples():
    a = RobotState(0, (0.0, 0.0))
    b = RobotState(1, (3.0, 0.0))
    assert neighbor_set(a, [a, b], 4.0) == {1}
    assert neighbor_set(a, [a], 4.0) == set()
    far = RobotState(1, (4.0001, 0.0))
    assert neighbor_set(a, [a, far], 4.0) == set()


def test_neighbor_set_rejects_nonpositive_radius():
    a = RobotState(0, (0.0, 0.0))
    with pytest.raises(ValueError):
        neighbor_set(a, [a], 0.0)


def test_neighbor_set_symmetric_random():
    rng = np.random.default_rng(3)
    pts = rng.uniform(0, 10, size=(12, 2))
    robots = [RobotState(i, p) for i, p in enumerate(pts)]
    sets = [neighbor_set(r, robots, 4.0) for r in robots]
    for i in range(12):
        assert set(neighbor_indices(pts, i, 4.0).tolist()) == sets[i]
        for j in sets[i]:
            assert i in sets[j]


def test_validate_reports_a3_pair_and_distance():
    spec = two_robot_spec(robots=np.array([[0.0, 0.0], [0.5, 0.0]]))
    rep = validate_scenario(spec)
    assert not rep.ok
    (v,) = rep.violations
    assert v.assumption == "A3" and v.indices == (0, 1) and v.distance == pytest.approx(0.5)


def test_validate_a4_obstacle_clearance():
    spec = ScenarioSpec(np.array([[0.0, 0.0]]), DesiredFormation(np.array([[20.0, 0.0]])),
                        (Obstacle((5.0, 0.0), 4.5),))
    rep = validate_scenario(spec)
    assert [v.assumption for v in rep.violations] == ["A4"]
    assert rep.violations[0].distance == pytest.approx(5.0)


def test_validate_first_simulation_obstacles_ok():
    robots = np.array([[x, y] for y in (0, 4, 8, 12, 16) for x in (-8.0, -5.0)])
    points = np.array([[14.0, 1.5 * k + 3.25] for k in range(10)])
    spec = ScenarioSpec(robots, DesiredFormation(points),
                        (Obstacle((5.0, 0.0), 4.5), Obstacle((3.0, 17.0), 3.0)))
    assert validate_scenario(spec).ok


def test_validate_a2_and_a5():
    spec = two_robot_spec(formation=DesiredFormation(np.array([[10.0, 0.0], [10.0, 0.8]])),
                          params=Params(R=1.0, r=1.0))
    kinds = sorted(v.assumption for v in validate_scenario(spec).violations)
    assert kinds == ["A2", "A5"]


def test_validate_matches_independent_scan():
    rng = np.random.default_rng(11)
    for _ in range(20):
        robots = rng.uniform(0, 6, size=(5, 2))
        points = rng.uniform(10, 16, size=(5, 2))
        obs = (Obstacle(tuple(rng.uniform(0, 6, 2)), float(rng.uniform(0.5, 1.5))),)
        spec = ScenarioSpec(robots, DesiredFormation(points), obs)
        r = spec.params.r
        expected = 0
        for pts in (points, robots):
            for i in range(5):
                for j in range(i + 1, 5):
                    expected += not np.hypot(*(pts[i] - pts[j])) > r
        for x in robots:
            expected += not np.hypot(*(x - np.array(obs[0].center))) > r + obs[0].radius
        assert len(validate_scenario(spec).violations) == expected


@pytest.mark.parametrize("robots", [np.zeros((0, 2)), np.array([[0.0, np.nan]]), np.zeros((1, 4))])
def test_structural_errors(robots):
    with pytest.raises(ScenarioError):
        ScenarioSpec(robots, DesiredFormation(np.zeros((len(robots), 2))))


def test_mixed_dimensions_rejected():
    with pytest.raises(ScenarioError):
        ScenarioSpec(np.zeros((1, 2)), DesiredFormation(np.ones((1, 3))))


def test_allocation_matrix_round_trip():
    a = Allocation([2, 0, 1])
    m = a.matrix
    assert np.all(m.sum(axis=1) == 1)
    assert Allocation.from_matrix(m) == a
    assert a.is_permutation
    b = a.with_row(0, 0)
    assert b.column_sums().tolist() == [2, 1, 0]
    assert b.allocation_error() == 2
    assert not b.is_permutation


def test_allocation_rejects_bad_rows():
    with pytest.raises(ValueError):
        Allocation.from_matrix(np.array([[1, 1], [0, 1]]))
    with pytest.raises(ValueError):
        Allocation([0, 2])


def test_json_round_trip_and_strictness():
    spec = two_robot_spec(obstacles=(Obstacle((5.0, 5.0), 1.0, (0.1, 0.0)),),
                          formation=DesiredFormation(np.array([[10.0, 0.0], [10.0, 3.0]]),
                                                     SinusoidalVelocity((0.1, 0.0), (0.0, 0.05), 0.5)))
    text = spec.to_json()
    back = ScenarioSpec.from_json(text)
    assert back.to_json() == text
    d = json.loads(text)
    d["params"]["u_maxx"] = 3
    with pytest.raises(ScenarioError, match="u_maxx"):
        ScenarioSpec.from_dict(d)
    d = json.loads(text)
    d["obstacles"][0]["colour"] = "red"
    with pytest.raises(ScenarioError):
        ScenarioSpec.from_dict(d)
    d = json.loads(text)
    d["dimension"] = 4
    with pytest.raises(ScenarioError):
        ScenarioSpec.from_dict(d)


def test_velocity_profiles():
    assert np.allclose(ConstantVelocity((0.1, 0.0))(5.0), [0.1, 0.0])
    pw = PiecewiseConstantVelocity((0.0, 2.0), ((0.1, 0.0), (0.0, 0.2)))
    assert np.allclose(pw(1.0), [0.1, 0.0]) and np.allclose(pw(2.0), [0.0, 0.2])
    sn = SinusoidalVelocity((0.0, 0.0), (1.0, 0.0), np.pi)
    assert np.allclose(sn(0.5), [1.0, 0.0])


def test_obstacle_moves_linearly():
    ob = Obstacle((1.0, 2.0), 1.0, (0.5, 0.0))
    assert np.allclose(ob.position(2.0), [2.0, 2.0])
    assert not ob.is_static
    with pytest.raises(ScenarioError):
        Obstacle((0.0, 0.0), 0.0)
