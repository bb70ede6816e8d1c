import numpy as np
import pytest

from oneshot_manip import planner as pl
from oneshot_manip.planner import (Box, GoalInCollision, PlanConfig,
                                   PlanningTimeout, StartInCollision,
                                   WorldModel, collides, path_to_actions,
                                   plan_rrt_connect)
from oneshot_manip.se3 import Pose, quat_from_rotation

WS = Box(np.array([-0.5, -0.5, 0.0]), np.array([0.5, 0.5, 0.8]))
HE = np.array([0.04, 0.04, 0.06])


def gap_world(gap_lo, gap_hi):
    lower = Box(np.array([-0.05, -0.5, 0.0]), np.array([0.05, gap_lo, 0.8]))
    upper = Box(np.array([-0.05, gap_hi, 0.0]), np.array([0.05, 0.5, 0.8]))
    return WorldModel((lower, upper), WS, HE)


def edge_free(world, a, b, resolution, rotation_weight=0.1):
    return pl._edge_free(world, a.translation, quat_from_rotation(a.rotation),
                         b.translation, quat_from_rotation(b.rotation),
                         resolution, rotation_weight)


def corners_of_obb(pose, halfextents):
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1)
                      for sz in (-1, 1)], dtype=float)
    return pose.apply(signs * halfextents)


def test_collides_empty_world_inside_workspace():
    world = WorldModel((), WS, HE)
    assert not collides(world, Pose.from_translation((0.0, 0.0, 0.4)))


def test_collides_inside_obstacle_and_flag_semantics():
    obstacle = Box(np.array([-0.1, -0.1, 0.0]), np.array([0.1, 0.1, 0.8]))
    world = WorldModel((obstacle,), WS, HE)
    pose = Pose.from_translation((0.0, 0.0, 0.4))
    assert collides(world, pose, allow_collision=False)
    assert not collides(world, pose, allow_collision=True)


def test_collides_workspace_exit():
    world = WorldModel((), WS, HE)
    assert collides(world, Pose.from_translation((0.49, 0.0, 0.4)))
    assert collides(world, Pose.from_translation((0.0, 0.0, 0.01)))


def test_collision_agrees_with_corner_sampling_oracle(rng):
    # Sampling points inside the gripper box can prove overlap but not prove
    # separation, so check both directions on unambiguous cases.
    obstacle = Box(np.array([-0.1, -0.1, 0.2]), np.array([0.1, 0.1, 0.4]))
    world = WorldModel((obstacle,), WS, HE)
    for _ in range(300):
        pose = Pose.from_axis_angle(rng.normal(size=3), rng.uniform(0, np.pi),
                                    rng.uniform([-0.3, -0.3, 0.15],
                                                [0.3, 0.3, 0.55]))
        u = rng.uniform(-1, 1, (64, 3))
        inside_pts = pose.apply(u * HE)
        any_inside = bool(np.any(np.all(
            (inside_pts >= obstacle.min_corner) & (inside_pts <= obstacle.max_corner),
            axis=1)))
        corners = corners_of_obb(pose, HE)
        ws_exit = bool(np.any(corners < WS.min_corner) or np.any(corners > WS.max_corner))
        verdict = collides(world, pose)
        if any_inside and not ws_exit:
            assert verdict
        if not verdict and not ws_exit:
            assert not any_inside


def test_plan_empty_world_straight_line():
    world = WorldModel((), WS, HE)
    start = Pose.from_translation((-0.3, 0.0, 0.4))
    goal = Pose.from_translation((0.3, 0.0, 0.4))
    path = plan_rrt_connect(world, start, goal, PlanConfig(rng_seed=5))
    assert len(path) == 2
    assert path[0].almost_equal(start) and path[-1].almost_equal(goal)


def test_plan_through_gap_and_dense_recheck():
    world = gap_world(-0.1, 0.1)
    start = Pose.from_translation((-0.3, 0.0, 0.4))
    goal = Pose.from_translation((0.3, 0.0, 0.4))
    cfg = PlanConfig(rng_seed=3)
    path = plan_rrt_connect(world, start, goal, cfg)
    assert path[0].almost_equal(start) and path[-1].almost_equal(goal)
    assert len(path) <= cfg.max_iterations
    for a, b in zip(path, path[1:]):
        assert edge_free(world, a, b, cfg.step_size / 8.0)


def test_plan_determinism():
    world = gap_world(-0.1, 0.1)
    start = Pose.from_translation((-0.3, 0.1, 0.3))
    goal = Pose.rot_z(0.6, (0.3, -0.2, 0.5))
    cfg = PlanConfig(rng_seed=11)
    a = plan_rrt_connect(world, start, goal, cfg)
    b = plan_rrt_connect(world, start, goal, cfg)
    assert len(a) == len(b)
    assert all(x.almost_equal(y, 1e-15) for x, y in zip(a, b))


def test_plan_endpoint_errors_and_bypass():
    obstacle = Box(np.array([-0.1, -0.1, 0.0]), np.array([0.1, 0.1, 0.8]))
    world = WorldModel((obstacle,), WS, HE)
    free = Pose.from_translation((-0.3, 0.0, 0.4))
    blocked = Pose.from_translation((0.0, 0.0, 0.4))
    with pytest.raises(GoalInCollision):
        plan_rrt_connect(world, free, blocked, PlanConfig(rng_seed=0))
    with pytest.raises(StartInCollision):
        plan_rrt_connect(world, blocked, free, PlanConfig(rng_seed=0))
    path = plan_rrt_connect(world, free, blocked, PlanConfig(rng_seed=0),
                            allow_collision=True)
    assert path == [free, blocked]


def test_plan_timeout():
    # Wall with no opening splits the workspace: unsolvable.
    wall = Box(np.array([-0.05, -0.5, 0.0]), np.array([0.05, 0.5, 0.8]))
    world = WorldModel((wall,), WS, HE)
    start = Pose.from_translation((-0.3, 0.0, 0.4))
    goal = Pose.from_translation((0.3, 0.0, 0.4))
    with pytest.raises(PlanningTimeout):
        plan_rrt_connect(world, start, goal,
                         PlanConfig(rng_seed=0, max_iterations=300))


def test_world_model_validation():
    outside = Box(np.array([2.0, 2.0, 2.0]), np.array([3.0, 3.0, 3.0]))
    with pytest.raises(ValueError):
        WorldModel((outside,), WS, HE)
    with pytest.raises(ValueError):
        WorldModel((), WS, np.array([0.0, 0.1, 0.1]))
    with pytest.raises(ValueError):
        Box(np.array([1.0, 0, 0]), np.array([0.0, 1, 1]))
    with pytest.raises(ValueError):
        PlanConfig(goal_bias=1.5)


def test_path_to_actions_carries_flags():
    poses = [Pose.identity(), Pose.from_translation((0.1, 0, 0))]
    actions = path_to_actions(poses, gripper_open=False, allow_collision=True)
    assert len(actions) == 2
    for action, pose in zip(actions, poses):
        assert action.pose.almost_equal(pose)
        assert not action.gripper_open and action.allow_collision
        assert action.to_vector().shape == (18,)


def test_serialize_path_is_json_of_18_scalars():
    import json
    poses = [Pose.identity(), Pose.from_translation((0.1, 0, 0))]
    data = json.loads(pl.serialize_path(poses, True, False))
    assert len(data) == 2
    assert all(len(vec) == 18 for vec in data)
    assert data[0][16] == 1.0 and data[0][17] == 0.0
    assert data[1][3] == 0.1  # row-major pose entry (0, 3)
