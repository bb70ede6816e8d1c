import math

import numpy as np
import pytest

from oneshot_manip import se3
from oneshot_manip.se3 import (Action, AllZeroWeights, DegenerateInput, Pose,
                               WeightedPointSet, alignment_residual,
                               geodesic_angle, solve_weighted_procrustes)

from conftest import random_pose

# Unit-cube corners used throughout: non-coplanar, rank 3.
CUBE4 = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])


def test_compose_identity():
    identity = Pose.identity()
    assert identity.compose(identity).almost_equal(identity, 1e-15)


def test_compose_inverse_roundtrip(rng):
    for _ in range(20):
        pose = random_pose(rng)
        assert pose.compose(pose.inverse()).almost_equal(Pose.identity(), 1e-12)
        assert pose.inverse().compose(pose).almost_equal(Pose.identity(), 1e-12)


def test_compose_rot_z_quarter_turns():
    # Hand-multiplied: Rz(90) @ Rz(90) = Rz(180) = diag(-1, -1, 1).
    quarter = Pose.rot_z(math.pi / 2)
    half = quarter.compose(quarter)
    expected = np.array([[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]])
    assert np.abs(half.rotation - expected).max() < 1e-12


def test_compose_applies_right_argument_first(rng):
    a, b = random_pose(rng), random_pose(rng)
    p = rng.uniform(-1, 1, 3)
    assert np.allclose(a.compose(b).apply(p), a.apply(b.apply(p)), atol=1e-12)


def test_inverse_identity_and_translation():
    assert Pose.identity().inverse().almost_equal(Pose.identity(), 1e-15)
    inv = Pose.from_translation((1.0, 2.0, 3.0)).inverse()
    assert np.allclose(inv.translation, (-1.0, -2.0, -3.0))
    assert np.allclose(inv.rotation, np.eye(3))


def test_inverse_of_rotate_then_translate():
    # T = rotate 90 deg about z, then shift (1,0,0). Hand computation:
    # T^-1(2,0,0) = Rz(-90) @ ((2,0,0) - (1,0,0)) = (0,-1,0).
    pose = Pose.rot_z(math.pi / 2, (1.0, 0.0, 0.0))
    assert np.allclose(pose.inverse().apply((2.0, 0.0, 0.0)), (0.0, -1.0, 0.0),
                       atol=1e-12)
    assert np.allclose(pose.inverse().apply(pose.apply((0.3, -0.7, 0.2))),
                       (0.3, -0.7, 0.2), atol=1e-12)


def test_pose_validation_rejects_bad_rotation():
    with pytest.raises(ValueError):
        Pose(np.eye(3) * 1.001, np.zeros(3))
    reflection = np.diag([1.0, 1.0, -1.0])
    with pytest.raises(ValueError):
        Pose(reflection, np.zeros(3))


def test_matrix_serialization_roundtrip(rng):
    pose = random_pose(rng)
    again = Pose.from_matrix(pose.matrix)
    assert again.almost_equal(pose, 1e-15)
    assert np.array_equal(pose.matrix[3], (0.0, 0.0, 0.0, 1.0))


def test_action_vector_layout():
    pose = Pose.rot_z(0.5, (0.1, 0.2, 0.3))
    vec = Action(pose, gripper_open=True, allow_collision=False).to_vector()
    assert vec.shape == (18,)
    assert np.array_equal(vec[:16], pose.matrix.reshape(16))
    assert vec[16] == 1.0 and vec[17] == 0.0
    back = Action.from_vector(vec)
    assert back.pose.almost_equal(pose) and back.gripper_open and not back.allow_collision


def test_jacobi_svd_matches_numpy(rng):
    for _ in range(200):
        a = rng.normal(size=(3, 3))
        u, s, v = se3._jacobi_svd3(a)
        assert np.allclose(u @ np.diag(s) @ v.T, a, atol=1e-10)
        assert np.allclose(u.T @ u, np.eye(3), atol=1e-10)
        assert np.allclose(v.T @ v, np.eye(3), atol=1e-10)
        assert np.allclose(np.sort(s)[::-1], np.linalg.svd(a, compute_uv=False),
                           atol=1e-10)


def test_procrustes_identity_on_cube_corners():
    src = WeightedPointSet.uniform(CUBE4)
    got = solve_weighted_procrustes(src, src)
    assert got.almost_equal(Pose.identity(), 1e-9)


def test_procrustes_pure_translation():
    src = WeightedPointSet.uniform(CUBE4)
    dst = WeightedPointSet.uniform(CUBE4 + np.array([2.0, 0.0, 0.0]))
    got = solve_weighted_procrustes(src, dst)
    assert np.allclose(got.translation, (2.0, 0.0, 0.0), atol=1e-9)
    assert np.allclose(got.rotation, np.eye(3), atol=1e-9)


def test_procrustes_pure_rotation():
    true = Pose.rot_z(math.pi / 2)
    got = solve_weighted_procrustes(WeightedPointSet.uniform(CUBE4),
                                    WeightedPointSet.uniform(true.apply(CUBE4)))
    assert geodesic_angle(got.rotation, true.rotation) < 1e-9
    assert np.abs(got.translation).max() < 1e-9


def test_procrustes_recovery_random(rng):
    for _ in range(100):
        n = int(rng.integers(4, 30))
        pts = rng.uniform(-0.5, 0.5, (n, 3))
        true = random_pose(rng)
        got = solve_weighted_procrustes(
            WeightedPointSet.uniform(pts),
            WeightedPointSet.uniform(true.apply(pts)))
        assert geodesic_angle(got.rotation, true.rotation) < 1e-6
        assert np.abs(got.translation - true.translation).max() < 1e-9


def test_procrustes_optimality_against_perturbations(rng):
    for _ in range(10):
        n = int(rng.integers(4, 20))
        src_pts = rng.uniform(-0.5, 0.5, (n, 3))
        dst_pts = random_pose(rng).apply(src_pts) + rng.normal(0, 0.01, (n, 3))
        w = rng.uniform(0.1, 1.0, n)
        src = WeightedPointSet(src_pts, w)
        dst = WeightedPointSet.uniform(dst_pts)
        best = solve_weighted_procrustes(src, dst)
        base = alignment_residual(best, src, dst)
        for _ in range(100):
            nudge = Pose.from_axis_angle(rng.normal(size=3), 1e-3,
                                         rng.normal(size=3) * 1e-3)
            assert alignment_residual(nudge.compose(best), src, dst) >= base - 1e-12


def test_procrustes_never_reflects(rng):
    mirrored = CUBE4.copy()
    mirrored[:, 0] *= -1.0
    got = solve_weighted_procrustes(WeightedPointSet.uniform(CUBE4),
                                    WeightedPointSet.uniform(mirrored))
    assert np.linalg.det(got.rotation) > 0.999999
    for _ in range(20):
        pts = rng.uniform(-1, 1, (6, 3))
        flipped = pts @ np.diag([1.0, -1.0, 1.0])
        got = solve_weighted_procrustes(WeightedPointSet.uniform(pts),
                                        WeightedPointSet.uniform(flipped))
        assert np.linalg.det(got.rotation) > 0.999999


def test_procrustes_zero_weight_point_is_ignored(rng):
    pts = rng.uniform(-1, 1, (6, 3))
    true = random_pose(rng)
    weights = np.array([1.0, 1, 1, 1, 1, 0.0])
    moved = pts.copy()
    moved[5] += 37.0
    a = solve_weighted_procrustes(WeightedPointSet(pts, weights),
                                  WeightedPointSet.uniform(true.apply(pts)))
    b = solve_weighted_procrustes(WeightedPointSet(moved, weights),
                                  WeightedPointSet.uniform(true.apply(pts)))
    assert np.abs(a.matrix - b.matrix).max() < 1e-12


def test_procrustes_coplanar_input_is_fine():
    square = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]])
    true = Pose.rot_z(0.7, (0.2, -0.1, 0.3))
    got = solve_weighted_procrustes(WeightedPointSet.uniform(square),
                                    WeightedPointSet.uniform(true.apply(square)))
    assert geodesic_angle(got.rotation, true.rotation) < 1e-9


def test_procrustes_errors():
    two = WeightedPointSet.uniform(np.array([[0.0, 0, 0], [1, 0, 0]]))
    with pytest.raises(DegenerateInput):
        solve_weighted_procrustes(two, two)
    line = WeightedPointSet.uniform(np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0]]))
    with pytest.raises(DegenerateInput):
        solve_weighted_procrustes(line, line)
    pts = WeightedPointSet(CUBE4, np.zeros(4))
    with pytest.raises(AllZeroWeights):
        solve_weighted_procrustes(pts, pts)
    with pytest.raises(ValueError):
        WeightedPointSet(CUBE4, np.array([1.0, 1, 1, -0.5]))


def test_interpolate_pose_endpoints_and_midpoint():
    a = Pose.identity()
    b = Pose.rot_z(math.pi / 2, (1.0, 0.0, 0.0))
    assert se3.interpolate_pose(a, b, 0.0).almost_equal(a, 1e-12)
    assert se3.interpolate_pose(a, b, 1.0).almost_equal(b, 1e-12)
    mid = se3.interpolate_pose(a, b, 0.5)
    assert np.allclose(mid.translation, (0.5, 0, 0), atol=1e-12)
    assert abs(geodesic_angle(mid.rotation, a.rotation) - math.pi / 4) < 1e-9


def test_quaternion_roundtrip(rng):
    for _ in range(100):
        pose = random_pose(rng)
        q = se3.quat_from_rotation(pose.rotation)
        assert abs(np.linalg.norm(q) - 1.0) < 1e-12
        assert np.allclose(se3.rotation_from_quat(q), pose.rotation, atol=1e-9)
