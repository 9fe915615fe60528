import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from galimo.geometry import (
    CameraIntrinsics,
    DegenerateMotion,
    GeometryError,
    NonPositiveDepth,
    Pose,
    backproject,
    compose,
    euler_to_matrix,
    fundamental_from_motion,
    inverse,
    matrix_to_euler,
    project,
    rot_x,
    rot_y,
    rot_z,
    so3_exp,
    so3_log,
    transform_point,
)

angles = st.floats(-math.pi, math.pi, allow_nan=False)
coords = st.floats(-50, 50, allow_nan=False)
poses = st.builds(Pose.from_xyzabg, coords, coords, coords, angles, st.floats(-1.5, 1.5), angles)


def random_pose(rng, trans=5.0):
    return Pose(so3_exp(rng.normal(size=3)), rng.uniform(-trans, trans, 3))


def test_compose_identity():
    assert compose(Pose.identity(), Pose.identity()).is_close(Pose.identity(), 0.0)


def test_compose_translations():
    p = compose(Pose.translation(1, 0, 0), Pose.translation(0, 2, 0))
    assert p.is_close(Pose.translation(1, 2, 0), 1e-15)


def test_compose_matches_matrix_product(rng):
    a, b = random_pose(rng), random_pose(rng)
    assert np.allclose((a @ b).matrix(), a.matrix() @ b.matrix(), atol=1e-12, rtol=0)


def test_project_optical_axis():
    k = CameraIntrinsics(100, 100, 0, 0, 10, 10)
    assert np.array_equal(project(k, [0, 0, 10]), [0.0, 0.0])


def test_project_hand_arithmetic(toy_k):
    assert np.allclose(project(toy_k, [1, 1, 10]), [60.0, 60.0], atol=1e-12)


@pytest.mark.parametrize("z", [-1.0, 0.0])
def test_project_behind_camera(toy_k, z):
    with pytest.raises(NonPositiveDepth):
        project(toy_k, [0, 0, z])


def test_transform_point_examples():
    assert np.array_equal(transform_point(Pose.identity(), [1, 2, 3]), [1, 2, 3])
    assert np.array_equal(transform_point(Pose.translation(0, 0, 5), [0, 0, 0]), [0, 0, 5])
    rz = Pose.from_xyzabg(gamma=math.pi / 2)
    assert np.allclose(transform_point(rz, [1, 0, 0]), [0, 1, 0], atol=1e-12)


def test_euler_convention_is_fixed_axis_xyz():
    a, b, g = 0.1, -0.2, 0.3
    assert np.allclose(euler_to_matrix(a, b, g), rot_z(g) @ rot_y(b) @ rot_x(a), atol=1e-15)
    assert np.allclose(matrix_to_euler(euler_to_matrix(a, b, g)), (a, b, g), atol=1e-12)


def test_intrinsics_validation():
    with pytest.raises(GeometryError):
        CameraIntrinsics(0, 100, 50, 50, 100, 100)
    with pytest.raises(GeometryError):
        CameraIntrinsics(100, 100, 100, 50, 100, 100)


def test_fundamental_pure_translation_is_skew():
    k = CameraIntrinsics(1.0, 1.0, 0.0, 0.0, 1, 1)
    F = fundamental_from_motion(k, Pose.translation(1, 0, 0))
    assert np.allclose(F, -F.T, atol=1e-15)
    expected = np.array([[0, 0, 0], [0, 0, -1], [0, 1, 0]], dtype=float)
    assert np.allclose(F / np.linalg.norm(F), expected / np.linalg.norm(expected), atol=1e-12)


def test_fundamental_degenerate_motion(kitti_k):
    with pytest.raises(DegenerateMotion):
        fundamental_from_motion(kitti_k, Pose.from_xyzabg(gamma=0.1))


def test_fundamental_rank_two(kitti_k, rng):
    F = fundamental_from_motion(kitti_k, random_pose(rng))
    s = np.linalg.svd(F, compute_uv=False)
    assert s[2] / s[0] < 1e-8


def test_epipolar_identity_many_poses(kitti_k, rng):
    worst = 0.0
    for _ in range(100):
        motion = Pose(so3_exp(rng.normal(scale=0.1, size=3)), rng.normal(size=3))
        F = fundamental_from_motion(kitti_k, motion)
        F = F / np.linalg.norm(F)
        X = np.column_stack((rng.uniform(-5, 5, 100), rng.uniform(-5, 5, 100), rng.uniform(5, 40, 100)))
        Y = motion.apply(X)
        ok = Y[:, 2] > 0.1
        X, Y = X[ok], Y[ok]
        K = kitti_k.matrix()
        p1 = X @ K.T
        p1 /= p1[:, 2:]
        p2 = Y @ K.T
        p2 /= p2[:, 2:]
        worst = max(worst, float(np.max(np.abs(np.einsum("ij,jk,ik->i", p2, F, p1)))))
    assert worst < 1e-8


@settings(max_examples=60, deadline=None)
@given(poses)
def test_inverse_is_two_sided(p):
    assert (p @ inverse(p)).is_close(Pose.identity(), 1e-9)
    assert (inverse(p) @ p).is_close(Pose.identity(), 1e-9)


@settings(max_examples=60, deadline=None)
@given(poses, poses, poses)
def test_compose_associative(a, b, c):
    assert ((a @ b) @ c).is_close(a @ (b @ c), 1e-10)


@settings(max_examples=60, deadline=None)
@given(poses)
def test_rotation_block_is_so3(p):
    R = p.matrix()[:3, :3]
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-9)
    assert abs(np.linalg.det(R) - 1.0) < 1e-9


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1240), st.floats(0, 375), st.floats(0.1, 200))
def test_project_backproject_roundtrip(u, v, d):
    k = CameraIntrinsics.kitti()
    assert np.allclose(project(k, backproject(k, [u, v], d)), [u, v], atol=1e-9, rtol=0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-3.0, 3.0), min_size=3, max_size=3))
def test_so3_log_inverts_exp(w):
    w = np.array(w)
    if np.linalg.norm(w) >= math.pi - 1e-6:
        w = w / np.linalg.norm(w) * 3.0
    assert np.allclose(so3_log(so3_exp(w)), w, atol=1e-9)


def test_left_perturb_first_order(rng):
    p = random_pose(rng)
    X = rng.normal(size=3)
    xi = 1e-7 * rng.normal(size=6)
    moved = p.left_perturb(xi).apply(X)
    Y = p.apply(X)
    assert np.allclose(moved - Y, xi[:3] + np.cross(xi[3:], Y), atol=1e-12)


def test_pose_is_immutable():
    p = Pose.translation(1, 2, 3)
    with pytest.raises(ValueError):
        p.t[0] = 5.0
