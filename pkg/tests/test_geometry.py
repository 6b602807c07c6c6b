import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualsim.geometry import (CameraIntrinsics, Pose, Ray, camera_rays, compose, interpolate_pose,
                              inverse, look_at, matrix_to_quat, orbit_poses, pixel_ray, project,
                              quat_from_axis_angle, quat_slerp, quat_to_matrix, ray_box_intersect)
from helpers import poses, vec3

K640 = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)


def assert_pose_close(a, b, tol=1e-9):
    np.testing.assert_allclose(a.matrix(), b.matrix(), atol=tol)


# -------------------------------------------------------------- Pose


def test_quaternion_normalised_on_construction():
    p = Pose((2.0, 0.0, 0.0, 0.0), (1, 2, 3))
    assert abs(np.linalg.norm(p.rotation) - 1.0) < 1e-9
    assert p.rotation == (1.0, 0.0, 0.0, 0.0)


def test_pose_rejects_bad_input():
    with pytest.raises(ValueError):
        Pose((0.0, 0.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        Pose(translation=(np.nan, 0, 0))


def test_compose_identity_left():
    P = Pose(tuple(quat_from_axis_angle((1, 2, 3), 0.7)), (0.3, -1, 2))
    assert_pose_close(compose(Pose(), P), P)


def test_compose_with_inverse_is_identity():
    P = Pose(tuple(quat_from_axis_angle((1, -2, 0.5), 2.1)), (4, 5, -6))
    assert_pose_close(compose(P, inverse(P)), Pose())


def test_two_quarter_turns_make_half_turn():
    q90 = Pose(tuple(quat_from_axis_angle((0, 0, 1), np.pi / 2)))
    half = compose(q90, q90)
    np.testing.assert_allclose(half.apply((1.0, 0.0, 0.0)), (-1.0, 0.0, 0.0), atol=1e-12)
    assert_pose_close(half, Pose(tuple(quat_from_axis_angle((0, 0, 1), np.pi))))


@settings(max_examples=60, deadline=None)
@given(poses(), poses(), vec3)
def test_compose_applies_right_then_left(a, b, p):
    np.testing.assert_allclose(compose(a, b).apply(p), a.apply(b.apply(p)), atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(poses())
def test_compose_inverse_property(P):
    assert_pose_close(compose(P, inverse(P)), Pose())
    assert_pose_close(compose(inverse(P), P), Pose())


@settings(max_examples=60, deadline=None)
@given(poses(), poses(), poses())
def test_compose_associative(a, b, c):
    assert_pose_close(compose(compose(a, b), c), compose(a, compose(b, c)))


@settings(max_examples=40, deadline=None)
@given(poses())
def test_matrix_quat_roundtrip(P):
    R = quat_to_matrix(P.rotation)
    np.testing.assert_allclose(quat_to_matrix(matrix_to_quat(R)), R, atol=1e-12)
    assert_pose_close(Pose.from_matrix(P.matrix()), P)


def test_slerp_endpoints_exact_and_midpoint():
    a = tuple(quat_from_axis_angle((0, 0, 1), 0.0))
    b = tuple(quat_from_axis_angle((0, 0, 1), 1.0))
    assert np.array_equal(quat_slerp(a, b, 0.0), np.asarray(a))
    assert np.array_equal(quat_slerp(a, b, 1.0), np.asarray(b))
    np.testing.assert_allclose(quat_slerp(a, b, 0.5), quat_from_axis_angle((0, 0, 1), 0.5), atol=1e-12)


def test_interpolate_pose_linear_translation():
    a = Pose(translation=(0, 0, 0))
    b = Pose.from_yaw(np.pi / 2, (2, 4, 0))
    m = interpolate_pose(a, b, 0.25)
    np.testing.assert_allclose(m.t, (0.5, 1.0, 0.0))
    assert abs(m.yaw() - np.pi / 8) < 1e-12


# -------------------------------------------------------------- intrinsics / rays


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(0.0, 1.0, 0, 0, 4, 4)
    with pytest.raises(ValueError):
        CameraIntrinsics(1.0, 1.0, 0, 0, 0, 4)


def test_ray_invariants():
    r = Ray((0, 0, 0), (0, 3, 4), 0.0, 2.0)
    assert abs(np.linalg.norm(r.direction) - 1.0) < 1e-12
    with pytest.raises(ValueError):
        Ray((0, 0, 0), (1, 0, 0), 2.0, 1.0)
    with pytest.raises(ValueError):
        Ray((0, 0, 0), (0, 0, 0))


# -------------------------------------------------------------- projection


def test_project_on_axis():
    assert project((0.0, 0.0, 2.0), K640)[:3] == (320.0, 240.0, 2.0)


def test_project_off_axis():
    u, v, z, ok = project((1.0, 0.0, 2.0), K640)
    assert (u, v, z, ok) == (570.0, 240.0, 2.0, True)


def test_project_behind_camera_invalid():
    u, v, z, ok = project((0.0, 0.0, -1.0), K640)
    assert not ok and np.isnan(u) and np.isnan(v)
    assert not project((1.0, 1.0, 0.0), K640)[3]


def test_pixel_ray_principal_point_forward():
    K = CameraIntrinsics(100.0, 100.0, 10.5, 7.5, 21, 15)
    r = pixel_ray(10, 7, K, Pose())
    np.testing.assert_allclose(r.direction, (0.0, 0.0, 1.0), atol=1e-15)


def test_pixel_ray_origin_is_camera_centre():
    r = pixel_ray(3, 4, K640, Pose(translation=(1, 2, 3)))
    assert r.origin == (1.0, 2.0, 3.0)


def test_pixel_ray_out_of_bounds():
    for u, v in [(-1, 0), (640, 0), (0, 480), (0, -1)]:
        with pytest.raises(IndexError):
            pixel_ray(u, v, K640, Pose())


def test_pixel_ray_project_roundtrip_identity():
    d = np.asarray(pixel_ray(17, 401, K640, Pose()).direction)
    u, v, _, ok = project(d / d[2], K640)
    assert ok and abs(u - 17.5) < 1e-6 and abs(v - 401.5) < 1e-6


@settings(max_examples=80, deadline=None)
@given(poses(), st.integers(0, 639), st.integers(0, 479), st.floats(0.1, 20.0))
def test_pixel_ray_project_roundtrip(P, u, v, t):
    r = pixel_ray(u, v, K640, P)
    x_world = np.asarray(r.origin) + t * np.asarray(r.direction)
    pu, pv, z, ok = project(P.inverse().apply(x_world), K640)
    assert ok
    assert abs(pu - (u + 0.5)) < 1e-6 and abs(pv - (v + 0.5)) < 1e-6


def test_camera_rays_match_pixel_ray():
    K = CameraIntrinsics.from_fov(5, 3, 60)
    P = Pose(tuple(quat_from_axis_angle((1, 1, 0), 0.4)), (0.1, 0.2, 0.3))
    rb = camera_rays(K, P, 0.5, 4.0)
    assert len(rb) == 15
    for v in range(3):
        for u in range(5):
            i = v * 5 + u
            assert rb.ids[i] == i
            assert np.array_equal(rb.directions[i], pixel_ray(u, v, K, P).direction)


def test_ray_box_intersect():
    t0, t1 = ray_box_intersect(np.array([[0.0, 0.0, -5.0], [3.0, 0, -5]]),
                               np.array([[0.0, 0.0, 1.0], [0.0, 0, 1]]), (-1, -1, -1), (1, 1, 1))
    np.testing.assert_allclose([t0[0], t1[0]], [4.0, 6.0])
    assert t0[1] > t1[1]


def test_look_at_points_camera_z_at_target():
    P = look_at((3, 0, 1), (0, 0, 0))
    z = P.rotate(np.array([0.0, 0.0, 1.0]))
    np.testing.assert_allclose(z, -np.array([3, 0, 1]) / np.sqrt(10), atol=1e-12)
    # image "down" points toward world -z
    assert P.rotate(np.array([0.0, 1.0, 0.0]))[2] < 0


def test_orbit_poses_all_face_origin():
    for P in orbit_poses(6, 4.0, 2.0):
        u, v, z, ok = project(P.inverse().apply((0.0, 0.0, 0.0)), K640)
        assert ok and abs(u - 320) < 1e-9 and abs(v - 240) < 1e-9
