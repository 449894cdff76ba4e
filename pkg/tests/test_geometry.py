import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from depthfield.geometry import (Camera, PosedFrame, compute_ray, compute_rays, euler_to_rotation,
                                 frame_pointcloud, invert_pose, is_rotation, lookat_pose,
                                 make_intrinsics, make_pose, pixel_grid, project, relative_pose,
                                 rotation_to_euler, scale_intrinsics, unproject)
from helpers import random_camera, random_pose

N = 1000
IDENTITY = Camera(np.eye(3), np.eye(4))


def test_ray_examples():
    o, r = compute_ray(IDENTITY, 2, 3)
    np.testing.assert_array_equal(o, [0, 0, 0])
    np.testing.assert_array_equal(r, [2, 3, 1])
    cam = Camera(np.eye(3), make_pose(np.eye(3), [1, 0, 0]))
    o, r = compute_ray(cam, 2, 3)
    np.testing.assert_array_equal(o, [-1, 0, 0])
    np.testing.assert_array_equal(r, [3, 3, 1])


def test_relative_rays_drop_translation_term():
    cam = Camera(np.eye(3), make_pose(np.eye(3), [1, 0, 0]))
    _, r = compute_ray(cam, 2, 3, global_rays=False)
    np.testing.assert_array_equal(r, [2, 3, 1])


def test_rays_reduce_to_classical_at_identity_pose():
    rng = np.random.default_rng(0)
    for _ in range(N):
        K = random_camera(rng).K
        uv = rng.uniform(0, 64, size=(1, 2))
        o, r = compute_rays(Camera(K, np.eye(4)), uv)
        np.testing.assert_array_equal(o, 0.0)
        classical = np.linalg.solve(K, np.array([uv[0, 0], uv[0, 1], 1.0]))
        np.testing.assert_allclose(r[0], classical, rtol=0, atol=1e-12)


def test_rays_explicit_inverse_agrees_with_solve():
    rng = np.random.default_rng(1)
    for _ in range(N):
        cam = random_camera(rng)
        uv = rng.uniform(-10, 70, size=(4, 2))
        o, r = compute_rays(cam, uv)
        homog = np.concatenate([uv, np.ones((4, 1))], axis=1)
        ref = np.linalg.solve(cam.K @ cam.R, homog.T).T + cam.t
        np.testing.assert_allclose(o[0], -cam.R @ cam.t, atol=1e-12)
        assert np.abs(r - ref).max() < 1e-10


def test_rays_normalize_flag():
    cam = random_camera(np.random.default_rng(2))
    _, r = compute_rays(cam, [[3.0, 4.0]], normalize=True)
    assert abs(np.linalg.norm(r) - 1) < 1e-12


def test_unproject_examples():
    np.testing.assert_array_equal(unproject(IDENTITY, [[0, 0]], [5.0]), [[0, 0, 5]])
    t = np.array([0.5, -1.0, 2.0])
    cam = Camera(np.eye(3), make_pose(np.eye(3), t))
    np.testing.assert_array_equal(unproject(cam, [[1, 2]], [3.0])[0], np.array([3.0, 6.0, 3.0]) - t)
    with pytest.raises(ValueError):
        unproject(IDENTITY, [[0, 0]], [0.0])


def test_project_examples():
    uv, z, front = project(IDENTITY, [[0, 0, 5], [0, 0, -1]])
    np.testing.assert_array_equal(uv[0], [0, 0])
    assert z[0] == 5 and front[0]
    assert not front[1] and np.all(np.isnan(uv[1]))


def test_project_unproject_roundtrip():
    rng = np.random.default_rng(3)
    for _ in range(N):
        cam = random_camera(rng)
        uv = rng.uniform(0, 64, size=(1, 2))
        d = rng.uniform(0.1, 20, size=1)
        uv2, z, front = project(cam, unproject(cam, uv, d))
        assert front[0]
        assert np.abs(uv2 - uv).max() < 1e-8
        assert abs(z[0] - d[0]) < 1e-10


def test_pose_inverse_and_rotations():
    rng = np.random.default_rng(4)
    for _ in range(N):
        T = random_pose(rng)
        assert np.abs(invert_pose(invert_pose(T)) - T).max() < 1e-12
        assert is_rotation(T[:3, :3])
        np.testing.assert_allclose(relative_pose(T, T), np.eye(4), atol=1e-12)


def test_relative_pose_invariant_to_left_composition():
    rng = np.random.default_rng(5)
    for _ in range(N):
        Ti, Tk, G = random_pose(rng), random_pose(rng), random_pose(rng)
        assert np.abs(relative_pose(G @ Ti, G @ Tk) - relative_pose(Ti, Tk)).max() < 1e-9


def test_euler_examples_and_convention():
    np.testing.assert_array_equal(euler_to_rotation(0, 0, 0), np.eye(3))
    rng = np.random.default_rng(6)
    for _ in range(N):
        angles = rng.uniform(-1.4, 1.4, size=3)
        R = euler_to_rotation(*angles)
        ref = Rotation.from_euler("XYZ", angles).as_matrix()
        assert np.abs(R - ref).max() < 1e-12
        assert is_rotation(R)
        assert np.abs(np.array(rotation_to_euler(R)) - angles).max() < 1e-9


def test_lookat_examples():
    T = lookat_pose([0, 0, 0], [0, 0, 1], (0, -1, 0))
    np.testing.assert_allclose(T, np.eye(4), atol=1e-15)
    with pytest.raises(ValueError):
        lookat_pose([1, 2, 3], [1, 2, 3])


def test_lookat_properties():
    rng = np.random.default_rng(7)
    for _ in range(N):
        cam = random_camera(rng)
        pos, target = rng.normal(size=3) * 3, rng.normal(size=3) * 3
        T = lookat_pose(pos, target)
        R = T[:3, :3]
        assert np.abs(R.T @ R - np.eye(3)).max() < 1e-12
        assert abs(np.linalg.det(R) - 1) < 1e-12
        np.testing.assert_allclose(Camera(cam.K, T).center, pos, atol=1e-12)
        uv, z, front = project(Camera(cam.K, T), target[None])
        assert front[0]
        assert np.abs(uv[0] - cam.K[:2, 2]).max() < 1e-8


def test_lookat_parallel_to_up_falls_back():
    T = lookat_pose([0, 0, 0], [0, -5, 0], (0, -1, 0))
    assert is_rotation(T[:3, :3])
    np.testing.assert_allclose(T[2, :3], [0, -1, 0], atol=1e-15)


def test_intrinsics_scale_with_resolution():
    K = make_intrinsics(80, 70, 31.5, 23.5)
    K4 = scale_intrinsics(K, 0.25)
    np.testing.assert_allclose(K4, [[20, 0, 7.875], [0, 17.5, 5.875], [0, 0, 1]])


def test_camera_center_and_validation():
    rng = np.random.default_rng(8)
    cam = random_camera(rng)
    uv, z, front = project(cam, cam.center[None] + cam.R[2] * 2.0)
    assert abs(z[0] - 2.0) < 1e-12
    with pytest.raises(ValueError):
        Camera(np.diag([-1.0, 1.0, 1.0]), np.eye(4))


def test_pixel_grid_is_row_major_uv():
    g = pixel_grid(2, 3)
    np.testing.assert_array_equal(g, [[0, 0], [1, 0], [2, 0], [0, 1], [1, 1], [2, 1]])


def test_frame_pointcloud_skips_invalid_depth():
    depth = np.array([[1.0, 0.0], [2.0, 3.0]])
    frame = PosedFrame(np.zeros((2, 2, 3)), depth, Camera(np.eye(3), np.eye(4)))
    pc = frame_pointcloud(frame, source=4)
    assert len(pc) == 3
    np.testing.assert_array_equal(pc.source, 4)
    np.testing.assert_array_equal(pc.xyz[:, 2], [1.0, 2.0, 3.0])
