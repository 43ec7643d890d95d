import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import compensate_point, matvec4, project_point
from panofuse.errors import ConfigurationError, DegenerateTransformError
from panofuse.geometry import (
    CameraModel,
    LidarFrame,
    PointPixelMap,
    Transform4,
    build_point_pixel_map,
    ego_compensate,
    look_at_camera,
    pixel_map_mismatch,
    project_to_image,
    project_with_matrix,
    projection_matrix,
)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def random_transform(rng, scale=10.0):
    return Transform4.from_rt(random_rotation(rng), rng.uniform(-scale, scale, 3))


def random_camera(rng, width=320, height=240):
    k = np.array([[rng.uniform(100, 400), 0, rng.uniform(0, width)], [0, rng.uniform(100, 400), rng.uniform(0, height)], [0, 0, 1]])
    return CameraModel(k, random_transform(rng, 2.0), width, height, 0.0)


class TestTransform4:
    def test_rejects_bad_last_row(self):
        m = np.eye(4)
        m[3, 0] = 1e-12
        with pytest.raises(DegenerateTransformError):
            Transform4(m)

    def test_rejects_non_orthonormal(self):
        m = np.eye(4)
        m[0, 0] = 1.001
        with pytest.raises(DegenerateTransformError):
            Transform4(m)

    def test_rejects_wrong_shape_and_nan(self):
        with pytest.raises(DegenerateTransformError):
            Transform4(np.eye(3))
        m = np.eye(4)
        m[0, 3] = np.nan
        with pytest.raises(DegenerateTransformError):
            Transform4(m)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_double_inverse(self, seed):
        t = random_transform(np.random.default_rng(seed), 100.0)
        assert np.abs(t.inverse().inverse().m - t.m).max() <= 1e-9
        assert np.abs((t @ t.inverse()).m - np.eye(4)).max() <= 1e-9

    def test_apply_matches_matvec(self):
        rng = np.random.default_rng(1)
        t = random_transform(rng)
        pts = rng.normal(size=(20, 3))
        expect = np.array([matvec4(t.m, p) for p in pts])
        assert np.allclose(t.apply(pts), expect, atol=1e-12)


class TestEgoCompensate:
    def test_same_pose_is_identity(self):
        pose = Transform4.from_yaw(0.3, (5.0, -2.0, 0.1))
        pts = np.random.default_rng(0).normal(size=(50, 3)) * 20
        frame = LidarFrame(pts, np.zeros((50, 1)), 1.0, pose, Transform4.identity())
        assert np.array_equal(ego_compensate(frame, pose), pts)

    def test_pure_translation(self):
        frame = LidarFrame(np.zeros((1, 3)), np.zeros((1, 1)), 0.0, Transform4.translation(1, 0, 0))
        assert np.array_equal(ego_compensate(frame, Transform4.identity()), [[1.0, 0.0, 0.0]])

    def test_disabled_skips_motion(self):
        w = Transform4.from_yaw(1.0, (3, 4, 0))
        frame = LidarFrame(np.ones((3, 3)), np.zeros((3, 1)), 0.0, Transform4.translation(2, 0, 0), w)
        out = ego_compensate(frame, Transform4.identity(), compensate=False)
        assert np.array_equal(out, w.apply(np.ones((3, 3))))

    def test_random_poses_match_sequential_oracle(self):
        rng = np.random.default_rng(42)
        w, p1, p2 = (random_transform(rng) for _ in range(3))
        pts = rng.uniform(-30, 30, (10, 3))
        frame = LidarFrame(pts, np.zeros((10, 2)), 0.0, p1, w)
        expect = np.array([compensate_point(p, w.m, p1.m, p2.m) for p in pts])
        assert np.allclose(ego_compensate(frame, p2), expect, atol=1e-9)


class TestProjection:
    def test_identity_camera(self):
        cam = CameraModel(np.eye(3), Transform4.identity(), 4, 4, 0.0)
        proj = project_to_image(np.array([[0.0, 0.0, 1.0]]), cam)
        assert proj.point_index.tolist() == [0]
        assert np.array_equal(proj.pixels, [[0.0, 0.0]])
        assert proj.depth.tolist() == [1.0]

    def test_behind_camera_is_culled(self):
        cam = CameraModel(np.eye(3), Transform4.identity(), 4, 4, 0.0)
        proj = project_to_image(np.array([[0.0, 0.0, -2.0]]), cam)
        assert len(proj.point_index) == 0 and proj.n_culled == 1

    def test_bounds_are_half_open(self):
        cam = CameraModel(np.eye(3), Transform4.identity(), 4, 4, 0.0)
        pts = np.array([[3.999, 0.0, 1.0], [4.0, 0.0, 1.0], [0.0, 4.0, 1.0], [-1e-9, 0.0, 1.0]])
        assert project_to_image(pts, cam).point_index.tolist() == [0]

    def test_random_cloud_matches_oracle(self):
        rng = np.random.default_rng(7)
        cam = random_camera(rng)
        pts = rng.uniform(-10, 10, (64, 3))
        proj = project_to_image(pts, cam)
        expect = {}
        for i, p in enumerate(pts):
            hit = project_point(p, cam.intrinsic, cam.extrinsic.m, cam.width, cam.height)
            if hit is not None:
                expect[i] = hit
        assert proj.point_index.tolist() == sorted(expect)
        for i, px, d in zip(proj.point_index, proj.pixels, proj.depth):
            assert np.allclose(px, expect[i][0], atol=1e-9)
            assert abs(d - expect[i][1]) < 1e-9

    def test_cull_soundness(self):
        rng = np.random.default_rng(9)
        cam = random_camera(rng)
        pts = rng.uniform(-10, 10, (500, 3))
        proj = project_to_image(pts, cam)
        kept = set(proj.point_index.tolist())
        assert np.all(proj.depth > 0)
        assert np.all((proj.pixels >= 0) & (proj.pixels < [cam.width, cam.height]))
        for i in set(range(500)) - kept:
            assert project_point(pts[i], cam.intrinsic, cam.extrinsic.m, cam.width, cam.height) is None

    def test_composed_matrix_agrees_with_stages(self):
        rng = np.random.default_rng(3)
        w, p1, p2 = (random_transform(rng) for _ in range(3))
        cam = random_camera(rng)
        pts = rng.uniform(-30, 30, (200, 3))
        frame = LidarFrame(pts, np.zeros((200, 1)), 0.0, p1, w)
        pix, depth = project_with_matrix(projection_matrix(frame, cam, p2), pts)
        seq = np.array([matvec4(cam.extrinsic.m, compensate_point(p, w.m, p1.m, p2.m)) for p in pts])
        hom = seq @ cam.intrinsic.T
        assert np.abs(pix - hom[:, :2] / hom[:, 2:]).max() < 1e-6
        assert np.allclose(depth, seq[:, 2], atol=1e-9)


class TestPointPixelMap:
    def test_empty_frame(self):
        frame = LidarFrame(np.zeros((0, 3)), np.zeros((0, 4)))
        pm = build_point_pixel_map(frame, [look_at_camera(0, 64, 48, 40)], [Transform4.identity()])
        assert len(pm) == 0

    def test_length_mismatch(self):
        frame = LidarFrame(np.zeros((1, 3)), np.zeros((1, 1)))
        with pytest.raises(ConfigurationError):
            build_point_pixel_map(frame, [look_at_camera(0, 64, 48, 40)], [])
        with pytest.raises(ConfigurationError):
            build_point_pixel_map(frame, [], [])

    def test_single_camera_reduces_to_projection(self):
        rng = np.random.default_rng(5)
        cam = look_at_camera(0.0, 64, 48, 40.0, (0, 0, 0))
        pts = rng.uniform(-20, 20, (300, 3))
        frame = LidarFrame(pts, np.zeros((300, 1)))
        pm = build_point_pixel_map(frame, [cam], [Transform4.identity()])
        proj = project_to_image(pts, cam)
        assert np.array_equal(pm.point_index, proj.point_index)
        assert np.array_equal(pm.pixels, proj.pixels)

    def test_opposite_cameras_split_symmetric_pair(self):
        front = look_at_camera(0.0, 64, 48, 40.0, (0, 0, 0))
        back = look_at_camera(np.pi, 64, 48, 40.0, (0, 0, 0))
        pts = np.array([[10.0, 0.5, 0.2], [-10.0, -0.5, 0.2]])
        frame = LidarFrame(pts, np.zeros((2, 1)))
        pm = build_point_pixel_map(frame, [front, back], [Transform4.identity()] * 2)
        # oracle: enumerate every (point, camera) pair
        expect = sorted(
            (i, k)
            for i, p in enumerate(pts)
            for k, cam in enumerate((front, back))
            if project_point(p, cam.intrinsic, cam.extrinsic.m, 64, 48) is not None
        )
        assert expect == [(0, 0), (1, 1)]
        assert sorted(zip(pm.point_index.tolist(), pm.camera_index.tolist())) == expect

    def test_pairs_are_unique(self):
        rng = np.random.default_rng(11)
        rig = [look_at_camera(a, 64, 48, 20.0, (0, 0, 0)) for a in np.linspace(0, 2 * np.pi, 6, endpoint=False)]
        frame = LidarFrame(rng.uniform(-20, 20, (400, 3)), np.zeros((400, 1)))
        pm = build_point_pixel_map(frame, rig, [Transform4.identity()] * 6)
        pairs = set(zip(pm.point_index.tolist(), pm.camera_index.tolist()))
        assert len(pairs) == len(pm)

    def test_mismatch_counts(self):
        a = PointPixelMap(np.array([0, 1]), np.array([0, 0]), np.array([[1.0, 1.0], [2.0, 2.0]]), np.ones(2))
        b = PointPixelMap(np.array([0, 2]), np.array([0, 0]), np.array([[1.4, 1.0], [2.0, 2.0]]), np.ones(2))
        assert pixel_map_mismatch(a, b) == 2
        assert pixel_map_mismatch(a, b, tol=0.3) == 3
