"""Geometry oracle suite.

The brute-force oracle composes rotation matrices numerically
(Rz(yaw) @ base @ Rpitch) and backprojects with plain matrix products,
independent of the closed-form entries used by the implementation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from agrinav.geometry import (
    BehindCamera,
    CameraPose,
    Image,
    Intrinsics,
    MissingDepth,
    MissingPose,
    NonPositiveDepth,
    PixelOutOfBounds,
    PointCloud,
    backproject_pixel,
    fuse_frames,
    pixel_to_camera,
    project_point,
    render_pointcloud,
)

# ---------------------------------------------------------------------------
# Oracle: straight-line matrix-multiply construction of the camera rotation.
# Base maps camera axes at yaw=0, pitch=0: right->(0,-1,0), down->(0,0,-1),
# forward->(1,0,0). Pitch-down is an intrinsic rotation about the camera
# right axis, yaw an extrinsic rotation about world Z.
# ---------------------------------------------------------------------------

_BASE = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


def oracle_rotation(yaw: float, pitch: float) -> np.ndarray:
    c, s = math.cos(pitch), math.sin(pitch)
    r_pitch = np.array([[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]])
    cy, sy = math.cos(yaw), math.sin(yaw)
    r_yaw = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    return r_yaw @ _BASE @ r_pitch


def oracle_backproject(u, v, depth, k: Intrinsics, pose: CameraPose) -> np.ndarray:
    cam = np.array(
        [(u - k.center_x) * depth / k.focal_x, (v - k.center_y) * depth / k.focal_y, depth]
    )
    return np.asarray(pose.position) + oracle_rotation(pose.yaw, pose.pitch) @ cam


@dataclass
class FakeFrame:
    step_index: int
    image: Image
    depth: np.ndarray | None
    pose: CameraPose | None
    intrinsics: Intrinsics


def make_wall_frame(k: Intrinsics, pose: CameraPose, wall_x: float, color=(200, 40, 40)) -> FakeFrame:
    """Depth map of the vertical plane x = wall_x, computed with the oracle."""
    r = oracle_rotation(pose.yaw, pose.pitch)
    us, vs = np.meshgrid(np.arange(k.width), np.arange(k.height))
    a = (us - k.center_x) / k.focal_x
    b = (vs - k.center_y) / k.focal_y
    dir_x = r[0, 0] * a + r[0, 1] * b + r[0, 2]
    depth = (wall_x - pose.position[0]) / dir_x
    depth[dir_x <= 1e-6] = 0.0
    return FakeFrame(0, Image.filled(k.width, k.height, color), depth, pose, k)


# ---------------------------------------------------------------------------
# backproject_pixel
# ---------------------------------------------------------------------------


class TestBackproject:
    def test_principal_point_is_forward_axis(self, k64):
        # Camera at (0, 0, 0.38), yaw 0 aligns camera +Z with world +X.
        pose = CameraPose(position=(0.0, 0.0, 0.38), yaw=0.0)
        p = backproject_pixel(32.0, 32.0, 2.0, k64, pose)
        np.testing.assert_allclose(p, [2.0, 0.0, 0.38], atol=1e-12)

    def test_one_focal_length_off_center_camera_frame(self, k64):
        # u = cx + fx at depth 3: tan(45 deg) = 1, camera point (3, 0, 3).
        cam = pixel_to_camera(32.0 + 50.0, 32.0, 3.0, k64)
        assert cam == pytest.approx((3.0, 0.0, 3.0))

    def test_matches_matrix_oracle_randomized(self, k64, rng):
        for _ in range(300):
            u = rng.uniform(0, k64.width - 1e-6)
            v = rng.uniform(0, k64.height - 1e-6)
            d = rng.uniform(0.05, 80.0)
            pose = CameraPose(
                position=tuple(rng.uniform(-10, 10, size=3)),
                yaw=rng.uniform(-math.pi, math.pi),
                pitch=rng.uniform(-1.4, 1.4),
            )
            got = backproject_pixel(u, v, d, k64, pose)
            want = oracle_backproject(u, v, d, k64, pose)
            np.testing.assert_allclose(got, want, atol=1e-9)

    def test_rejects_bad_depth_and_bounds(self, k64):
        pose = CameraPose(position=(0, 0, 0), yaw=0.0)
        with pytest.raises(NonPositiveDepth):
            backproject_pixel(10, 10, 0.0, k64, pose)
        with pytest.raises(NonPositiveDepth):
            backproject_pixel(10, 10, -1.0, k64, pose)
        with pytest.raises(PixelOutOfBounds):
            backproject_pixel(-1, 10, 1.0, k64, pose)
        with pytest.raises(PixelOutOfBounds):
            backproject_pixel(10, 64, 1.0, k64, pose)


# ---------------------------------------------------------------------------
# project_point
# ---------------------------------------------------------------------------


class TestProject:
    def test_round_trip_fixed_cases(self, k64):
        pose = CameraPose(position=(1.0, -2.0, 0.5), yaw=0.7, pitch=-0.3)
        for u, v, d in [(0.0, 0.0, 0.4), (32.0, 32.0, 5.0), (63.0, 12.5, 40.0)]:
            p = backproject_pixel(u, v, d, k64, pose)
            uu, vv, dd = project_point(p, k64, pose)
            assert uu == pytest.approx(u, abs=1e-6)
            assert vv == pytest.approx(v, abs=1e-6)
            assert dd == pytest.approx(d, abs=1e-9)

    @given(
        u=st.floats(0, 63.999),
        v=st.floats(0, 63.999),
        d=st.floats(0.01, 100.0),
        yaw=st.floats(-math.pi, math.pi),
        pitch=st.floats(-1.5, 1.5),
        px=st.floats(-50, 50),
        py=st.floats(-50, 50),
        pz=st.floats(-5, 5),
    )
    def test_round_trip_property(self, u, v, d, yaw, pitch, px, py, pz):
        k = Intrinsics(50.0, 50.0, 32.0, 32.0, 64, 64)
        pose = CameraPose(position=(px, py, pz), yaw=yaw, pitch=pitch)
        uu, vv, dd = project_point(backproject_pixel(u, v, d, k, pose), k, pose)
        assert abs(uu - u) < 1e-6 and abs(vv - v) < 1e-6
        assert abs(dd - d) < 1e-9 * max(1.0, d)

    def test_point_at_camera_is_behind(self, k64):
        pose = CameraPose(position=(1.0, 2.0, 3.0), yaw=0.4)
        with pytest.raises(BehindCamera):
            project_point((1.0, 2.0, 3.0), k64, pose)

    def test_point_behind_camera(self, k64):
        pose = CameraPose(position=(0.0, 0.0, 0.0), yaw=0.0)  # facing +X
        with pytest.raises(BehindCamera):
            project_point((-3.0, 0.0, 0.0), k64, pose)

    def test_ground_point_dead_ahead_closed_form(self, k64):
        # Camera at height h facing +X; point (5, 0, 0) projects to the
        # center column, v = cy + fy * h / 5, depth exactly 5.
        h = 0.38
        pose = CameraPose(position=(0.0, 0.0, h), yaw=0.0)
        u, v, d = project_point((5.0, 0.0, 0.0), k64, pose)
        assert u == pytest.approx(32.0, abs=1e-9)
        assert v == pytest.approx(32.0 + 50.0 * h / 5.0, abs=1e-9)
        assert d == pytest.approx(5.0, abs=1e-12)


# ---------------------------------------------------------------------------
# fuse_frames
# ---------------------------------------------------------------------------


class TestFuse:
    def test_empty_input(self):
        assert len(fuse_frames([], 1)) == 0

    def test_constant_depth_frame_matches_per_pixel_oracle(self):
        k = Intrinsics(4.0, 4.0, 2.0, 2.0, 4, 4)
        pose = CameraPose(position=(0.3, -0.2, 1.1), yaw=0.9, pitch=0.2)
        frame = FakeFrame(0, Image.filled(4, 4, (9, 9, 9)), np.ones((4, 4)), pose, k)
        cloud = fuse_frames([frame], 1)
        assert len(cloud) == 16
        i = 0
        for v in range(4):
            for u in range(4):
                want = oracle_backproject(u, v, 1.0, k, pose)
                np.testing.assert_allclose(cloud.points[i], want, atol=1e-9)
                i += 1

    def test_two_views_of_wall_coplanar(self, k64):
        pose_a = CameraPose(position=(0.0, 0.0, 0.38), yaw=0.0)
        pose_b = CameraPose(position=(0.5, 1.5, 0.38), yaw=-0.3)
        cloud = fuse_frames(
            [make_wall_frame(k64, pose_a, 5.0), make_wall_frame(k64, pose_b, 5.0)], 2
        )
        assert len(cloud) > 100
        # Plane-fit oracle: residual of SVD plane through the points.
        pts = cloud.points - cloud.points.mean(axis=0)
        residual = np.linalg.svd(pts, compute_uv=False)[-1] / math.sqrt(len(pts))
        assert residual < 1e-6
        np.testing.assert_allclose(cloud.points[:, 0], 5.0, atol=1e-6)

    def test_cardinality_counts_valid_sampled_pixels(self, k64):
        pose = CameraPose(position=(0, 0, 1.0), yaw=0.0)
        depth = np.ones((64, 64))
        depth[::3, :] = 0.0  # holes
        depth[1, 1] = np.nan
        frame = FakeFrame(0, Image.filled(64, 64, (1, 2, 3)), depth, pose, k64)
        for stride in (1, 2, 5):
            sub = depth[::stride, ::stride]
            expected = int(((sub > 0) & np.isfinite(sub)).sum())
            assert len(fuse_frames([frame], stride)) == expected

    def test_missing_depth_and_pose(self, k64):
        img = Image.filled(4, 4, (0, 0, 0))
        with pytest.raises(MissingDepth):
            fuse_frames([FakeFrame(0, img, None, CameraPose((0, 0, 0), 0.0), k64)], 1)
        with pytest.raises(MissingPose):
            fuse_frames([FakeFrame(0, img, np.ones((4, 4)), None, k64)], 1)


# ---------------------------------------------------------------------------
# render_pointcloud
# ---------------------------------------------------------------------------


class TestRender:
    def test_empty_cloud_is_background(self, k64):
        img = render_pointcloud(PointCloud.empty(), k64, CameraPose((0, 0, 0), 0.0), (7, 8, 9))
        assert (img.pixels == np.array([7, 8, 9], dtype=np.uint8)).all()

    def test_zbuffer_nearest_wins(self, k64):
        pose = CameraPose(position=(0.0, 0.0, 0.0), yaw=0.0)
        cloud = PointCloud(
            np.array([[2.0, 0.0, 0.0], [1.0, 0.0, 0.0]]),
            np.array([[0, 0, 255], [255, 0, 0]], dtype=np.uint8),
        )
        img = render_pointcloud(cloud, k64, pose, (0, 0, 0))
        assert tuple(img.pixels[32, 32]) == (255, 0, 0)

    def test_depth_tie_earlier_index_wins(self, k64):
        pose = CameraPose(position=(0.0, 0.0, 0.0), yaw=0.0)
        cloud = PointCloud(
            np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]),
            np.array([[10, 20, 30], [200, 200, 200]], dtype=np.uint8),
        )
        img = render_pointcloud(cloud, k64, pose, (0, 0, 0))
        assert tuple(img.pixels[32, 32]) == (10, 20, 30)

    def test_single_point_lands_where_project_says(self, k64, rng):
        pose = CameraPose(position=(0.2, -0.4, 0.5), yaw=0.8, pitch=-0.2)
        for _ in range(40):
            p = oracle_backproject(
                rng.uniform(1, 62), rng.uniform(1, 62), rng.uniform(0.5, 20), k64, pose
            )
            u, v, _ = project_point(p, k64, pose)
            img = render_pointcloud(
                PointCloud(p[None, :], np.array([[255, 255, 0]], dtype=np.uint8)),
                k64,
                pose,
                (0, 0, 0),
            )
            col, row = int(math.floor(u + 0.5)), int(math.floor(v + 0.5))
            assert tuple(img.pixels[row, col]) == (255, 255, 0)

    def test_behind_camera_points_skipped(self, k64):
        pose = CameraPose(position=(0.0, 0.0, 0.0), yaw=0.0)
        cloud = PointCloud(np.array([[-5.0, 0.0, 0.0]]), np.array([[255, 0, 0]], dtype=np.uint8))
        img = render_pointcloud(cloud, k64, pose, (3, 3, 3))
        assert (img.pixels == 3).all()

    @given(
        tx=st.integers(-512, 512),
        ty=st.integers(-512, 512),
        tz=st.integers(-64, 64),
        n=st.integers(1, 30),
        seed=st.integers(0, 2**31),
    )
    def test_translation_equivariance_bit_identical(self, tx, ty, tz, n, seed):
        # Dyadic coordinates (multiples of 1/64) keep float adds exact, so
        # rigidly translating cloud and camera together must reproduce the
        # image bit for bit.
        k = Intrinsics(50.0, 50.0, 32.0, 32.0, 64, 64)
        r = np.random.default_rng(seed)
        pts = r.integers(-640, 640, size=(n, 3)) / 64.0
        cols = r.integers(0, 255, size=(n, 3)).astype(np.uint8)
        shift = np.array([tx, ty, tz]) / 64.0
        pose_a = CameraPose(position=(-8.0, 0.25, 0.5), yaw=0.3, pitch=0.1)
        pose_b = CameraPose(position=tuple(np.asarray(pose_a.position) + shift), yaw=0.3, pitch=0.1)
        img_a = render_pointcloud(PointCloud(pts, cols), k, pose_a, (1, 2, 3))
        img_b = render_pointcloud(PointCloud(pts + shift, cols), k, pose_b, (1, 2, 3))
        assert (img_a.pixels == img_b.pixels).all()

    def test_rotation_equivariance_within_tolerance(self, k64, rng):
        # General rigid motion (yaw shift + translation) is only float-exact
        # up to rounding; images must agree except near splat boundaries.
        pts = rng.uniform(-5, 5, size=(200, 3)) + np.array([8.0, 0.0, 0.0])
        cols = rng.integers(0, 255, size=(200, 3)).astype(np.uint8)
        dyaw, shift = 0.7, np.array([1.5, -2.0, 0.25])
        c, s = math.cos(dyaw), math.sin(dyaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        pose_a = CameraPose(position=(0.0, 0.0, 0.4), yaw=0.0, pitch=0.05)
        pose_b = CameraPose(position=tuple(rot @ np.array(pose_a.position) + shift), yaw=dyaw, pitch=0.05)
        img_a = render_pointcloud(PointCloud(pts, cols), k64, pose_a, (0, 0, 0)).pixels
        img_b = render_pointcloud(PointCloud(pts @ rot.T + shift, cols), k64, pose_b, (0, 0, 0)).pixels
        agree = (img_a == img_b).all(axis=2).mean()
        assert agree > 0.97
