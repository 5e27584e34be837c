import math

import numpy as np
import pytest

from minibev.geometry import (
    BEVGrid,
    CameraModel,
    HeightRange,
    PlanarPose,
    apply_planar,
    apply_planar_many,
    camera_facing,
    coord_to_index,
    coords_to_indices,
    index_to_coord,
    project_to_camera,
    project_to_camera_many,
    ring_rig,
    square_grid,
    wrap_angle,
)


def grid4() -> BEVGrid:
    return square_grid(4, 2.0)


class TestGrid:
    def test_corner_cell(self):
        assert coord_to_index(grid4(), (-1.9, -1.9)) == 0

    def test_upper_boundary_excluded(self):
        assert coord_to_index(grid4(), (2.0, 0.0)) is None
        assert coord_to_index(grid4(), (0.0, 2.0)) is None

    def test_center_of_300_grid(self):
        g = BEVGrid(300, 300, -51.2, 51.2, -51.2, 51.2)
        # row/col formula: col = floor((0+51.2)/(102.4/300)) = 150, same row
        assert coord_to_index(g, (0.0, 0.0)) == 150 * 300 + 150 == 45150

    def test_lower_boundary_included(self):
        assert coord_to_index(grid4(), (-2.0, -2.0)) == 0

    def test_index_to_coord_corners(self):
        assert index_to_coord(grid4(), 0) == (-1.5, -1.5)
        assert index_to_coord(grid4(), 15) == (1.5, 1.5)

    def test_index_to_coord_rectilinear(self):
        g = BEVGrid(2, 2, 0.0, 2.0, 0.0, 2.0)
        assert index_to_coord(g, 1) == (1.5, 0.5)

    def test_index_out_of_range(self):
        with pytest.raises(IndexError):
            index_to_coord(grid4(), 16)
        with pytest.raises(IndexError):
            index_to_coord(grid4(), -1)

    def test_roundtrip_on_all_indices(self):
        for g in [grid4(), BEVGrid(7, 7, -3.5, 3.5, -3.5, 3.5), square_grid(32, 16.0)]:
            for k in range(g.num_cells):
                assert coord_to_index(g, index_to_coord(g, k)) == k

    def test_roundtrip_large_grid(self):
        g = square_grid(512, 51.2)
        ks = np.arange(g.num_cells)
        centers = g.cell_centers()
        idx, inside = coords_to_indices(g, centers)
        assert inside.all()
        assert np.array_equal(idx, ks)

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(0)
        g = BEVGrid(5, 5, -3.0, 2.0, 1.0, 6.0)
        pts = rng.uniform(-5, 8, size=(500, 2))
        idx, inside = coords_to_indices(g, pts)
        for p, k, ok in zip(pts, idx, inside):
            expect = coord_to_index(g, p)
            if expect is None:
                assert not ok
            else:
                assert ok and k == expect

    def test_non_square_cells_rejected(self):
        with pytest.raises(ValueError):
            BEVGrid(4, 4, -2.0, 2.0, -2.0, 3.0)


class TestPlanarPose:
    def test_identity(self):
        assert apply_planar(PlanarPose.identity(), (3.0, 4.0)) == (3.0, 4.0)

    def test_quarter_turn(self):
        u, v = apply_planar(PlanarPose(yaw=math.pi / 2), (1.0, 0.0))
        assert abs(u) < 1e-12 and abs(v - 1.0) < 1e-12

    def test_forward_motion_shifts_points_back(self):
        # ego moved +1 m forward: old point at x=1.5 is now at x=0.5
        u, v = apply_planar(PlanarPose(0.0, -1.0, 0.0), (1.5, 0.0))
        assert (u, v) == (0.5, 0.0)

    def test_matches_matrix_arithmetic(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            yaw, tx, ty = rng.uniform(-math.pi, math.pi, 3)
            p = rng.uniform(-10, 10, 2)
            pose = PlanarPose(yaw, tx, ty)
            c, s = math.cos(yaw), math.sin(yaw)
            expect = np.array([[c, -s], [s, c]]) @ p + np.array([tx, ty])
            got = apply_planar(pose, p)
            assert np.allclose(got, expect, atol=1e-12)

    def test_inverse_roundtrip_1000_random(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            pose = PlanarPose(*rng.uniform(-math.pi, math.pi, 3))
            p = tuple(rng.uniform(-50, 50, 2))
            q = apply_planar(pose.inverse(), apply_planar(pose, p))
            assert abs(q[0] - p[0]) < 1e-9 and abs(q[1] - p[1]) < 1e-9

    def test_compose_inverse_is_identity(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            pose = PlanarPose(*rng.uniform(-3, 3, 3))
            ident = pose.compose(pose.inverse())
            assert abs(ident.yaw) < 1e-9
            assert abs(ident.tx) < 1e-9 and abs(ident.ty) < 1e-9

    def test_distances_preserved(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            pose = PlanarPose(*rng.uniform(-3, 3, 3))
            pts = rng.uniform(-20, 20, (5, 2))
            out = apply_planar_many(pose, pts)
            d_in = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)
            d_out = np.linalg.norm(out[:, None] - out[None, :], axis=-1)
            assert np.abs(d_in - d_out).max() < 1e-9

    def test_compose_matches_sequential_application(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            a = PlanarPose(*rng.uniform(-3, 3, 3))
            b = PlanarPose(*rng.uniform(-3, 3, 3))
            p = rng.uniform(-5, 5, 2)
            via_compose = apply_planar(a.compose(b), p)
            sequential = apply_planar(a, apply_planar(b, p))
            assert np.allclose(via_compose, sequential, atol=1e-12)

    def test_wrap_angle(self):
        assert wrap_angle(math.pi) == math.pi
        assert abs(wrap_angle(-math.pi) - math.pi) < 1e-15
        assert abs(wrap_angle(3 * math.pi) - math.pi) < 1e-12
        assert abs(wrap_angle(0.1)) - 0.1 < 1e-15


def forward_cam(**kw) -> CameraModel:
    defaults = dict(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)
    defaults.update(kw)
    return camera_facing(0.0, **defaults)


class TestProjection:
    def test_optical_axis(self):
        cam = forward_cam()
        res = project_to_camera(cam, (10.0, 0.0, 0.0))
        assert res is not None
        (u, v), depth = res
        assert (u, v) == (320.0, 240.0)
        assert depth == 10.0

    def test_behind_camera(self):
        cam = forward_cam()
        assert project_to_camera(cam, (-5.0, 0.0, 0.0)) is None

    def test_pinhole_formula(self):
        # camera-frame point (1, 0.5, 10): identity mounting along +x means
        # ego point (10, -1, -0.5) lands there
        cam = forward_cam()
        res = project_to_camera(cam, (10.0, -1.0, -0.5))
        assert res is not None
        (u, v), depth = res
        assert abs(u - (320.0 + 500.0 * 1.0 / 10.0)) < 1e-9
        assert abs(v - (240.0 + 500.0 * 0.5 / 10.0)) < 1e-9
        assert (u, v) == (370.0, 265.0)
        assert depth == 10.0

    def test_outside_image_bounds(self):
        cam = forward_cam()
        # 45 degrees off-axis needs |u - cx| = fx > width/2
        assert project_to_camera(cam, (1.0, 1.0, 0.0)) is None

    def test_axis_points_at_any_depth(self):
        cam = camera_facing(1.1, fx=300.0, fy=310.0, cx=101.5, cy=77.25,
                            width=200, height=150, mount_xyz=(0.3, -0.2, 1.4))
        for depth in [0.01, 0.5, 3.0, 70.0, 1e4]:
            axis_ego = np.array([0.3, -0.2, 1.4]) + depth * np.array(
                [math.cos(1.1), math.sin(1.1), 0.0]
            )
            res = project_to_camera(cam, axis_ego)
            assert res is not None
            (u, v), d = res
            assert abs(u - 101.5) < 1e-9 and abs(v - 77.25) < 1e-9
            assert abs(d - depth) < 1e-9 * max(1.0, depth)

    def test_depth_ordering_on_ray(self):
        cam = forward_cam()
        ray = np.array([1.0, 0.08, -0.02])
        near = project_to_camera(cam, 5.0 * ray)
        far = project_to_camera(cam, 20.0 * ray)
        assert near is not None and far is not None
        assert near[1] < far[1]

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(6)
        cam = camera_facing(0.7, fx=140.0, fy=140.0, cx=160.0, cy=96.0,
                            width=320, height=192, mount_xyz=(0, 0, 1.6))
        pts = rng.uniform(-30, 30, (400, 3))
        uv, depth, vis = project_to_camera_many(cam, pts)
        for p, (u, v), d, ok in zip(pts, uv, depth, vis):
            expect = project_to_camera(cam, p)
            if expect is None:
                assert not ok
            else:
                assert ok
                assert abs(u - expect[0][0]) < 1e-9
                assert abs(v - expect[0][1]) < 1e-9
                assert abs(d - expect[1]) < 1e-9

    def test_rotation_validation(self):
        with pytest.raises(ValueError):
            CameraModel(1, 1, 0, 0, 10, 10, rotation=np.eye(3) * 2)
        refl = np.diag([-1.0, 1.0, 1.0])
        with pytest.raises(ValueError):
            CameraModel(1, 1, 0, 0, 10, 10, rotation=refl)

    def test_ring_rig_covers_all_bearings(self):
        cams = ring_rig(6)
        assert len(cams) == 6
        for bearing_deg in range(0, 360, 10):
            b = math.radians(bearing_deg)
            p = (12.0 * math.cos(b), 12.0 * math.sin(b), 1.6)
            hits = [c for c in cams if project_to_camera(c, p) is not None]
            assert hits, f"bearing {bearing_deg} invisible to every camera"


class TestHeightRange:
    def test_validation(self):
        with pytest.raises(ValueError):
            HeightRange(1.0, 1.0)

    def test_shift(self):
        hr = HeightRange(-2.0, 2.0).shifted(0.5)
        assert hr.z_min == -1.5 and hr.z_max == 2.5
