import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from galimo.depth import (
    BEHIND_CAMERA,
    EMPTY_ROI,
    GRAZING_ANGLE,
    NONE,
    TOO_FAR,
    DegenerateTriangle,
    DepthParams,
    EmptyInput,
    LidarScan,
    Plane,
    ProjectedScan,
    TooFewPoints,
    estimate_depth,
    estimate_feature_depths,
    fit_ground_plane,
    fit_local_plane,
    project_scan,
    read_point_cloud,
    segment_foreground,
    select_roi,
    write_point_cloud,
)
from galimo.geometry import CameraIntrinsics, Pose


def wall(z, spacing=0.05, half=4.0):
    g = np.arange(-half, half + 1e-9, spacing)
    x, y = np.meshgrid(g, g)
    return np.column_stack((x.ravel(), y.ravel(), np.full(x.size, float(z))))


def road(height=1.7, spacing=0.05):
    x, z = np.meshgrid(np.arange(-3, 3 + 1e-9, spacing), np.arange(4, 25, spacing))
    return np.column_stack((x.ravel(), np.full(x.size, height), z.ravel()))


def projected(depths):
    d = np.asarray(depths, dtype=float)
    n = len(d)
    pts = np.column_stack((np.zeros(n), np.zeros(n), d))
    return ProjectedScan(np.zeros((n, 2)), d, pts, np.arange(n))


def test_project_scan_empty(kitti_k):
    assert len(project_scan(LidarScan(np.zeros((0, 3))), Pose.identity(), kitti_k)) == 0


def test_project_scan_optical_axis(kitti_k):
    p = project_scan(LidarScan([[0, 0, 10]]), Pose.identity(), kitti_k)
    assert len(p) == 1
    assert np.allclose(p.pixels[0], [kitti_k.cx, kitti_k.cy])
    assert p.depths[0] == 10.0


def test_project_scan_filters_and_keeps_order(kitti_k):
    pts = [[0, 0, -5], [1, 0, 10], [500, 0, 1], [0, 1, 20]]
    p = project_scan(LidarScan(pts), Pose.identity(), kitti_k)
    assert p.source_index.tolist() == [1, 3]
    assert np.all(p.depths > 0)
    assert np.all(kitti_k.contains(p.pixels))


def test_select_roi_boundary_and_brute_force(rng):
    px = rng.uniform(0, 100, (10, 2))
    px[0] = [55.0, 50.0]  # exactly on the right edge
    scan = ProjectedScan(px, np.ones(10), np.zeros((10, 3)), np.arange(10))
    roi = select_roi([50.0, 50.0], scan, 5.0, 5.0)
    brute = [i for i in range(10) if abs(px[i, 0] - 50) <= 5 and abs(px[i, 1] - 50) <= 5]
    assert sorted(roi.source_index.tolist()) == brute
    assert 0 in brute


def test_select_roi_five_of_ten():
    px = np.array([[50 + d, 50] for d in (-4, -2, 0, 2, 4, -9, 9, 20, -30, 7)], dtype=float)
    scan = ProjectedScan(px, np.ones(10), np.zeros((10, 3)), np.arange(10))
    assert sorted(select_roi([50, 50], scan).source_index.tolist()) == [0, 1, 2, 3, 4]


def test_select_roi_empty():
    scan = ProjectedScan(np.array([[0.0, 0.0]]), np.ones(1), np.zeros((1, 3)), np.arange(1))
    assert len(select_roi([50, 50], scan)) == 0


def test_segment_foreground_examples():
    assert sorted(segment_foreground(projected([5.0, 5.1, 9.0])).depths.tolist()) == [5.0, 5.1]
    assert segment_foreground(projected([7.0])).depths.tolist() == [7.0]
    with pytest.raises(EmptyInput):
        segment_foreground(projected([]))


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(0.5, 60.0), min_size=1, max_size=40))
def test_segment_foreground_span(depths):
    seg = segment_foreground(projected(depths), 0.3)
    assert len(seg) >= 1
    assert seg.depths.max() - seg.depths.min() < 0.6
    assert seg.depths.min() == min(depths)


def test_fit_local_plane_z10():
    pl = fit_local_plane([[0, 0, 10], [1, 0, 10], [0, 1, 10]])
    assert np.allclose(np.abs(pl.normal), [0, 0, 1], atol=1e-12)
    assert abs(abs(pl.offset) - 10) < 1e-12


def test_fit_local_plane_errors():
    with pytest.raises(DegenerateTriangle):
        fit_local_plane([[0, 0, 10], [1, 0, 10], [2, 0, 10]])
    with pytest.raises(TooFewPoints):
        fit_local_plane([[0, 0, 10], [1, 0, 10]])


def test_fit_local_plane_coplanar_residuals(rng):
    n = np.array([0.3, -0.2, 1.0])
    n /= np.linalg.norm(n)
    uv = rng.uniform(-1, 1, (10, 2))
    a = np.cross(n, [1, 0, 0])
    a /= np.linalg.norm(a)
    b = np.cross(n, a)
    pts = 7.0 * n + uv[:, :1] * a + uv[:, 1:] * b
    pl = fit_local_plane(pts)
    assert np.max(np.abs(pl.distance(pts))) < 1e-9


def test_estimate_depth_examples(kitti_k):
    c = [kitti_k.cx, kitti_k.cy]
    est = estimate_depth(c, Plane([0, 0, 1], 10), kitti_k)
    assert est.accepted and est.depth == pytest.approx(10.0, abs=1e-12)
    assert estimate_depth(c, Plane([0, 0, 1], 35), kitti_k).reason == TOO_FAR
    assert estimate_depth(c, Plane([1, 0, 0], 2), kitti_k).reason == GRAZING_ANGLE
    assert estimate_depth(c, Plane([0, 0, 1], -5), kitti_k).reason == BEHIND_CAMERA


def test_estimate_depth_incidence_threshold(kitti_k):
    # a plane tilted 85 degrees away from facing the camera
    n = [math.sin(math.radians(85)), 0, math.cos(math.radians(85))]
    est = estimate_depth([kitti_k.cx, kitti_k.cy], Plane(n, 1.0), kitti_k)
    assert est.reason == GRAZING_ANGLE


# a short focal length so a 5 px ROI spans more than the minimum triangle area
WIDE = CameraIntrinsics(100.0, 100.0, 100.0, 100.0, 200, 200)


@pytest.mark.parametrize("z", [8.0, 10.0])
def test_wall_depths_all_accepted(rng, z):
    scan = LidarScan(wall(z))
    feats = rng.uniform(60, 140, (50, 2))
    est = estimate_feature_depths(feats, scan, Pose.identity(), WIDE)
    assert all(e.accepted for e in est)
    assert max(abs(e.depth - z) for e in est) < 1e-6


def test_far_wall_rejected():
    scan = LidarScan(wall(35.0, spacing=0.2, half=20.0))
    est = estimate_feature_depths([[100, 100], [120, 90]], scan, Pose.identity(), WIDE)
    assert [e.reason for e in est] == [TOO_FAR, TOO_FAR]


def test_empty_roi(kitti_k):
    scan = LidarScan(wall(8.0, half=0.5))
    est = estimate_feature_depths([[10, 10], [1200, 350]], scan, Pose.identity(), kitti_k)
    assert [e.reason for e in est] == [EMPTY_ROI, EMPTY_ROI]


@pytest.mark.parametrize("k", [WIDE, CameraIntrinsics.kitti()], ids=["wide", "kitti"])
def test_ground_features_use_road_plane(k):
    scan = LidarScan(road())
    v = k.cy + k.fy * np.array([0.2, 0.22, 0.25])
    feats = np.column_stack((np.full(3, k.cx + 5), v))
    est = estimate_feature_depths(feats, scan, Pose.identity(), k, ground_flags=[True] * 3)
    expected = 1.7 * k.fy / (v - k.cy)
    assert all(e.accepted for e in est)
    assert np.allclose([e.depth for e in est], expected, atol=1e-6)


def test_distant_road_is_grazing(kitti_k):
    # beyond ~9.6 m the ray meets a 1.7 m-high road at more than 80 degrees
    est = estimate_feature_depths(
        [[kitti_k.cx, kitti_k.cy + 100]], LidarScan(road()), Pose.identity(), kitti_k, ground_flags=[True]
    )
    assert est[0].reason == GRAZING_ANGLE


def test_depth_invariants(kitti_k, rng):
    pts = np.vstack((wall(8.0, 0.2), wall(40.0, 0.5, 20.0), rng.normal(size=(300, 3)) * 3 + [0, 0, 15]))
    feats = np.column_stack((rng.uniform(0, 1240, 200), rng.uniform(0, 375, 200)))
    flags = rng.random(200) < 0.2
    params = DepthParams()
    est = estimate_feature_depths(feats, LidarScan(pts), Pose.identity(), kitti_k, params, flags)
    for e in est:
        if e.accepted:
            assert 0 < e.depth <= params.max_depth and e.reason == NONE
        else:
            assert e.depth is None and e.reason != NONE
    again = estimate_feature_depths(feats, LidarScan(pts), Pose.identity(), kitti_k, params, flags)
    assert est == again


def test_ground_ransac_with_outliers(rng):
    xy = rng.uniform(-10, 10, (100, 2))
    pts = np.column_stack((xy, np.full(100, -1.7)))
    out = rng.uniform(-10, 10, (10, 3))
    out[:, 2] = rng.uniform(0.5, 5, 10)
    plane = fit_ground_plane(np.vstack((pts, out)), seed=3)
    assert np.allclose(np.abs(plane.normal), [0, 0, 1], atol=1e-3)
    assert abs(plane.offset - 1.7) < 1e-3
    assert np.count_nonzero(np.abs(plane.distance(pts)) <= 0.15) >= 100


def test_ground_ransac_small_inputs():
    pl = fit_ground_plane([[0, 0, 0], [1, 0, 0], [0, 1, 0]])
    assert np.allclose(np.abs(pl.normal), [0, 0, 1])
    with pytest.raises(TooFewPoints):
        fit_ground_plane([[0, 0, 0], [1, 0, 0]])


def test_ground_ransac_matches_least_squares_without_outliers(rng):
    xy = rng.uniform(-10, 10, (200, 2))
    z = -1.7 + 0.02 * xy[:, 0] + rng.normal(scale=0.01, size=200)
    pts = np.column_stack((xy, z))
    plane = fit_ground_plane(pts, seed=1)
    c = pts.mean(axis=0)
    n = np.linalg.svd(pts - c)[2][-1]
    if n @ plane.normal < 0:
        n = -n
    assert np.allclose(plane.normal, n, atol=1e-9)
    assert abs(plane.offset - n @ c) < 1e-9


def test_ground_ransac_deterministic(rng):
    pts = rng.normal(size=(50, 3))
    a = fit_ground_plane(pts, seed=7)
    b = fit_ground_plane(pts, seed=7)
    assert np.array_equal(a.normal, b.normal) and a.offset == b.offset


def test_point_cloud_io(tmp_path, rng):
    scan = LidarScan(rng.normal(size=(20, 3)))
    write_point_cloud(tmp_path / "c.txt", scan, fmt="%.17g")
    back = read_point_cloud(tmp_path / "c.txt")
    assert np.array_equal(back.points, scan.points)


def test_lidar_scan_rejects_non_finite():
    with pytest.raises(ValueError):
        LidarScan([[0, 0, np.nan]])
