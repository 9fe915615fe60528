"""Feature depth from a lidar scan.

Per feature: pick the projected lidar points in a rectangle around the
pixel, keep the nearest depth slice, fit a plane through the widest point
triangle, intersect the viewing ray with it and sanity check the result.
Features on the road go through the RANSAC ground plane instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .geometry import CameraIntrinsics, Pose, ray

ACCEPTED = "accepted"
REJECTED = "rejected"

# rejection reasons
NONE = "none"
TOO_FAR = "too_far"
EMPTY_ROI = "empty_roi"
DEGENERATE_TRIANGLE = "degenerate_triangle"
GRAZING_ANGLE = "grazing_angle"
NO_FOREGROUND = "no_foreground"
BEHIND_CAMERA = "behind_camera"
OFF_GROUND = "off_ground"


class DepthError(ValueError):
    pass


class EmptyInput(DepthError):
    pass


class TooFewPoints(DepthError):
    pass


class DegenerateTriangle(DepthError):
    pass


class NoConsensus(DepthError):
    pass


@dataclass(frozen=True, eq=False)
class LidarScan:
    points: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise DepthError("scan contains non-finite coordinates")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True, eq=False)
class ProjectedScan:
    """Lidar points that land inside the image, as parallel arrays.

    ``points`` are camera-frame coordinates, ``depths`` their z values and
    ``source_index`` the row in the originating scan.
    """

    pixels: np.ndarray
    depths: np.ndarray
    points: np.ndarray
    source_index: np.ndarray

    def __len__(self):
        return self.depths.shape[0]

    def subset(self, idx) -> ProjectedScan:
        return ProjectedScan(
            self.pixels[idx], self.depths[idx], self.points[idx], self.source_index[idx]
        )

    @classmethod
    def empty(cls) -> ProjectedScan:
        return cls(np.zeros((0, 2)), np.zeros(0), np.zeros((0, 3)), np.zeros(0, dtype=np.int64))


@dataclass(frozen=True, eq=False)
class Plane:
    """``{q : normal . q = offset}`` with a unit normal."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        norm = float(np.linalg.norm(n))
        if norm == 0 or not np.isfinite(norm):
            raise DepthError("plane normal must be nonzero")
        object.__setattr__(self, "normal", n / norm)
        object.__setattr__(self, "offset", float(self.offset) / norm)

    @classmethod
    def through(cls, a, b, c) -> Plane:
        a, b, c = (np.asarray(v, dtype=float) for v in (a, b, c))
        n = np.cross(b - a, c - a)
        return cls(n, float(n @ a))

    def distance(self, q) -> np.ndarray:
        return np.asarray(q, dtype=float) @ self.normal - self.offset

    def transformed(self, pose: Pose) -> Plane:
        """The same plane expressed in the frame ``pose`` maps into."""
        n = pose.R @ self.normal
        return Plane(n, self.offset + float(n @ pose.t))


@dataclass(frozen=True)
class DepthEstimate:
    status: str
    depth: Optional[float] = None
    reason: str = NONE

    @property
    def accepted(self) -> bool:
        return self.status == ACCEPTED

    @classmethod
    def ok(cls, depth: float) -> DepthEstimate:
        return cls(ACCEPTED, float(depth), NONE)

    @classmethod
    def reject(cls, reason: str) -> DepthEstimate:
        return cls(REJECTED, None, reason)


@dataclass(frozen=True)
class DepthParams:
    roi_half_width: float = 5.0
    roi_half_height: float = 5.0
    bin_width: float = 0.3
    min_bin_points: int = 3
    min_area: float = 0.01
    max_plane_points: int = 25
    max_depth: float = 30.0
    max_incidence: float = math.radians(80.0)
    ground_normal_tol: float = math.radians(15.0)
    ground_offset_tol: float = 0.3
    ransac_iterations: int = 200
    ransac_inlier_tol: float = 0.15
    seed: int = 0


def project_scan(scan: LidarScan, lidar_to_camera: Pose, k: CameraIntrinsics) -> ProjectedScan:
    if len(scan) == 0:
        return ProjectedScan.empty()
    pc = lidar_to_camera.apply(scan.points)
    z = pc[:, 2]
    front = z > 0
    idx = np.flatnonzero(front)
    pc = pc[idx]
    z = pc[:, 2]
    uv = np.column_stack((k.fx * pc[:, 0] / z + k.cx, k.fy * pc[:, 1] / z + k.cy))
    inside = k.contains(uv)
    return ProjectedScan(uv[inside], z[inside], pc[inside], idx[inside])


def select_roi(f, projected: ProjectedScan, half_width: float = 5.0, half_height: float = 5.0) -> ProjectedScan:
    if half_width <= 0 or half_height <= 0:
        raise DepthError("ROI half sizes must be positive")
    f = np.asarray(f, dtype=float)
    d = np.abs(projected.pixels - f)
    mask = (d[:, 0] <= half_width) & (d[:, 1] <= half_height)
    return projected.subset(np.flatnonzero(mask))


def segment_foreground(F: ProjectedScan, h: float = 0.3, min_points: int = 3) -> ProjectedScan:
    """Points in the nearest depth bin of width ``h``.

    Bins are anchored at the smallest depth.  A nearest bin with fewer than
    ``min_points`` members is merged with the bin right behind it.
    """
    if len(F) == 0:
        raise EmptyInput("no points to segment")
    bins = np.floor((F.depths - F.depths.min()) / h).astype(np.int64)
    keep = bins == 0
    if keep.sum() < min_points:
        keep = bins <= 1
    return F.subset(np.flatnonzero(keep))


def _nearest_to_ray(points: np.ndarray, direction: np.ndarray, count: int) -> np.ndarray:
    d = direction / np.linalg.norm(direction)
    along = points @ d
    perp = np.sum(points * points, axis=1) - along * along
    return np.argsort(perp, kind="stable")[:count]


def fit_local_plane(points, min_area: float = 0.01, ray_direction=None, max_points: int = 25) -> Plane:
    """Plane through the maximum-area triangle of ``points`` (camera frame).

    Above ``max_points`` points only the ones closest to ``ray_direction``
    (default: the ray through the centroid) are searched.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if pts.shape[0] < 3:
        raise TooFewPoints(f"need 3 points for a plane, got {pts.shape[0]}")
    if pts.shape[0] > max_points:
        direction = pts.mean(axis=0) if ray_direction is None else np.asarray(ray_direction, float)
        pts = pts[_nearest_to_ray(pts, direction, max_points)]
    i, j, k, area = kernels.max_area_triangle(pts)
    if area < min_area:
        raise DegenerateTriangle(f"largest triangle area {area:.3g} m^2 below {min_area}")
    return Plane.through(pts[i], pts[j], pts[k])


def estimate_depth(
    f,
    plane: Plane,
    k: CameraIntrinsics,
    max_depth: float = 30.0,
    max_incidence: float = math.radians(80.0),
) -> DepthEstimate:
    r = ray(k, f)
    denom = float(plane.normal @ r)
    if abs(denom) < 1e-12:
        return DepthEstimate.reject(GRAZING_ANGLE)
    depth = plane.offset / denom
    if depth <= 0:
        return DepthEstimate.reject(BEHIND_CAMERA)
    if depth > max_depth:
        return DepthEstimate.reject(TOO_FAR)
    incidence = math.acos(min(1.0, abs(denom) / float(np.linalg.norm(r))))
    if incidence >= max_incidence:
        return DepthEstimate.reject(GRAZING_ANGLE)
    return DepthEstimate.ok(depth)


def _lstsq_plane(pts: np.ndarray) -> Plane:
    c = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - c, full_matrices=False)
    n = vt[-1]
    return Plane(n, float(n @ c))


def fit_ground_plane(
    scan,
    iterations: int = 200,
    inlier_tol: float = 0.15,
    rng: Optional[np.random.Generator] = None,
    seed: int = 0,
) -> Plane:
    """RANSAC over 3-point samples, then least-squares refits on the inliers."""
    pts = scan.points if isinstance(scan, LidarScan) else np.asarray(scan, dtype=float).reshape(-1, 3)
    n = pts.shape[0]
    if n < 3:
        raise TooFewPoints(f"need 3 points for a plane, got {n}")
    if n == 3:
        try:
            return Plane.through(*pts)
        except DepthError:
            raise NoConsensus("the three points are collinear") from None
    if rng is None:
        rng = np.random.default_rng(seed)
    best_count = 0
    best_plane = None
    for _ in range(iterations):
        a, b, c = pts[rng.choice(n, 3, replace=False)]
        cr = np.cross(b - a, c - a)
        norm = np.linalg.norm(cr)
        if norm < 1e-9:
            continue
        normal = cr / norm
        count = int(np.count_nonzero(np.abs(pts @ normal - normal @ a) <= inlier_tol))
        if count > best_count:
            best_count = count
            best_plane = Plane(normal, float(normal @ a))
    if best_plane is None or best_count < 3:
        raise NoConsensus(f"best plane has {best_count} inliers")
    plane = best_plane
    for _ in range(2):
        inl = np.abs(plane.distance(pts)) <= inlier_tol
        if inl.sum() < 3:
            break
        plane = _lstsq_plane(pts[inl])
    if plane.offset < 0:
        plane = Plane(-plane.normal, -plane.offset)
    return plane


class RoiIndex:
    """Projected points sorted by column for fast rectangle queries."""

    def __init__(self, projected: ProjectedScan):
        order = np.argsort(projected.pixels[:, 0], kind="stable")
        self.projected = projected.subset(order)
        self._u = self.projected.pixels[:, 0]

    def query(self, f, half_width: float, half_height: float) -> ProjectedScan:
        lo = np.searchsorted(self._u, f[0] - half_width, side="left")
        hi = np.searchsorted(self._u, f[0] + half_width, side="right")
        cand = self.projected.subset(slice(lo, hi))
        mask = np.abs(cand.pixels[:, 1] - f[1]) <= half_height
        return cand.subset(np.flatnonzero(mask))


def _close_to(plane: Plane, ground: Plane, params: DepthParams) -> bool:
    c = float(plane.normal @ ground.normal)
    if abs(c) <= math.cos(params.ground_normal_tol):
        return False
    offset = plane.offset if c > 0 else -plane.offset
    return abs(offset - ground.offset) < params.ground_offset_tol


def _estimate_one(f, is_ground, index: RoiIndex, ground: Optional[Plane], k, params: DepthParams):
    F = index.query(f, params.roi_half_width, params.roi_half_height)
    if len(F) == 0:
        return DepthEstimate.reject(EMPTY_ROI)
    r = ray(k, f)
    if is_ground:
        if ground is None:
            return DepthEstimate.reject(NO_FOREGROUND)
        on_ground = np.abs(ground.distance(F.points)) <= params.ransac_inlier_tol
        if not on_ground.any():
            return DepthEstimate.reject(NO_FOREGROUND)
        try:
            local = fit_local_plane(F.points[on_ground], params.min_area, r, params.max_plane_points)
        except (TooFewPoints, DegenerateTriangle):
            # lidar rings are sparse vertically; the road patch supports the global plane
            plane = ground
        else:
            if not _close_to(local, ground, params):
                return DepthEstimate.reject(OFF_GROUND)
            plane = local
    else:
        seg = segment_foreground(F, params.bin_width, params.min_bin_points)
        try:
            plane = fit_local_plane(seg.points, params.min_area, r, params.max_plane_points)
        except (TooFewPoints, DegenerateTriangle):
            return DepthEstimate.reject(DEGENERATE_TRIANGLE)
    return estimate_depth(f, plane, k, params.max_depth, params.max_incidence)


def estimate_feature_depths(
    features,
    scan: LidarScan,
    extrinsic: Pose,
    k: CameraIntrinsics,
    params: DepthParams = DepthParams(),
    ground_flags: Optional[Sequence[bool]] = None,
    ground_plane: Optional[Plane] = None,
    projected: Optional[ProjectedScan] = None,
) -> list[DepthEstimate]:
    """One estimate per feature pixel.

    ``ground_flags`` marks road features.  ``ground_plane`` (camera frame)
    is fitted from the scan when needed and not supplied.
    """
    features = np.asarray(features, dtype=float).reshape(-1, 2)
    flags = np.zeros(len(features), bool) if ground_flags is None else np.asarray(ground_flags, bool)
    if projected is None:
        projected = project_scan(scan, extrinsic, k)
    if ground_plane is None and flags.any() and len(scan) >= 3:
        try:
            lidar_plane = fit_ground_plane(
                scan, params.ransac_iterations, params.ransac_inlier_tol, seed=params.seed
            )
            ground_plane = lidar_plane.transformed(extrinsic)
        except DepthError:
            ground_plane = None
    index = RoiIndex(projected)
    return [
        _estimate_one(f, g, index, ground_plane, k, params) for f, g in zip(features, flags)
    ]


def read_point_cloud(path) -> LidarScan:
    """Plain text, one ``x y z`` triple per line."""
    text = Path(path).read_text()
    rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    for i, row in enumerate(rows):
        if len(row) != 3:
            raise DepthError(f"{path}:{i + 1}: expected 3 values, got {len(row)}")
    pts = np.array(rows, dtype=float).reshape(-1, 3)
    return LidarScan(pts)


def write_point_cloud(path, scan: LidarScan, fmt: str = "%.6f") -> None:
    with open(path, "w") as fh:
        np.savetxt(fh, scan.points, fmt=fmt)
