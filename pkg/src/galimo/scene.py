"""Synthetic driving scenes with ground truth, lidar scans and feature tracks.

World coordinates coincide with the first camera frame (x right, y down,
z forward).  The vehicle drives on the plane ``y = 0`` and the road lies at
``y = ground_height``.  Each non-ground landmark is the centre of a square
patch facing the direction of travel; lidar rays hit these patches and the
road.  The lidar frame is x forward, y left, z up, co-located with the
camera.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .depth import LidarScan, read_point_cloud, write_point_cloud
from .evaluation import Trajectory, format_kitti_poses, load_kitti_poses
from .geometry import CameraIntrinsics, Pose, rot_y

TRAJECTORIES = ("straight", "arc", "urban-loop")
LABELS = ("ground", "vegetation", "structure", "dynamic")

# lidar axes expressed in camera coordinates: cam = (-ly, -lz, lx)
LIDAR_TO_CAMERA = Pose(np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]]), np.zeros(3))


class InvalidConfig(ValueError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    trajectory: str = "straight"
    frames: int = 30
    frame_rate: float = 10.0
    speed: float = 10.0
    arc_radius: float = 80.0
    loop_size: tuple = (60.0, 40.0)
    loop_corner_radius: float = 10.0
    landmarks: int = 1000
    corridor_width: float = 40.0
    road_half_width: float = 3.0
    min_depth: float = 3.0
    max_depth: float = 60.0
    min_height: float = -2.0
    patch_size: float = 1.0
    vegetation_fraction: float = 0.2
    dynamic_fraction: float = 0.05
    ground_fraction: float = 0.15
    vegetation_jitter: float = 0.0
    dynamic_speed: float = 3.0
    pixel_noise: float = 0.0
    depth_noise: float = 0.0
    outlier_fraction: float = 0.0
    ground_height: float = 1.7
    lidar_horizontal_resolution: float = 0.2
    lidar_horizontal_fov: float = 90.0
    lidar_rings: int = 64
    lidar_min_elevation: float = -24.8
    lidar_max_elevation: float = 2.0
    lidar_max_range: float = 80.0
    lidar_dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.trajectory not in TRAJECTORIES:
            raise InvalidConfig(f"unknown trajectory {self.trajectory!r}")
        for name in ("frames", "landmarks", "lidar_rings"):
            if int(getattr(self, name)) < 1:
                raise InvalidConfig(f"{name} must be positive")
        for name in ("frame_rate", "patch_size", "lidar_horizontal_resolution", "lidar_max_range", "ground_height"):
            if not getattr(self, name) > 0:
                raise InvalidConfig(f"{name} must be positive")
        fracs = ("vegetation_fraction", "dynamic_fraction", "ground_fraction", "outlier_fraction", "lidar_dropout")
        for name in fracs:
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidConfig(f"{name} must lie in [0, 1]")
        if self.vegetation_fraction + self.dynamic_fraction + self.ground_fraction > 1.0 + 1e-12:
            raise InvalidConfig("label fractions sum to more than 1")
        for name in ("pixel_noise", "depth_noise", "vegetation_jitter", "speed", "dynamic_speed"):
            if getattr(self, name) < 0:
                raise InvalidConfig(f"{name} must be nonnegative")
        if not self.min_depth < self.max_depth:
            raise InvalidConfig("min_depth must be below max_depth")
        if self.min_height > self.ground_height - self.patch_size / 2 - 0.2:
            raise InvalidConfig("min_height leaves no room for patches above the road")
        if self.road_half_width * 2 >= self.corridor_width:
            raise InvalidConfig("road is wider than the corridor")
        object.__setattr__(self, "loop_size", tuple(float(v) for v in self.loop_size))

    @property
    def step(self) -> float:
        """Distance travelled per frame in metres."""
        return self.speed / self.frame_rate

    @property
    def patch_max_height(self) -> float:
        # keep patch bottoms clear of the road's inlier band
        return self.ground_height - self.patch_size / 2 - 0.2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loop_size"] = list(self.loop_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SceneConfig:
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise InvalidConfig(f"unknown scene keys: {sorted(extra)}")
        d = dict(d)
        if "loop_size" in d:
            d["loop_size"] = tuple(d["loop_size"])
        return cls(**d)


# --- trajectories ----------------------------------------------------------


class _Path:
    """Planar path parametrized by arc length; heading is the yaw about +y."""

    def __init__(self, cfg: SceneConfig):
        self.kind = cfg.trajectory
        self.radius = cfg.arc_radius
        if self.kind == "urban-loop":
            w, h = cfg.loop_size
            r = cfg.loop_corner_radius
            if not (0 < r and 2 * r < min(w, h)):
                raise InvalidConfig("corner radius does not fit the loop")
            # straight, right quarter turn, repeated; starts heading +z
            segs = []
            for length in (h - 2 * r, w - 2 * r, h - 2 * r, w - 2 * r):
                segs.append(("line", length, 0.0))
                segs.append(("turn", r * math.pi / 2, r))
            self.segments = segs
            self.period = sum(s[1] for s in segs)
            # starting state of each segment
            starts = []
            x = z = psi = 0.0
            for kind, length, rad in segs:
                starts.append((x, z, psi))
                x, z, psi = self._advance(kind, length, rad, x, z, psi, length)
            self.starts = starts

    @staticmethod
    def _advance(kind, length, rad, x, z, psi, s):
        if kind == "line":
            return x + s * math.sin(psi), z + s * math.cos(psi), psi
        a = s / rad
        # turning right: centre lies along the camera's +x axis
        cx = x + rad * math.cos(psi)
        cz = z - rad * math.sin(psi)
        psi2 = psi + a
        return cx - rad * math.cos(psi2), cz + rad * math.sin(psi2), psi2

    def state(self, s: float):
        """``(x, z, heading)`` at arc length ``s``."""
        if self.kind == "straight":
            return 0.0, s, 0.0
        if self.kind == "arc":
            a = s / self.radius
            return self.radius * (1 - math.cos(a)), self.radius * math.sin(a), a
        laps, s = divmod(s, self.period)
        for (kind, length, rad), (x, z, psi) in zip(self.segments, self.starts):
            if s <= length:
                x, z, psi = self._advance(kind, length, rad, x, z, psi, s)
                return x, z, psi + laps * 2 * math.pi
            s -= length
        return self.starts[0][0], self.starts[0][1], (laps + 1) * 2 * math.pi

    def pose(self, s: float) -> Pose:
        x, z, psi = self.state(s)
        return Pose(rot_y(psi), np.array([x, 0.0, z]))


# --- sequence --------------------------------------------------------------


@dataclass(eq=False)
class SyntheticSequence:
    config: SceneConfig
    intrinsics: CameraIntrinsics
    extrinsic: Pose
    ground_truth: Trajectory
    timestamps: np.ndarray
    landmark_positions: np.ndarray
    landmark_labels: np.ndarray
    landmark_normals: np.ndarray
    landmark_velocities: np.ndarray
    obs_frame: np.ndarray
    obs_landmark: np.ndarray
    obs_pixels: np.ndarray
    scans: list
    corrupted: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))

    def __post_init__(self):
        if self.corrupted.shape != self.obs_frame.shape:
            self.corrupted = np.zeros(len(self.obs_frame), bool)

    @property
    def frame_count(self) -> int:
        return len(self.ground_truth)

    @property
    def observation_count(self) -> int:
        return len(self.obs_frame)

    def frame_slice(self, f: int) -> slice:
        lo, hi = np.searchsorted(self.obs_frame, [f, f + 1])
        return slice(int(lo), int(hi))

    def frame_observations(self, f: int):
        """``(landmark ids, pixels, labels)`` for frame ``f``."""
        sl = self.frame_slice(f)
        ids = self.obs_landmark[sl]
        return ids, self.obs_pixels[sl], self.landmark_labels[ids]

    def landmark_position(self, i: int, t: float) -> np.ndarray:
        return self.landmark_positions[i] + self.landmark_velocities[i] * t

    def label_counts(self) -> dict:
        return {lab: int(np.count_nonzero(self.landmark_labels == lab)) for lab in LABELS}

    def summary(self) -> dict:
        return {
            "frames": self.frame_count,
            "landmarks": len(self.landmark_positions),
            "observations": self.observation_count,
            "corrupted": int(self.corrupted.sum()),
            "lidar_points": int(sum(len(s) for s in self.scans)),
            "labels": self.label_counts(),
            "path_length_m": float(self.ground_truth.path_lengths()[-1]),
        }

    # --- export / import ----------------------------------------------
    def save(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "scans").mkdir(exist_ok=True)
        (d / "poses.txt").write_text(format_kitti_poses(self.ground_truth))
        (d / "times.txt").write_text("".join(f"{t!r}\n" for t in self.timestamps.tolist()))
        for f, scan in enumerate(self.scans):
            write_point_cloud(d / "scans" / f"{f:06d}.txt", scan)
        with open(d / "observations.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["frame", "landmark", "u", "v", "label", "corrupted"])
            for f, i, (u, v), c in zip(
                self.obs_frame.tolist(), self.obs_landmark.tolist(), self.obs_pixels.tolist(), self.corrupted.tolist()
            ):
                w.writerow([f, i, repr(u), repr(v), self.landmark_labels[i], int(c)])
        with open(d / "landmarks.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "x", "y", "z", "label", "nx", "ny", "nz", "vx", "vy", "vz"])
            for i in range(len(self.landmark_positions)):
                w.writerow(
                    [i, *map(repr, self.landmark_positions[i].tolist()), self.landmark_labels[i]]
                    + list(map(repr, self.landmark_normals[i].tolist()))
                    + list(map(repr, self.landmark_velocities[i].tolist()))
                )
        k = self.intrinsics
        meta = {
            "config": self.config.to_dict(),
            "intrinsics": [k.fx, k.fy, k.cx, k.cy, k.image_width, k.image_height],
            "lidar_to_camera": self.extrinsic.matrix()[:3, :].ravel().tolist(),
            "summary": self.summary(),
        }
        (d / "scene.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return d

    @classmethod
    def load(cls, directory) -> SyntheticSequence:
        d = Path(directory)
        if not (d / "scene.json").is_file():
            raise FileNotFoundError(f"{d} is not a scene directory (no scene.json)")
        meta = json.loads((d / "scene.json").read_text())
        cfg = SceneConfig.from_dict(meta["config"])
        k = CameraIntrinsics(*meta["intrinsics"])
        T = np.eye(4)
        T[:3, :] = np.array(meta["lidar_to_camera"]).reshape(3, 4)
        gt = load_kitti_poses(d / "poses.txt")
        times = np.array([float(v) for v in (d / "times.txt").read_text().split()])
        with open(d / "landmarks.csv") as fh:
            rows = list(csv.DictReader(fh))
        pos = np.array([[float(r["x"]), float(r["y"]), float(r["z"])] for r in rows]).reshape(-1, 3)
        nrm = np.array([[float(r["nx"]), float(r["ny"]), float(r["nz"])] for r in rows]).reshape(-1, 3)
        vel = np.array([[float(r["vx"]), float(r["vy"]), float(r["vz"])] for r in rows]).reshape(-1, 3)
        labels = np.array([r["label"] for r in rows], dtype=object)
        with open(d / "observations.csv") as fh:
            obs = list(csv.DictReader(fh))
        frame = np.array([int(r["frame"]) for r in obs], dtype=np.int64)
        lid = np.array([int(r["landmark"]) for r in obs], dtype=np.int64)
        px = np.array([[float(r["u"]), float(r["v"])] for r in obs]).reshape(-1, 2)
        cor = np.array([r["corrupted"] == "1" for r in obs], dtype=bool)
        scans = [
            read_point_cloud(d / "scans" / f"{f:06d}.txt") for f in range(len(gt))
        ]
        for f, s in enumerate(scans):
            scans[f] = LidarScan(s.points, float(times[f]))
        return cls(cfg, k, Pose.from_matrix(T), gt, times, pos, labels, nrm, vel, frame, lid, px, scans, cor)


# --- generation ------------------------------------------------------------


def _streams(seed: int):
    names = ("landmarks", "labels", "noise", "lidar", "outliers", "jitter")
    return {n: np.random.default_rng([seed, i]) for i, n in enumerate(names)}


def _exact_labels(n: int, cfg: SceneConfig, rng) -> np.ndarray:
    counts = {
        "vegetation": int(math.floor(cfg.vegetation_fraction * n + 0.5)),
        "dynamic": int(math.floor(cfg.dynamic_fraction * n + 0.5)),
        "ground": int(math.floor(cfg.ground_fraction * n + 0.5)),
    }
    labels = np.full(n, "structure", dtype=object)
    order = rng.permutation(n)
    pos = 0
    for lab in ("vegetation", "dynamic", "ground"):
        c = min(counts[lab], n - pos)
        labels[order[pos:pos + c]] = lab
        pos += c
    return labels


def _place_landmarks(cfg: SceneConfig, path: _Path, labels, rng):
    n = len(labels)
    end = cfg.step * (cfg.frames - 1)
    arc = rng.uniform(cfg.min_depth, end + cfg.max_depth, n)
    half = cfg.corridor_width / 2
    # lateral offsets outside the road for raised landmarks, anywhere for road points
    side = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    lateral_off = side * rng.uniform(cfg.road_half_width, half, n)
    lateral_any = rng.uniform(-half, half, n)
    height = rng.uniform(cfg.min_height, cfg.patch_max_height, n)
    pos = np.zeros((n, 3))
    nrm = np.zeros((n, 3))
    vel = np.zeros((n, 3))
    for i in range(n):
        x, z, psi = path.state(float(arc[i]))
        fwd = np.array([math.sin(psi), 0.0, math.cos(psi)])
        right = np.array([math.cos(psi), 0.0, -math.sin(psi)])
        if labels[i] == "ground":
            pos[i] = np.array([x, cfg.ground_height, z]) + lateral_any[i] * right
            nrm[i] = np.array([0.0, -1.0, 0.0])
        else:
            pos[i] = np.array([x, height[i], z]) + lateral_off[i] * right
            nrm[i] = -fwd
        if labels[i] == "dynamic":
            # oncoming traffic
            vel[i] = -cfg.dynamic_speed * fwd
    return pos, nrm, vel


def _patch_axes(normal: np.ndarray):
    down = np.array([0.0, 1.0, 0.0])
    right = np.cross(down, normal)
    right /= np.linalg.norm(right)
    return right, down


def _occluded(origin, targets, centers, normals, rights, half, self_idx):
    """For each target, whether some patch blocks the segment origin->target.

    ``self_idx`` names the target's own patch (or -1), which never blocks it.
    """
    d = targets - origin  # (n, 3)
    denom = d @ normals.T  # (n, P)
    num = np.einsum("pj,pj->p", centers - origin, normals)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = num / denom
    hit = origin + s[..., None] * d[:, None, :]  # (n, P, 3)
    rel = hit - centers[None]
    a = np.einsum("npj,pj->np", rel, rights)
    b = rel[..., 1]
    inside = (np.abs(a) <= half) & (np.abs(b) <= half) & (s > 1e-6) & (s < 1 - 1e-6)
    own = self_idx >= 0
    inside[np.flatnonzero(own), self_idx[own]] = False
    return inside.any(axis=1)


def _lidar_scan(cfg: SceneConfig, c2w: Pose, centers, normals, rights, rng) -> np.ndarray:
    """Ideal ray casting against the road and the landmark patches."""
    half_fov = math.radians(cfg.lidar_horizontal_fov / 2)
    res = math.radians(cfg.lidar_horizontal_resolution)
    ncol = int(math.floor(2 * half_fov / res + 1e-9)) + 1
    az = -half_fov + res * np.arange(ncol)
    el = np.radians(np.linspace(cfg.lidar_min_elevation, cfg.lidar_max_elevation, cfg.lidar_rings))
    ce, se = np.cos(el)[:, None], np.sin(el)[:, None]
    # camera-frame ray directions for each (ring, column)
    dirs = np.stack(
        (-ce * np.sin(az)[None], np.broadcast_to(-se, (len(el), ncol)), ce * np.cos(az)[None]), axis=-1
    )
    wdirs = dirs @ c2w.R.T
    origin = c2w.t
    rng_buf = np.full(dirs.shape[:2], np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        tg = (cfg.ground_height - origin[1]) / wdirs[..., 1]
    rng_buf = np.where((wdirs[..., 1] > 1e-9) & (tg > 0), tg, rng_buf)
    half = cfg.patch_size / 2
    w2c = c2w.inverse()
    el_step = (el[-1] - el[0]) / max(len(el) - 1, 1)
    for p in range(len(centers)):
        c, n, r = centers[p], normals[p], rights[p]
        corners = c + half * np.array([r + [0, 1, 0], r - [0, 1, 0], -r + [0, 1, 0], -r - [0, 1, 0]])
        cc = corners @ w2c.R.T + w2c.t
        if np.any(cc[:, 2] <= 0.1) or np.min(np.linalg.norm(cc, axis=1)) > cfg.lidar_max_range:
            continue
        caz = np.arctan2(-cc[:, 0], cc[:, 2])
        cel = np.arctan2(-cc[:, 1], np.hypot(cc[:, 0], cc[:, 2]))
        j0 = max(0, int(math.floor((caz.min() + half_fov) / res)))
        j1 = min(ncol - 1, int(math.ceil((caz.max() + half_fov) / res)))
        if j1 < j0:
            continue
        if len(el) > 1:
            i0 = max(0, int(math.floor((cel.min() - el[0]) / el_step)))
            i1 = min(len(el) - 1, int(math.ceil((cel.max() - el[0]) / el_step)))
        else:
            i0 = i1 = 0
        if i1 < i0:
            continue
        sub = wdirs[i0:i1 + 1, j0:j1 + 1]
        den = sub @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((c - origin) @ n) / den
        hit = origin + t[..., None] * sub - c
        ok = (t > 0) & (np.abs(hit @ r) <= half) & (np.abs(hit[..., 1]) <= half)
        buf = rng_buf[i0:i1 + 1, j0:j1 + 1]
        rng_buf[i0:i1 + 1, j0:j1 + 1] = np.where(ok & (t < buf), t, buf)
    valid = rng_buf <= cfg.lidar_max_range
    if cfg.lidar_dropout > 0:
        valid &= rng.random(valid.shape) >= cfg.lidar_dropout
    t = rng_buf[valid]
    if cfg.depth_noise > 0:
        t = t + np.clip(rng.normal(0.0, cfg.depth_noise, t.shape), -3 * cfg.depth_noise, 3 * cfg.depth_noise)
    pc = dirs[valid] * t[:, None]
    return np.column_stack((pc[:, 2], -pc[:, 0], -pc[:, 1]))


def generate(cfg: SceneConfig, k: Optional[CameraIntrinsics] = None) -> SyntheticSequence:
    """Build a deterministic scene from ``cfg`` (including its outliers)."""
    k = CameraIntrinsics.kitti() if k is None else k
    st = _streams(cfg.seed)
    path = _Path(cfg)
    times = np.arange(cfg.frames) / cfg.frame_rate
    gt_poses = [path.pose(cfg.step * f) for f in range(cfg.frames)]
    gt = Trajectory.from_poses(gt_poses)
    labels = _exact_labels(cfg.landmarks, cfg, st["labels"])
    pos, nrm, vel = _place_landmarks(cfg, path, labels, st["landmarks"])
    raised = np.flatnonzero(labels != "ground")
    half = cfg.patch_size / 2
    rights = np.zeros_like(nrm)
    for i in raised:
        rights[i] = _patch_axes(nrm[i])[0]

    obs_f, obs_l, obs_px, scans = [], [], [], []
    for f, c2w in enumerate(gt_poses):
        t = times[f]
        cur = pos + vel * t
        w2c = c2w.inverse()
        pc = cur @ w2c.R.T + w2c.t
        dist = np.linalg.norm(pc, axis=1)
        front = (pc[:, 2] > 1.0) & (dist <= cfg.lidar_max_range)
        cand = np.flatnonzero(front)
        uv = np.zeros((len(pos), 2))
        uv[cand] = np.column_stack(
            (k.fx * pc[cand, 0] / pc[cand, 2] + k.cx, k.fy * pc[cand, 1] / pc[cand, 2] + k.cy)
        )
        cand = cand[k.contains(uv[cand])]
        # patches near enough to block anything
        near_raised = raised[(pc[raised, 2] > 0) & (dist[raised] <= cfg.lidar_max_range + half)]
        if len(cand) and len(near_raised):
            pos_in = {int(i): j for j, i in enumerate(near_raised)}
            self_idx = np.array([pos_in.get(int(i), -1) for i in cand], dtype=np.int64)
            blocked = np.zeros(len(cand), bool)
            for s0 in range(0, len(cand), 64):
                sl = slice(s0, s0 + 64)
                blocked[sl] = _occluded(
                    c2w.t, cur[cand[sl]], cur[near_raised], nrm[near_raised], rights[near_raised], half, self_idx[sl]
                )
            cand = cand[~blocked]
        px = uv[cand].copy()
        if cfg.pixel_noise > 0:
            noise = st["noise"].normal(0.0, cfg.pixel_noise, px.shape)
            px += np.clip(noise, -3 * cfg.pixel_noise, 3 * cfg.pixel_noise)
        veg = labels[cand] == "vegetation"
        if cfg.vegetation_jitter > 0 and veg.any():
            # leaves move in the patch plane; the feature follows them
            jit = st["jitter"].normal(0.0, cfg.vegetation_jitter, (int(veg.sum()), 2))
            jit = np.clip(jit, -half, half)
            moved = cur[cand[veg]] + jit[:, :1] * rights[cand[veg]] + jit[:, 1:] * np.array([0.0, 1.0, 0.0])
            mc = moved @ w2c.R.T + w2c.t
            px[veg] = np.column_stack((k.fx * mc[:, 0] / mc[:, 2] + k.cx, k.fy * mc[:, 1] / mc[:, 2] + k.cy))
        obs_f.append(np.full(len(cand), f, dtype=np.int64))
        obs_l.append(cand.astype(np.int64))
        obs_px.append(px)
        pts = _lidar_scan(cfg, c2w, cur[raised], nrm[raised], rights[raised], st["lidar"])
        scans.append(LidarScan(pts, float(t)))
    seq = SyntheticSequence(
        cfg,
        k,
        LIDAR_TO_CAMERA,
        gt,
        times,
        pos,
        labels,
        nrm,
        vel,
        np.concatenate(obs_f) if obs_f else np.zeros(0, np.int64),
        np.concatenate(obs_l) if obs_l else np.zeros(0, np.int64),
        np.concatenate(obs_px).reshape(-1, 2) if obs_px else np.zeros((0, 2)),
        scans,
    )
    if cfg.outlier_fraction > 0:
        seq = corrupt(seq, cfg.outlier_fraction, st["outliers"])
    return seq


def corrupt(seq: SyntheticSequence, outlier_fraction: float, rng: np.random.Generator) -> SyntheticSequence:
    """Replace exactly ``round(fraction * M)`` observations with uniform in-image pixels."""
    if not 0.0 <= outlier_fraction <= 1.0:
        raise InvalidConfig("outlier fraction must lie in [0, 1]")
    m = seq.observation_count
    count = int(math.floor(outlier_fraction * m + 0.5))
    if count == 0:
        return seq
    idx = np.sort(rng.choice(m, size=count, replace=False))
    px = seq.obs_pixels.copy()
    k = seq.intrinsics
    px[idx, 0] = rng.uniform(0.0, k.image_width, count)
    px[idx, 1] = rng.uniform(0.0, k.image_height, count)
    mask = seq.corrupted.copy()
    mask[idx] = True
    return replace(seq, obs_pixels=px, corrupted=mask)
