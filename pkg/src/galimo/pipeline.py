"""Sequence-level odometry: depth, frame-to-frame motion and keyframe BA.

The frontend (lidar depth per feature and chained frame odometry) does not
depend on the tunable parameters, so it runs once per sequence and the
backend replays it for each parameter set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .backend import (
    BaParams,
    Frame,
    InsufficientData,
    Keyframe,
    KeyframeConfig,
    LandmarkRecord,
    bin_and_select_landmarks,
    optimize_window,
    select_keyframes,
)
from .depth import DepthError, DepthParams, estimate_feature_depths, fit_ground_plane, project_scan
from .evaluation import ErrorReport, Trajectory, kitti_translation_error
from .geometry import CameraIntrinsics, Pose, backproject
from .odometry import (
    CauchyLoss,
    Correspondence,
    OdometryError,
    SolverConfig,
    estimate_motion,
)
from .scene import SyntheticSequence

SYNTHETIC_LENGTHS = (5.0, 10.0, 15.0, 20.0)


@dataclass(frozen=True)
class PipelineConfig:
    depth: DepthParams = DepthParams()
    keyframes: KeyframeConfig = KeyframeConfig()
    odometry_solver: SolverConfig = SolverConfig()
    ba_solver: SolverConfig = SolverConfig(max_iterations=20, rel_tol=1e-6)
    odometry_losses: tuple = (CauchyLoss(1.0), CauchyLoss(1e-4))
    use_dynamic_in_odometry: bool = False
    selection_seed: int = 0
    eval_lengths: tuple = SYNTHETIC_LENGTHS
    eval_step: int = 1


@dataclass(eq=False)
class FrontendFrame:
    index: int
    timestamp: float
    ids: np.ndarray
    pixels: np.ndarray
    labels: np.ndarray
    depths: np.ndarray  # NaN where the lidar gave no accepted depth
    reasons: list = field(default_factory=list)


@dataclass(eq=False)
class FrontendResult:
    intrinsics: CameraIntrinsics
    frames: list
    motions: list  # camera f-1 -> camera f
    odometry_poses: list  # world -> camera
    failures: list = field(default_factory=list)


@dataclass(eq=False)
class BackendResult:
    poses: list  # world -> camera, one per frame
    keyframe_ids: list
    windows: int
    failures: list = field(default_factory=list)

    def trajectory(self, timestamps=None) -> Trajectory:
        return Trajectory.from_poses([p.inverse() for p in self.poses], timestamps)


# --- frontend --------------------------------------------------------------


def _frame_depths(seq: SyntheticSequence, f: int, params: DepthParams) -> FrontendFrame:
    ids, px, labels = seq.frame_observations(f)
    scan = seq.scans[f]
    ground = None
    flags = labels == "ground"
    if flags.any() and len(scan) >= 3:
        try:
            ground = fit_ground_plane(
                scan, params.ransac_iterations, params.ransac_inlier_tol, seed=params.seed
            ).transformed(seq.extrinsic)
        except DepthError:
            ground = None
    projected = project_scan(scan, seq.extrinsic, seq.intrinsics)
    est = estimate_feature_depths(
        px, scan, seq.extrinsic, seq.intrinsics, params, flags, ground, projected
    )
    depths = np.array([e.depth if e.accepted else np.nan for e in est], dtype=float)
    return FrontendFrame(
        f, float(seq.timestamps[f]), ids.copy(), px.copy(), labels.copy(), depths, [e.reason for e in est]
    )


def _correspondences(prev: FrontendFrame, cur: FrontendFrame, k: CameraIntrinsics, use_dynamic: bool):
    common, ip, ic = np.intersect1d(prev.ids, cur.ids, assume_unique=True, return_indices=True)
    out = []
    for a, b in zip(ip, ic):
        if not use_dynamic and cur.labels[b] == "dynamic":
            continue
        d = prev.depths[a]
        p3 = None if np.isnan(d) else backproject(k, prev.pixels[a], d)
        out.append(Correspondence(cur.pixels[b], prev.pixels[a], p3))
    return out


def run_frontend(seq: SyntheticSequence, cfg: PipelineConfig = PipelineConfig()) -> FrontendResult:
    k = seq.intrinsics
    frames = [_frame_depths(seq, f, cfg.depth) for f in range(seq.frame_count)]
    motions = [Pose.identity()]
    poses = [Pose.identity()]
    failures = []
    for f in range(1, len(frames)):
        init = motions[-1]
        corr = _correspondences(frames[f - 1], frames[f], k, cfg.use_dynamic_in_odometry)
        try:
            m = estimate_motion(corr, k, init, cfg.odometry_losses, cfg.odometry_solver).motion
        except OdometryError as exc:
            failures.append(f"frame {f}: {exc}")
            m = init
        motions.append(m)
        poses.append(m @ poses[-1])
    return FrontendResult(k, frames, motions, poses, failures)


# --- backend ---------------------------------------------------------------


def triangulate(poses: Sequence[Pose], pixels, k: CameraIntrinsics) -> Optional[np.ndarray]:
    """Linear triangulation from world-to-camera poses; None if ill-posed."""
    if len(poses) < 2:
        return None
    Kinv = k.inverse_matrix()
    rows = []
    for p, uv in zip(poses, pixels):
        x = Kinv @ np.array([uv[0], uv[1], 1.0])
        P = np.hstack((p.R, p.t[:, None]))
        rows.append(x[0] * P[2] - P[0])
        rows.append(x[1] * P[2] - P[1])
    _, s, vt = np.linalg.svd(np.array(rows))
    X = vt[-1]
    if abs(X[3]) < 1e-12:
        return None
    X = X[:3] / X[3]
    zs = [float((p.R @ X + p.t)[2]) for p in poses]
    if min(zs) <= 0.5:
        return None
    # reject near-parallel rays
    c0 = -poses[0].R.T @ poses[0].t
    c1 = -poses[-1].R.T @ poses[-1].t
    r0, r1 = X - c0, X - c1
    cosang = float(r0 @ r1 / (np.linalg.norm(r0) * np.linalg.norm(r1)))
    if cosang > math.cos(math.radians(0.5)):
        return None
    return X


def _window_keyframes(front: FrontendResult, ids: Sequence[int], poses: dict) -> list:
    out = []
    for fid in ids:
        fr = front.frames[fid]
        keep = fr.labels != "dynamic"
        out.append(
            Keyframe(
                fid, fr.timestamp, poses[fid], "sparsified",
                fr.ids[keep], fr.pixels[keep], fr.depths[keep],
            )
        )
    return out


def _init_landmarks(window: list, known: dict, k: CameraIntrinsics, labels: dict) -> list:
    seen: dict = {}
    for j, kf in enumerate(window):
        for lid, px, d in zip(kf.landmark_ids.tolist(), kf.pixels, kf.depths):
            seen.setdefault(lid, []).append((j, px, d))
    records = []
    newest = len(window) - 1
    for lid in sorted(seen):
        obs = seen[lid]
        if len(obs) < 2:
            continue
        pos = known.get(lid)
        if pos is None:
            for j, px, d in reversed(obs):
                if not np.isnan(d):
                    pos = window[j].pose.inverse().apply(backproject(k, px, d))
                    break
        if pos is None:
            pos = triangulate([window[j].pose for j, _, _ in obs], [px for _, px, _ in obs], k)
        if pos is None:
            continue
        pos = np.asarray(pos, dtype=float)
        if min(float((window[j].pose.R @ pos + window[j].pose.t)[2]) for j, _, _ in obs) <= 0.5:
            continue
        depth = None
        for j, _, d in obs:
            if j == newest and not np.isnan(d):
                depth = float(d)
        records.append(LandmarkRecord(lid, pos, depth, labels[lid]))
    return records


def run_backend(
    front: FrontendResult, params: BaParams, cfg: PipelineConfig = PipelineConfig()
) -> BackendResult:
    k = front.intrinsics
    odom = front.odometry_poses
    frames = [Frame(fr.index, fr.timestamp, odom[fr.index]) for fr in front.frames]
    kfs = select_keyframes(frames, cfg.keyframes, truncate=False)
    labels = {}
    for fr in front.frames:
        for lid, lab in zip(fr.ids.tolist(), fr.labels):
            labels[lid] = lab
    opt = {kfs[0].id: odom[kfs[0].id]}
    known: dict = {}
    failures = []
    windows = 0
    W = max(2, cfg.keyframes.window)
    for n in range(1, len(kfs)):
        cur, prev = kfs[n].id, kfs[n - 1].id
        opt[cur] = (odom[cur] @ odom[prev].inverse()) @ opt[prev]
        ids = [kf.id for kf in kfs[max(0, n - W + 1): n + 1]]
        window = _window_keyframes(front, ids, opt)
        records = _init_landmarks(window, known, k, labels)
        selected = bin_and_select_landmarks(records, opt[cur], params, cfg.selection_seed)
        if not selected:
            failures.append(f"keyframe {cur}: no landmarks selected")
            continue
        try:
            sol = optimize_window(window, selected, params, k, cfg.ba_solver)
        except (InsufficientData, OdometryError) as exc:
            failures.append(f"keyframe {cur}: {exc}")
            continue
        windows += 1
        for fid, p in zip(ids, sol.poses):
            opt[fid] = p
        for lid, pos in sol.landmarks.items():
            if lid in sol.rejected_landmarks:
                known.pop(lid, None)
            else:
                known[lid] = pos
    kf_ids = [kf.id for kf in kfs]
    poses = []
    j = 0
    for f in range(len(front.frames)):
        while j + 1 < len(kf_ids) and kf_ids[j + 1] <= f:
            j += 1
        base = kf_ids[j]
        poses.append((odom[f] @ odom[base].inverse()) @ opt[base])
    return BackendResult(poses, kf_ids, windows, failures)


def run_odometry(
    seq: SyntheticSequence, params: BaParams = BaParams(), cfg: PipelineConfig = PipelineConfig()
) -> BackendResult:
    return run_backend(run_frontend(seq, cfg), params, cfg)


def evaluate_sequence(seq: SyntheticSequence, result: BackendResult, cfg: PipelineConfig = PipelineConfig()) -> ErrorReport:
    return kitti_translation_error(result.trajectory(), seq.ground_truth, cfg.eval_lengths, cfg.eval_step)


class SequenceTask:
    """GA evaluation task: translation error (%) of one sequence under a parameter set.

    The frontend is computed on first use and reused for every later call.
    Pickling keeps only the frontend and ground truth, not the raw scans.
    """

    def __init__(
        self,
        seq: SyntheticSequence,
        cfg: PipelineConfig = PipelineConfig(),
        base_params: BaParams = BaParams(),
        name: str = "",
    ):
        self.seq: Optional[SyntheticSequence] = seq
        self.ground_truth = seq.ground_truth
        self.cfg = cfg
        self.base_params = base_params
        self.name = name
        self._front: Optional[FrontendResult] = None

    @property
    def frontend(self) -> FrontendResult:
        if self._front is None:
            self._front = run_frontend(self.seq, self.cfg)
        return self._front

    def __getstate__(self):
        state = dict(self.__dict__)
        state["_front"] = self.frontend
        state["seq"] = None
        return state

    def run(self, params) -> BackendResult:
        ba = params.to_ba_params(self.base_params) if hasattr(params, "to_ba_params") else params
        return run_backend(self.frontend, ba, self.cfg)

    def report(self, params) -> ErrorReport:
        result = self.run(params)
        return kitti_translation_error(result.trajectory(), self.ground_truth, self.cfg.eval_lengths, self.cfg.eval_step)

    def __call__(self, params) -> float:
        return self.report(params).translation_error_percent
