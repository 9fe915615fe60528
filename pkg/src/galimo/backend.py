"""Keyframe bundle adjustment.

Window poses are world-to-camera.  The objective per window is

    w0 * nu^2 + sum_ij w1 * m_i * rho_phi(|phi_ij|^2) + w2 * m_i * rho_xi(xi_ij^2)

with ``phi`` the reprojection error, ``xi`` the lidar depth residual,
``nu`` the translation-length regularizer on the last two poses and
``m_i`` the semantic landmark weight.  The first window pose is the gauge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from . import kernels
from .geometry import CameraIntrinsics, Pose
from .odometry import CauchyLoss, SolverConfig, SolverDiverged

LABELS = ("ground", "vegetation", "structure", "dynamic")
BINS = ("near", "middle", "far")


class InsufficientData(ValueError):
    pass


@dataclass(frozen=True)
class Frame:
    """Input to keyframe selection; ``pose`` is world-to-camera."""

    id: int
    timestamp: float
    pose: Pose
    required: bool = False


@dataclass(eq=False)
class Keyframe:
    id: int
    timestamp: float
    pose: Pose
    kind: str = "sparsified"
    landmark_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    pixels: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    depths: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def observations(self):
        """``(landmark id, pixel, depth or None)`` triples."""
        return [
            (int(i), p, None if np.isnan(d) else float(d))
            for i, p, d in zip(self.landmark_ids, self.pixels, self.depths)
        ]


@dataclass(eq=False)
class LandmarkRecord:
    id: int
    position: np.ndarray
    depth_estimate: Optional[float] = None
    label: str = "structure"
    bin: str = "unassigned"


@dataclass(frozen=True)
class BaParams:
    delta: float = 0.95
    eps_near: int = 400
    eps_middle: int = 400
    eps_far: int = 400
    mu: float = 0.9
    w0: float = 10.0
    w1: float = 1.0
    w2: float = 1.0
    near_max: float = 15.0
    middle_max: float = 30.0
    reprojection_loss: CauchyLoss = CauchyLoss(1.0)
    depth_loss: CauchyLoss = CauchyLoss(0.5)
    squared_regularizer: bool = False

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("delta must lie in [0, 1]")
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError("mu must lie in [0, 1]")
        for name in ("eps_near", "eps_middle", "eps_far"):
            if not 0 <= getattr(self, name) <= 999:
                raise ValueError(f"{name} must lie in [0, 999]")

    def cap(self, bin_name: str) -> int:
        return {"near": self.eps_near, "middle": self.eps_middle, "far": self.eps_far}[bin_name]


@dataclass(frozen=True)
class KeyframeConfig:
    min_interval: float = 0.3
    standstill: float = 0.03
    window: int = 5
    required_rotation: float = math.radians(5.0)


@dataclass
class WindowSolution:
    poses: list
    landmarks: dict
    cost_trace: list
    rejected_landmarks: set
    phase_lengths: list = field(default_factory=list)


def _center(p: Pose) -> np.ndarray:
    return -p.R.T @ p.t


def select_keyframes(frames: Sequence[Frame], cfg: KeyframeConfig = KeyframeConfig(), truncate: bool = True) -> list[Keyframe]:
    """Reject standstill frames, keep one frame per ``min_interval`` seconds.

    The first frame and frames flagged ``required`` (or whose rotation since
    the last keyframe exceeds ``required_rotation``) are always kept.  With
    ``truncate`` only the newest ``cfg.window`` keyframes are returned.
    """
    out: list[Keyframe] = []
    prev = None
    for f in frames:
        if not out:
            out.append(Keyframe(f.id, f.timestamp, f.pose, "required"))
            prev = f
            continue
        last = out[-1]
        moved = float(np.linalg.norm(_center(f.pose) - _center(prev.pose)))
        prev = f
        turned = math.acos(
            min(1.0, max(-1.0, (np.trace(f.pose.R @ last.pose.R.T) - 1.0) / 2.0))
        )
        if f.required or turned > cfg.required_rotation:
            out.append(Keyframe(f.id, f.timestamp, f.pose, "required"))
            continue
        if moved < cfg.standstill:
            continue
        if f.timestamp - last.timestamp >= cfg.min_interval - 1e-9:
            out.append(Keyframe(f.id, f.timestamp, f.pose, "sparsified"))
    if truncate and cfg.window > 0:
        out = out[-cfg.window:]
    return out


def _bin_of(depth: float, params: BaParams) -> str:
    if depth <= params.near_max:
        return "near"
    if depth <= params.middle_max:
        return "middle"
    return "far"


def bin_and_select_landmarks(
    landmarks: Sequence[LandmarkRecord], current_pose: Pose, params: BaParams, seed: int = 0
) -> list[LandmarkRecord]:
    """Bin by camera-frame depth and cap each bin at its epsilon.

    Over-full bins are thinned by taking evenly spaced landmarks in order of
    horizontal bearing, with a seed-dependent phase.
    """
    rng = np.random.default_rng(seed)
    phase = rng.random()
    groups: dict[str, list[tuple[float, LandmarkRecord]]] = {b: [] for b in BINS}
    for lm in landmarks:
        if lm.label == "dynamic":
            continue
        pc = current_pose.apply(lm.position)
        groups[_bin_of(float(pc[2]), params)].append((math.atan2(pc[0], pc[2]), lm))
    selected = []
    for b in BINS:
        items = sorted(groups[b], key=lambda it: (it[0], it[1].id))
        cap = params.cap(b)
        n = len(items)
        if n > cap:
            idx = [int((i + phase) * n / cap) for i in range(cap)]
            items = [items[i] for i in idx]
        selected.extend(replace(lm, bin=b) for _, lm in items)
    return selected


def landmark_weight(l: LandmarkRecord, params: BaParams) -> float:
    return params.mu if l.label == "vegetation" else 1.0


def depth_residual(l: LandmarkRecord, p: Pose, depth: Optional[float] = None) -> float:
    d = l.depth_estimate if depth is None else depth
    if d is None:
        return 0.0
    return float(d - p.apply(l.position)[2])


def translation_length(p1: Pose, p0: Pose, squared: bool = False) -> float:
    s = float(np.linalg.norm((p0.inverse() @ p1).t))
    return s * s if squared else s


def translation_regularizer(p1: Pose, p0: Pose, s: float, squared: bool = False) -> float:
    """``|translation(p0^-1 p1)| - s``; poses are camera-to-world here."""
    return translation_length(p1, p0, squared) - s


def nearest_rank_threshold(values, delta: float) -> float:
    v = np.sort(np.asarray(values, dtype=float))
    rank = max(1, math.ceil(delta * len(v) - 1e-12))
    return float(v[rank - 1])


def reject_outliers(residuals: Mapping[int, float], delta: float) -> set:
    """Ids whose residual exceeds the nearest-rank ``delta`` quantile."""
    if not 0.0 <= delta <= 1.0:
        raise ValueError("delta must lie in [0, 1]")
    if not residuals:
        return set()
    q = nearest_rank_threshold(list(residuals.values()), delta)
    return {i for i, r in residuals.items() if r > q}


class _Window:
    """Vectorized Eq.-style window problem solved with a Schur complement."""

    def __init__(self, keyframes, landmarks, params: BaParams, k: CameraIntrinsics):
        self.k = k
        self.params = params
        self.K = len(keyframes)
        self.ids = [lm.id for lm in landmarks]
        index = {lid: i for i, lid in enumerate(self.ids)}
        weights = np.array([landmark_weight(lm, params) for lm in landmarks])
        pose_idx, land_idx, uv, depth = [], [], [], []
        for j, kf in enumerate(keyframes):
            for lid, px, d in zip(kf.landmark_ids, kf.pixels, kf.depths):
                i = index.get(int(lid))
                if i is None:
                    continue
                pose_idx.append(j)
                land_idx.append(i)
                uv.append(px)
                depth.append(d)
        self.pose_idx = np.array(pose_idx, dtype=np.int64)
        self.land_idx = np.array(land_idx, dtype=np.int64)
        self.uv = np.array(uv, dtype=float).reshape(-1, 2)
        depth = np.array(depth, dtype=float)
        self.has_depth = ~np.isnan(depth)
        self.depth = np.where(self.has_depth, depth, 0.0)
        self.m = weights[self.land_idx] if len(weights) else np.zeros(0)
        self.L = len(self.ids)

    # --- state helpers -------------------------------------------------
    @staticmethod
    def _stack(poses):
        return np.array([p.R for p in poses]), np.array([p.t for p in poses])

    def regularizer(self, poses, s):
        if self.K < 2:
            return 0.0
        p1, p0 = poses[-1].inverse(), poses[-2].inverse()
        return translation_regularizer(p1, p0, s, self.params.squared_regularizer)

    def terms(self, poses, pts):
        """Per-observation robust costs (unweighted by w1/w2/m)."""
        R, t = self._stack(poses)
        Xc = np.einsum("mij,mj->mi", R[self.pose_idx], pts[self.land_idx]) + t[self.pose_idx]
        z = Xc[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            uv = np.column_stack(
                (self.k.fx * Xc[:, 0] / z + self.k.cx, self.k.fy * Xc[:, 1] / z + self.k.cy)
            )
        r = self.uv - uv
        sq = np.sum(r * r, axis=1)
        sq = np.where(z > 0, sq, np.inf)
        xi = np.where(self.has_depth, self.depth - z, 0.0)
        return self.params.reprojection_loss(sq), self.params.depth_loss(xi * xi)

    def cost(self, poses, pts, s) -> float:
        rp, rd = self.terms(poses, pts)
        p = self.params
        nu = self.regularizer(poses, s)
        return float(p.w0 * nu * nu + np.sum(p.w1 * self.m * rp) + np.sum(p.w2 * self.m * rd))

    def linearize(self, poses, pts, s):
        """Gauss-Newton blocks.

        A keyframe sees a landmark at most once, so the pose-landmark
        coupling is stored densely as a ``(6K, 3L)`` matrix.
        """
        p = self.params
        R, t = self._stack(poses)
        Xc, uv, Jp, Jl = kernels.reprojection_jacobians(
            R, t, pts, self.pose_idx, self.land_idx, self.k.fx, self.k.fy, self.k.cx, self.k.cy
        )
        M = len(self.pose_idx)
        r = np.zeros((M, 3))
        r[:, :2] = self.uv - uv
        r[:, 2] = np.where(self.has_depth, self.depth - Xc[:, 2], 0.0)
        Jpose = np.zeros((M, 3, 6))
        Jpt = np.zeros((M, 3, 3))
        Jpose[:, :2] = -Jp
        Jpt[:, :2] = -Jl
        # d z_c / d(rho, theta) = [0, 0, 1, y, -x, 0]
        Jpose[:, 2, 2] = -1.0
        Jpose[:, 2, 3] = -Xc[:, 1]
        Jpose[:, 2, 4] = Xc[:, 0]
        Jpt[:, 2] = -R[self.pose_idx, 2, :]
        sq = np.sum(r[:, :2] ** 2, axis=1)
        w = np.zeros((M, 3))
        w[:, 0] = w[:, 1] = p.w1 * self.m * p.reprojection_loss.weight(sq)
        w[:, 2] = np.where(self.has_depth, p.w2 * self.m * p.depth_loss.weight(r[:, 2] ** 2), 0.0)
        WJpT = (Jpose * w[:, :, None]).transpose(0, 2, 1)
        WJlT = (Jpt * w[:, :, None]).transpose(0, 2, 1)
        K, L = self.K, self.L
        grid_pp = np.zeros((K, L, 6, 6))
        grid_pl = np.zeros((K, L, 6, 3))
        grid_ll = np.zeros((K, L, 3, 3))
        grid_gp = np.zeros((K, L, 6))
        grid_gl = np.zeros((K, L, 3))
        at = (self.pose_idx, self.land_idx)
        grid_pp[at] = WJpT @ Jpose
        grid_pl[at] = WJpT @ Jpt
        grid_ll[at] = WJlT @ Jpt
        grid_gp[at] = (WJpT @ r[:, :, None])[..., 0]
        grid_gl[at] = (WJlT @ r[:, :, None])[..., 0]
        Hpp = np.zeros((6 * K, 6 * K))
        for j, blk in enumerate(grid_pp.sum(axis=1)):
            Hpp[6 * j:6 * j + 6, 6 * j:6 * j + 6] = blk
        Hpl = grid_pl.transpose(0, 2, 1, 3).reshape(6 * K, 3 * L)
        Hll = grid_ll.sum(axis=0)
        gp = grid_gp.sum(axis=1)
        gl = grid_gl.sum(axis=0)
        if K >= 2 and p.w0 > 0:
            nu, J = self._regularizer_jacobian(poses, s)
            Jfull = np.zeros(6 * K)
            Jfull[6 * (K - 2):] = J.reshape(-1)
            Hpp += p.w0 * np.outer(Jfull, Jfull)
            gp += (p.w0 * nu * Jfull).reshape(K, 6)
        return Hpp, gp, Hpl, Hll, gl

    def _regularizer_jacobian(self, poses, s):
        P0, P1 = poses[-2], poses[-1]
        c0, c1 = _center(P0), _center(P1)
        d = c1 - c0
        sh = float(np.linalg.norm(d))
        J = np.zeros((2, 6))
        if sh > 0:
            u = d / sh
            # d c / d rho = -R^T under a left perturbation; rotation leaves c fixed
            J[1, :3] = -(u @ P1.R.T)
            J[0, :3] = u @ P0.R.T
        if self.params.squared_regularizer:
            J *= 2.0 * sh
            nu = sh * sh - s
        else:
            nu = sh - s
        return nu, J

    def solve_step(self, lin, lam):
        """Damped step with the first pose fixed, landmarks eliminated by Schur complement."""
        Hpp, gp, Hpl, Hll, gl = lin
        K, L = self.K, self.L
        n = 6 * (K - 1)
        A = Hpp[6:, 6:].copy()
        A[np.diag_indices(n)] += lam * np.maximum(np.diag(A), 1e-12)
        Hd = Hll.copy()
        dl = np.maximum(np.einsum("lii->li", Hd), 1e-12)
        Hd[:, np.arange(3), np.arange(3)] += lam * dl
        Hinv = np.linalg.inv(Hd)
        B = Hpl[6:]
        BH = (B.reshape(n, L, 3).transpose(1, 0, 2) @ Hinv).transpose(1, 0, 2).reshape(n, 3 * L)
        S = A - BH @ B.T
        rhs = -gp[1:].reshape(-1) + BH @ gl.reshape(-1)
        dp = np.linalg.solve(S, rhs)
        dposes = np.zeros((K, 6))
        dposes[1:] = dp.reshape(K - 1, 6)
        tmp = -gl - (B.T @ dp).reshape(L, 3)
        dl_ = (Hinv @ tmp[:, :, None])[..., 0]
        return dposes, dl_

    def gradient_norm(self, lin) -> float:
        _, gp, _, _, gl = lin
        return 2.0 * float(np.sqrt(np.sum(gp[1:] ** 2) + np.sum(gl**2)))

    def per_landmark_reprojection(self, poses, pts) -> dict:
        rp, _ = self.terms(poses, pts)
        sums = np.bincount(self.land_idx, weights=rp, minlength=self.L)
        counts = np.bincount(self.land_idx, minlength=self.L)
        mean = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
        return {lid: float(mean[i]) for i, lid in enumerate(self.ids)}


def _lm(win: _Window, poses, pts, s, cfg: SolverConfig):
    cost = win.cost(poses, pts, s)
    if not math.isfinite(cost):
        raise SolverDiverged("initial window cost is not finite")
    trace = [cost]
    lam = cfg.lambda0
    lin = win.linearize(poses, pts, s)
    for _ in range(cfg.max_iterations):
        if cost == 0.0 or win.gradient_norm(lin) < cfg.grad_tol:
            break
        try:
            dposes, dpts = win.solve_step(lin, lam)
        except np.linalg.LinAlgError:
            lam *= cfg.lambda_factor
            if lam > cfg.lambda_max:
                break
            continue
        cand = [poses[0]] + [p.left_perturb(d) for p, d in zip(poses[1:], dposes[1:])]
        cand_pts = pts + dpts
        new_cost = win.cost(cand, cand_pts, s)
        if np.isnan(new_cost):
            raise SolverDiverged("window cost became NaN")
        if new_cost < cost:
            rel = (cost - new_cost) / cost
            poses, pts, cost = cand, cand_pts, new_cost
            trace.append(cost)
            lam = max(lam / cfg.lambda_factor, 1e-15)
            if rel < cfg.rel_tol:
                break
            lin = win.linearize(poses, pts, s)
        else:
            lam *= cfg.lambda_factor
            if lam > cfg.lambda_max:
                break
    return poses, pts, trace


def optimize_window(
    keyframes: Sequence[Keyframe],
    landmarks: Sequence[LandmarkRecord],
    params: BaParams,
    k: CameraIntrinsics,
    solver_cfg: SolverConfig = SolverConfig(),
    reject: bool = True,
) -> WindowSolution:
    """Robust window solve, one nearest-rank rejection pass, then a re-solve."""
    if len(keyframes) < 2:
        raise InsufficientData("need at least 2 keyframes")
    if len(landmarks) < 1:
        raise InsufficientData("need at least 1 landmark")
    poses = [kf.pose for kf in keyframes]
    pts = np.array([lm.position for lm in landmarks], dtype=float).reshape(-1, 3)
    s = translation_length(poses[-1].inverse(), poses[-2].inverse(), params.squared_regularizer)
    win = _Window(keyframes, landmarks, params, k)
    poses, pts, trace = _lm(win, poses, pts, s, solver_cfg)
    phases = [len(trace)]
    rejected: set = set()
    if reject:
        rejected = reject_outliers(win.per_landmark_reprojection(poses, pts), params.delta)
        keep = [i for i, lm in enumerate(landmarks) if lm.id not in rejected]
        if rejected and keep:
            kept = [landmarks[i] for i in keep]
            win2 = _Window(keyframes, kept, params, k)
            poses, pts2, trace2 = _lm(win2, poses, pts[keep], s, solver_cfg)
            pts = pts.copy()
            pts[keep] = pts2
            trace = trace + trace2
            phases.append(len(trace2))
    return WindowSolution(
        poses=list(poses),
        landmarks={lm.id: pts[i] for i, lm in enumerate(landmarks)},
        cost_trace=trace,
        rejected_landmarks=rejected,
        phase_lengths=phases,
    )
