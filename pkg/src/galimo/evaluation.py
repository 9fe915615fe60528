"""Trajectory I/O and error metrics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .geometry import Pose

KITTI_LENGTHS = (100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0)


class EvaluationError(ValueError):
    pass


class ParseError(EvaluationError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class NonFiniteValue(ParseError):
    pass


class LengthMismatch(EvaluationError):
    pass


@dataclass(eq=False)
class Trajectory:
    """Camera-to-world poses stored as an ``(n, 4, 4)`` array."""

    matrices: np.ndarray
    timestamps: Optional[np.ndarray] = None
    reorthonormalized: list = field(default_factory=list)

    def __post_init__(self):
        m = np.asarray(self.matrices, dtype=float).reshape(-1, 4, 4)
        if not np.all(np.isfinite(m)):
            raise EvaluationError("trajectory contains non-finite entries")
        self.matrices = m
        if self.timestamps is not None:
            self.timestamps = np.asarray(self.timestamps, dtype=float)

    @classmethod
    def from_poses(cls, poses: Sequence[Pose], timestamps=None) -> Trajectory:
        return cls(np.array([p.matrix() for p in poses]).reshape(-1, 4, 4), timestamps)

    @property
    def poses(self) -> list[Pose]:
        return [Pose.from_matrix(T) for T in self.matrices]

    @property
    def positions(self) -> np.ndarray:
        return self.matrices[:, :3, 3]

    def __len__(self):
        return self.matrices.shape[0]

    def transformed(self, T) -> Trajectory:
        """Left-multiply every pose by ``T`` (a global change of world frame)."""
        T = T.matrix() if isinstance(T, Pose) else np.asarray(T, dtype=float)
        return Trajectory(T @ self.matrices, self.timestamps)

    def path_lengths(self) -> np.ndarray:
        p = self.positions
        steps = np.linalg.norm(np.diff(p, axis=0), axis=1)
        return np.concatenate(([0.0], np.cumsum(steps)))


def _orthonormalize(R: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.linalg.det(U @ Vt)])
    return U @ D @ Vt


def read_kitti_poses(text: str, drift_tol: float = 1e-6) -> Trajectory:
    """Parse the KITTI odometry pose format (12 values per line, row-major 3x4)."""
    mats = []
    fixed = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 12:
            raise ParseError(f"expected 12 values, got {len(parts)}", lineno)
        try:
            vals = np.array([float(v) for v in parts])
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        if not np.all(np.isfinite(vals)):
            raise NonFiniteValue("non-finite value", lineno)
        T = np.eye(4)
        T[:3, :] = vals.reshape(3, 4)
        R = T[:3, :3]
        if np.abs(R.T @ R - np.eye(3)).max() > drift_tol:
            T[:3, :3] = _orthonormalize(R)
            fixed.append(len(mats))
        mats.append(T)
    return Trajectory(np.array(mats).reshape(-1, 4, 4), reorthonormalized=fixed)


def format_kitti_poses(traj: Trajectory) -> str:
    lines = []
    for T in traj.matrices:
        lines.append(" ".join(repr(float(v)) for v in T[:3, :].ravel()))
    return "\n".join(lines) + ("\n" if lines else "")


def load_kitti_poses(path) -> Trajectory:
    return read_kitti_poses(Path(path).read_text())


def save_kitti_poses(path, traj: Trajectory) -> None:
    Path(path).write_text(format_kitti_poses(traj))


@dataclass
class ErrorReport:
    translation_error_percent: float
    ape_rmse: float
    per_length: dict
    pose_count: int
    rotation_error_deg_per_m: float = 0.0
    per_length_rotation: dict = field(default_factory=dict)
    segment_count: int = 0
    too_short: bool = False

    def to_dict(self) -> dict:
        return {
            "translation_error_percent": self.translation_error_percent,
            "rotation_error_deg_per_m": self.rotation_error_deg_per_m,
            "ape_rmse": self.ape_rmse,
            "pose_count": self.pose_count,
            "segment_count": self.segment_count,
            "too_short": self.too_short,
            "per_length": {repr(float(k)): v for k, v in self.per_length.items()},
            "per_length_rotation": {repr(float(k)): v for k, v in self.per_length_rotation.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        rows = ["length_m  trans_err_%  rot_err_deg_per_m"]
        for L in sorted(self.per_length):
            rows.append(f"{L:8.1f}  {self.per_length[L]:11.4f}  {self.per_length_rotation.get(L, 0.0):17.6f}")
        rows.append(f"{'mean':>8}  {self.translation_error_percent:11.4f}  {self.rotation_error_deg_per_m:17.6f}")
        rows.append(f"APE RMSE: {self.ape_rmse:.6f} m over {self.pose_count} poses")
        return "\n".join(rows) + "\n"


def _check_lengths(est: Trajectory, gt: Trajectory, minimum: int):
    if len(est) != len(gt):
        raise LengthMismatch(f"estimate has {len(est)} poses, ground truth {len(gt)}")
    if len(gt) < minimum:
        raise EvaluationError(f"need at least {minimum} poses, got {len(gt)}")


def kitti_segment_errors(est: Trajectory, gt: Trajectory, lengths=KITTI_LENGTHS, step: int = 10) -> np.ndarray:
    """Raw ``(first, length_index, t_err/len, r_err/len)`` rows."""
    return kernels.kitti_segment_errors(
        gt.matrices, est.matrices, gt.path_lengths(), np.asarray(lengths, dtype=float), int(step)
    )


def kitti_translation_error(
    est: Trajectory, gt: Trajectory, lengths=KITTI_LENGTHS, step: int = 10
) -> ErrorReport:
    """Average relative drift over all subsequences of the given lengths.

    The overall figure is the mean of the per-length means, in percent.
    """
    _check_lengths(est, gt, 2)
    lengths = [float(L) for L in lengths]
    seg = kitti_segment_errors(est, gt, lengths, step)
    per_len: dict = {}
    per_rot: dict = {}
    for li, L in enumerate(lengths):
        rows = seg[seg[:, 1] == li]
        if len(rows):
            per_len[L] = 100.0 * float(rows[:, 2].mean())
            per_rot[L] = math.degrees(float(rows[:, 3].mean()))
    trans = float(np.mean(list(per_len.values()))) if per_len else 0.0
    rot = float(np.mean(list(per_rot.values()))) if per_rot else 0.0
    return ErrorReport(
        translation_error_percent=trans,
        ape_rmse=ape_rmse(est, gt),
        per_length=per_len,
        pose_count=len(gt),
        rotation_error_deg_per_m=rot,
        per_length_rotation=per_rot,
        segment_count=int(len(seg)),
        too_short=not per_len,
    )


def umeyama_alignment(est: Trajectory, gt: Trajectory) -> Pose:
    """Rigid transform ``T`` minimizing ``sum |T est_i - gt_i|^2`` over positions."""
    a = est.positions
    b = gt.positions
    ma, mb = a.mean(axis=0), b.mean(axis=0)
    C = (b - mb).T @ (a - ma) / len(a)
    U, _, Vt = np.linalg.svd(C)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt)) or 1.0])
    R = U @ D @ Vt
    return Pose(R, mb - R @ ma)


def ape_rmse(est: Trajectory, gt: Trajectory, align: bool = False) -> float:
    """RMSE of the translation of ``gt_i^-1 est_i``."""
    _check_lengths(est, gt, 1)
    if align:
        est = est.transformed(umeyama_alignment(est, gt))
    R = gt.matrices[:, :3, :3]
    d = est.matrices[:, :3, 3] - gt.matrices[:, :3, 3]
    err = np.einsum("nji,nj->ni", R, d)
    return float(np.sqrt(np.mean(np.sum(err * err, axis=1))))
