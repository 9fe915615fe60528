"""Frame-to-frame motion from 3D->2D and 2D->2D correspondences.

The motion maps previous-camera coordinates to current-camera coordinates.
Both residual families go through a Cauchy kernel applied to the squared
residual norm and are minimized with Levenberg-Marquardt on iteratively
reweighted normal equations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .geometry import (
    CameraIntrinsics,
    DegenerateMotion,
    NonPositiveDepth,
    Pose,
    fundamental_from_motion,
    project,
)


class OdometryError(RuntimeError):
    pass


class InsufficientCorrespondences(OdometryError):
    pass


class SolverDiverged(OdometryError):
    pass


@dataclass(frozen=True)
class Correspondence:
    curr_pixel: np.ndarray
    prev_pixel: Optional[np.ndarray] = None
    point3d: Optional[np.ndarray] = None


@dataclass(frozen=True)
class CauchyLoss:
    """``rho(x) = a^2 log(1 + x / a^2)`` on a squared residual ``x``."""

    a: float = 1.0

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("Cauchy scale must be positive")

    def __call__(self, x):
        a2 = self.a * self.a
        x = np.asarray(x, dtype=float)
        # log1p can round one ulp above x for tiny x
        return np.minimum(a2 * np.log1p(x / a2), x)

    def weight(self, x):
        """First derivative ``rho'(x)``, used as the IRLS weight."""
        a2 = self.a * self.a
        return 1.0 / (1.0 + np.asarray(x, dtype=float) / a2)


def cauchy(loss: CauchyLoss, x: float) -> float:
    if x < 0:
        raise ValueError("Cauchy loss takes a squared (nonnegative) residual")
    return float(loss(x))


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 100
    rel_tol: float = 1e-10
    grad_tol: float = 1e-8
    lambda0: float = 1e-4
    lambda_factor: float = 10.0
    lambda_max: float = 1e12


@dataclass(frozen=True)
class MotionEstimate:
    motion: Pose
    final_cost: float
    iterations: int
    converged: bool
    gradient_norm: float = 0.0
    cost_trace: tuple = ()


def residual_3d2d(c: Correspondence, motion: Pose, k: CameraIntrinsics) -> np.ndarray:
    if c.point3d is None:
        raise ValueError("correspondence has no 3D point")
    return np.asarray(c.curr_pixel, dtype=float) - project(k, motion.apply(c.point3d))


def residual_2d2d(c: Correspondence, motion: Pose, k: CameraIntrinsics) -> float:
    F = fundamental_from_motion(k, motion)
    p1 = np.array([c.prev_pixel[0], c.prev_pixel[1], 1.0])
    p2 = np.array([c.curr_pixel[0], c.curr_pixel[1], 1.0])
    return float(p2 @ F @ p1)


class _Problem:
    """Vectorized residuals and Jacobians of the joint objective."""

    def __init__(self, correspondences: Sequence[Correspondence], k: CameraIntrinsics, losses):
        self.k = k
        self.loss3, self.loss2 = losses
        with3 = [c for c in correspondences if c.point3d is not None]
        with2 = [c for c in correspondences if c.prev_pixel is not None]
        self.P = np.array([c.point3d for c in with3], dtype=float).reshape(-1, 3)
        self.obs3 = np.array([c.curr_pixel for c in with3], dtype=float).reshape(-1, 2)
        Kinv = k.inverse_matrix()
        prev = np.array([c.prev_pixel for c in with2], dtype=float).reshape(-1, 2)
        curr = np.array([c.curr_pixel for c in with2], dtype=float).reshape(-1, 2)
        self.x1 = np.column_stack((prev, np.ones(len(prev)))) @ Kinv.T
        self.x2 = np.column_stack((curr, np.ones(len(curr)))) @ Kinv.T
        self._zeros = np.zeros(len(self.P), dtype=np.int64)
        self._arange = np.arange(len(self.P), dtype=np.int64)

    @property
    def n3(self):
        return self.P.shape[0]

    @property
    def n2(self):
        return self.x1.shape[0]

    def _epipolar_active(self, motion: Pose) -> bool:
        return self.n2 > 0 and float(np.linalg.norm(motion.t)) >= 1e-12

    def residuals(self, motion: Pose):
        r3 = np.zeros((0, 2))
        if self.n3:
            Xc = self.P @ motion.R.T + motion.t
            if np.any(Xc[:, 2] <= 0):
                raise NonPositiveDepth("point behind the camera under the candidate motion")
            uv = np.column_stack(
                (self.k.fx * Xc[:, 0] / Xc[:, 2] + self.k.cx, self.k.fy * Xc[:, 1] / Xc[:, 2] + self.k.cy)
            )
            r3 = self.obs3 - uv
        r2 = np.zeros(0)
        if self._epipolar_active(motion):
            th = motion.t / np.linalg.norm(motion.t)
            y = self.x1 @ motion.R.T
            r2 = np.einsum("ij,ij->i", self.x2, np.cross(th, y))
        return r3, r2

    def cost(self, motion: Pose) -> float:
        try:
            r3, r2 = self.residuals(motion)
        except NonPositiveDepth:
            return math.inf
        return float(np.sum(self.loss3(np.sum(r3 * r3, axis=1))) + np.sum(self.loss2(r2 * r2)))

    def jacobians(self, motion: Pose):
        """Residuals and their Jacobians w.r.t. a left perturbation of ``motion``."""
        r3, r2 = self.residuals(motion)
        J3 = np.zeros((self.n3, 2, 6))
        if self.n3:
            _, _, Jp, _ = kernels.reprojection_jacobians(
                motion.R[None], motion.t[None], self.P, self._zeros, self._arange,
                self.k.fx, self.k.fy, self.k.cx, self.k.cy,
            )
            J3 = -Jp
        J2 = np.zeros((len(r2), 6))
        if len(r2):
            tn = float(np.linalg.norm(motion.t))
            th = motion.t / tn
            y = self.x1 @ motion.R.T
            yx2 = np.cross(y, self.x2)
            g = (yx2 - np.outer(yx2 @ th, th)) / tn
            J2[:, :3] = g
            J2[:, 3:] = np.cross(motion.t, g) + np.cross(y, np.cross(self.x2, th))
        return r3, r2, J3, J2

    def normal_equations(self, motion: Pose):
        r3, r2, J3, J2 = self.jacobians(motion)
        w3 = self.loss3.weight(np.sum(r3 * r3, axis=1))
        w2 = self.loss2.weight(r2 * r2)
        H = np.einsum("m,mri,mrj->ij", w3, J3, J3) + np.einsum("m,mi,mj->ij", w2, J2, J2)
        g = np.einsum("m,mri,mr->i", w3, J3, r3) + np.einsum("m,mi,m->i", w2, J2, r2)
        return H, g


def estimate_motion(
    correspondences: Sequence[Correspondence],
    k: CameraIntrinsics,
    init: Optional[Pose] = None,
    losses: tuple[CauchyLoss, CauchyLoss] = (CauchyLoss(1.0), CauchyLoss(1e-4)),
    solver_cfg: SolverConfig = SolverConfig(),
) -> MotionEstimate:
    n3 = sum(c.point3d is not None for c in correspondences)
    n2 = sum(c.prev_pixel is not None for c in correspondences)
    if n3 < 3 and n2 < 5:
        raise InsufficientCorrespondences(
            f"{n3} correspondences with depth and {n2} without; need 3 or 5"
        )
    motion = Pose.identity() if init is None else init
    if n3 == 0 and np.linalg.norm(motion.t) < 1e-12:
        # epipolar terms alone cannot move off a zero translation
        motion = Pose(motion.R, np.array([0.0, 0.0, 1.0]))
    prob = _Problem(correspondences, k, losses)
    cost = prob.cost(motion)
    if not math.isfinite(cost):
        raise SolverDiverged("initial cost is not finite")
    lam = solver_cfg.lambda0
    trace = [cost]
    converged = False
    grad_norm = math.inf
    it = 0
    H, g = prob.normal_equations(motion)
    while it < solver_cfg.max_iterations:
        it += 1
        grad_norm = 2.0 * float(np.linalg.norm(g))
        if grad_norm < solver_cfg.grad_tol or cost == 0.0:
            converged = True
            break
        A = H + lam * np.diag(np.maximum(np.diag(H), 1e-12))
        try:
            step = np.linalg.solve(A, -g)
        except np.linalg.LinAlgError:
            lam *= solver_cfg.lambda_factor
            continue
        cand = motion.left_perturb(step)
        new_cost = prob.cost(cand)
        if np.isnan(new_cost):
            raise SolverDiverged("cost became NaN")
        if new_cost < cost:
            rel = (cost - new_cost) / cost
            motion, cost = cand, new_cost
            trace.append(cost)
            lam = max(lam / solver_cfg.lambda_factor, 1e-15)
            H, g = prob.normal_equations(motion)
            if rel < solver_cfg.rel_tol:
                converged = True
                grad_norm = 2.0 * float(np.linalg.norm(g))
                break
        else:
            lam *= solver_cfg.lambda_factor
            if lam > solver_cfg.lambda_max:
                converged = True
                break
    if not math.isfinite(cost):
        raise SolverDiverged("final cost is not finite")
    return MotionEstimate(motion, cost, it, converged, grad_norm, tuple(trace))


__all__ = [
    "CauchyLoss",
    "Correspondence",
    "DegenerateMotion",
    "InsufficientCorrespondences",
    "MotionEstimate",
    "SolverConfig",
    "SolverDiverged",
    "cauchy",
    "estimate_motion",
    "residual_2d2d",
    "residual_3d2d",
]
