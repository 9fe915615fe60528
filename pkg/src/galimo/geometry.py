"""Rigid transforms, pinhole projection and epipolar primitives.

Rotation convention: fixed-axis XYZ (roll, pitch, yaw).  A pose built from
``(x, y, z, alpha, beta, gamma)`` rotates a point about the fixed X axis by
``alpha``, then the fixed Y axis by ``beta``, then the fixed Z axis by
``gamma``, i.e. ``R = Rz(gamma) @ Ry(beta) @ Rx(alpha)``, and then translates
by ``(x, y, z)``.  Angles are radians everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    pass


class NonPositiveDepth(GeometryError):
    """Point lies on or behind the image plane."""


class DegenerateMotion(GeometryError):
    """Translation too small to define an epipolar geometry."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_matrix(alpha: float, beta: float, gamma: float) -> np.ndarray:
    return rot_z(gamma) @ rot_y(beta) @ rot_x(alpha)


def matrix_to_euler(R: np.ndarray) -> tuple[float, float, float]:
    """Inverse of :func:`euler_to_matrix`; beta is returned in [-pi/2, pi/2]."""
    sb = -R[2, 0]
    sb = min(1.0, max(-1.0, sb))
    beta = math.asin(sb)
    if abs(sb) < 1.0 - 1e-12:
        alpha = math.atan2(R[2, 1], R[2, 2])
        gamma = math.atan2(R[1, 0], R[0, 0])
    else:
        # gimbal lock: only alpha -/+ gamma is observable, put it all in alpha
        gamma = 0.0
        alpha = math.atan2(-R[1, 2], R[1, 1])
    return alpha, beta, gamma


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(w) -> np.ndarray:
    """Rodrigues formula."""
    w = np.asarray(w, dtype=float)
    th = float(np.linalg.norm(w))
    W = skew(w)
    if th < 1e-10:
        return np.eye(3) + W + 0.5 * W @ W
    return np.eye(3) + math.sin(th) / th * W + (1.0 - math.cos(th)) / th**2 * W @ W


def so3_log(R: np.ndarray) -> np.ndarray:
    c = (np.trace(R) - 1.0) / 2.0
    c = min(1.0, max(-1.0, c))
    th = math.acos(c)
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if th < 1e-8:
        return 0.5 * v
    if math.pi - th < 1e-6:
        # near pi: axis from the symmetric part
        B = (R + np.eye(3)) / 2.0
        i = int(np.argmax(np.diag(B)))
        axis = B[:, i] / math.sqrt(max(B[i, i], 1e-300))
        axis /= np.linalg.norm(axis)
        if axis @ v < 0:
            axis = -axis
        return th * axis
    return th / (2.0 * math.sin(th)) * v


def rotation_angle(R: np.ndarray) -> float:
    c = (np.trace(R) - 1.0) / 2.0
    return math.acos(min(1.0, max(-1.0, c)))


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``q -> R q + t``.

    Stored as a rotation matrix and translation; the Euler view
    (``alpha, beta, gamma``) follows the module-level convention.
    """

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = _frozen(self.R)
        t = _frozen(np.reshape(self.t, 3))
        if R.shape != (3, 3):
            raise GeometryError(f"rotation must be 3x3, got {R.shape}")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls()

    @classmethod
    def from_xyzabg(cls, x=0.0, y=0.0, z=0.0, alpha=0.0, beta=0.0, gamma=0.0) -> Pose:
        return cls(euler_to_matrix(alpha, beta, gamma), np.array([x, y, z], dtype=float))

    @classmethod
    def translation(cls, x=0.0, y=0.0, z=0.0) -> Pose:
        return cls(np.eye(3), np.array([x, y, z], dtype=float))

    @classmethod
    def from_matrix(cls, T) -> Pose:
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    @classmethod
    def exp(cls, xi) -> Pose:
        """Pose from a 6-vector ``(rho, theta)``: rotation ``so3_exp(theta)``
        and translation ``rho`` (decoupled parameterization)."""
        xi = np.asarray(xi, dtype=float)
        return cls(so3_exp(xi[3:]), xi[:3])

    @property
    def x(self) -> float:
        return float(self.t[0])

    @property
    def y(self) -> float:
        return float(self.t[1])

    @property
    def z(self) -> float:
        return float(self.t[2])

    @property
    def euler(self) -> tuple[float, float, float]:
        return matrix_to_euler(self.R)

    @property
    def alpha(self) -> float:
        return self.euler[0]

    @property
    def beta(self) -> float:
        return self.euler[1]

    @property
    def gamma(self) -> float:
        return self.euler[2]

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def inverse(self) -> Pose:
        Rt = self.R.T
        return Pose(Rt, -Rt @ self.t)

    def __matmul__(self, other: Pose) -> Pose:
        return compose(self, other)

    def apply(self, q) -> np.ndarray:
        """Transform one point ``(3,)`` or many ``(N, 3)``."""
        q = np.asarray(q, dtype=float)
        return q @ self.R.T + self.t

    def left_perturb(self, xi) -> Pose:
        """``Exp(xi) * self`` with ``xi = (rho, theta)``.

        The translation part is applied additively after rotating, which
        matches the Jacobians used by the solvers: a point ``X`` mapped by
        the result moves by ``rho + theta x X`` to first order.
        """
        xi = np.asarray(xi, dtype=float)
        dR = so3_exp(xi[3:])
        return Pose(dR @ self.R, dR @ self.t + xi[:3])

    def is_close(self, other: Pose, atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.matrix(), other.matrix(), atol=atol, rtol=0.0))

    def __repr__(self) -> str:
        a, b, g = self.euler
        return (
            f"Pose(x={self.x:.6g}, y={self.y:.6g}, z={self.z:.6g}, "
            f"alpha={a:.6g}, beta={b:.6g}, gamma={g:.6g})"
        )


def compose(a: Pose, b: Pose) -> Pose:
    return Pose(a.R @ b.R, a.R @ b.t + a.t)


def inverse(p: Pose) -> Pose:
    return p.inverse()


def transform_point(p: Pose, q) -> np.ndarray:
    return p.apply(q)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    image_width: int
    image_height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError("focal lengths must be positive")
        if not (0 <= self.cx < self.image_width and 0 <= self.cy < self.image_height):
            raise GeometryError("principal point outside the image")

    @classmethod
    def kitti(cls) -> CameraIntrinsics:
        # KITTI odometry sequence 00-02 left grey camera
        return cls(718.856, 718.856, 607.1928, 185.2157, 1241, 376)

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def inverse_matrix(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def contains(self, uv) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        return (
            (uv[..., 0] >= 0)
            & (uv[..., 0] < self.image_width)
            & (uv[..., 1] >= 0)
            & (uv[..., 1] < self.image_height)
        )


def project(k: CameraIntrinsics, p_cam) -> np.ndarray:
    p = np.asarray(p_cam, dtype=float)
    if p[2] <= 0:
        raise NonPositiveDepth(f"point at z={p[2]} is not in front of the camera")
    return np.array([k.fx * p[0] / p[2] + k.cx, k.fy * p[1] / p[2] + k.cy])


def project_many(k: CameraIntrinsics, pts) -> np.ndarray:
    """Vectorized projection, no depth check."""
    pts = np.asarray(pts, dtype=float)
    z = pts[:, 2]
    return np.column_stack((k.fx * pts[:, 0] / z + k.cx, k.fy * pts[:, 1] / z + k.cy))


def ray(k: CameraIntrinsics, uv) -> np.ndarray:
    """Viewing ray through pixel(s), scaled so that its z component is 1."""
    uv = np.asarray(uv, dtype=float)
    x = (uv[..., 0] - k.cx) / k.fx
    y = (uv[..., 1] - k.cy) / k.fy
    return np.stack((x, y, np.ones_like(x)), axis=-1)


def backproject(k: CameraIntrinsics, uv, depth) -> np.ndarray:
    """Camera-frame point at ``depth`` (z coordinate) along the pixel's ray."""
    return ray(k, uv) * np.asarray(depth, dtype=float)[..., None]


def fundamental_from_motion(k: CameraIntrinsics, motion: Pose) -> np.ndarray:
    """F with ``p_curr^T F p_prev = 0`` for homogeneous pixels.

    ``motion`` maps previous-camera coordinates to current-camera
    coordinates.  Translation is normalized to unit length first, so only
    the direction enters (the monocular epipolar term is scale free).
    """
    n = float(np.linalg.norm(motion.t))
    if n < 1e-12:
        raise DegenerateMotion("epipolar geometry undefined for zero translation")
    E = skew(motion.t / n) @ motion.R
    Kinv = k.inverse_matrix()
    return Kinv.T @ E @ Kinv
