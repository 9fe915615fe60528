"""Pure numpy implementations of the hot kernels.

Used when the compiled ``_kernels`` extension is unavailable or when
``GALIMO_PURE_PYTHON=1`` is set.  Arithmetic is written in the same order as
the Cython version so both backends agree bit for bit.
"""

import math
from itertools import combinations

import numpy as np

_TRIPLES: dict[int, np.ndarray] = {}


def _triples(n):
    tri = _TRIPLES.get(n)
    if tri is None:
        tri = np.array(list(combinations(range(n), 3)), dtype=np.int64).reshape(-1, 3)
        _TRIPLES[n] = tri
    return tri


def max_area_triangle(pts):
    """Exhaustive search for the point triple spanning the largest triangle.

    Returns ``(i, j, k, area)``; ``(-1, -1, -1, 0.0)`` for fewer than 3 points.
    The first triple in lexicographic order wins ties.
    """
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    n = pts.shape[0]
    if n < 3:
        return -1, -1, -1, 0.0
    tri = _triples(n)
    a = pts[tri[:, 0]]
    b = pts[tri[:, 1]]
    c = pts[tri[:, 2]]
    ux = b[:, 0] - a[:, 0]
    uy = b[:, 1] - a[:, 1]
    uz = b[:, 2] - a[:, 2]
    vx = c[:, 0] - a[:, 0]
    vy = c[:, 1] - a[:, 1]
    vz = c[:, 2] - a[:, 2]
    cx = uy * vz - uz * vy
    cy = uz * vx - ux * vz
    cz = ux * vy - uy * vx
    sq = cx * cx + cy * cy + cz * cz
    best = int(np.argmax(sq))
    i, j, k = (int(v) for v in tri[best])
    return i, j, k, 0.5 * float(np.sqrt(sq[best]))


def _last_frame(dist, first, length):
    # cumulative arc length is non-decreasing, so bisection finds the first
    # frame strictly beyond the target
    idx = int(np.searchsorted(dist, dist[first] + length, side="right"))
    return idx if idx < dist.shape[0] else -1


def _rel(A, B):
    """``inv(A) @ B`` for stacks of rigid transforms, summed in the same order
    as the compiled kernel: ``R_a^T R_b`` and ``R_a^T (t_b - t_a)``."""
    Rb = B[:, :3, :3]
    dt = B[:, :3, 3] - A[:, :3, 3]
    R = 0.0 + A[:, 0, :3, None] * Rb[:, 0, None, :]
    t = 0.0 + A[:, 0, :3] * dt[:, 0, None]
    for m in (1, 2):
        R = R + A[:, m, :3, None] * Rb[:, m, None, :]
        t = t + A[:, m, :3] * dt[:, m, None]
    out = np.zeros((A.shape[0], 3, 4))
    out[:, :, :3] = R
    out[:, :, 3] = t
    return out


def kitti_segment_errors(gt, est, dist, lengths, step):
    """Per-segment relative errors in the style of the KITTI odometry devkit.

    Returns an ``(m, 4)`` array of ``(first_frame, length_index,
    translation_error / length, rotation_error / length)``.
    """
    gt = np.asarray(gt, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    dist = np.asarray(dist, dtype=np.float64)
    lengths = np.asarray(lengths, dtype=np.float64)
    pairs = []
    for first in range(0, gt.shape[0], step):
        for li, length in enumerate(lengths):
            last = _last_frame(dist, first, length)
            if last >= 0:
                pairs.append((first, li, last))
    if not pairs:
        return np.zeros((0, 4))
    first, li, last = np.array(pairs, dtype=np.int64).T
    dg = _rel(gt[first], gt[last])
    de = _rel(est[first], est[last])
    err = _rel(de, dg)
    t_err = np.sqrt(err[:, 0, 3] * err[:, 0, 3] + err[:, 1, 3] * err[:, 1, 3] + err[:, 2, 3] * err[:, 2, 3])
    tr = np.clip(0.5 * (err[:, 0, 0] + err[:, 1, 1] + err[:, 2, 2] - 1.0), -1.0, 1.0)
    # libm acos, as in the compiled kernel
    r_err = np.array([math.acos(c) for c in tr.tolist()])
    L = lengths[li]
    return np.column_stack((first, li, t_err / L, r_err / L)).astype(np.float64)


def reprojection_jacobians(R, t, pts, pose_idx, land_idx, fx, fy, cx, cy):
    """Camera points, projections and Jacobians for a batch of observations.

    ``R (K,3,3)``, ``t (K,3)`` are world-to-camera poses, ``pts (L,3)`` world
    points.  Observation ``m`` pairs pose ``pose_idx[m]`` with point
    ``land_idx[m]``.  Pose Jacobians are taken with respect to a left
    perturbation ``(rho, theta)``.

    Returns ``Xc (M,3)``, ``uv (M,2)``, ``J_pose (M,2,6)``, ``J_point (M,2,3)``.
    """
    R = np.asarray(R, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    pts = np.asarray(pts, dtype=np.float64)
    Rm = R[pose_idx]
    P = pts[land_idx]
    tm = t[pose_idx]
    x = Rm[:, 0, 0] * P[:, 0] + Rm[:, 0, 1] * P[:, 1] + Rm[:, 0, 2] * P[:, 2] + tm[:, 0]
    y = Rm[:, 1, 0] * P[:, 0] + Rm[:, 1, 1] * P[:, 1] + Rm[:, 1, 2] * P[:, 2] + tm[:, 1]
    z = Rm[:, 2, 0] * P[:, 0] + Rm[:, 2, 1] * P[:, 1] + Rm[:, 2, 2] * P[:, 2] + tm[:, 2]
    Xc = np.column_stack((x, y, z))
    iz = 1.0 / z
    uv = np.column_stack((fx * x * iz + cx, fy * y * iz + cy))
    M = Xc.shape[0]
    D = np.zeros((M, 2, 3))
    D[:, 0, 0] = fx * iz
    D[:, 0, 2] = -fx * x * iz * iz
    D[:, 1, 1] = fy * iz
    D[:, 1, 2] = -fy * y * iz * iz
    Jp = np.zeros((M, 2, 6))
    Jp[:, :, :3] = D
    # D @ -[Xc]x
    Jp[:, 0, 3] = D[:, 0, 2] * y
    Jp[:, 0, 4] = D[:, 0, 0] * z - D[:, 0, 2] * x
    Jp[:, 0, 5] = -D[:, 0, 0] * y
    Jp[:, 1, 3] = -D[:, 1, 1] * z + D[:, 1, 2] * y
    Jp[:, 1, 4] = -D[:, 1, 2] * x
    Jp[:, 1, 5] = D[:, 1, 1] * x
    Jl = np.empty((M, 2, 3))
    Jl[:, 0, :] = D[:, 0, 0, None] * Rm[:, 0, :] + D[:, 0, 2, None] * Rm[:, 2, :]
    Jl[:, 1, :] = D[:, 1, 1, None] * Rm[:, 1, :] + D[:, 1, 2, None] * Rm[:, 2, :]
    return Xc, uv, Jp, Jl
