# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels.  Same contracts as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, acos

cnp.import_array()


def max_area_triangle(pts):
    cdef const double[:, ::1] p = np.ascontiguousarray(pts, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t i, j, k
    cdef Py_ssize_t bi = -1, bj = -1, bk = -1
    cdef double ux, uy, uz, vx, vy, vz, cx, cy, cz, sq
    cdef double best = -1.0
    if n < 3:
        return -1, -1, -1, 0.0
    for i in range(n - 2):
        for j in range(i + 1, n - 1):
            ux = p[j, 0] - p[i, 0]
            uy = p[j, 1] - p[i, 1]
            uz = p[j, 2] - p[i, 2]
            for k in range(j + 1, n):
                vx = p[k, 0] - p[i, 0]
                vy = p[k, 1] - p[i, 1]
                vz = p[k, 2] - p[i, 2]
                cx = uy * vz - uz * vy
                cy = uz * vx - ux * vz
                cz = ux * vy - uy * vx
                sq = cx * cx + cy * cy + cz * cz
                if sq > best:
                    best = sq
                    bi = i
                    bj = j
                    bk = k
    return int(bi), int(bj), int(bk), 0.5 * sqrt(best)


cdef inline void _rel(const double[:, :, ::1] T, Py_ssize_t a, Py_ssize_t b, double[:, ::1] out) noexcept nogil:
    # out = inv(T[a]) @ T[b] for rigid transforms
    cdef Py_ssize_t r, c, m
    cdef double s
    for r in range(3):
        for c in range(3):
            s = 0.0
            for m in range(3):
                s = s + T[a, m, r] * T[b, m, c]
            out[r, c] = s
        s = 0.0
        for m in range(3):
            s = s + T[a, m, r] * (T[b, m, 3] - T[a, m, 3])
        out[r, 3] = s


def kitti_segment_errors(gt, est, dist, lengths, step):
    cdef const double[:, :, ::1] G = np.ascontiguousarray(gt, dtype=np.float64)
    cdef const double[:, :, ::1] E = np.ascontiguousarray(est, dtype=np.float64)
    cdef const double[::1] d = np.ascontiguousarray(dist, dtype=np.float64)
    cdef const double[::1] L = np.ascontiguousarray(lengths, dtype=np.float64)
    cdef Py_ssize_t n = G.shape[0]
    cdef Py_ssize_t nl = L.shape[0]
    cdef Py_ssize_t st = step
    cdef Py_ssize_t first, li, last, r, c, m
    cdef double target, s, tx, ty, tz, tr
    cdef double[:, ::1] dg = np.zeros((3, 4))
    cdef double[:, ::1] de = np.zeros((3, 4))
    cdef double[:, ::1] err = np.zeros((3, 4))
    n_first = (n + st - 1) // st if n > 0 else 0
    out_arr = np.empty((n_first * nl, 4), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t cnt = 0
    for first in range(0, n, st):
        for li in range(nl):
            target = d[first] + L[li]
            last = -1
            for m in range(first, n):
                if d[m] > target:
                    last = m
                    break
            if last < 0:
                continue
            _rel(G, first, last, dg)
            _rel(E, first, last, de)
            # err = inv(de) @ dg
            for r in range(3):
                for c in range(3):
                    s = 0.0
                    for m in range(3):
                        s = s + de[m, r] * dg[m, c]
                    err[r, c] = s
                s = 0.0
                for m in range(3):
                    s = s + de[m, r] * (dg[m, 3] - de[m, 3])
                err[r, 3] = s
            tx = err[0, 3]
            ty = err[1, 3]
            tz = err[2, 3]
            tr = 0.5 * (err[0, 0] + err[1, 1] + err[2, 2] - 1.0)
            if tr > 1.0:
                tr = 1.0
            elif tr < -1.0:
                tr = -1.0
            out[cnt, 0] = first
            out[cnt, 1] = li
            out[cnt, 2] = sqrt(tx * tx + ty * ty + tz * tz) / L[li]
            out[cnt, 3] = acos(tr) / L[li]
            cnt += 1
    return out_arr[:cnt].copy()


def reprojection_jacobians(R, t, pts, pose_idx, land_idx, double fx, double fy, double cx, double cy):
    cdef const double[:, :, ::1] Rv = np.ascontiguousarray(R, dtype=np.float64)
    cdef const double[:, ::1] tv = np.ascontiguousarray(t, dtype=np.float64)
    cdef const double[:, ::1] P = np.ascontiguousarray(pts, dtype=np.float64)
    cdef const cnp.int64_t[::1] pi = np.ascontiguousarray(pose_idx, dtype=np.int64)
    cdef const cnp.int64_t[::1] li = np.ascontiguousarray(land_idx, dtype=np.int64)
    cdef Py_ssize_t M = pi.shape[0]
    Xc_arr = np.empty((M, 3))
    uv_arr = np.empty((M, 2))
    Jp_arr = np.empty((M, 2, 6))
    Jl_arr = np.empty((M, 2, 3))
    cdef double[:, ::1] Xc = Xc_arr
    cdef double[:, ::1] uv = uv_arr
    cdef double[:, :, ::1] Jp = Jp_arr
    cdef double[:, :, ::1] Jl = Jl_arr
    cdef Py_ssize_t m, a, b, c
    cdef double x, y, z, iz, d00, d02, d11, d12
    with nogil:
        for m in range(M):
            a = pi[m]
            b = li[m]
            x = Rv[a, 0, 0] * P[b, 0] + Rv[a, 0, 1] * P[b, 1] + Rv[a, 0, 2] * P[b, 2] + tv[a, 0]
            y = Rv[a, 1, 0] * P[b, 0] + Rv[a, 1, 1] * P[b, 1] + Rv[a, 1, 2] * P[b, 2] + tv[a, 1]
            z = Rv[a, 2, 0] * P[b, 0] + Rv[a, 2, 1] * P[b, 1] + Rv[a, 2, 2] * P[b, 2] + tv[a, 2]
            Xc[m, 0] = x
            Xc[m, 1] = y
            Xc[m, 2] = z
            iz = 1.0 / z
            uv[m, 0] = fx * x * iz + cx
            uv[m, 1] = fy * y * iz + cy
            d00 = fx * iz
            d02 = -fx * x * iz * iz
            d11 = fy * iz
            d12 = -fy * y * iz * iz
            Jp[m, 0, 0] = d00
            Jp[m, 0, 1] = 0.0
            Jp[m, 0, 2] = d02
            Jp[m, 1, 0] = 0.0
            Jp[m, 1, 1] = d11
            Jp[m, 1, 2] = d12
            Jp[m, 0, 3] = d02 * y
            Jp[m, 0, 4] = d00 * z - d02 * x
            Jp[m, 0, 5] = -d00 * y
            Jp[m, 1, 3] = -d11 * z + d12 * y
            Jp[m, 1, 4] = -d12 * x
            Jp[m, 1, 5] = d11 * x
            for c in range(3):
                Jl[m, 0, c] = d00 * Rv[a, 0, c] + d02 * Rv[a, 2, c]
                Jl[m, 1, c] = d11 * Rv[a, 1, c] + d12 * Rv[a, 2, c]
    return Xc_arr, uv_arr, Jp_arr, Jl_arr
