# cython: boundscheck=False, wraparound=False, cdivision=True
"""Rotated-rectangle intersection areas (Sutherland-Hodgman clipping).

Compiled twin of ``_rectclip_py``; both must produce identical results.
Rectangles are rows of (cx, cy, l, w, yaw) with l along the heading.
"""

from libc.math cimport cos, sin, fabs

import numpy as np


cdef void _corners(double cx, double cy, double l, double w, double yaw,
                   double* xs, double* ys) noexcept nogil:
    # CCW order so the shoelace sum is positive.
    cdef double hl = 0.5 * l
    cdef double hw = 0.5 * w
    cdef double c = cos(yaw)
    cdef double s = sin(yaw)
    xs[0] = cx + c * hl - s * (-hw); ys[0] = cy + s * hl + c * (-hw)
    xs[1] = cx + c * hl - s * hw;    ys[1] = cy + s * hl + c * hw
    xs[2] = cx - c * hl - s * hw;    ys[2] = cy - s * hl + c * hw
    xs[3] = cx - c * hl - s * (-hw); ys[3] = cy - s * hl + c * (-hw)


cdef double _shoelace(double* xs, double* ys, int n) noexcept nogil:
    cdef double acc = 0.0
    cdef int i, j
    for i in range(n):
        j = i + 1
        if j == n:
            j = 0
        acc += xs[i] * ys[j] - xs[j] * ys[i]
    return 0.5 * fabs(acc)


cdef double _pair_area(double acx, double acy, double al, double aw, double ayaw,
                       double bcx, double bcy, double bl, double bw, double byaw) noexcept nogil:
    cdef double sx[16]
    cdef double sy[16]
    cdef double ox[16]
    cdef double oy[16]
    cdef double kx[4]
    cdef double ky[4]
    cdef int n = 4, m, i, j, jn
    cdef double ex, ey, sp, sq, t

    _corners(acx, acy, al, aw, ayaw, sx, sy)
    _corners(bcx, bcy, bl, bw, byaw, kx, ky)

    for i in range(4):
        jn = i + 1
        if jn == 4:
            jn = 0
        ex = kx[jn] - kx[i]
        ey = ky[jn] - ky[i]
        m = 0
        for j in range(n):
            jn = j + 1
            if jn == n:
                jn = 0
            sp = ex * (sy[j] - ky[i]) - ey * (sx[j] - kx[i])
            sq = ex * (sy[jn] - ky[i]) - ey * (sx[jn] - kx[i])
            if sq >= 0.0:
                if sp < 0.0:
                    t = sp / (sp - sq)
                    ox[m] = sx[j] + t * (sx[jn] - sx[j])
                    oy[m] = sy[j] + t * (sy[jn] - sy[j])
                    m += 1
                ox[m] = sx[jn]
                oy[m] = sy[jn]
                m += 1
            elif sp >= 0.0:
                t = sp / (sp - sq)
                ox[m] = sx[j] + t * (sx[jn] - sx[j])
                oy[m] = sy[j] + t * (sy[jn] - sy[j])
                m += 1
        n = m
        for j in range(n):
            sx[j] = ox[j]
            sy[j] = oy[j]
        if n == 0:
            return 0.0
    return _shoelace(sx, sy, n)


def rect_areas(rects):
    """Shoelace areas of (N, 5) rectangles; float-consistent with clipping."""
    cdef double[:, ::1] r = np.ascontiguousarray(rects, dtype=np.float64)
    out = np.empty(r.shape[0])
    cdef double[::1] o = out
    cdef double xs[4]
    cdef double ys[4]
    cdef Py_ssize_t i
    for i in range(r.shape[0]):
        _corners(r[i, 0], r[i, 1], r[i, 2], r[i, 3], r[i, 4], xs, ys)
        o[i] = _shoelace(xs, ys, 4)
    return out


def rect_intersection_areas(rects_a, rects_b):
    """Intersection area of corresponding rows of two (N, 5) rect arrays."""
    cdef double[:, ::1] a = np.ascontiguousarray(rects_a, dtype=np.float64)
    cdef double[:, ::1] b = np.ascontiguousarray(rects_b, dtype=np.float64)
    if a.shape[0] != b.shape[0]:
        raise ValueError("rect arrays must have equal length")
    out = np.empty(a.shape[0])
    cdef double[::1] o = out
    cdef Py_ssize_t i
    for i in range(a.shape[0]):
        o[i] = _pair_area(a[i, 0], a[i, 1], a[i, 2], a[i, 3], a[i, 4],
                          b[i, 0], b[i, 1], b[i, 2], b[i, 3], b[i, 4])
    return out


def rect_intersection_matrix(rects_a, rects_b):
    """All-pairs intersection areas, shape (N, M)."""
    cdef double[:, ::1] a = np.ascontiguousarray(rects_a, dtype=np.float64)
    cdef double[:, ::1] b = np.ascontiguousarray(rects_b, dtype=np.float64)
    out = np.empty((a.shape[0], b.shape[0]))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j
    for i in range(a.shape[0]):
        for j in range(b.shape[0]):
            o[i, j] = _pair_area(a[i, 0], a[i, 1], a[i, 2], a[i, 3], a[i, 4],
                                 b[j, 0], b[j, 1], b[j, 2], b[j, 3], b[j, 4])
    return out
