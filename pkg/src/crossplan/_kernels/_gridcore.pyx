# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled grid kernels. Semantics identical to crossplan._kernels.pure."""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, floor

cnp.import_array()


def rect_cover_cells(double cx, double cy, double ct, double st,
                     double hl, double hw, double x0, double y0,
                     double dx, double dy, Py_ssize_t nx, Py_ssize_t ny):
    cdef double rx = hl * fabs(ct) + hw * fabs(st)
    cdef double ry = hl * fabs(st) + hw * fabs(ct)
    cdef Py_ssize_t jx_min = <Py_ssize_t>floor((cx - rx - x0) / dx) + 1
    cdef Py_ssize_t jx_max = <Py_ssize_t>floor((cx + rx - x0) / dx) + 1
    cdef Py_ssize_t jy_min = <Py_ssize_t>floor((cy - ry - y0) / dy) + 1
    cdef Py_ssize_t jy_max = <Py_ssize_t>floor((cy + ry - y0) / dy) + 1
    if jx_min < 1:
        jx_min = 1
    if jy_min < 1:
        jy_min = 1
    if jx_max > nx:
        jx_max = nx
    if jy_max > ny:
        jy_max = ny
    if jx_min > jx_max or jy_min > jy_max:
        return np.empty((0, 2), dtype=np.int64)

    cdef Py_ssize_t cap = (jx_max - jx_min + 1) * (jy_max - jy_min + 1)
    out = np.empty((cap, 2), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] out_v = out
    cdef Py_ssize_t n = 0, jx, jy
    cdef double hx = 0.5 * dx, hy = 0.5 * dy
    cdef double ex, ey
    cdef double lim_x = hl * fabs(ct) + hw * fabs(st) + hx
    cdef double lim_y = hl * fabs(st) + hw * fabs(ct) + hy
    cdef double lim_u = hl + hx * fabs(ct) + hy * fabs(st)
    cdef double lim_w = hw + hx * fabs(st) + hy * fabs(ct)
    for jx in range(jx_min, jx_max + 1):
        ex = x0 + (jx - 0.5) * dx - cx
        if fabs(ex) >= lim_x:
            continue
        for jy in range(jy_min, jy_max + 1):
            ey = y0 + (jy - 0.5) * dy - cy
            if fabs(ey) >= lim_y:
                continue
            if fabs(ex * ct + ey * st) >= lim_u:
                continue
            if fabs(-ex * st + ey * ct) >= lim_w:
                continue
            out_v[n, 0] = jx
            out_v[n, 1] = jy
            n += 1
    return out[:n]


def rect_cover_bits(double cx, double cy, double ct, double st,
                    double hl, double hw, double x0, double y0,
                    double dx, double dy, Py_ssize_t nx, Py_ssize_t ny,
                    cnp.uint64_t[::1] row):
    cdef double rx = hl * fabs(ct) + hw * fabs(st)
    cdef double ry = hl * fabs(st) + hw * fabs(ct)
    cdef Py_ssize_t jx_min = <Py_ssize_t>floor((cx - rx - x0) / dx) + 1
    cdef Py_ssize_t jx_max = <Py_ssize_t>floor((cx + rx - x0) / dx) + 1
    cdef Py_ssize_t jy_min = <Py_ssize_t>floor((cy - ry - y0) / dy) + 1
    cdef Py_ssize_t jy_max = <Py_ssize_t>floor((cy + ry - y0) / dy) + 1
    if jx_min < 1:
        jx_min = 1
    if jy_min < 1:
        jy_min = 1
    if jx_max > nx:
        jx_max = nx
    if jy_max > ny:
        jy_max = ny
    if jx_min > jx_max or jy_min > jy_max:
        return 0

    cdef Py_ssize_t n = 0, jx, jy, bit
    cdef double hx = 0.5 * dx, hy = 0.5 * dy
    cdef double ex, ey
    cdef double lim_x = hl * fabs(ct) + hw * fabs(st) + hx
    cdef double lim_y = hl * fabs(st) + hw * fabs(ct) + hy
    cdef double lim_u = hl + hx * fabs(ct) + hy * fabs(st)
    cdef double lim_w = hw + hx * fabs(st) + hy * fabs(ct)
    for jx in range(jx_min, jx_max + 1):
        ex = x0 + (jx - 0.5) * dx - cx
        if fabs(ex) >= lim_x:
            continue
        for jy in range(jy_min, jy_max + 1):
            ey = y0 + (jy - 0.5) * dy - cy
            if fabs(ey) >= lim_y:
                continue
            if fabs(ex * ct + ey * st) >= lim_u:
                continue
            if fabs(-ex * st + ey * ct) >= lim_w:
                continue
            bit = (jy - 1) * nx + (jx - 1)
            row[bit >> 6] |= (<cnp.uint64_t>1) << (bit & 63)
            n += 1
    return n


def first_disjoint_shift(cnp.uint64_t[:, ::1] cand, Py_ssize_t cand_lo,
                         cnp.uint64_t[:, ::1] pre, Py_ssize_t start):
    cdef Py_ssize_t n_cand = cand.shape[0]
    cdef Py_ssize_t n_pre = pre.shape[0]
    cdef Py_ssize_t words = cand.shape[1]
    cdef Py_ssize_t k = start
    if 1 - cand_lo > k:
        k = 1 - cand_lo
    if n_cand == 0 or n_pre == 0:
        return k
    cdef Py_ssize_t i0, n, i, w
    cdef bint hit
    while True:
        i0 = cand_lo + k - 1
        if i0 >= n_pre:
            return k
        n = n_cand
        if n_pre - i0 < n:
            n = n_pre - i0
        hit = False
        for i in range(n):
            for w in range(words):
                if cand[i, w] & pre[i0 + i, w]:
                    hit = True
                    break
            if hit:
                break
        if not hit:
            return k
        k += 1


def any_overlap(cnp.uint64_t[:, ::1] a, Py_ssize_t a_lo,
                cnp.uint64_t[:, ::1] b, Py_ssize_t b_lo):
    cdef Py_ssize_t lo = a_lo if a_lo > b_lo else b_lo
    cdef Py_ssize_t a_hi = a_lo + a.shape[0]
    cdef Py_ssize_t b_hi = b_lo + b.shape[0]
    cdef Py_ssize_t hi = a_hi if a_hi < b_hi else b_hi
    if lo >= hi:
        return False
    cdef Py_ssize_t words = a.shape[1]
    cdef Py_ssize_t s, w
    for s in range(lo, hi):
        for w in range(words):
            if a[s - a_lo, w] & b[s - b_lo, w]:
                return True
    return False
