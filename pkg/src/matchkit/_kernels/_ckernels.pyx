# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled loop kernels. Mirrors ``_pykernels`` one function at a time."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def greedy_nms(double[:, ::1] xy, long[::1] order, double radius):
    """Greedy suppression over points visited in ``order``.

    Returns the accepted indices in visiting order.
    """
    cdef Py_ssize_t n = order.shape[0]
    cdef Py_ssize_t i, j, k, nacc = 0
    cdef double r2 = radius * radius
    cdef double dx, dy
    cdef bint keep
    cdef long[::1] acc = np.empty(n, dtype=np.int64)
    for i in range(n):
        k = order[i]
        keep = True
        for j in range(nacc):
            dx = xy[k, 0] - xy[acc[j], 0]
            dy = xy[k, 1] - xy[acc[j], 1]
            if dx * dx + dy * dy <= r2:
                keep = False
                break
        if keep:
            acc[nacc] = k
            nacc += 1
    return np.asarray(acc[:nacc]).copy()


def count_pairs_within(double[:, ::1] xy, double radius):
    """Sort by x, then sweep: only points within ``radius`` in x are compared."""
    cdef Py_ssize_t n = xy.shape[0]
    cdef Py_ssize_t i, j
    cdef long long count = 0
    cdef double r2 = radius * radius
    cdef double dx, dy
    if n < 2:
        return 0
    cdef long[::1] idx = np.argsort(np.asarray(xy[:, 0]), kind="stable").astype(np.int64)
    cdef double[::1] xs = np.asarray(xy[:, 0])[np.asarray(idx)].copy()
    cdef double[::1] ys = np.asarray(xy[:, 1])[np.asarray(idx)].copy()
    for i in range(n):
        for j in range(i + 1, n):
            dx = xs[j] - xs[i]
            if dx > radius:
                break
            dy = ys[j] - ys[i]
            if dx * dx + dy * dy <= r2:
                count += 1
    return count


cdef extern from *:
    int __builtin_popcountll(unsigned long long) nogil


def hamming_matrix(cnp.uint64_t[:, ::1] a, cnp.uint64_t[:, ::1] b):
    """Pairwise popcount(a_i XOR b_j) for bit-packed rows of 64-bit words."""
    cdef Py_ssize_t m = a.shape[0], n = b.shape[0], w = a.shape[1]
    cdef Py_ssize_t i, j, k
    cdef long acc
    out = np.empty((m, n), dtype=np.int64)
    cdef long[:, ::1] o = out
    for i in range(m):
        for j in range(n):
            acc = 0
            for k in range(w):
                acc += __builtin_popcountll(a[i, k] ^ b[j, k])
            o[i, j] = acc
    return out


def local_max_2d(double[:, ::1] r, double threshold, int border):
    """Strict 3x3 maxima with raster-order tie-break.

    A pixel qualifies when it is above ``threshold``, strictly greater than
    the neighbours that precede it in raster order and no smaller than the
    ones that follow it.
    """
    cdef Py_ssize_t h = r.shape[0], w = r.shape[1]
    cdef Py_ssize_t b = max(border, 1)
    cdef Py_ssize_t y, x, n = 0
    cdef double v
    if h - 2 * b <= 0 or w - 2 * b <= 0:
        e = np.empty(0, dtype=np.int64)
        return e, e
    out_y = np.empty((h - 2 * b) * (w - 2 * b), dtype=np.int64)
    out_x = np.empty_like(out_y)
    cdef long[::1] oy = out_y, ox = out_x
    for y in range(b, h - b):
        for x in range(b, w - b):
            v = r[y, x]
            if v <= threshold:
                continue
            if (r[y - 1, x - 1] >= v or r[y - 1, x] >= v or r[y - 1, x + 1] >= v or r[y, x - 1] >= v
                    or r[y, x + 1] > v or r[y + 1, x - 1] > v or r[y + 1, x] > v or r[y + 1, x + 1] > v):
                continue
            oy[n] = y
            ox[n] = x
            n += 1
    return out_y[:n].copy(), out_x[:n].copy()


def extrema_3d(double[:, :, ::1] d, double threshold, int border):
    """Strict 3x3x3 extrema of |d| > threshold in the interior layers."""
    cdef Py_ssize_t ns = d.shape[0], h = d.shape[1], w = d.shape[2]
    cdef Py_ssize_t b = max(border, 1)
    cdef Py_ssize_t s, y, x, n = 0
    cdef int ds, dy, dx
    cdef double v, u
    cdef bint is_max, is_min
    if ns < 3 or h - 2 * b <= 0 or w - 2 * b <= 0:
        e = np.empty(0, dtype=np.int64)
        return e, e, e
    out_s = np.empty((ns - 2) * (h - 2 * b) * (w - 2 * b), dtype=np.int64)
    out_y = np.empty_like(out_s)
    out_x = np.empty_like(out_s)
    cdef long[::1] os_ = out_s, oy = out_y, ox = out_x
    for s in range(1, ns - 1):
        for y in range(b, h - b):
            for x in range(b, w - b):
                v = d[s, y, x]
                if not (v > threshold or -v > threshold):
                    continue
                is_max = v > 0
                is_min = v < 0
                for ds in range(-1, 2):
                    for dy in range(-1, 2):
                        for dx in range(-1, 2):
                            if ds == 0 and dy == 0 and dx == 0:
                                continue
                            u = d[s + ds, y + dy, x + dx]
                            if u >= v:
                                is_max = False
                            if u <= v:
                                is_min = False
                        if not (is_max or is_min):
                            break
                    if not (is_max or is_min):
                        break
                if is_max or is_min:
                    os_[n] = s
                    oy[n] = y
                    ox[n] = x
                    n += 1
    return out_s[:n].copy(), out_y[:n].copy(), out_x[:n].copy()
