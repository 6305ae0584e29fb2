# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: Matern 3/2 ARD assembly and DIRECT hull screening.

Every function here has a numpy twin in ``_core_py`` with the same
signature; ``_backend`` picks one at import time.
"""
import numpy as np

from libc.math cimport exp, sqrt

cdef double SQRT3 = 1.7320508075688772


def matern32_cross(const double[:, ::1] X1, const double[:, ::1] X2,
                   const double[::1] inv_ls, double sf2):
    cdef Py_ssize_t n = X1.shape[0], m = X2.shape[0], d = X1.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double r2, t, a
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] K = out
    for i in range(n):
        for j in range(m):
            r2 = 0.0
            for k in range(d):
                t = (X1[i, k] - X2[j, k]) * inv_ls[k]
                r2 += t * t
            a = SQRT3 * sqrt(r2)
            K[i, j] = sf2 * (1.0 + a) * exp(-a)
    return out


def matern32_gram(const double[:, ::1] X, const double[::1] inv_ls, double sf2):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double r2, t, a, v
    out = np.empty((n, n), dtype=np.float64)
    cdef double[:, ::1] K = out
    for i in range(n):
        K[i, i] = sf2
        for j in range(i + 1, n):
            r2 = 0.0
            for k in range(d):
                t = (X[i, k] - X[j, k]) * inv_ls[k]
                r2 += t * t
            a = SQRT3 * sqrt(r2)
            v = sf2 * (1.0 + a) * exp(-a)
            K[i, j] = v
            K[j, i] = v
    return out


def matern32_ls_grads(const double[:, ::1] X, const double[::1] inv_ls, double sf2):
    """d K / d log(l_k) for every k, shape (d, n, n)."""
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double r2, t, e
    out = np.zeros((d, n, n), dtype=np.float64)
    cdef double[:, :, ::1] G = out
    tmp = np.empty(d, dtype=np.float64)
    cdef double[::1] sq = tmp
    for i in range(n):
        for j in range(i + 1, n):
            r2 = 0.0
            for k in range(d):
                t = (X[i, k] - X[j, k]) * inv_ls[k]
                sq[k] = t * t
                r2 += sq[k]
            e = 3.0 * sf2 * exp(-SQRT3 * sqrt(r2))
            for k in range(d):
                G[k, i, j] = e * sq[k]
                G[k, j, i] = e * sq[k]
    return out


def potentially_optimal(const double[::1] sizes, const double[::1] fvals,
                        double fmin, double margin):
    """Indices of potentially-optimal rectangles, smallest size first.

    One candidate per distinct size (lowest f, then lowest index), then the
    lower-right convex hull starting at the overall best, then the improvement test
    ``f_j - K_j * size_j <= fmin - margin`` with ``K_j`` the slope to the
    next hull vertex.
    """
    cdef Py_ssize_t N = sizes.shape[0]
    if N == 0:
        return np.empty(0, dtype=np.intp)
    idx = np.arange(N)
    order_arr = np.lexsort((idx, np.asarray(fvals), np.asarray(sizes))).astype(np.intp)
    cdef Py_ssize_t[::1] order = order_arr
    heads_arr = np.empty(N, dtype=np.intp)
    cdef Py_ssize_t[::1] heads = heads_arr
    cdef Py_ssize_t nh = 0, p, q, start, top, h
    cdef double prev = -1.0, best
    for p in range(N):
        q = order[p]
        if nh == 0 or sizes[q] != prev:
            heads[nh] = q
            nh += 1
            prev = sizes[q]
    # hull starts at the largest-size head achieving the minimum f
    start = 0
    best = fvals[heads[0]]
    for h in range(1, nh):
        if fvals[heads[h]] <= best:
            best = fvals[heads[h]]
            start = h
    hull_arr = np.empty(nh, dtype=np.intp)
    cdef Py_ssize_t[::1] hull = hull_arr
    top = 0
    cdef double x1, y1, x2, y2, x3, y3, cross
    for h in range(start, nh):
        q = heads[h]
        while top >= 2:
            x1 = sizes[hull[top - 2]]; y1 = fvals[hull[top - 2]]
            x2 = sizes[hull[top - 1]]; y2 = fvals[hull[top - 1]]
            x3 = sizes[q]; y3 = fvals[q]
            cross = (x2 - x1) * (y3 - y1) - (y2 - y1) * (x3 - x1)
            if cross < 0.0:
                top -= 1
            else:
                break
        hull[top] = q
        top += 1
    keep_arr = np.empty(top, dtype=np.intp)
    cdef Py_ssize_t[::1] keep = keep_arr
    cdef Py_ssize_t nk = 0
    cdef double slope, thresh = fmin - margin
    for h in range(top):
        q = hull[h]
        if h == top - 1:
            keep[nk] = q
            nk += 1
        else:
            p = hull[h + 1]
            slope = (fvals[p] - fvals[q]) / (sizes[p] - sizes[q])
            if fvals[q] - slope * sizes[q] <= thresh:
                keep[nk] = q
                nk += 1
    return keep_arr[:nk].copy()


def matern32_ls_grad_contract(const double[:, ::1] X, const double[::1] inv_ls,
                              double sf2, const double[:, ::1] W):
    """``0.5 * sum_ij W_ij dK_ij/dlog(l_k)`` for every k, without forming dK."""
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double r2, t, e
    out = np.zeros(d, dtype=np.float64)
    cdef double[::1] g = out
    tmp = np.empty(d, dtype=np.float64)
    cdef double[::1] sq = tmp
    for i in range(n):
        for j in range(i + 1, n):
            r2 = 0.0
            for k in range(d):
                t = (X[i, k] - X[j, k]) * inv_ls[k]
                sq[k] = t * t
                r2 += sq[k]
            # symmetric pair counted once with weight (W_ij + W_ji) / 2
            e = 1.5 * sf2 * exp(-SQRT3 * sqrt(r2)) * (W[i, j] + W[j, i])
            for k in range(d):
                g[k] += e * sq[k]
    return out
