# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot loops in ``_pykernels``.

Same arithmetic in the same order; see that module for the contracts.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef enum:
    GT = 0
    DOGD = 1
    INDEPENDENT = 2


cdef inline void _mix(const double[:, ::1] w, double[:, ::1] src,
                      double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t n = w.shape[0], p = src.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc
    for i in range(n):
        for k in range(p):
            acc = 0.0
            for j in range(n):
                acc = acc + w[i, j] * src[j, k]
            out[i, k] = acc


def ridge_network_run(int algo, u, v, double penalty, w, double eta, x0):
    if algo not in (GT, DOGD, INDEPENDENT):
        raise ValueError(f"unknown algorithm code {algo}")
    cdef const double[:, :, ::1] U = np.ascontiguousarray(u, dtype=np.float64)
    cdef const double[:, ::1] V = np.ascontiguousarray(v, dtype=np.float64)
    cdef const double[:, ::1] Wm = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t T = U.shape[0], N = U.shape[1], p = U.shape[2]

    xs_arr = np.empty((T + 1, N, p))
    ss_arr = np.zeros((T, N, p))
    gs_arr = np.empty((T, N, p))
    losses_arr = np.empty((T, N))
    cdef double[:, :, ::1] xs = xs_arr
    cdef double[:, :, ::1] ss = ss_arr
    cdef double[:, :, ::1] gs = gs_arr
    cdef double[:, ::1] losses = losses_arr

    cdef double[:, ::1] x = np.array(x0, dtype=np.float64, copy=True).reshape(N, p)
    cdef double[:, ::1] s = np.zeros((N, p))
    cdef double[:, ::1] mx = np.zeros((N, p))
    cdef double[:, ::1] ms = np.zeros((N, p))
    cdef double two_pen = 2.0 * penalty
    cdef double r, sq, tr
    cdef Py_ssize_t t, i, k

    with nogil:
        for i in range(N):
            for k in range(p):
                xs[0, i, k] = x[i, k]
        for t in range(T):
            for i in range(N):
                r = 0.0
                sq = 0.0
                for k in range(p):
                    r = r + U[t, i, k] * x[i, k]
                for k in range(p):
                    sq = sq + x[i, k] * x[i, k]
                r = r - V[t, i]
                losses[t, i] = r * r + penalty * sq
                tr = 2.0 * r
                for k in range(p):
                    gs[t, i, k] = tr * U[t, i, k] + two_pen * x[i, k]
            if algo == GT:
                if t == 0:
                    for i in range(N):
                        for k in range(p):
                            s[i, k] = gs[t, i, k]
                else:
                    _mix(Wm, s, ms)
                    for i in range(N):
                        for k in range(p):
                            s[i, k] = (ms[i, k] + gs[t, i, k]) - gs[t - 1, i, k]
                for i in range(N):
                    for k in range(p):
                        ss[t, i, k] = s[i, k]
                _mix(Wm, x, mx)
                for i in range(N):
                    for k in range(p):
                        x[i, k] = mx[i, k] - eta * s[i, k]
            elif algo == DOGD:
                _mix(Wm, x, mx)
                for i in range(N):
                    for k in range(p):
                        x[i, k] = mx[i, k] - eta * gs[t, i, k]
            else:
                for i in range(N):
                    for k in range(p):
                        x[i, k] = x[i, k] - eta * gs[t, i, k]
            for i in range(N):
                for k in range(p):
                    xs[t + 1, i, k] = x[i, k]
    return xs_arr, ss_arr, gs_arr, losses_arr


def ridge_ogd_paths(phi, alpha, u, y, double penalty):
    cdef const double[:, :, ::1] U = np.ascontiguousarray(u, dtype=np.float64)
    cdef const double[:, ::1] Y = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t N = U.shape[0], m = U.shape[1], d = U.shape[2]
    theta_arr = np.array(phi, dtype=np.float64, copy=True).reshape(N, d)
    cdef double[:, ::1] theta = theta_arr
    cdef const double[::1] A = np.ascontiguousarray(alpha, dtype=np.float64).reshape(N)
    losses_arr = np.empty((N, m))
    cdef double[:, ::1] losses = losses_arr
    cdef double two_pen = 2.0 * penalty
    cdef double r, sq, tr, g
    cdef Py_ssize_t n, i, k

    with nogil:
        for i in range(m):
            for n in range(N):
                r = 0.0
                sq = 0.0
                for k in range(d):
                    r = r + U[n, i, k] * theta[n, k]
                for k in range(d):
                    sq = sq + theta[n, k] * theta[n, k]
                r = r - Y[n, i]
                losses[n, i] = r * r + penalty * sq
                tr = 2.0 * r
                for k in range(d):
                    g = tr * U[n, i, k] + two_pen * theta[n, k]
                    theta[n, k] = theta[n, k] - A[n] * g
    return losses_arr, theta_arr
