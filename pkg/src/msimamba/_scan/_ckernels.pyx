# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled diagonal linear-recurrence kernels (same contract as fallback.py)."""

import numpy as np
cimport cython

ctypedef fused real:
    float
    double


def scan_forward(const real[:, :, ::1] abar, const real[:, :, ::1] bbar, const real[::1] c, const real[:, :, ::1] u):
    cdef Py_ssize_t B = abar.shape[0], S = abar.shape[1], N = abar.shape[2], D = u.shape[2]
    dtype = np.float32 if real is float else np.float64
    h_arr = np.empty((B, S, N, D), dtype=dtype)
    y_arr = np.zeros((B, S, D), dtype=dtype)
    cdef real[:, :, :, ::1] h = h_arr
    cdef real[:, :, ::1] y = y_arr
    cdef Py_ssize_t b, t, n, d
    cdef real a, bb, cn, v
    with nogil:
        for b in range(B):
            for t in range(S):
                for n in range(N):
                    a = abar[b, t, n]
                    bb = bbar[b, t, n]
                    cn = c[n]
                    for d in range(D):
                        if t > 0:
                            v = a * h[b, t - 1, n, d] + bb * u[b, t, d]
                        else:
                            v = bb * u[b, t, d]
                        h[b, t, n, d] = v
                        y[b, t, d] += cn * v
    return y_arr, h_arr


def scan_backward(const real[:, :, ::1] abar, const real[:, :, ::1] bbar, const real[::1] c, const real[:, :, ::1] u,
                  const real[:, :, :, ::1] h, const real[:, :, ::1] gy):
    cdef Py_ssize_t B = abar.shape[0], S = abar.shape[1], N = abar.shape[2], D = u.shape[2]
    dtype = np.float32 if real is float else np.float64
    gA_arr = np.zeros((B, S, N), dtype=dtype)
    gB_arr = np.zeros((B, S, N), dtype=dtype)
    gc_arr = np.zeros(N, dtype=dtype)
    gu_arr = np.zeros((B, S, D), dtype=dtype)
    carry_arr = np.zeros(D, dtype=dtype)
    cdef real[:, :, ::1] gA = gA_arr
    cdef real[:, :, ::1] gB = gB_arr
    cdef real[::1] gc = gc_arr
    cdef real[:, :, ::1] gu = gu_arr
    cdef real[::1] carry = carry_arr
    cdef Py_ssize_t b, t, n, d
    cdef real cn, g, sa, sb, sc
    with nogil:
        for b in range(B):
            for n in range(N):
                cn = c[n]
                for d in range(D):
                    carry[d] = 0
                sc = 0
                for t in range(S - 1, -1, -1):
                    sa = 0
                    sb = 0
                    for d in range(D):
                        g = cn * gy[b, t, d] + carry[d]
                        if t > 0:
                            sa = sa + g * h[b, t - 1, n, d]
                        sb = sb + g * u[b, t, d]
                        sc = sc + gy[b, t, d] * h[b, t, n, d]
                        gu[b, t, d] += g * bbar[b, t, n]
                        carry[d] = abar[b, t, n] * g
                    gA[b, t, n] = sa
                    gB[b, t, n] = sb
                gc[n] += sc
    return gA_arr, gB_arr, gc_arr, gu_arr
