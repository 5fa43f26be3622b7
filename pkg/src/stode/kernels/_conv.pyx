# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled loops for valid dilated 1-d cross-correlation."""
import numpy as np
cimport cython


def conv1d_forward(const double[:, :, ::1] x, const double[:, :, ::1] w,
                   const double[::1] b, Py_ssize_t dilation):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], Q = x.shape[2]
    cdef Py_ssize_t O = w.shape[0], M = w.shape[2]
    cdef Py_ssize_t T = Q - dilation * (M - 1)
    out_arr = np.empty((B, O, T), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t bi, o, c, j, t, s
    cdef double wv
    with nogil:
        for bi in range(B):
            for o in range(O):
                for t in range(T):
                    out[bi, o, t] = b[o]
                for c in range(C):
                    for j in range(M):
                        wv = w[o, c, j]
                        s = j * dilation
                        for t in range(T):
                            out[bi, o, t] += wv * x[bi, c, t + s]
    return out_arr


def conv1d_backward(const double[:, :, ::1] g, const double[:, :, ::1] x,
                    const double[:, :, ::1] w, Py_ssize_t dilation):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1]
    cdef Py_ssize_t O = w.shape[0], M = w.shape[2]
    cdef Py_ssize_t T = g.shape[2]
    gx_arr = np.zeros((B, C, x.shape[2]), dtype=np.float64)
    gw_arr = np.zeros((O, C, M), dtype=np.float64)
    gb_arr = np.zeros(O, dtype=np.float64)
    cdef double[:, :, ::1] gx = gx_arr
    cdef double[:, :, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    cdef Py_ssize_t bi, o, c, j, t, s
    cdef double wv, acc, gv
    with nogil:
        for bi in range(B):
            for o in range(O):
                acc = 0.0
                for t in range(T):
                    acc = acc + g[bi, o, t]
                gb[o] += acc
                for c in range(C):
                    for j in range(M):
                        wv = w[o, c, j]
                        s = j * dilation
                        acc = 0.0
                        for t in range(T):
                            gv = g[bi, o, t]
                            acc = acc + gv * x[bi, c, t + s]
                            gx[bi, c, t + s] += wv * gv
                        gw[o, c, j] += acc
    return gx_arr, gw_arr, gb_arr
