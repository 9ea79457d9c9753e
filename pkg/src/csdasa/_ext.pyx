# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the inner loops of convolution and the ConvLSTM cell."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh

cnp.import_array()


cdef inline double _sigmoid(double z) nogil:
    if z >= 0:
        return 1.0 / (1.0 + exp(-z))
    cdef double e = exp(z)
    return e / (1.0 + e)


def im2col(const double[:, :, :, ::1] x, int k):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t pad = k // 2
    cdef cnp.ndarray[cnp.float64_t, ndim=3] out = np.zeros((n, c * k * k, H * W))
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t b, ch, di, dj, i, j, row, si, sj
    with nogil:
        for b in range(n):
            for ch in range(c):
                for di in range(k):
                    for dj in range(k):
                        row = (ch * k + di) * k + dj
                        for i in range(H):
                            si = i + di - pad
                            if si < 0 or si >= H:
                                continue
                            for j in range(W):
                                sj = j + dj - pad
                                if sj < 0 or sj >= W:
                                    continue
                                o[b, row, i * W + j] = x[b, ch, si, sj]
    return out


def col2im(const double[:, :, ::1] cols, int c, int H, int W, int k):
    cdef Py_ssize_t n = cols.shape[0]
    cdef Py_ssize_t pad = k // 2
    cdef cnp.ndarray[cnp.float64_t, ndim=4] out = np.zeros((n, c, H, W))
    cdef double[:, :, :, ::1] o = out
    cdef Py_ssize_t b, ch, di, dj, i, j, row, si, sj
    with nogil:
        for b in range(n):
            for ch in range(c):
                for di in range(k):
                    for dj in range(k):
                        row = (ch * k + di) * k + dj
                        for i in range(H):
                            si = i + di - pad
                            if si < 0 or si >= H:
                                continue
                            for j in range(W):
                                sj = j + dj - pad
                                if sj < 0 or sj >= W:
                                    continue
                                o[b, ch, si, sj] += cols[b, row, i * W + j]
    return out


def lstm_gates_forward(const double[:, :, :, ::1] pre,
                       const double[:, :, :, ::1] c_prev,
                       const double[:, :, :, ::1] peep):
    """Returns (gates, c, h); gates holds activated i, f, o, g stacked on axis 1."""
    cdef Py_ssize_t n = c_prev.shape[0], hid = c_prev.shape[1]
    cdef Py_ssize_t H = c_prev.shape[2], W = c_prev.shape[3]
    cdef cnp.ndarray[cnp.float64_t, ndim=4] gates_arr = np.empty((n, 4 * hid, H, W))
    cdef cnp.ndarray[cnp.float64_t, ndim=4] c_arr = np.empty((n, hid, H, W))
    cdef cnp.ndarray[cnp.float64_t, ndim=4] h_arr = np.empty((n, hid, H, W))
    cdef double[:, :, :, ::1] gates = gates_arr
    cdef double[:, :, :, ::1] c = c_arr
    cdef double[:, :, :, ::1] h = h_arr
    cdef Py_ssize_t b, q, i, j
    cdef double cp, ig, fg, og, gg, cn
    with nogil:
        for b in range(n):
            for q in range(hid):
                for i in range(H):
                    for j in range(W):
                        cp = c_prev[b, q, i, j]
                        ig = _sigmoid(pre[b, q, i, j] + peep[0, q, i, j] * cp)
                        fg = _sigmoid(pre[b, hid + q, i, j] + peep[1, q, i, j] * cp)
                        og = _sigmoid(pre[b, 2 * hid + q, i, j] + peep[2, q, i, j] * cp)
                        gg = tanh(pre[b, 3 * hid + q, i, j])
                        cn = fg * cp + ig * gg
                        gates[b, q, i, j] = ig
                        gates[b, hid + q, i, j] = fg
                        gates[b, 2 * hid + q, i, j] = og
                        gates[b, 3 * hid + q, i, j] = gg
                        c[b, q, i, j] = cn
                        h[b, q, i, j] = og * tanh(cn)
    return gates_arr, c_arr, h_arr


def lstm_gates_backward(const double[:, :, :, ::1] gates,
                        const double[:, :, :, ::1] c_prev,
                        const double[:, :, :, ::1] c,
                        const double[:, :, :, ::1] peep,
                        const double[:, :, :, ::1] dh,
                        const double[:, :, :, ::1] dc):
    """Returns (d_pre, d_c_prev, d_peep) for upstream grads on h and c."""
    cdef Py_ssize_t n = c_prev.shape[0], hid = c_prev.shape[1]
    cdef Py_ssize_t H = c_prev.shape[2], W = c_prev.shape[3]
    cdef cnp.ndarray[cnp.float64_t, ndim=4] dpre_arr = np.empty((n, 4 * hid, H, W))
    cdef cnp.ndarray[cnp.float64_t, ndim=4] dcp_arr = np.empty((n, hid, H, W))
    cdef cnp.ndarray[cnp.float64_t, ndim=4] dpeep_arr = np.zeros((3, hid, H, W))
    cdef double[:, :, :, ::1] dpre = dpre_arr
    cdef double[:, :, :, ::1] dcp = dcp_arr
    cdef double[:, :, :, ::1] dpeep = dpeep_arr
    cdef Py_ssize_t b, q, i, j
    cdef double ig, fg, og, gg, cp, tc, dct, dzi, dzf, dzo
    with nogil:
        for b in range(n):
            for q in range(hid):
                for i in range(H):
                    for j in range(W):
                        ig = gates[b, q, i, j]
                        fg = gates[b, hid + q, i, j]
                        og = gates[b, 2 * hid + q, i, j]
                        gg = gates[b, 3 * hid + q, i, j]
                        cp = c_prev[b, q, i, j]
                        tc = tanh(c[b, q, i, j])
                        dct = dc[b, q, i, j] + dh[b, q, i, j] * og * (1.0 - tc * tc)
                        dzo = dh[b, q, i, j] * tc * og * (1.0 - og)
                        dzi = dct * gg * ig * (1.0 - ig)
                        dzf = dct * cp * fg * (1.0 - fg)
                        dpre[b, q, i, j] = dzi
                        dpre[b, hid + q, i, j] = dzf
                        dpre[b, 2 * hid + q, i, j] = dzo
                        dpre[b, 3 * hid + q, i, j] = dct * ig * (1.0 - gg * gg)
                        dcp[b, q, i, j] = (dct * fg + dzi * peep[0, q, i, j]
                                           + dzf * peep[1, q, i, j] + dzo * peep[2, q, i, j])
                        dpeep[0, q, i, j] += dzi * cp
                        dpeep[1, q, i, j] += dzf * cp
                        dpeep[2, q, i, j] += dzo * cp
    return dpre_arr, dcp_arr, dpeep_arr


def pairwise_sqdist(const double[:, ::1] X, const double[:, ::1] Y):
    # rows of the output accumulate feature by feature so the inner loop runs
    # over contiguous j; each entry still sums its d terms in order q = 0..d-1
    cdef Py_ssize_t n = X.shape[0], m = Y.shape[0], d = X.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((n, m))
    cdef double[:, ::1] o = out
    cdef const double[:, ::1] Yt = np.ascontiguousarray(np.asarray(Y).T)
    cdef Py_ssize_t i, j, q
    cdef double xq, diff
    cdef double* orow
    cdef const double* yrow
    with nogil:
        for i in range(n):
            orow = &o[i, 0]
            for q in range(d):
                xq = X[i, q]
                yrow = &Yt[q, 0]
                for j in range(m):
                    diff = xq - yrow[j]
                    orow[j] = orow[j] + diff * diff
    return out
