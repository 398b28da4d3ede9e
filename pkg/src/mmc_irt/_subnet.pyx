# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled monotone subnet kernels.

Same contract as ``_subnet_py``, but weights arrive pre-stacked: ``w0`` (J, M, 3),
``wd`` (L-1, J, M, 3, 3) and ``bs`` (L, J, M, 3). The backward pass recomputes
the forward activations per (person, item, option) instead of caching them.
"""

import numpy as np
from libc.math cimport exp, expm1


cdef inline double _elu(double y) noexcept nogil:
    return y if y > 0 else expm1(y)


cdef inline double _elu_d(double y) noexcept nogil:
    return 1.0 if y > 0 else exp(y)


cdef inline double _act(int k, double y) noexcept nogil:
    if k == 0:
        return _elu(y)
    if k == 1:
        return -_elu(-y)
    if y < 0:
        return _elu(y + 1.0) - 1.0
    return 1.0 - _elu(1.0 - y)


cdef inline double _act_d(int k, double y) noexcept nogil:
    if k == 0:
        return _elu_d(y)
    if k == 1:
        return _elu_d(-y)
    if y < 0:
        return _elu_d(y + 1.0)
    return _elu_d(1.0 - y)


def forward(const double[::1] theta, const double[:, :, ::1] w0,
            const double[:, :, :, :, ::1] wd, const double[:, :, :, ::1] bs):
    cdef Py_ssize_t n_b = theta.shape[0], n_j = w0.shape[0], n_m = w0.shape[1]
    cdef Py_ssize_t n_l = bs.shape[0]
    cdef Py_ssize_t b, j, m, l, k, i
    cdef double t, acc
    cdef double h[3]
    cdef double y[3]
    out_arr = np.empty((n_b, n_j, n_m))
    cdef double[:, :, ::1] out = out_arr
    with nogil:
        for j in range(n_j):
            for m in range(n_m):
                for b in range(n_b):
                    t = theta[b]
                    for k in range(3):
                        h[k] = _act(<int>k, w0[j, m, k] * t + bs[0, j, m, k])
                    for l in range(1, n_l):
                        for k in range(3):
                            acc = bs[l, j, m, k]
                            for i in range(3):
                                acc = acc + wd[l - 1, j, m, k, i] * h[i]
                            y[k] = acc
                        for k in range(3):
                            h[k] = _act(<int>k, y[k])
                    out[b, j, m] = h[0] + h[1] + h[2]
    return out_arr


def backward(const double[:, :, ::1] grad_delta, const double[::1] theta,
             const double[:, :, ::1] w0, const double[:, :, :, :, ::1] wd,
             const double[:, :, :, ::1] bs):
    cdef Py_ssize_t n_b = theta.shape[0], n_j = w0.shape[0], n_m = w0.shape[1]
    cdef Py_ssize_t n_l = bs.shape[0]
    cdef Py_ssize_t b, j, m, l, k, i
    cdef double t, acc, g
    gt_arr = np.zeros(n_b)
    gw0_arr = np.zeros((n_j, n_m, 3))
    gwd_arr = np.zeros((max(n_l - 1, 0), n_j, n_m, 3, 3))
    gbs_arr = np.zeros((n_l, n_j, n_m, 3))
    ys_arr = np.empty((n_l, 3))
    hs_arr = np.empty((n_l, 3))
    cdef double[::1] gt = gt_arr
    cdef double[:, :, ::1] gw0 = gw0_arr
    cdef double[:, :, :, :, ::1] gwd = gwd_arr
    cdef double[:, :, :, ::1] gbs = gbs_arr
    cdef double[:, ::1] ys = ys_arr
    cdef double[:, ::1] hs = hs_arr
    cdef double gh[3]
    cdef double gy[3]
    with nogil:
        for j in range(n_j):
            for m in range(n_m):
                for b in range(n_b):
                    g = grad_delta[b, j, m]
                    if g == 0.0:
                        continue
                    t = theta[b]
                    for k in range(3):
                        ys[0, k] = w0[j, m, k] * t + bs[0, j, m, k]
                        hs[0, k] = _act(<int>k, ys[0, k])
                    for l in range(1, n_l):
                        for k in range(3):
                            acc = bs[l, j, m, k]
                            for i in range(3):
                                acc = acc + wd[l - 1, j, m, k, i] * hs[l - 1, i]
                            ys[l, k] = acc
                        for k in range(3):
                            hs[l, k] = _act(<int>k, ys[l, k])
                    for k in range(3):
                        gh[k] = g
                    for l in range(n_l - 1, -1, -1):
                        for k in range(3):
                            gy[k] = gh[k] * _act_d(<int>k, ys[l, k])
                            gbs[l, j, m, k] += gy[k]
                        if l > 0:
                            for i in range(3):
                                acc = 0.0
                                for k in range(3):
                                    gwd[l - 1, j, m, k, i] += gy[k] * hs[l - 1, i]
                                    acc = acc + wd[l - 1, j, m, k, i] * gy[k]
                                gh[i] = acc
                        else:
                            for k in range(3):
                                gw0[j, m, k] += gy[k] * t
                                gt[b] += w0[j, m, k] * gy[k]
    return gt_arr, gw0_arr, gwd_arr, gbs_arr
