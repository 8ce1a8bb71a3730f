# cython: language_level=3
"""Compiled hot kernels: 2-D cross-correlation and strict-order reductions.

Accumulation order is part of the contract shared with ``_pykernels``:
every sum runs over the same index sequence with a float64 accumulator,
so the two backends produce bit-identical results.  Per-cell orders:

* ``conv2d_forward_core``      taps (ci, ki, kj) ascending
* ``conv2d_grad_input_core``   contributions (co, ki, kj) ascending
* ``conv2d_grad_kernels_core`` output positions (y, x) row-major
* ``frobenius_inner_flat``     flat C order, left to right
"""

import numpy as np

cimport numpy as cnp


ctypedef fused floating:
    float
    double


def frobenius_inner_flat(const floating[::1] a, const floating[::1] b):
    cdef Py_ssize_t i, n = a.shape[0]
    cdef double acc = 0.0
    for i in range(n):
        acc += (<double> a[i]) * (<double> b[i])
    return acc


def conv2d_forward_core(const floating[:, :, ::1] xpad, const floating[:, :, :, ::1] k,
                        floating[:, :, ::1] out, Py_ssize_t stride):
    cdef Py_ssize_t cout = k.shape[0], cin = k.shape[1]
    cdef Py_ssize_t kh = k.shape[2], kw = k.shape[3]
    cdef Py_ssize_t ho = out.shape[1], wo = out.shape[2]
    cdef Py_ssize_t co, ci, ki, kj, y, x
    cdef double acc
    for co in range(cout):
        for y in range(ho):
            for x in range(wo):
                acc = 0.0
                for ci in range(cin):
                    for ki in range(kh):
                        for kj in range(kw):
                            acc += (<double> xpad[ci, y * stride + ki, x * stride + kj]) \
                                   * (<double> k[co, ci, ki, kj])
                out[co, y, x] = <floating> acc


def conv2d_grad_input_core(const floating[:, :, :, ::1] k, const floating[:, :, ::1] gy,
                           double[:, :, ::1] gx, Py_ssize_t stride):
    cdef Py_ssize_t cout = k.shape[0], cin = k.shape[1]
    cdef Py_ssize_t kh = k.shape[2], kw = k.shape[3]
    cdef Py_ssize_t ho = gy.shape[1], wo = gy.shape[2]
    cdef Py_ssize_t co, ci, ki, kj, y, x
    cdef double kv
    for co in range(cout):
        for ki in range(kh):
            for kj in range(kw):
                for ci in range(cin):
                    kv = <double> k[co, ci, ki, kj]
                    for y in range(ho):
                        for x in range(wo):
                            gx[ci, y * stride + ki, x * stride + kj] += kv * (<double> gy[co, y, x])


def conv2d_grad_kernels_core(const floating[:, :, ::1] xpad, const floating[:, :, ::1] gy,
                             double[:, :, :, ::1] gk, Py_ssize_t stride):
    cdef Py_ssize_t cout = gk.shape[0], cin = gk.shape[1]
    cdef Py_ssize_t kh = gk.shape[2], kw = gk.shape[3]
    cdef Py_ssize_t ho = gy.shape[1], wo = gy.shape[2]
    cdef Py_ssize_t co, ci, ki, kj, y, x
    cdef double acc
    for co in range(cout):
        for ci in range(cin):
            for ki in range(kh):
                for kj in range(kw):
                    acc = 0.0
                    for y in range(ho):
                        for x in range(wo):
                            acc += (<double> gy[co, y, x]) \
                                   * (<double> xpad[ci, y * stride + ki, x * stride + kj])
                    gk[co, ci, ki, kj] = acc
