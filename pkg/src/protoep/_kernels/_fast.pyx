# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled encoder hot kernels: window concatenation (im2col for a 1-D
convolution) and length-masked max pooling, plus their adjoints.

Must stay semantically identical to the numpy fallback in ``_py.py``.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()

DEF NEG_LARGE = -1e30


def window_concat_forward(cnp.float64_t[:, :, ::1] x, int w):
    cdef Py_ssize_t b = x.shape[0], length = x.shape[1], d = x.shape[2]
    cdef int lpad = (w - 1) // 2
    cdef cnp.ndarray[cnp.float64_t, ndim=3] out = np.zeros((b, length, w * d))
    cdef cnp.float64_t[:, :, ::1] o = out
    cdef Py_ssize_t i, j, k, c, src
    for i in range(b):
        for j in range(length):
            for k in range(w):
                src = j + k - lpad
                if src < 0 or src >= length:
                    continue
                for c in range(d):
                    o[i, j, k * d + c] = x[i, src, c]
    return out


def window_concat_backward(cnp.float64_t[:, :, ::1] grad_out, int w, int d):
    cdef Py_ssize_t b = grad_out.shape[0], length = grad_out.shape[1]
    cdef int lpad = (w - 1) // 2
    cdef cnp.ndarray[cnp.float64_t, ndim=3] gx = np.zeros((b, length, d))
    cdef cnp.float64_t[:, :, ::1] g = gx
    cdef Py_ssize_t i, j, k, c, src
    # accumulate in ascending-k order per target row so the summation order
    # (and hence every last bit) matches the numpy fallback
    for i in range(b):
        for src in range(length):
            for k in range(w):
                j = src - k + lpad
                if j < 0 or j >= length:
                    continue
                for c in range(d):
                    g[i, src, c] += grad_out[i, j, k * d + c]
    return gx


def masked_max_forward(cnp.float64_t[:, :, ::1] x, cnp.int64_t[::1] lengths):
    cdef Py_ssize_t b = x.shape[0], length = x.shape[1], h = x.shape[2]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] val = np.full((b, h), NEG_LARGE)
    cdef cnp.ndarray[cnp.int64_t, ndim=2] arg = np.zeros((b, h), dtype=np.int64)
    cdef cnp.float64_t[:, ::1] v = val
    cdef cnp.int64_t[:, ::1] a = arg
    cdef Py_ssize_t i, j, c, n
    for i in range(b):
        n = lengths[i]
        if n > length:
            n = length
        for j in range(n):
            for c in range(h):
                if x[i, j, c] > v[i, c]:
                    v[i, c] = x[i, j, c]
                    a[i, c] = j
    return val, arg


def masked_max_backward(cnp.float64_t[:, ::1] grad_out, cnp.int64_t[:, ::1] arg, int length):
    cdef Py_ssize_t b = grad_out.shape[0], h = grad_out.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=3] gx = np.zeros((b, length, h))
    cdef cnp.float64_t[:, :, ::1] g = gx
    cdef Py_ssize_t i, c
    for i in range(b):
        for c in range(h):
            g[i, arg[i, c], c] = grad_out[i, c]
    return gx
