# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for convolution and pooling.

Loop orders mirror the numpy fallback so both backends accumulate in the
same sequence and return bit-identical results.
"""
import numpy as np
cimport numpy as cnp
from cython cimport floating

cnp.import_array()


def im2col(const floating[:, :, :, ::1] x, int kh, int kw):
    """(N, C, H, W) -> (N, C*kh*kw, Ho*Wo) for a stride-1 valid window."""
    cdef Py_ssize_t n_, c_, i, j, r, s
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ho = H - kh + 1, Wo = W - kw + 1
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty((N, C * kh * kw, Ho * Wo), dtype=dtype)
    cdef floating[:, :, ::1] out = out_arr
    cdef Py_ssize_t row
    with nogil:
        for n_ in range(N):
            for c_ in range(C):
                for i in range(kh):
                    for j in range(kw):
                        row = (c_ * kh + i) * kw + j
                        for r in range(Ho):
                            for s in range(Wo):
                                out[n_, row, r * Wo + s] = x[n_, c_, r + i, s + j]
    return out_arr


def col2im(const floating[:, :, ::1] cols, int C, int H, int W, int kh, int kw):
    """Adjoint of :func:`im2col`: scatter-add columns back to (N, C, H, W)."""
    cdef Py_ssize_t n_, c_, i, j, r, s
    cdef Py_ssize_t N = cols.shape[0]
    cdef Py_ssize_t Ho = H - kh + 1, Wo = W - kw + 1
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros((N, C, H, W), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t row
    with nogil:
        for n_ in range(N):
            for c_ in range(C):
                for i in range(kh):
                    for j in range(kw):
                        row = (c_ * kh + i) * kw + j
                        for r in range(Ho):
                            for s in range(Wo):
                                out[n_, c_, r + i, s + j] += cols[n_, row, r * Wo + s]
    return out_arr


def maxpool2_forward(const floating[:, :, :, ::1] x):
    """2x2/stride-2 max pool. Returns (pooled, argmax) with argmax in 0..3,
    row-major within the window; ties keep the first maximum."""
    cdef Py_ssize_t n_, c_, r, s, k
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], Ho = x.shape[2] // 2, Wo = x.shape[3] // 2
    cdef floating best, v
    cdef unsigned char arg
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty((N, C, Ho, Wo), dtype=dtype)
    idx_arr = np.empty((N, C, Ho, Wo), dtype=np.uint8)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef unsigned char[:, :, :, ::1] idx = idx_arr
    with nogil:
        for n_ in range(N):
            for c_ in range(C):
                for r in range(Ho):
                    for s in range(Wo):
                        best = x[n_, c_, 2 * r, 2 * s]
                        arg = 0
                        for k in range(1, 4):
                            v = x[n_, c_, 2 * r + k // 2, 2 * s + k % 2]
                            if v > best:
                                best = v
                                arg = <unsigned char>k
                        out[n_, c_, r, s] = best
                        idx[n_, c_, r, s] = arg
    return out_arr, idx_arr


def maxpool2_backward(const floating[:, :, :, ::1] grad, const unsigned char[:, :, :, ::1] idx):
    cdef Py_ssize_t n_, c_, r, s, k
    cdef Py_ssize_t N = grad.shape[0], C = grad.shape[1], Ho = grad.shape[2], Wo = grad.shape[3]
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros((N, C, 2 * Ho, 2 * Wo), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    with nogil:
        for n_ in range(N):
            for c_ in range(C):
                for r in range(Ho):
                    for s in range(Wo):
                        k = idx[n_, c_, r, s]
                        out[n_, c_, 2 * r + k // 2, 2 * s + k % 2] = grad[n_, c_, r, s]
    return out_arr
