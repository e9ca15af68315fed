# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for exponentially weighted pooling.

Same contract as ``_softpool_py``: (B, rows, cols) float64 in, pooled maps or
input gradients out. Overlapping windows accumulate into the gradient in
row-major window order.
"""
import numpy as np

from libc.math cimport exp


def pool_forward(const double[:, :, ::1] maps, int k, int stride):
    cdef Py_ssize_t B = maps.shape[0]
    cdef Py_ssize_t orows = (maps.shape[1] - k) // stride + 1
    cdef Py_ssize_t ocols = (maps.shape[2] - k) // stride + 1
    out_arr = np.empty((B, orows, ocols), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, i, j, di, dj, r0, c0
    cdef double m, v, e, den, num
    with nogil:
        for b in range(B):
            for i in range(orows):
                r0 = i * stride
                for j in range(ocols):
                    c0 = j * stride
                    m = maps[b, r0, c0]
                    for di in range(k):
                        for dj in range(k):
                            v = maps[b, r0 + di, c0 + dj]
                            if v > m:
                                m = v
                    den = 0.0
                    num = 0.0
                    for di in range(k):
                        for dj in range(k):
                            v = maps[b, r0 + di, c0 + dj]
                            e = exp(v - m)
                            den += e
                            num += e * v
                    out[b, i, j] = num / den
    return out_arr


def pool_backward(const double[:, :, ::1] maps, int k, int stride,
                  const double[:, :, ::1] upstream):
    cdef Py_ssize_t B = maps.shape[0]
    cdef Py_ssize_t orows = upstream.shape[1]
    cdef Py_ssize_t ocols = upstream.shape[2]
    grad_arr = np.zeros((B, maps.shape[1], maps.shape[2]), dtype=np.float64)
    cdef double[:, :, ::1] grad = grad_arr
    cdef Py_ssize_t b, i, j, di, dj, r0, c0
    cdef double m, v, e, den, num, out, up
    with nogil:
        for b in range(B):
            for i in range(orows):
                r0 = i * stride
                for j in range(ocols):
                    c0 = j * stride
                    up = upstream[b, i, j]
                    m = maps[b, r0, c0]
                    for di in range(k):
                        for dj in range(k):
                            v = maps[b, r0 + di, c0 + dj]
                            if v > m:
                                m = v
                    den = 0.0
                    num = 0.0
                    for di in range(k):
                        for dj in range(k):
                            v = maps[b, r0 + di, c0 + dj]
                            e = exp(v - m)
                            den += e
                            num += e * v
                    out = num / den
                    for di in range(k):
                        for dj in range(k):
                            v = maps[b, r0 + di, c0 + dj]
                            e = exp(v - m) / den
                            grad[b, r0 + di, c0 + dj] += up * e * (1.0 + v - out)
    return grad_arr
