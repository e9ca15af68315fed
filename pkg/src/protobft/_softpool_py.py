"""Vectorised numpy kernels for exponentially weighted pooling.

Used when the compiled extension is unavailable or disabled. Both kernels take
a contiguous (B, rows, cols) float64 array and assume the caller validated
kernel size and stride.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(maps, k, stride):
    return sliding_window_view(maps, (k, k), axis=(1, 2))[:, ::stride, ::stride]


def pool_forward(maps, k, stride):
    win = _windows(maps, k, stride)
    m = win.max(axis=(-2, -1), keepdims=True)
    e = np.exp(win - m)
    w = e / e.sum(axis=(-2, -1), keepdims=True)
    return (w * win).sum(axis=(-2, -1))


def pool_backward(maps, k, stride, upstream):
    win = _windows(maps, k, stride)
    m = win.max(axis=(-2, -1), keepdims=True)
    e = np.exp(win - m)
    w = e / e.sum(axis=(-2, -1), keepdims=True)
    out = (w * win).sum(axis=(-2, -1), keepdims=True)
    local = w * (1.0 + win - out) * upstream[..., None, None]
    grad = np.zeros_like(maps)
    B, orows, ocols = upstream.shape
    for di in range(k):
        for dj in range(k):
            grad[:, di : di + stride * orows : stride, dj : dj + stride * ocols : stride] += local[
                ..., di, dj
            ]
    return grad
