"""Numba-jitted convolution and pooling kernels.

Same contracts as :mod:`radlab.kernels_numpy`; chosen by default when
numba imports cleanly (see :mod:`radlab.backend`).
"""

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True, fastmath=False)
def _conv2d_forward(x, w, stride, padding, y):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    out_h = y.shape[2]
    out_w = y.shape[3]
    for ni in prange(n):
        for oi in range(o):
            for i in range(out_h):
                for j in range(out_w):
                    acc = 0.0
                    for ci in range(c):
                        for kh in range(k):
                            ih = i * stride + kh - padding
                            if ih < 0 or ih >= h:
                                continue
                            for kw in range(k):
                                iw = j * stride + kw - padding
                                if iw < 0 or iw >= wd:
                                    continue
                                acc += x[ni, ci, ih, iw] * w[oi, ci, kh, kw]
                    y[ni, oi, i, j] = acc


@njit(cache=True, parallel=True, fastmath=False)
def _conv2d_backward_input(dy, w, stride, padding, dx):
    n, o, out_h, out_w = dy.shape
    _, c, k, _ = w.shape
    h = dx.shape[2]
    wd = dx.shape[3]
    for ni in prange(n):
        for oi in range(o):
            for i in range(out_h):
                for j in range(out_w):
                    g = dy[ni, oi, i, j]
                    for ci in range(c):
                        for kh in range(k):
                            ih = i * stride + kh - padding
                            if ih < 0 or ih >= h:
                                continue
                            for kw in range(k):
                                iw = j * stride + kw - padding
                                if iw < 0 or iw >= wd:
                                    continue
                                dx[ni, ci, ih, iw] += g * w[oi, ci, kh, kw]


@njit(cache=True, parallel=True, fastmath=False)
def _conv2d_backward_kernel(dy, x, stride, padding, dw):
    n, o, out_h, out_w = dy.shape
    _, c, h, wd = x.shape
    k = dw.shape[2]
    for oi in prange(o):
        for ci in range(c):
            for kh in range(k):
                for kw in range(k):
                    acc = 0.0
                    for ni in range(n):
                        for i in range(out_h):
                            ih = i * stride + kh - padding
                            if ih < 0 or ih >= h:
                                continue
                            for j in range(out_w):
                                iw = j * stride + kw - padding
                                if iw < 0 or iw >= wd:
                                    continue
                                acc += dy[ni, oi, i, j] * x[ni, ci, ih, iw]
                    dw[oi, ci, kh, kw] = acc


@njit(cache=True, parallel=True, fastmath=False)
def _median_pool2d(xp, kernel, out):
    h, w = out.shape
    m = kernel * kernel
    for i in prange(h):
        buf = np.empty(m, dtype=xp.dtype)
        for j in range(w):
            idx = 0
            for kh in range(kernel):
                for kw in range(kernel):
                    buf[idx] = xp[i + kh, j + kw]
                    idx += 1
            buf.sort()
            out[i, j] = buf[m // 2]


def conv2d_forward(x, w, stride, padding):
    n, _, h, wd = x.shape
    o, _, k, _ = w.shape
    out_h = (h + 2 * padding - k) // stride + 1
    out_w = (wd + 2 * padding - k) // stride + 1
    y = np.empty((n, o, out_h, out_w), dtype=x.dtype)
    _conv2d_forward(x, w, stride, padding, y)
    return y


def conv2d_backward_input(dy, w, stride, padding, in_h, in_w):
    n = dy.shape[0]
    c = w.shape[1]
    dx = np.zeros((n, c, in_h, in_w), dtype=dy.dtype)
    _conv2d_backward_input(dy, w, stride, padding, dx)
    return dx


def conv2d_backward_kernel(dy, x, stride, padding, kernel):
    o = dy.shape[1]
    c = x.shape[1]
    dw = np.empty((o, c, kernel, kernel), dtype=dy.dtype)
    _conv2d_backward_kernel(dy, x, stride, padding, dw)
    return dw


def median_pool2d(x, kernel):
    r = kernel // 2
    xp = np.pad(x, r, mode="reflect")
    out = np.empty_like(x)
    _median_pool2d(xp, kernel, out)
    return out
