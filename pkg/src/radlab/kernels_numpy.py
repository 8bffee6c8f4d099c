"""Pure-numpy reference kernels (im2col / BLAS backed).

Selected at import time by :mod:`radlab.backend` when numba is unavailable
or ``RADLAB_BACKEND=numpy`` is set.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided, sliding_window_view


def _im2col(xp: np.ndarray, kernel: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    """View padded input (N,C,Hp,Wp) as (N, out_h, out_w, C, kernel, kernel)."""
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    shape = (n, out_h, out_w, c, kernel, kernel)
    strides = (sn, sh * stride, sw * stride, sc, sh, sw)
    return as_strided(xp, shape=shape, strides=strides)


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    out_h = (h + 2 * padding - k) // stride + 1
    out_w = (wd + 2 * padding - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    col = _im2col(xp, k, stride, out_h, out_w).reshape(n * out_h * out_w, c * k * k)
    y = col @ w.reshape(o, -1).T
    return np.ascontiguousarray(
        y.reshape(n, out_h, out_w, o).transpose(0, 3, 1, 2), dtype=x.dtype
    )


def conv2d_backward_input(
    dy: np.ndarray, w: np.ndarray, stride: int, padding: int, in_h: int, in_w: int
) -> np.ndarray:
    n, o, out_h, out_w = dy.shape
    _, c, k, _ = w.shape
    dcol = dy.transpose(0, 2, 3, 1).reshape(-1, o) @ w.reshape(o, -1)
    dcol = dcol.reshape(n, out_h, out_w, c, k, k)
    dxp = np.zeros((n, c, in_h + 2 * padding, in_w + 2 * padding), dtype=dy.dtype)
    for kh in range(k):
        for kw in range(k):
            dxp[:, :, kh : kh + out_h * stride : stride, kw : kw + out_w * stride : stride] += (
                dcol[:, :, :, :, kh, kw].transpose(0, 3, 1, 2)
            )
    if padding:
        dxp = dxp[:, :, padding:-padding, padding:-padding]
    return np.ascontiguousarray(dxp)


def conv2d_backward_kernel(
    dy: np.ndarray, x: np.ndarray, stride: int, padding: int, kernel: int
) -> np.ndarray:
    n, o, out_h, out_w = dy.shape
    c = x.shape[1]
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    col = _im2col(xp, kernel, stride, out_h, out_w).reshape(n * out_h * out_w, -1)
    dw = dy.transpose(1, 0, 2, 3).reshape(o, -1) @ col
    return np.ascontiguousarray(dw.reshape(o, c, kernel, kernel))


def median_pool2d(x: np.ndarray, kernel: int) -> np.ndarray:
    r = kernel // 2
    xp = np.pad(x, r, mode="reflect")
    win = sliding_window_view(xp, (kernel, kernel))
    return np.median(win, axis=(-2, -1)).astype(x.dtype)
