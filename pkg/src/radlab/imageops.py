"""2D resampling helpers shared by the data generator and augmentations."""

from __future__ import annotations

import numpy as np


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with corners aligned to pixel centers."""
    h, w = image.shape
    if (out_h, out_w) == (h, w):
        return image.astype(np.float32).copy()
    ys = np.linspace(0.0, h - 1.0, out_h) if out_h > 1 else np.zeros(1)
    xs = np.linspace(0.0, w - 1.0, out_w) if out_w > 1 else np.zeros(1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    img = image.astype(np.float64)
    top = img[np.ix_(y0, x0)] * (1 - fx) + img[np.ix_(y0, x1)] * fx
    bot = img[np.ix_(y1, x0)] * (1 - fx) + img[np.ix_(y1, x1)] * fx
    return (top * (1 - fy) + bot * fy).astype(np.float32)


def affine_warp(image: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Sample ``image`` at ``matrix @ (row, col, 1)`` per output pixel.

    Bilinear interpolation, zero fill outside the frame. ``matrix`` is the
    2x3 output-to-source map in (row, col) coordinates.
    """
    h, w = image.shape
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    src_r = matrix[0, 0] * rows + matrix[0, 1] * cols + matrix[0, 2]
    src_c = matrix[1, 0] * rows + matrix[1, 1] * cols + matrix[1, 2]
    r0 = np.floor(src_r).astype(np.int64)
    c0 = np.floor(src_c).astype(np.int64)
    fr = src_r - r0
    fc = src_c - c0

    def sample(ri, ci):
        valid = (ri >= 0) & (ri < h) & (ci >= 0) & (ci < w)
        out = np.zeros_like(src_r)
        out[valid] = image[ri[valid], ci[valid]]
        return out

    v00 = sample(r0, c0)
    v01 = sample(r0, c0 + 1)
    v10 = sample(r0 + 1, c0)
    v11 = sample(r0 + 1, c0 + 1)
    top = v00 * (1 - fc) + v01 * fc
    bot = v10 * (1 - fc) + v11 * fc
    return (top * (1 - fr) + bot * fr).astype(np.float32)


def compose_affine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Compose two 2x3 maps: result(p) = a(b(p))... in source-lookup order."""
    a3 = np.vstack([a, [0.0, 0.0, 1.0]])
    b3 = np.vstack([b, [0.0, 0.0, 1.0]])
    return (a3 @ b3)[:2]


def octave_noise(rng: np.random.Generator, resolution: int, grid_sizes: list[int],
                 weights: list[float]) -> np.ndarray:
    """Sum of band-limited noise octaves, each a bilinearly upsampled
    coarse Gaussian grid."""
    out = np.zeros((resolution, resolution), np.float32)
    for size, weight in zip(grid_sizes, weights):
        grid = rng.standard_normal((size, size))
        out += weight * bilinear_resize(grid, resolution, resolution)
    return out
