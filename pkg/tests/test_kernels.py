"""Both kernel backends against slow reference loops."""

import numpy as np
import pytest

from radlab import kernels_numpy

try:
    from radlab import kernels_numba
    BACKENDS = [("numpy", kernels_numpy), ("numba", kernels_numba)]
except ImportError:
    BACKENDS = [("numpy", kernels_numpy)]


def conv2d_loops(x, w, stride, padding):
    """Direct convolution in float64, the ground truth for everything here."""
    n, c, h, width = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out_h = (h + 2 * padding - k) // stride + 1
    out_w = (width + 2 * padding - k) // stride + 1
    y = np.zeros((n, o, out_h, out_w))
    for b in range(n):
        for oc in range(o):
            for i in range(out_h):
                for j in range(out_w):
                    patch = xp[b, :, i * stride:i * stride + k, j * stride:j * stride + k]
                    y[b, oc, i, j] = (patch * w[oc]).sum()
    return y


def _cases(rng):
    return [
        (rng.standard_normal((2, 1, 8, 8)).astype(np.float32),
         rng.standard_normal((4, 1, 4, 4)).astype(np.float32), 2, 1),
        (rng.standard_normal((1, 3, 6, 6)).astype(np.float32),
         rng.standard_normal((2, 3, 3, 3)).astype(np.float32), 1, 0),
        (rng.standard_normal((3, 2, 5, 5)).astype(np.float32),
         rng.standard_normal((2, 2, 4, 4)).astype(np.float32), 1, 2),
        (rng.standard_normal((2, 4, 4, 4)).astype(np.float32),
         rng.standard_normal((8, 4, 4, 4)).astype(np.float32), 1, 0),
    ]


@pytest.mark.parametrize("label,impl", BACKENDS)
def test_forward_matches_loop_reference(label, impl):
    rng = np.random.default_rng(0)
    for x, w, stride, pad in _cases(rng):
        got = impl.conv2d_forward(x, w, stride, pad)
        want = conv2d_loops(x, w, stride, pad)
        assert got.shape == want.shape
        np.testing.assert_allclose(got, want, rtol=1e-4, atol=1e-5)


@pytest.mark.parametrize("label,impl", BACKENDS)
def test_backward_input_is_adjoint_of_forward(label, impl):
    # <conv(x), dy> == <x, conv_backward_input(dy)> for all x, dy
    rng = np.random.default_rng(1)
    for x, w, stride, pad in _cases(rng):
        y = impl.conv2d_forward(x, w, stride, pad)
        dy = rng.standard_normal(y.shape).astype(np.float32)
        dx = impl.conv2d_backward_input(dy, w, stride, pad, x.shape[2], x.shape[3])
        lhs = float((y.astype(np.float64) * dy).sum())
        rhs = float((x.astype(np.float64) * dx).sum())
        assert abs(lhs - rhs) <= 1e-3 * max(1.0, abs(lhs))


@pytest.mark.parametrize("label,impl", BACKENDS)
def test_backward_kernel_matches_float64_differences(label, impl):
    rng = np.random.default_rng(2)
    for x, w, stride, pad in _cases(rng):
        y64 = conv2d_loops(x, w, stride, pad)
        dy = rng.standard_normal(y64.shape).astype(np.float32)
        dw = impl.conv2d_backward_kernel(dy, x, stride, pad, w.shape[2])
        # loss = sum(y*dy); d loss/d w[oc,ic,kh,kw] from the loop reference
        want = np.zeros(w.shape)
        xp = np.pad(x.astype(np.float64),
                    ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        n, o, out_h, out_w = dy.shape
        k = w.shape[2]
        for b in range(n):
            for oc in range(o):
                for i in range(out_h):
                    for j in range(out_w):
                        want[oc] += dy[b, oc, i, j] * xp[b, :, i * stride:i * stride + k,
                                                         j * stride:j * stride + k]
        np.testing.assert_allclose(dw, want, rtol=1e-3, atol=1e-4)


@pytest.mark.parametrize("label,impl", BACKENDS)
def test_median_pool_matches_sorting_reference(label, impl):
    rng = np.random.default_rng(3)
    for size, kernel in ((8, 3), (9, 5), (12, 7)):
        x = rng.standard_normal((size, size)).astype(np.float32)
        r = kernel // 2
        xp = np.pad(x, r, mode="reflect")
        want = np.array([[np.median(xp[i:i + kernel, j:j + kernel])
                          for j in range(size)] for i in range(size)])
        np.testing.assert_allclose(impl.median_pool2d(x, kernel), want, atol=1e-6)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="numba unavailable")
def test_backends_agree():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((4, 3, 16, 16)).astype(np.float32)
    w = rng.standard_normal((8, 3, 4, 4)).astype(np.float32)
    y_np = kernels_numpy.conv2d_forward(x, w, 2, 1)
    y_nb = kernels_numba.conv2d_forward(x, w, 2, 1)
    np.testing.assert_allclose(y_np, y_nb, rtol=1e-4, atol=1e-5)
    hm = rng.standard_normal((32, 32)).astype(np.float32)
    np.testing.assert_array_equal(kernels_numpy.median_pool2d(hm, 5),
                                  kernels_numba.median_pool2d(hm, 5))
