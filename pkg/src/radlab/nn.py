"""Layer primitives built on the tensor engine."""

from __future__ import annotations

import numpy as np

from .tensor import BatchNormState, Tensor, batch_norm_2d, conv2d, conv2d_transpose, dense


def uniform_init(rng: np.random.Generator, shape: tuple, fan_in: int) -> Tensor:
    bound = np.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(np.float32),
                  requires_grad=True)


class Conv2d:
    def __init__(self, rng, in_ch: int, out_ch: int, kernel: int, stride: int,
                 padding: int, bias: bool = False):
        self.stride = stride
        self.padding = padding
        self.weight = uniform_init(rng, (out_ch, in_ch, kernel, kernel), in_ch * kernel * kernel)
        self.bias = Tensor(np.zeros(out_ch, np.float32), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = conv2d(x, self.weight, self.stride, self.padding)
        if self.bias is not None:
            y = y + self.bias.reshape(1, -1, 1, 1)
        return y

    def params(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])


class ConvTranspose2d:
    def __init__(self, rng, in_ch: int, out_ch: int, kernel: int, stride: int,
                 padding: int, bias: bool = False):
        self.stride = stride
        self.padding = padding
        # kernel stored OIKK with O = in_ch so the op is the exact adjoint
        # of a conv with the same weights
        self.weight = uniform_init(rng, (in_ch, out_ch, kernel, kernel), in_ch * kernel * kernel)
        self.bias = Tensor(np.zeros(out_ch, np.float32), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = conv2d_transpose(x, self.weight, self.stride, self.padding)
        if self.bias is not None:
            y = y + self.bias.reshape(1, -1, 1, 1)
        return y

    def params(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])


class BatchNorm2d:
    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        self.gamma = Tensor(np.ones(channels, np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, np.float32), requires_grad=True)
        self.state = BatchNormState(channels)
        self.eps = eps
        self.momentum = momentum

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        return batch_norm_2d(x, self.gamma, self.beta, self.state, mode,
                             eps=self.eps, momentum=self.momentum)

    def params(self):
        return [self.gamma, self.beta]


class Dense:
    def __init__(self, rng, d_in: int, d_out: int, zero_init: bool = False):
        if zero_init:
            self.weight = Tensor(np.zeros((d_in, d_out), np.float32), requires_grad=True)
        else:
            self.weight = uniform_init(rng, (d_in, d_out), d_in)
        self.bias = Tensor(np.zeros(d_out, np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return dense(x, self.weight, self.bias)

    def params(self):
        return [self.weight, self.bias]
