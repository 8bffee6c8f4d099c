"""N-dimensional float32 tensors with reverse-mode differentiation.

Covers exactly the operations the encoder/decoder, projection head,
coupling flow and gradient heatmaps need; no general-purpose framework
ambitions beyond that.
"""

from __future__ import annotations

import numpy as np

from . import backend


class ShapeError(ValueError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Row-major float32 array, optionally recording its producing op."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, op=""):
        self.data = np.ascontiguousarray(data, dtype=np.float32)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward
        self.op = op

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def _wrap(other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(np.asarray(other, np.float32))

    @staticmethod
    def _result(data, parents, backward, op) -> "Tensor":
        rg = any(p.requires_grad for p in parents)
        return Tensor(data, requires_grad=rg, _parents=parents if rg else (),
                      _backward=backward if rg else None, op=op)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # -- autodiff ------------------------------------------------------------

    def backward(self, seed: "Tensor | np.ndarray | None" = None):
        """Reverse-topological gradient accumulation from this node.

        Scalar outputs seed with 1; non-scalar outputs require an explicit
        seed of identical shape (used to chain the analytic GMM gradient
        through the encoder). Repeated calls accumulate into ``.grad``.
        """
        if seed is None:
            if self.data.size != 1:
                raise ShapeError("backward() on non-scalar output requires a seed gradient")
            seed_arr = np.ones_like(self.data)
        else:
            seed_arr = seed.data if isinstance(seed, Tensor) else np.asarray(seed, np.float32)
            if seed_arr.shape != self.data.shape:
                raise ShapeError(
                    f"seed shape {seed_arr.shape} does not match output shape {self.data.shape}")

        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): seed_arr.astype(np.float32)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is not None:
                for parent, pg in zip(node._parents, node._backward(g)):
                    if pg is None or not parent.requires_grad:
                        continue
                    key = id(parent)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad = node.grad + g

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = self._wrap(other)
        def bw(g):
            return (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape))
        return self._result(self.data + other.data, (self, other), bw, "add")

    __radd__ = __add__

    def __sub__(self, other):
        other = self._wrap(other)
        def bw(g):
            return (_unbroadcast(g, self.shape), _unbroadcast(-g, other.shape))
        return self._result(self.data - other.data, (self, other), bw, "sub")

    def __rsub__(self, other):
        return self._wrap(other) - self

    def __mul__(self, other):
        other = self._wrap(other)
        def bw(g):
            return (_unbroadcast(g * other.data, self.shape),
                    _unbroadcast(g * self.data, other.shape))
        return self._result(self.data * other.data, (self, other), bw, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._wrap(other)
        def bw(g):
            return (_unbroadcast(g / other.data, self.shape),
                    _unbroadcast(-g * self.data / (other.data ** 2), other.shape))
        return self._result(self.data / other.data, (self, other), bw, "div")

    def __rtruediv__(self, other):
        return self._wrap(other) / self

    def __neg__(self):
        return self._result(-self.data, (self,), lambda g: (-g,), "neg")

    def __pow__(self, exponent: float):
        e = float(exponent)
        def bw(g):
            return (g * e * self.data ** (e - 1.0),)
        return self._result(self.data ** e, (self,), bw, "pow")

    # -- elementwise ---------------------------------------------------------

    def exp(self):
        out = np.exp(self.data)
        return self._result(out, (self,), lambda g: (g * out,), "exp")

    def log(self):
        return self._result(np.log(self.data), (self,), lambda g: (g / self.data,), "log")

    def sqrt(self):
        out = np.sqrt(self.data)
        return self._result(out, (self,), lambda g: (g / (2.0 * out),), "sqrt")

    def abs(self):
        sign = np.sign(self.data)
        return self._result(np.abs(self.data), (self,), lambda g: (g * sign,), "abs")

    def relu(self):
        mask = self.data > 0
        return self._result(self.data * mask, (self,), lambda g: (g * mask,), "relu")

    def sigmoid(self):
        out = 1.0 / (1.0 + np.exp(-self.data))
        return self._result(out, (self,), lambda g: (g * out * (1.0 - out),), "sigmoid")

    def clip(self, lo: float, hi: float):
        inside = (self.data > lo) & (self.data < hi)
        return self._result(np.clip(self.data, lo, hi), (self,),
                            lambda g: (g * inside,), "clip")

    # -- reductions & shaping ------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.shape
        def bw(g):
            if axis is None:
                return (np.broadcast_to(g, shape).astype(np.float32),)
            g2 = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(g2, shape).astype(np.float32),)
        return self._result(out, (self,), bw, "sum")

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.data.size
        elif isinstance(axis, tuple):
            count = int(np.prod([self.data.shape[a] for a in axis]))
        else:
            count = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return self._result(self.data.reshape(shape), (self,),
                            lambda g: (g.reshape(old),), "reshape")

    def transpose(self, *axes):
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = np.argsort(axes)
        return self._result(np.ascontiguousarray(self.data.transpose(axes)), (self,),
                            lambda g: (g.transpose(inverse),), "transpose")

    def matmul(self, other: "Tensor"):
        other = self._wrap(other)
        if self.ndim != 2 or other.ndim != 2 or self.shape[1] != other.shape[0]:
            raise ShapeError(f"matmul shapes {self.shape} x {other.shape}")
        def bw(g):
            return (g @ other.data.T, self.data.T @ g)
        return self._result(self.data @ other.data, (self, other), bw, "matmul")

    __matmul__ = matmul

    def slice_cols(self, lo: int, hi: int):
        """Columns [lo, hi) along the last axis."""
        shape = self.shape
        def bw(g):
            full = np.zeros(shape, dtype=np.float32)
            full[..., lo:hi] = g
            return (full,)
        return self._result(np.ascontiguousarray(self.data[..., lo:hi]), (self,), bw, "slice")

    def permute_cols(self, index: np.ndarray):
        """Reorder the last axis by a fixed permutation."""
        index = np.asarray(index, dtype=np.int64)
        inverse = np.argsort(index)
        return self._result(np.ascontiguousarray(self.data[..., index]), (self,),
                            lambda g: (g[..., inverse],), "permute")


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the last axis."""
    na = a.shape[-1]
    def bw(g):
        return (g[..., :na], g[..., na:])
    return Tensor._result(np.concatenate([a.data, b.data], axis=-1), (a, b), bw, "concat")


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the first axis."""
    na = a.shape[0]
    def bw(g):
        return (g[:na], g[na:])
    return Tensor._result(np.concatenate([a.data, b.data], axis=0), (a, b), bw, "concat0")


# -- structured ops ----------------------------------------------------------

def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation, NCHW input, OIKK kernel."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 4D input/kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    o, ci, k, k2 = kernel.shape
    if k != k2 or ci != c:
        raise ShapeError(f"conv2d kernel {kernel.shape} incompatible with input {x.shape}")
    if stride < 1:
        raise ShapeError(f"conv2d stride must be >= 1, got {stride}")
    if k > h + 2 * padding or k > w + 2 * padding:
        raise ShapeError(
            f"kernel {k}x{k} larger than padded input {h + 2 * padding}x{w + 2 * padding}")
    out = backend.conv2d_forward(x.data, kernel.data, stride, padding)

    def bw(g):
        g = np.ascontiguousarray(g)
        dx = (backend.conv2d_backward_input(g, kernel.data, stride, padding, h, w)
              if x.requires_grad else None)
        dw = (backend.conv2d_backward_kernel(g, x.data, stride, padding, k)
              if kernel.requires_grad else None)
        return (dx, dw)

    return Tensor._result(out, (x, kernel), bw, "conv2d")


def conv2d_transpose(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Adjoint of conv2d with identical geometry; kernel stays OIKK with
    the input carrying O channels and the output I channels."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d_transpose expects 4D input/kernel, got {x.shape} and {kernel.shape}")
    n, o, h, w = x.shape
    ko, ci, k, k2 = kernel.shape
    if k != k2 or ko != o:
        raise ShapeError(
            f"conv2d_transpose kernel {kernel.shape} incompatible with input {x.shape}")
    if stride < 1:
        raise ShapeError(f"conv2d_transpose stride must be >= 1, got {stride}")
    out_h = (h - 1) * stride - 2 * padding + k
    out_w = (w - 1) * stride - 2 * padding + k
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"conv2d_transpose output size {out_h}x{out_w} invalid")
    out = backend.conv2d_backward_input(x.data, kernel.data, stride, padding, out_h, out_w)

    def bw(g):
        g = np.ascontiguousarray(g)
        dx = (backend.conv2d_forward(g, kernel.data, stride, padding)
              if x.requires_grad else None)
        dw = (backend.conv2d_backward_kernel(x.data, g, stride, padding, k)
              if kernel.requires_grad else None)
        return (dx, dw)

    return Tensor._result(out, (x, kernel), bw, "conv2d_transpose")


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x @ weight + bias, bias broadcast over rows."""
    if x.shape[-1] != weight.shape[0] or weight.shape[1] != bias.shape[0]:
        raise ShapeError(
            f"dense shapes: input {x.shape}, weight {weight.shape}, bias {bias.shape}")
    return x @ weight + bias


def batch_norm_2d(x: Tensor, gamma: Tensor, beta: Tensor, state: "BatchNormState",
                  mode: str = "train", eps: float = 1e-5, momentum: float = 0.1) -> Tensor:
    """Per-channel batch normalization over NCHW.

    Train mode normalizes by batch statistics and updates the running
    stats in ``state``; eval mode applies the running stats (initialized
    to mean 0 / var 1) as a fixed affine map.
    """
    if x.ndim != 4:
        raise ShapeError(f"batch_norm_2d expects NCHW, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm_2d gamma/beta must have shape ({c},)")
    gview = gamma.reshape(1, c, 1, 1)
    bview = beta.reshape(1, c, 1, 1)
    if mode == "eval":
        mu = state.running_mean.reshape(1, c, 1, 1)
        var = state.running_var.reshape(1, c, 1, 1)
        inv = Tensor((var + eps) ** -0.5)
        return (x - Tensor(mu)) * inv * gview + bview
    if mode != "train":
        raise ValueError(f"batch_norm_2d mode must be train|eval, got {mode!r}")

    axes = (0, 2, 3)
    mu = x.data.mean(axis=axes)
    var = x.data.var(axis=axes)
    state.running_mean = (1.0 - momentum) * state.running_mean + momentum * mu
    state.running_var = (1.0 - momentum) * state.running_var + momentum * var

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)

    def bw(g):
        dgamma = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        dbeta = g.sum(axis=axes) if beta.requires_grad else None
        dx = None
        if x.requires_grad:
            gg = g * gamma.data.reshape(1, c, 1, 1)
            mean_g = gg.mean(axis=axes).reshape(1, c, 1, 1)
            mean_gx = (gg * xhat).mean(axis=axes).reshape(1, c, 1, 1)
            dx = inv.reshape(1, c, 1, 1) * (gg - mean_g - xhat * mean_gx)
            dx = dx.astype(np.float32)
        return (dx, dgamma, dbeta)

    out = xhat * gamma.data.reshape(1, c, 1, 1) + beta.data.reshape(1, c, 1, 1)
    return Tensor._result(out.astype(np.float32), (x, gamma, beta), bw, "batch_norm")


class BatchNormState:
    """Running statistics for one batch-norm layer."""

    def __init__(self, channels: int):
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)


class DegenerateEmbeddingError(ValueError):
    pass


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """dot(a, b) / (|a| |b|) for 1D tensors of equal length."""
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"cosine_similarity needs equal-length vectors, got {a.shape}, {b.shape}")
    na = float(np.linalg.norm(a.data))
    nb = float(np.linalg.norm(b.data))
    if na < 1e-12 or nb < 1e-12:
        raise DegenerateEmbeddingError(f"near-zero norm embedding ({na:.3e}, {nb:.3e})")
    dot = (a * b).sum()
    return dot * ((a * a).sum().sqrt() * (b * b).sum().sqrt()) ** -1.0
