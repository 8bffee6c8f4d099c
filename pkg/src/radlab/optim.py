"""Adam optimizer, learning-rate schedules, finite-difference checking."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


class NonFiniteGradientError(RuntimeError):
    pass


@dataclass
class AdamState:
    """Per-parameter first/second moment accumulators and step counter."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def _ensure(self, params: list[Tensor]):
        if not self.m:
            self.m = [np.zeros_like(p.data) for p in params]
            self.v = [np.zeros_like(p.data) for p in params]


def adam_step(state: AdamState, params: list[Tensor], grads: list[np.ndarray], lr: float):
    """One bias-corrected Adam update, in place on ``params``.

    Weight decay is decoupled: params shrink by (1 - lr*wd) before the
    Adam delta is applied. Aborts on any non-finite gradient.
    """
    state._ensure(params)
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for parameter {i}")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
        if state.weight_decay:
            p.data *= np.float32(1.0 - lr * state.weight_decay)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        p.data -= (lr * mhat / (np.sqrt(vhat) + state.eps)).astype(np.float32)


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads))
    if total > max_norm and total > 0.0:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


@dataclass
class LrSchedule:
    """Epoch-indexed learning rate: cosine with linear warmup, or /10 step decay."""

    base: float
    total_epochs: int
    warmup_epochs: int = 0
    kind: str = "cosine_warmup"


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    if not 0 <= epoch < schedule.total_epochs:
        raise ValueError(f"epoch {epoch} out of range [0, {schedule.total_epochs})")
    if schedule.kind == "step_decay":
        return schedule.base * 10.0 ** (-(epoch // 20))
    if schedule.kind != "cosine_warmup":
        raise ValueError(f"unknown schedule kind {schedule.kind!r}")
    if epoch < schedule.warmup_epochs:
        return schedule.base * (epoch + 1) / schedule.warmup_epochs
    span = schedule.total_epochs - schedule.warmup_epochs
    return schedule.base * 0.5 * (1.0 + math.cos(math.pi * (epoch - schedule.warmup_epochs) / span))


def gradient_check(f, point: Tensor, h: float = 1e-3) -> float:
    """Max relative error between backprop and central differences.

    Relative error per coordinate is |analytic - numeric| divided by
    max(1e-8, |analytic| + |numeric|).
    """
    probe = Tensor(point.data.copy(), requires_grad=True)
    out = f(probe)
    if out.data.size != 1:
        raise ValueError("gradient_check needs a scalar-valued function")
    if not np.isfinite(out.data).all():
        raise FloatingPointError("non-finite function value at the probe point")
    out.backward()
    if probe.grad is None:
        raise ValueError("function output does not depend on the probe point")
    analytic = probe.grad.astype(np.float64).ravel()

    flat = point.data.copy().ravel()
    numeric = np.empty_like(analytic)
    for i in range(flat.size):
        for sign in (+1.0, -1.0):
            shifted = flat.copy()
            shifted[i] += sign * h
            val = f(Tensor(shifted.reshape(point.shape))).data
            if not np.isfinite(val).all():
                raise FloatingPointError(f"non-finite function value at probe coordinate {i}")
            if sign > 0:
                hi = float(val.reshape(()))
            else:
                lo = float(val.reshape(()))
        numeric[i] = (hi - lo) / (2.0 * h)

    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))
