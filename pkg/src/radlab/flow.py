"""Additive coupling flow with fixed random permutations.

Each block permutes the dimensions, then adds a learned translation of
the first half onto the second half. The coupling is exactly invertible
and volume preserving: the Jacobian log-determinant is identically zero.
An affine variant (learned log-scales, clamped) sits behind a flag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import crtf
from .nn import Dense
from .optim import AdamState, LrSchedule, adam_step, clip_grad_norm, lr_at
from .tensor import Tensor, concat_cols

LOG_SCALE_CLAMP = 2.0


class CouplingBlock:
    def __init__(self, rng: np.random.Generator, dim: int, hidden: int, affine: bool):
        half = dim // 2
        self.permutation = rng.permutation(dim).astype(np.int64)
        self.affine = affine
        self.t1 = Dense(rng, half, hidden)
        # zero-initialized output layer: the block starts as the identity
        self.t2 = Dense(rng, hidden, half, zero_init=True)
        self.s2 = Dense(rng, hidden, half, zero_init=True) if affine else None

    def params(self):
        out = self.t1.params() + self.t2.params()
        if self.s2 is not None:
            out += self.s2.params()
        return out

    def _nets(self, first: Tensor):
        h = self.t1(first).relu()
        t = self.t2(h)
        s = None
        if self.affine:
            s = self.s2(h).clip(-LOG_SCALE_CLAMP, LOG_SCALE_CLAMP)
        return t, s

    def forward(self, z: Tensor):
        half = z.shape[-1] // 2
        zp = z.permute_cols(self.permutation)
        first = zp.slice_cols(0, half)
        second = zp.slice_cols(half, 2 * half)
        t, s = self._nets(first)
        if s is not None:
            second = second * s.exp() + t
            log_det = s.sum(axis=-1)
        else:
            second = second + t
            log_det = Tensor(np.zeros(z.shape[0], np.float32))
        return concat_cols(first, second), log_det

    def inverse(self, y: np.ndarray) -> np.ndarray:
        half = y.shape[-1] // 2
        first = y[..., :half]
        second = y[..., half:]
        t, s = self._nets(Tensor(first))
        if s is not None:
            second = (second - t.data) * np.exp(-s.data)
        else:
            second = second - t.data
        merged = np.concatenate([first, second], axis=-1)
        inverse_perm = np.argsort(self.permutation)
        return merged[..., inverse_perm]


class FlowModel:
    """Stack of coupling blocks over a standard-normal base distribution."""

    def __init__(self, rng: np.random.Generator, dim: int, n_blocks: int = 4,
                 hidden: int | None = None, affine: bool = False):
        if dim % 2 != 0:
            raise ValueError(f"flow dimension must be even, got {dim}")
        self.dim = dim
        self.affine = affine
        self.hidden = hidden if hidden is not None else dim
        self.blocks = [CouplingBlock(rng, dim, self.hidden, affine) for _ in range(n_blocks)]

    def params(self) -> list[Tensor]:
        out = []
        for b in self.blocks:
            out += b.params()
        return out

    def forward(self, z) -> tuple[Tensor, Tensor]:
        """Map to base space; returns (base vectors, per-sample log_det)."""
        h = z if isinstance(z, Tensor) else Tensor(np.atleast_2d(np.asarray(z, np.float32)))
        if h.shape[-1] != self.dim:
            raise ValueError(f"flow built for dim {self.dim}, got {h.shape[-1]}")
        log_det = Tensor(np.zeros(h.shape[0], np.float32))
        for block in self.blocks:
            h, ld = block.forward(h)
            log_det = log_det + ld
        return h, log_det

    def inverse(self, y: np.ndarray) -> np.ndarray:
        out = np.atleast_2d(np.asarray(y, np.float32))
        for block in reversed(self.blocks):
            out = block.inverse(out)
        return out

    def log_prob(self, z) -> Tensor:
        """Per-sample log density under the standard-normal base."""
        base, log_det = self.forward(z)
        quad = (base * base).sum(axis=-1)
        const = 0.5 * self.dim * math.log(2.0 * math.pi)
        return quad * (-0.5) - const + log_det

    def nll(self, z) -> np.ndarray:
        return -self.log_prob(z).data


def flow_fit(z_train: np.ndarray, model: FlowModel, rng: np.random.Generator,
             z_val: np.ndarray | None = None, epochs: int = 60, batch_size: int = 128,
             lr: float = 1e-3, weight_decay: float = 1e-4, grad_clip: float = 5.0,
             noise_sigma: float = 1e-3):
    """Maximum-likelihood fit with input jitter, gradient clipping, and a
    /10-every-20-epochs schedule; returns the validation-best snapshot."""
    z_train = np.asarray(z_train, np.float32)
    if len(z_train) == 0:
        raise ValueError("empty training set")
    if z_val is None:
        cut = max(1, len(z_train) // 10)
        z_val, z_train = z_train[:cut], z_train[cut:]
    params = model.params()
    state = AdamState(weight_decay=weight_decay)
    schedule = LrSchedule(lr, epochs, kind="step_decay")
    history = {"train": [], "val": []}
    best = (np.inf, None)
    for epoch in range(epochs):
        rate = lr_at(schedule, epoch)
        order = rng.permutation(len(z_train))
        epoch_loss = 0.0
        for start in range(0, len(z_train), batch_size):
            batch = z_train[order[start:start + batch_size]]
            batch = batch + noise_sigma * rng.standard_normal(batch.shape).astype(np.float32)
            for p in params:
                p.zero_grad()
            loss = -model.log_prob(Tensor(batch)).mean()
            if not np.isfinite(loss.data):
                raise FloatingPointError(f"non-finite flow loss at epoch {epoch}")
            loss.backward()
            grads = [p.grad for p in params]
            clip_grad_norm(grads, grad_clip)
            adam_step(state, params, grads, rate)
            epoch_loss += float(loss.data.reshape(())) * len(batch)
        history["train"].append(epoch_loss / len(z_train))
        val_nll = float(model.nll(z_val).mean())
        history["val"].append(val_nll)
        if val_nll < best[0]:
            best = (val_nll, [p.data.copy() for p in params])
    if best[1] is not None:
        for p, data in zip(params, best[1]):
            p.data = data
    return model, history


def save_flow(directory: str | Path, model: FlowModel, manifest: dict[str, str]):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = {"model": "flow", "dim": str(model.dim), "hidden": str(model.hidden),
               "n_blocks": str(len(model.blocks)),
               "affine": str(int(model.affine)), **manifest}
    for i, block in enumerate(model.blocks):
        crtf.save_tensor(directory / f"block{i}.perm.crtf", block.permutation)
        crtf.save_tensor(directory / f"block{i}.t1.weight.crtf", block.t1.weight.data)
        crtf.save_tensor(directory / f"block{i}.t1.bias.crtf", block.t1.bias.data)
        crtf.save_tensor(directory / f"block{i}.t2.weight.crtf", block.t2.weight.data)
        crtf.save_tensor(directory / f"block{i}.t2.bias.crtf", block.t2.bias.data)
        if block.s2 is not None:
            crtf.save_tensor(directory / f"block{i}.s2.weight.crtf", block.s2.weight.data)
            crtf.save_tensor(directory / f"block{i}.s2.bias.crtf", block.s2.bias.data)
    crtf.save_manifest(directory / "manifest.txt", entries)


def load_flow(directory: str | Path) -> FlowModel:
    directory = Path(directory)
    manifest = crtf.load_manifest(directory / "manifest.txt")
    model = FlowModel(np.random.default_rng(0), int(manifest["dim"]),
                      n_blocks=int(manifest["n_blocks"]), hidden=int(manifest["hidden"]),
                      affine=bool(int(manifest["affine"])))
    for i, block in enumerate(model.blocks):
        block.permutation = crtf.load_tensor(directory / f"block{i}.perm.crtf").astype(np.int64)
        block.t1.weight.data = crtf.load_tensor(directory / f"block{i}.t1.weight.crtf")
        block.t1.bias.data = crtf.load_tensor(directory / f"block{i}.t1.bias.crtf")
        block.t2.weight.data = crtf.load_tensor(directory / f"block{i}.t2.weight.crtf")
        block.t2.bias.data = crtf.load_tensor(directory / f"block{i}.t2.bias.crtf")
        if block.s2 is not None:
            block.s2.weight.data = crtf.load_tensor(directory / f"block{i}.s2.weight.crtf")
            block.s2.bias.data = crtf.load_tensor(directory / f"block{i}.s2.bias.crtf")
    return model
