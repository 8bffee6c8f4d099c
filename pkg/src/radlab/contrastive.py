"""Contrastive pretext training: two augmented views per sample, encoder +
projection head, temperature-scaled loss over in-batch negatives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .augment import AugmentationPolicy, sample_view
from .models import DcEncoder, ProjectionHead
from .optim import AdamState, LrSchedule, adam_step, lr_at
from .synth import LabeledSample
from .tensor import DegenerateEmbeddingError, Tensor, concat_rows


@dataclass
class ContrastiveConfig:
    temperature: float = 0.5
    epochs: int = 20
    batch_size: int = 64
    lr: float = 1e-4
    weight_decay: float = 1e-6
    warmup_epochs: int = 10

    def __post_init__(self):
        if self.temperature <= 0.0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.batch_size < 2:
            raise ValueError("batch size must be >= 2 for meaningful negatives")


def nt_xent_loss(views_a: Tensor, views_b: Tensor, temperature: float) -> Tensor:
    """Temperature-scaled contrastive loss, summed over all 2N anchors.

    Positive pairs are (views_a[i], views_b[i]); for each anchor the
    denominator runs over all other 2N-1 embeddings in the batch,
    positive included. Similarities are cosine.
    """
    n = views_a.shape[0]
    u = concat_rows(views_a, views_b)  # (2N, d)
    norms = np.linalg.norm(u.data, axis=1)
    if np.any(norms < 1e-12):
        raise DegenerateEmbeddingError("zero-norm embedding in contrastive batch")
    un = u / (u * u).sum(axis=1, keepdims=True).sqrt()
    sim = (un @ un.transpose()) * (1.0 / temperature)  # (2N, 2N)

    m = 2 * n
    offdiag = (1.0 - np.eye(m)).astype(np.float32)
    pos = np.zeros((m, m), np.float32)
    idx = np.arange(n)
    pos[idx, idx + n] = 1.0
    pos[idx + n, idx] = 1.0

    row_max = np.where(offdiag > 0, sim.data, -np.inf).max(axis=1, keepdims=True)
    shifted = (sim - Tensor(row_max)).exp() * Tensor(offdiag)
    lse = shifted.sum(axis=1, keepdims=True).log() + Tensor(row_max)
    pos_term = (sim * Tensor(pos)).sum(axis=1, keepdims=True)
    return (lse - pos_term).sum()


def _view_batch(samples: list[LabeledSample], policy: AugmentationPolicy,
                rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    res = samples[0].image.shape[0]
    a = np.empty((len(samples), 1, res, res), np.float32)
    b = np.empty_like(a)
    for i, s in enumerate(samples):
        a[i, 0] = sample_view(s.image, policy, rng)
        b[i, 0] = sample_view(s.image, policy, rng)
    return a, b


def _epoch_loss(encoder: DcEncoder, head: ProjectionHead, samples, policy, rng,
                batch_size: int, temperature: float) -> float:
    """Mean per-anchor loss in eval mode (no parameter updates)."""
    total, anchors = 0.0, 0
    for start in range(0, len(samples), batch_size):
        batch = samples[start:start + batch_size]
        if len(batch) < 2:
            continue
        a, b = _view_batch(batch, policy, rng)
        za = head(encoder(Tensor(a), mode="eval"))
        zb = head(encoder(Tensor(b), mode="eval"))
        loss = nt_xent_loss(za, zb, temperature)
        total += float(loss.data.reshape(()))
        anchors += 2 * len(batch)
    return total / max(anchors, 1)


def train_contrastive(train_samples: list[LabeledSample], val_samples: list[LabeledSample],
                      encoder: DcEncoder, head: ProjectionHead, config: ContrastiveConfig,
                      rng: np.random.Generator, policy: AugmentationPolicy):
    """Adam + cosine-warmup training; snapshots every epoch for selection.

    Returns (encoder, head, history, snapshots); history carries per-epoch
    mean per-anchor train and validation losses.
    """
    if not train_samples:
        raise ValueError("empty training set")
    if any(s.slice_label for s in train_samples):
        raise ValueError("training split must be normal-only")

    params = encoder.params() + head.params()
    state = AdamState(weight_decay=config.weight_decay)
    schedule = LrSchedule(config.lr, config.epochs, config.warmup_epochs)
    history = {"train": [], "val": []}
    snapshots = []
    for epoch in range(config.epochs):
        rate = lr_at(schedule, epoch)
        order = rng.permutation(len(train_samples))
        total, anchors = 0.0, 0
        for bstart in range(0, len(order), config.batch_size):
            batch = [train_samples[i] for i in order[bstart:bstart + config.batch_size]]
            if len(batch) < 2:
                continue
            a, b = _view_batch(batch, policy, rng)
            for p in params:
                p.zero_grad()
            za = head(encoder(Tensor(a), mode="train"))
            zb = head(encoder(Tensor(b), mode="train"))
            loss = nt_xent_loss(za, zb, config.temperature) * (1.0 / (2 * len(batch)))
            if not np.isfinite(loss.data):
                raise FloatingPointError(
                    f"non-finite contrastive loss at epoch {epoch}, batch {bstart // config.batch_size}")
            loss.backward()
            adam_step(state, params, [p.grad for p in params], rate)
            total += float(loss.data.reshape(())) * 2 * len(batch)
            anchors += 2 * len(batch)
        history["train"].append(total / max(anchors, 1))

        val_rng = np.random.default_rng(int(rng.integers(2 ** 31)))
        val_norm = [s for s in val_samples if not s.slice_label] or train_samples[:64]
        history["val"].append(_epoch_loss(encoder, head, val_norm, policy, val_rng,
                                          config.batch_size, config.temperature))
        snapshots.append({"encoder": {k: v.copy() for k, v in encoder.named_tensors().items()},
                          "head": {k: v.copy() for k, v in head.named_tensors().items()}})
    return encoder, head, history, snapshots


def select_checkpoint(val_losses: list[float], snapshots: list[dict]) -> tuple[int, dict]:
    """Snapshot with the smallest validation loss; ties go to the earliest."""
    if not val_losses or not snapshots:
        raise ValueError("no snapshots to select from")
    best = int(np.argmin(val_losses))  # argmin returns the first minimum
    return best, snapshots[best]


def encode_batch(encoder: DcEncoder, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Eval-mode representations, (B, nz), no augmentation."""
    if images.ndim == 3:
        images = images[:, None]
    out = []
    for start in range(0, len(images), batch_size):
        out.append(encoder(Tensor(images[start:start + batch_size]), mode="eval").data)
    return np.concatenate(out, axis=0)
