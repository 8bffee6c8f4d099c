"""VAE and ceVAE baselines: DC encoder/decoder, L1 + KL objective, and the
context-encoding restoration term on cutout-masked inputs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .augment import AugmentationPolicy, cutout, sample_view
from .models import DcDecoder, DcEncoder
from .optim import AdamState, adam_step
from .synth import LabeledSample
from .tensor import Tensor

LOGVAR_CLAMP = 10.0


def to_unit_range(x):
    """Affine map from the clip range [-1.5, 1.5] to the decoder's [0, 1]."""
    return (x + 1.5) / 3.0


@dataclass
class VaeConfig:
    epochs: int = 20
    batch_size: int = 64
    lr: float = 1e-4
    beta: float = 1.0
    gamma: float = 1.0
    cevae: bool = False


class VaeModel:
    """Encoder emits mean and log-variance (2*nz wide); decoder mirrors it."""

    def __init__(self, rng: np.random.Generator, resolution: int, nz: int, nf: int,
                 beta: float = 1.0, cevae: bool = False, gamma: float = 1.0):
        self.resolution = resolution
        self.nz = nz
        self.nf = nf
        self.beta = beta
        self.gamma = gamma
        self.cevae = cevae
        self.encoder = DcEncoder(rng, resolution, 2 * nz, nf)
        self.decoder = DcDecoder(rng, resolution, nz, nf)

    def params(self) -> list[Tensor]:
        return self.encoder.params() + self.decoder.params()

    def encode_stats(self, x: Tensor, mode: str = "eval"):
        stats = self.encoder(x, mode)
        mean = stats.slice_cols(0, self.nz)
        logvar = stats.slice_cols(self.nz, 2 * self.nz).clip(-LOGVAR_CLAMP, LOGVAR_CLAMP)
        return mean, logvar

    def named_tensors(self):
        named = {f"enc.{k}": v for k, v in self.encoder.named_tensors().items()}
        named.update({f"dec.{k}": v for k, v in self.decoder.named_tensors().items()})
        return named

    def load_named(self, named):
        self.encoder.load_named({k[4:]: v for k, v in named.items() if k.startswith("enc.")})
        self.decoder.load_named({k[4:]: v for k, v in named.items() if k.startswith("dec.")})


def vae_forward(model: VaeModel, batch: Tensor, rng: np.random.Generator | None,
                mode: str = "eval"):
    """Reparameterized forward pass; rng=None means frozen eps=0."""
    mean, logvar = model.encode_stats(batch, mode)
    if rng is None:
        z = mean
    else:
        eps = rng.standard_normal(mean.shape).astype(np.float32)
        z = mean + (logvar * 0.5).exp() * Tensor(eps)
    recon = model.decoder(z, mode)
    return recon, mean, logvar


def kl_diag_gaussian(mean: Tensor, logvar: Tensor) -> Tensor:
    """Per-sample KL to the standard normal: 0.5 sum(e^lv + mu^2 - 1 - lv)."""
    if mean.shape != logvar.shape:
        raise ValueError(f"shape mismatch: {mean.shape} vs {logvar.shape}")
    return (logvar.exp() + mean * mean - 1.0 - logvar).sum(axis=-1) * 0.5


def _l1_per_image(recon: Tensor, target: Tensor) -> Tensor:
    """L1 summed over pixels, shape (B,)."""
    diff = (recon - target).abs()
    b = diff.shape[0]
    return diff.reshape(b, -1).sum(axis=1)


def vae_loss(model: VaeModel, batch: Tensor, rng: np.random.Generator | None,
             mode: str = "eval"):
    """(total, rec, kl): pixel-summed L1 plus beta-weighted KL, batch means."""
    recon, mean, logvar = vae_forward(model, batch, rng, mode)
    target = to_unit_range(batch)
    rec = _l1_per_image(recon, target).mean()
    kl = kl_diag_gaussian(mean, logvar).mean()
    return rec + model.beta * kl, rec, kl


def cevae_loss(model: VaeModel, batch: Tensor, rng: np.random.Generator,
               mode: str = "eval", cutout_area: tuple = (0.02, 0.20)):
    """VAE loss plus the restoration term: decode the mean latent of a
    cutout-masked input and compare with the intact image (L1)."""
    if not model.cevae:
        raise ValueError("cevae_loss requires a model with the ceVAE flag set")
    total, rec, kl = vae_loss(model, batch, rng, mode)
    masked = batch.data.copy()
    for i in range(masked.shape[0]):
        masked[i, 0], _ = cutout(masked[i, 0], rng, cutout_area)
    recon_restore, _, _ = vae_forward(model, Tensor(masked), None, mode)
    restore = _l1_per_image(recon_restore, to_unit_range(batch)).mean()
    return total + model.gamma * restore, rec, kl, restore


def vae_representation(model: VaeModel, batch: Tensor) -> np.ndarray:
    """Posterior mean, the representation used for density fits; (B, nz)."""
    mean, _ = model.encode_stats(batch, "eval")
    return mean.data


def train_vae(train_samples: list[LabeledSample], val_samples: list[LabeledSample],
              model: VaeModel, config: VaeConfig, rng: np.random.Generator,
              policy: AugmentationPolicy | None = None):
    """Adam at a fixed rate; per-epoch snapshots, validation-selected."""
    if any(s.slice_label for s in train_samples):
        raise ValueError("training split must be normal-only")
    if policy is None:
        policy = AugmentationPolicy.for_vae(cutout=config.cevae)
    params = model.params()
    state = AdamState()
    history = {"train": [], "val": []}
    snapshots = []
    res = model.resolution
    val_norm = [s for s in val_samples if not s.slice_label] or train_samples[:64]
    val_images = np.stack([s.image for s in val_norm])[:, None]

    for epoch in range(config.epochs):
        order = rng.permutation(len(train_samples))
        total = 0.0
        for bstart in range(0, len(order), config.batch_size):
            idx = order[bstart:bstart + config.batch_size]
            batch = np.empty((len(idx), 1, res, res), np.float32)
            for j, i in enumerate(idx):
                batch[j, 0] = sample_view(train_samples[i].image, policy, rng)
            for p in params:
                p.zero_grad()
            if config.cevae:
                loss = cevae_loss(model, Tensor(batch), rng, mode="train",
                                  cutout_area=policy.cutout_area)[0]
            else:
                loss = vae_loss(model, Tensor(batch), rng, mode="train")[0]
            if not np.isfinite(loss.data):
                raise FloatingPointError(f"non-finite VAE loss at epoch {epoch}, batch {bstart}")
            loss.backward()
            adam_step(state, params, [p.grad for p in params], config.lr)
            total += float(loss.data.reshape(())) * len(idx)
        history["train"].append(total / len(train_samples))

        # deterministic validation: frozen eps = 0, no augmentation
        val_total = 0.0
        for start in range(0, len(val_images), config.batch_size):
            chunk = Tensor(val_images[start:start + config.batch_size])
            val_total += float(vae_loss(model, chunk, None, "eval")[0].data.reshape(())) * chunk.shape[0]
        history["val"].append(val_total / len(val_images))
        snapshots.append({k: v.copy() for k, v in model.named_tensors().items()})
    return model, history, snapshots
