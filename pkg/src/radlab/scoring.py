"""Anomaly scores and localization heatmaps.

Slice-level scores are scalars per image (latent NLL for the density
models, loss terms for the VAE baselines).  Voxel-level heatmaps are
input-gradient magnitudes or reconstruction residuals, postprocessed by
brain masking, median pooling, and Gaussian smoothing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import backend
from .flow import FlowModel
from .gmm import GmmModel, gmm_nll_batch, gmm_nll_grad_batch
from .models import DcEncoder
from .tensor import Tensor
from .vae import VaeModel, kl_diag_gaussian, to_unit_range, vae_forward

SCORE_KINDS = ("nll", "elbo", "kl", "rec")
HEATMAP_KINDS = ("nll_grad", "rec", "kl_grad", "combi")


class ScoringError(ValueError):
    pass


@dataclass
class Heatmap:
    values: np.ndarray            # (H, W) float32, non-negative
    kind: str
    postprocessed: bool = False


def _image_batch(images: np.ndarray) -> np.ndarray:
    images = np.asarray(images, np.float32)
    if images.ndim == 2:
        images = images[None]
    if images.ndim == 3:
        images = images[:, None]
    if images.ndim != 4 or images.shape[1] != 1:
        raise ScoringError(f"expected (B,1,H,W) images, got shape {images.shape}")
    return images


def _density_nll(density, z: np.ndarray) -> np.ndarray:
    if isinstance(density, GmmModel):
        return gmm_nll_batch(density, z)
    if isinstance(density, FlowModel):
        return density.nll(z)
    raise ScoringError(f"unsupported density model: {type(density).__name__}")


def detection_score(kind: str, images: np.ndarray, encoder: DcEncoder | None = None,
                    density=None, vae: VaeModel | None = None,
                    batch_size: int = 64) -> np.ndarray:
    """Per-image anomaly scores, higher = more anomalous; shape (B,).

    kind "nll" needs encoder+density; "elbo"/"kl"/"rec" need a VAE and use
    the deterministic posterior mean (frozen noise)."""
    images = _image_batch(images)
    if kind == "nll":
        if encoder is None or density is None:
            raise ScoringError("nll scoring requires an encoder and a density model")
        out = np.empty(len(images), np.float64)
        for s in range(0, len(images), batch_size):
            z = encoder(Tensor(images[s:s + batch_size]), "eval").data
            out[s:s + len(z)] = _density_nll(density, z)
        return out
    if kind not in SCORE_KINDS:
        raise ScoringError(f"unknown score kind {kind!r}; expected one of {SCORE_KINDS}")
    if vae is None:
        raise ScoringError(f"{kind} scoring requires a VAE model")
    out = np.empty(len(images), np.float64)
    for s in range(0, len(images), batch_size):
        batch = Tensor(images[s:s + batch_size])
        recon, mean, logvar = vae_forward(vae, batch, None, "eval")
        rec = np.abs(recon.data - to_unit_range(batch).data).reshape(len(batch.data), -1).sum(axis=1)
        kl = kl_diag_gaussian(mean, logvar).data
        if kind == "rec":
            chunk = rec
        elif kind == "kl":
            chunk = kl
        else:
            chunk = rec + vae.beta * kl
        out[s:s + len(chunk)] = chunk
    return out


def _input_gradient(x: Tensor, output: Tensor, seed: np.ndarray) -> np.ndarray:
    output.backward(seed.astype(np.float32))
    if x.grad is None:
        raise ScoringError("no gradient reached the input image")
    return np.abs(x.grad[:, 0])


def localization_heatmap(kind: str, images: np.ndarray, encoder: DcEncoder | None = None,
                         density=None, vae: VaeModel | None = None,
                         batch_size: int = 16) -> list[Heatmap]:
    """Raw per-image heatmaps (no postprocessing); see HEATMAP_KINDS.

    Gradient kinds differentiate a per-sample objective with respect to the
    input pixels; samples are independent so one seeded backward pass per
    batch yields every per-sample gradient at once."""
    images = _image_batch(images)
    maps = []
    for s in range(0, len(images), batch_size):
        chunk = images[s:s + batch_size]
        x = Tensor(chunk, requires_grad=True)
        if kind == "nll_grad":
            if encoder is None or density is None:
                raise ScoringError("nll_grad heatmaps require an encoder and a density model")
            z = encoder(x, "eval")
            if isinstance(density, GmmModel):
                seed = gmm_nll_grad_batch(density, z.data)
                maps += [Heatmap(m, kind) for m in _input_gradient(x, z, seed)]
            else:
                nll = -_as_flow(density).log_prob(z)
                maps += [Heatmap(m, kind) for m in
                         _input_gradient(x, nll, np.ones(nll.shape, np.float32))]
        elif kind == "rec":
            if vae is None:
                raise ScoringError("rec heatmaps require a VAE model")
            recon, _, _ = vae_forward(vae, x, None, "eval")
            resid = np.abs(recon.data[:, 0] - to_unit_range(Tensor(chunk)).data[:, 0])
            maps += [Heatmap(m, kind) for m in resid]
        elif kind in ("kl_grad", "combi"):
            if vae is None:
                raise ScoringError(f"{kind} heatmaps require a VAE model")
            mean, logvar = vae.encode_stats(x, "eval")
            kl = kl_diag_gaussian(mean, logvar)
            grads = _input_gradient(x, kl, np.ones(kl.shape, np.float32))
            if kind == "kl_grad":
                maps += [Heatmap(m, kind) for m in grads]
            else:
                recon, _, _ = vae_forward(vae, Tensor(chunk), None, "eval")
                resid = np.abs(recon.data[:, 0] - to_unit_range(Tensor(chunk)).data[:, 0])
                maps += [Heatmap(g * r, kind) for g, r in zip(grads, resid)]
        else:
            raise ScoringError(f"unknown heatmap kind {kind!r}; expected one of {HEATMAP_KINDS}")
    return maps


def _as_flow(density) -> FlowModel:
    if not isinstance(density, FlowModel):
        raise ScoringError(f"unsupported density model: {type(density).__name__}")
    return density


def median_pool2d(values: np.ndarray, kernel: int = 5) -> np.ndarray:
    """Sliding-window median with reflect padding, same output size."""
    values = np.asarray(values, np.float32)
    if values.ndim != 2:
        raise ScoringError(f"median pooling expects a 2-d map, got shape {values.shape}")
    if kernel % 2 != 1 or kernel < 1:
        raise ScoringError(f"median pooling kernel must be odd and positive, got {kernel}")
    if kernel > 2 * min(values.shape):
        raise ScoringError(f"kernel {kernel} too large for map of shape {values.shape}")
    return backend.median_pool2d(values, kernel)


def gaussian_smooth(values: np.ndarray, sigma: float = 2.0) -> np.ndarray:
    """Separable Gaussian blur, radius ceil(4*sigma), reflect padding."""
    values = np.asarray(values, np.float32)
    if sigma <= 0:
        raise ScoringError(f"sigma must be positive, got {sigma}")
    radius = math.ceil(4.0 * sigma)
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    k /= k.sum()
    out = values.astype(np.float64)
    for axis in (0, 1):
        padded = np.pad(out, [(radius, radius) if a == axis else (0, 0) for a in (0, 1)],
                        mode="reflect")
        out = np.apply_along_axis(lambda row: np.convolve(row, k, mode="valid"), axis, padded)
    return out.astype(np.float32)


def postprocess(heatmap: Heatmap, brain_mask: np.ndarray, kernel: int = 5,
                sigma: float = 2.0) -> Heatmap:
    """Mask to the brain, median-pool away speckle, then smooth."""
    if heatmap.postprocessed:
        raise ScoringError("heatmap is already postprocessed")
    if brain_mask.shape != heatmap.values.shape:
        raise ScoringError(
            f"mask shape {brain_mask.shape} does not match heatmap {heatmap.values.shape}")
    out = heatmap.values * (brain_mask > 0)
    out = median_pool2d(out, kernel)
    out = gaussian_smooth(out, sigma)
    return Heatmap(out, heatmap.kind, postprocessed=True)
