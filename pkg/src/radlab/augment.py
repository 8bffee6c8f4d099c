"""Stochastic view generation for the contrastive task and VAE training."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imageops import affine_warp, compose_affine


@dataclass
class AugmentationPolicy:
    crop: bool = True
    crop_scale: tuple = (0.6, 1.0)          # area fraction of the source
    scale: bool = True
    scale_range: tuple = (0.85, 1.15)
    mirror: bool = True
    mirror_prob: float = 0.5                # per axis
    rotate: bool = True
    rotation_deg: tuple = (-20.0, 20.0)
    brightness: bool = True
    brightness_range: tuple = (0.9, 1.1)
    noise: bool = True
    noise_sigma_max: float = 0.1
    cutout: bool = False                    # ceVAE restoration branch only
    cutout_area: tuple = (0.02, 0.20)

    def __post_init__(self):
        if not 0.0 <= self.mirror_prob <= 1.0:
            raise ValueError(f"mirror probability must be in [0,1], got {self.mirror_prob}")
        for name in ("crop_scale", "scale_range", "rotation_deg", "brightness_range", "cutout_area"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"empty range for {name}: ({lo}, {hi})")

    @staticmethod
    def identity() -> "AugmentationPolicy":
        return AugmentationPolicy(crop_scale=(1.0, 1.0), scale_range=(1.0, 1.0),
                                  mirror_prob=0.0, rotation_deg=(0.0, 0.0),
                                  brightness_range=(1.0, 1.0), noise_sigma_max=0.0)

    @staticmethod
    def for_vae(cutout: bool = False) -> "AugmentationPolicy":
        return AugmentationPolicy(crop=False, cutout=cutout)


def sample_view(image: np.ndarray, policy: AugmentationPolicy,
                rng: np.random.Generator) -> np.ndarray:
    """One stochastic view: crop, scale, mirror, rotate, brightness, noise.

    The geometric stages are composed into a single inverse affine map so
    the image is resampled only once; the result keeps the input
    resolution and is fully determined by the rng state.
    """
    h, w = image.shape
    if h != w:
        raise ValueError(f"sample_view expects a square image, got {image.shape}")
    c = (h - 1) / 2.0

    # inverse maps, applied to output coordinates in reverse stage order
    matrix = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])  # rotate placeholder
    if policy.rotate:
        theta = np.deg2rad(rng.uniform(*policy.rotation_deg))
        ca, sa = np.cos(theta), np.sin(theta)
        rot = np.array([[ca, sa, c - ca * c - sa * c],
                        [-sa, ca, c + sa * c - ca * c]])
        matrix = rot
    if policy.mirror:
        for axis in range(2):
            if rng.random() < policy.mirror_prob:
                flip = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
                flip[axis, axis] = -1.0
                flip[axis, 2] = 2.0 * c
                matrix = compose_affine(flip, matrix)
    if policy.scale:
        f = rng.uniform(*policy.scale_range)
        sc = np.array([[1.0 / f, 0.0, c - c / f], [0.0, 1.0 / f, c - c / f]])
        matrix = compose_affine(sc, matrix)
    if policy.crop:
        side = np.sqrt(rng.uniform(*policy.crop_scale))
        max_off = (1.0 - side) * c
        offs = rng.uniform(-max_off, max_off, size=2)
        cr = np.array([[side, 0.0, c * (1 - side) + offs[0]],
                       [0.0, side, c * (1 - side) + offs[1]]])
        matrix = compose_affine(cr, matrix)

    out = affine_warp(image, matrix)
    if policy.brightness:
        out = out * np.float32(rng.uniform(*policy.brightness_range))
    if policy.noise:
        sigma = rng.uniform(0.0, policy.noise_sigma_max)
        out = out + sigma * rng.standard_normal(out.shape)
    return out.astype(np.float32)


def cutout(image: np.ndarray, rng: np.random.Generator,
           area_range: tuple = (0.02, 0.20)):
    """Zero one axis-aligned rectangle; returns (image', rectangle mask)."""
    lo, hi = area_range
    if not (0.0 < lo <= hi < 1.0):
        raise ValueError(f"cutout area range must lie in (0,1), got {area_range}")
    h, w = image.shape
    total = h * w
    for _ in range(100):
        frac = rng.uniform(lo, hi)
        aspect = rng.uniform(0.5, 2.0)
        rh = int(round(np.sqrt(frac * total * aspect)))
        rw = int(round(frac * total / max(rh, 1)))
        rh, rw = min(rh, h), min(rw, w)
        if rh < 1 or rw < 1:
            continue
        if lo <= rh * rw / total <= hi:
            break
    else:
        raise ValueError(f"could not realize a cutout in area range {area_range} on {h}x{w}")
    r0 = int(rng.integers(0, h - rh + 1))
    c0 = int(rng.integers(0, w - rw + 1))
    mask = np.zeros((h, w), dtype=bool)
    mask[r0:r0 + rh, c0:c0 + rw] = True
    out = image.copy()
    out[mask] = 0.0
    return out, mask
