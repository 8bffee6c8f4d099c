"""Synthetic 2D datasets: textured elliptical foregrounds standing in for
normal brain slices, with anomalies injected as foreign textured patches.

All randomness flows from explicit per-sample seed sequences, so shards
can be generated in parallel and regeneration is bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import crtf
from .imageops import bilinear_resize, octave_noise


class GenerationError(ValueError):
    pass


SLICE_LABEL_MIN_VOXELS = 5  # strictly more than this many anomalous voxels


@dataclass
class SynthConfig:
    resolution: int = 64
    train_count: int = 2000
    val_count: int = 500
    test_count: int = 500
    anomaly_size_range: tuple = (0.08, 0.3)  # fraction of foreground area
    prevalence: float = 0.2  # anomalous slice fraction in val/test
    texture_octaves: tuple = (4, 8)
    seed: int = 0

    def __post_init__(self):
        n = int(np.log2(self.resolution))
        if 2 ** n != self.resolution or self.resolution < 16:
            raise ValueError(f"resolution must be a power of two >= 16, got {self.resolution}")
        lo, hi = self.anomaly_size_range
        if not (0.0 < lo <= hi < 0.5):
            raise ValueError(f"anomaly size range must lie in (0, 0.5), got {self.anomaly_size_range}")


@dataclass
class LabeledSample:
    image: np.ndarray          # H x W float32, preprocessed
    brain_mask: np.ndarray     # H x W bool
    anomaly_mask: np.ndarray   # H x W bool
    slice_label: bool = field(init=False)

    def __post_init__(self):
        self.slice_label = bool(self.anomaly_mask.sum() > SLICE_LABEL_MIN_VOXELS)


def _ellipse_mask(resolution: int, center, axes, angle: float) -> np.ndarray:
    rows, cols = np.mgrid[0:resolution, 0:resolution].astype(np.float64)
    dr = rows - center[0]
    dc = cols - center[1]
    ca, sa = np.cos(angle), np.sin(angle)
    u = dr * ca + dc * sa
    v = -dr * sa + dc * ca
    return (u / axes[0]) ** 2 + (v / axes[1]) ** 2 <= 1.0


def generate_normal(config: SynthConfig, rng: np.random.Generator):
    """A smooth elliptical foreground with low-frequency internal texture.

    Background is exactly zero; the returned mask is the exact support.
    """
    r = config.resolution
    center = r / 2.0 + rng.uniform(-0.04, 0.04, size=2) * r
    axes = rng.uniform(0.28, 0.44, size=2) * r
    angle = rng.uniform(0.0, np.pi)
    mask = _ellipse_mask(r, center, axes, angle)

    sizes = [s for s in config.texture_octaves if s <= r // 2]
    weights = [0.5 ** i for i in range(len(sizes))]
    tex = octave_noise(rng, r, sizes, weights)
    image = np.where(mask, 1.0 + 0.45 * tex, 0.0).astype(np.float32)
    return image, mask


def inject_anomaly(image: np.ndarray, brain_mask: np.ndarray, rng: np.random.Generator,
                   size_range: tuple):
    """Blend a convex patch with foreign texture statistics into the
    foreground; returns the modified image and the blended support."""
    fg = int(brain_mask.sum())
    if fg == 0:
        raise GenerationError("brain mask is empty")
    r = image.shape[0]
    lo, hi = size_range
    target_area = rng.uniform(lo, hi) * fg
    if target_area < 1.0:
        raise GenerationError(
            f"requested anomaly area {target_area:.2f}px is below one pixel")

    fg_rows, fg_cols = np.nonzero(brain_mask)
    region = None
    for _ in range(50):
        idx = rng.integers(len(fg_rows))
        center = (float(fg_rows[idx]), float(fg_cols[idx]))
        ecc = rng.uniform(0.6, 1.0)
        a = np.sqrt(target_area / (np.pi * ecc))
        axes = (a, a * ecc)
        angle = rng.uniform(0.0, np.pi)
        candidate = _ellipse_mask(r, center, axes, angle) & brain_mask
        if candidate.sum() >= max(1, int(0.5 * target_area)):
            region = candidate
            break
    if region is None:
        raise GenerationError("foreground too small for the requested anomaly size")

    # foreign texture: finest octave only, strong intensity offset
    tex = octave_noise(rng, r, [min(r // 2, 32)], [1.0])
    sign = 1.0 if rng.random() < 0.5 else -1.0
    offset = sign * rng.uniform(1.0, 1.4)
    patch = image.mean() + offset + 2.0 * tex
    out = image.copy()
    out[region] = patch[region].astype(np.float32)
    return out, region


def preprocess(raw: np.ndarray) -> np.ndarray:
    """Per-image z-score normalization, then clip to [-1.5, 1.5]."""
    std = float(raw.std())
    if std == 0.0:
        raise GenerationError("constant image has zero standard deviation")
    z = (raw - float(raw.mean())) / std
    return np.clip(z, -1.5, 1.5).astype(np.float32)


def resize(image: np.ndarray, target: int) -> np.ndarray:
    if target < 2:
        raise ValueError(f"resize target must be >= 2, got {target}")
    return bilinear_resize(image, target, target)


_SPLIT_IDS = {"train": 0, "val": 1, "test": 2}


def _sample_rng(seed: int, split: str, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, _SPLIT_IDS[split], index])


def make_sample(config: SynthConfig, split: str, index: int) -> LabeledSample:
    rng = _sample_rng(config.seed, split, index)
    raw, mask = generate_normal(config, rng)
    anomask = np.zeros_like(mask)
    if split != "train" and rng.random() < config.prevalence:
        raw, anomask = inject_anomaly(raw, mask, rng, config.anomaly_size_range)
    return LabeledSample(preprocess(raw), mask, anomask)


def build_dataset(config: SynthConfig) -> dict[str, list[LabeledSample]]:
    """All three splits; train is normal-only, val/test mixed."""
    counts = {"train": config.train_count, "val": config.val_count, "test": config.test_count}
    return {split: [make_sample(config, split, i) for i in range(n)]
            for split, n in counts.items()}


# -- on-disk layout: one directory per split ----------------------------------

def save_split(directory: str | Path, samples: list[LabeledSample]):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, s in enumerate(samples):
        crtf.save_tensor(directory / f"image_{i:06d}", s.image)
        crtf.save_tensor(directory / f"brainmask_{i:06d}", s.brain_mask.astype(np.float32))
        crtf.save_tensor(directory / f"anomask_{i:06d}", s.anomaly_mask.astype(np.float32))
        lines.append(f"{i:06d},{1 if s.slice_label else 0}")
    (directory / "index.txt").write_text("\n".join(lines) + "\n")


def load_split(directory: str | Path) -> list[LabeledSample]:
    directory = Path(directory)
    samples = []
    for line in (directory / "index.txt").read_text().splitlines():
        sid, label = line.split(",")
        image = crtf.load_tensor(directory / f"image_{sid}")
        brain = crtf.load_tensor(directory / f"brainmask_{sid}") > 0.5
        anomask = crtf.load_tensor(directory / f"anomask_{sid}") > 0.5
        sample = LabeledSample(image, brain, anomask)
        if sample.slice_label != bool(int(label)):
            raise crtf.CrtfError(f"index label disagrees with stored mask for {sid}")
        samples.append(sample)
    return samples
