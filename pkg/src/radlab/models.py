"""Deep-convolutional encoder/decoder and projection head.

The encoder halves the spatial side with every 4x4 stride-2 convolution
(padding 1) and collapses the final 4x4 map to 1x1 with padding 0, so an
input of side 2^k reaches the latent in log2(side) - 1 layers. Channel
widths grow as nf, 2nf, 4nf, ... up to the final latent convolution.
"""

from __future__ import annotations

import copy
from pathlib import Path

import numpy as np

from . import crtf
from .nn import BatchNorm2d, Conv2d, ConvTranspose2d, Dense
from .tensor import ShapeError, Tensor


def _num_layers(resolution: int) -> int:
    n = int(np.log2(resolution))
    if 2 ** n != resolution or resolution < 16:
        raise ValueError(f"resolution must be a power of two >= 16, got {resolution}")
    return n - 1


class DcEncoder:
    """Stack of stride-2 convolutions mapping (B,1,R,R) to (B,nz)."""

    def __init__(self, rng: np.random.Generator, resolution: int, nz: int, nf: int,
                 in_ch: int = 1):
        self.resolution = resolution
        self.nz = nz
        self.nf = nf
        self.in_ch = in_ch
        layers = _num_layers(resolution)
        self.convs: list[Conv2d] = []
        self.bns: list[BatchNorm2d] = []
        ch = in_ch
        for i in range(layers - 1):
            out = nf * 2 ** i
            self.convs.append(Conv2d(rng, ch, out, 4, 2, 1, bias=False))
            self.bns.append(BatchNorm2d(out))
            ch = out
        self.final = Conv2d(rng, ch, nz, 4, 2, 0, bias=True)

    def __call__(self, x: Tensor, mode: str = "eval") -> Tensor:
        if x.ndim != 4 or x.shape[2] != self.resolution or x.shape[3] != self.resolution:
            raise ShapeError(
                f"encoder built for {self.resolution}x{self.resolution}, got {x.shape}")
        h = x
        for conv, bn in zip(self.convs, self.bns):
            h = bn(conv(h), mode).relu()
        z = self.final(h)
        return z.reshape(z.shape[0], self.nz)

    def params(self) -> list[Tensor]:
        out = []
        for conv, bn in zip(self.convs, self.bns):
            out += conv.params() + bn.params()
        return out + self.final.params()

    def named_tensors(self) -> dict[str, np.ndarray]:
        named = {}
        for i, (conv, bn) in enumerate(zip(self.convs, self.bns)):
            named[f"conv{i}.weight"] = conv.weight.data
            named[f"bn{i}.gamma"] = bn.gamma.data
            named[f"bn{i}.beta"] = bn.beta.data
            named[f"bn{i}.running_mean"] = bn.state.running_mean
            named[f"bn{i}.running_var"] = bn.state.running_var
        named["final.weight"] = self.final.weight.data
        named["final.bias"] = self.final.bias.data
        return named

    def load_named(self, named: dict[str, np.ndarray]):
        for i, (conv, bn) in enumerate(zip(self.convs, self.bns)):
            conv.weight.data = named[f"conv{i}.weight"].copy()
            bn.gamma.data = named[f"bn{i}.gamma"].copy()
            bn.beta.data = named[f"bn{i}.beta"].copy()
            bn.state.running_mean = named[f"bn{i}.running_mean"].copy()
            bn.state.running_var = named[f"bn{i}.running_var"].copy()
        self.final.weight.data = named["final.weight"].copy()
        self.final.bias.data = named["final.bias"].copy()

    def clone(self) -> "DcEncoder":
        return copy.deepcopy(self)


class DcDecoder:
    """Mirror stack of 4x4 transposed convolutions ending in a sigmoid."""

    def __init__(self, rng: np.random.Generator, resolution: int, nz: int, nf: int,
                 out_ch: int = 1):
        self.resolution = resolution
        self.nz = nz
        self.nf = nf
        self.out_ch = out_ch
        layers = _num_layers(resolution)
        widths = [nf * 2 ** i for i in range(layers - 1)]  # encoder widths
        self.first = ConvTranspose2d(rng, nz, widths[-1], 4, 1, 0, bias=False)
        self.first_bn = BatchNorm2d(widths[-1])
        self.mids: list[ConvTranspose2d] = []
        self.mid_bns: list[BatchNorm2d] = []
        for i in range(len(widths) - 1, 0, -1):
            self.mids.append(ConvTranspose2d(rng, widths[i], widths[i - 1], 4, 2, 1, bias=False))
            self.mid_bns.append(BatchNorm2d(widths[i - 1]))
        self.final = ConvTranspose2d(rng, widths[0], out_ch, 4, 2, 1, bias=True)

    def __call__(self, z: Tensor, mode: str = "eval") -> Tensor:
        h = z.reshape(z.shape[0], self.nz, 1, 1)
        h = self.first_bn(self.first(h), mode).relu()
        for tconv, bn in zip(self.mids, self.mid_bns):
            h = bn(tconv(h), mode).relu()
        return self.final(h).sigmoid()

    def params(self) -> list[Tensor]:
        out = self.first.params() + self.first_bn.params()
        for tconv, bn in zip(self.mids, self.mid_bns):
            out += tconv.params() + bn.params()
        return out + self.final.params()

    def named_tensors(self) -> dict[str, np.ndarray]:
        named = {"first.weight": self.first.weight.data,
                 "first_bn.gamma": self.first_bn.gamma.data,
                 "first_bn.beta": self.first_bn.beta.data,
                 "first_bn.running_mean": self.first_bn.state.running_mean,
                 "first_bn.running_var": self.first_bn.state.running_var}
        for i, (tconv, bn) in enumerate(zip(self.mids, self.mid_bns)):
            named[f"mid{i}.weight"] = tconv.weight.data
            named[f"midbn{i}.gamma"] = bn.gamma.data
            named[f"midbn{i}.beta"] = bn.beta.data
            named[f"midbn{i}.running_mean"] = bn.state.running_mean
            named[f"midbn{i}.running_var"] = bn.state.running_var
        named["final.weight"] = self.final.weight.data
        named["final.bias"] = self.final.bias.data
        return named

    def load_named(self, named: dict[str, np.ndarray]):
        self.first.weight.data = named["first.weight"].copy()
        self.first_bn.gamma.data = named["first_bn.gamma"].copy()
        self.first_bn.beta.data = named["first_bn.beta"].copy()
        self.first_bn.state.running_mean = named["first_bn.running_mean"].copy()
        self.first_bn.state.running_var = named["first_bn.running_var"].copy()
        for i, (tconv, bn) in enumerate(zip(self.mids, self.mid_bns)):
            tconv.weight.data = named[f"mid{i}.weight"].copy()
            bn.gamma.data = named[f"midbn{i}.gamma"].copy()
            bn.beta.data = named[f"midbn{i}.beta"].copy()
            bn.state.running_mean = named[f"midbn{i}.running_mean"].copy()
            bn.state.running_var = named[f"midbn{i}.running_var"].copy()
        self.final.weight.data = named["final.weight"].copy()
        self.final.bias.data = named["final.bias"].copy()


class ProjectionHead:
    """Two dense layers with one ReLU; hidden width nz, output nz/2."""

    def __init__(self, rng: np.random.Generator, nz: int):
        self.nz = nz
        self.fc1 = Dense(rng, nz, nz)
        self.fc2 = Dense(rng, nz, nz // 2)

    def __call__(self, z: Tensor) -> Tensor:
        return self.fc2(self.fc1(z).relu())

    def params(self) -> list[Tensor]:
        return self.fc1.params() + self.fc2.params()

    def named_tensors(self) -> dict[str, np.ndarray]:
        return {"fc1.weight": self.fc1.weight.data, "fc1.bias": self.fc1.bias.data,
                "fc2.weight": self.fc2.weight.data, "fc2.bias": self.fc2.bias.data}

    def load_named(self, named: dict[str, np.ndarray]):
        self.fc1.weight.data = named["fc1.weight"].copy()
        self.fc1.bias.data = named["fc1.bias"].copy()
        self.fc2.weight.data = named["fc2.weight"].copy()
        self.fc2.bias.data = named["fc2.bias"].copy()


def save_checkpoint(directory: str | Path, named: dict[str, np.ndarray],
                    manifest: dict[str, str]):
    """Write named CRTF tensors plus a key=value manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, arr in named.items():
        fname = name.replace("/", "_") + ".crtf"
        crtf.save_tensor(directory / fname, arr)
        files[name] = fname
    entries = dict(manifest)
    for name, fname in files.items():
        entries[f"tensor.{name}"] = fname
    crtf.save_manifest(directory / "manifest.txt", entries)


def load_checkpoint(directory: str | Path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    directory = Path(directory)
    entries = crtf.load_manifest(directory / "manifest.txt")
    named = {}
    manifest = {}
    for key, value in entries.items():
        if key.startswith("tensor."):
            named[key[len("tensor."):]] = crtf.load_tensor(directory / value)
        else:
            manifest[key] = value
    return named, manifest
