"""Experiment configuration: a sectioned key=value file read with
configparser, snapshotted next to every artifact for reproducibility."""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .augment import AugmentationPolicy
from .contrastive import ContrastiveConfig
from .synth import SynthConfig
from .vae import VaeConfig


class ConfigError(ValueError):
    pass


def _floats(raw: str) -> tuple:
    return tuple(float(v) for v in raw.split(","))


def _ints(raw: str) -> list[int]:
    return [int(v) for v in raw.split(",")]


def _names(raw: str) -> list[str]:
    return [v.strip() for v in raw.split(",") if v.strip()]


@dataclass
class FlowConfig:
    n_blocks: int = 8
    hidden: int = 64
    epochs: int = 60
    batch_size: int = 128
    lr: float = 1e-3
    weight_decay: float = 1e-4
    grad_clip: float = 5.0
    noise_sigma: float = 1e-3


@dataclass
class ExperimentConfig:
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    output_dir: str = "runs/default"
    nz: int = 32
    nf: int = 16
    gmm_ks: list[int] = field(default_factory=lambda: [1, 2, 4, 8])
    use_flow: bool = True
    use_vae: bool = False
    use_cevae: bool = False
    scorer_candidates: list[str] = field(default_factory=lambda: ["nll"])
    heatmap_kind: str = "nll_grad"
    n_export_heatmaps: int = 4
    synth: SynthConfig = field(default_factory=SynthConfig)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    vae: VaeConfig = field(default_factory=VaeConfig)
    policy: AugmentationPolicy = field(default_factory=AugmentationPolicy)

    def __post_init__(self):
        if not self.gmm_ks:
            raise ConfigError("at least one mixture size is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds must be distinct, got {self.seeds}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")


def serialize(config: ExperimentConfig) -> str:
    cp = configparser.ConfigParser()
    cp["experiment"] = {
        "seeds": ",".join(str(s) for s in config.seeds),
        "output_dir": config.output_dir,
        "nz": str(config.nz),
        "nf": str(config.nf),
        "gmm_ks": ",".join(str(k) for k in config.gmm_ks),
        "use_flow": str(int(config.use_flow)),
        "use_vae": str(int(config.use_vae)),
        "use_cevae": str(int(config.use_cevae)),
        "scorer_candidates": ",".join(config.scorer_candidates),
        "heatmap_kind": config.heatmap_kind,
        "n_export_heatmaps": str(config.n_export_heatmaps),
    }
    for section, obj in (("dataset", config.synth), ("contrastive", config.contrastive),
                         ("flow", config.flow), ("vae", config.vae),
                         ("augment", config.policy)):
        cp[section] = {}
        for key, value in asdict(obj).items():
            if isinstance(value, (tuple, list)):
                cp[section][key] = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                cp[section][key] = str(int(value))
            else:
                cp[section][key] = str(value)
    out = io.StringIO()
    cp.write(out)
    return out.getvalue()


def _load_section(cp, name, cls, casts):
    kwargs = {}
    if cp.has_section(name):
        for key, raw in cp[name].items():
            if key not in casts:
                raise ConfigError(f"unknown key {key!r} in section [{name}]")
            kwargs[key] = casts[key](raw)
    return cls(**kwargs)


_DATASET_CASTS = {"resolution": int, "train_count": int, "val_count": int,
                  "test_count": int, "anomaly_size_range": _floats,
                  "prevalence": float, "texture_octaves": lambda r: tuple(_ints(r)),
                  "seed": int}
_CONTRASTIVE_CASTS = {"temperature": float, "epochs": int, "batch_size": int,
                      "lr": float, "weight_decay": float, "warmup_epochs": int}
_FLOW_CASTS = {"n_blocks": int, "hidden": int, "epochs": int, "batch_size": int,
               "lr": float, "weight_decay": float, "grad_clip": float,
               "noise_sigma": float}
_VAE_CASTS = {"epochs": int, "batch_size": int, "lr": float, "beta": float,
              "gamma": float, "cevae": lambda r: bool(int(r))}
_AUGMENT_CASTS = {"crop": lambda r: bool(int(r)), "crop_scale": _floats,
                  "scale": lambda r: bool(int(r)), "scale_range": _floats,
                  "mirror": lambda r: bool(int(r)), "mirror_prob": float,
                  "rotate": lambda r: bool(int(r)), "rotation_deg": _floats,
                  "brightness": lambda r: bool(int(r)), "brightness_range": _floats,
                  "noise": lambda r: bool(int(r)), "noise_sigma_max": float,
                  "cutout": lambda r: bool(int(r)), "cutout_area": _floats}


def parse(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    kwargs = {}
    if cp.has_section("experiment"):
        exp_casts = {"seeds": _ints, "output_dir": str, "nz": int, "nf": int,
                     "gmm_ks": _ints, "use_flow": lambda r: bool(int(r)),
                     "use_vae": lambda r: bool(int(r)),
                     "use_cevae": lambda r: bool(int(r)),
                     "scorer_candidates": _names, "heatmap_kind": str,
                     "n_export_heatmaps": int}
        for key, raw in cp["experiment"].items():
            if key not in exp_casts:
                raise ConfigError(f"unknown key {key!r} in section [experiment]")
            kwargs[key] = exp_casts[key](raw)
    kwargs["synth"] = _load_section(cp, "dataset", SynthConfig, _DATASET_CASTS)
    kwargs["contrastive"] = _load_section(cp, "contrastive", ContrastiveConfig,
                                          _CONTRASTIVE_CASTS)
    kwargs["flow"] = _load_section(cp, "flow", FlowConfig, _FLOW_CASTS)
    kwargs["vae"] = _load_section(cp, "vae", VaeConfig, _VAE_CASTS)
    kwargs["policy"] = _load_section(cp, "augment", AugmentationPolicy, _AUGMENT_CASTS)
    return ExperimentConfig(**kwargs)


def load(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse(path.read_text())
