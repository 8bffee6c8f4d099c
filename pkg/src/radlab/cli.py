"""Experiment orchestration CLI.

Subcommands: generate, train, fit, score, evaluate, export.  Every
command is deterministic given (config, seed), writes a config snapshot
beside its artifacts, and refuses to overwrite existing outputs unless
--force is given.  RADLAB_OUTPUT_ROOT overrides the output root.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import crtf
from .config import ExperimentConfig
from .contrastive import encode_batch, select_checkpoint, train_contrastive
from .flow import FlowModel, flow_fit, load_flow, save_flow
from .gmm import GmmModel, gmm_fit_em, gmm_nll_batch, load_gmm, save_gmm
from .metrics import (EvalResult, auprc, auroc, results_csv, results_table,
                      select_scorer, slice_aggregate, voxel_aggregate)
from .models import DcEncoder, ProjectionHead, load_checkpoint, save_checkpoint
from .scoring import Heatmap, detection_score, localization_heatmap, postprocess
from .synth import LabeledSample, build_dataset, load_split, save_split
from .tensor import Tensor
from .vae import VaeModel, train_vae, vae_representation

OUTPUT_ROOT_VAR = "RADLAB_OUTPUT_ROOT"
_STAGE_IDS = {"simclr": 1, "vae": 2, "cevae": 3}
_SOURCE_IDS = {"cradl": 1, "vae": 2, "cevae": 3}
_SOURCE_STAGE = {"cradl": "simclr", "vae": "vae", "cevae": "cevae"}


class ArtifactError(RuntimeError):
    pass


# -- filesystem plumbing -------------------------------------------------------

def output_root(config: ExperimentConfig) -> Path:
    base = os.environ.get(OUTPUT_ROOT_VAR, "")
    return Path(base) / config.output_dir if base else Path(config.output_dir)


def _write_snapshot(directory: Path, config: ExperimentConfig, force: bool):
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "config.txt"
    text = config_mod.serialize(config)
    if path.exists() and path.read_text() != text and not force:
        raise ArtifactError(f"existing config snapshot at {path} disagrees with the "
                            "invoked config (use --force to overwrite)")
    path.write_text(text)


def _check_snapshot(directory: Path, config: ExperimentConfig):
    path = directory / "config.txt"
    if not path.exists():
        raise ArtifactError(f"missing config snapshot: {path}")
    if path.read_text() != config_mod.serialize(config):
        raise ArtifactError(f"config snapshot at {path} disagrees with the invoked config")


def _refuse_overwrite(path: Path, force: bool):
    if path.exists() and not force:
        raise ArtifactError(f"refusing to overwrite existing artifact {path} "
                            "(use --force)")


def _dataset_dir(config: ExperimentConfig) -> Path:
    return output_root(config) / "dataset"


def _seed_dir(config: ExperimentConfig, seed: int) -> Path:
    return output_root(config) / f"seed{seed}"


def _load_dataset(config: ExperimentConfig) -> dict[str, list[LabeledSample]]:
    base = _dataset_dir(config)
    missing = [str(base / s / "index.txt") for s in ("train", "val", "test")
               if not (base / s / "index.txt").exists()]
    if missing:
        raise ArtifactError("missing dataset artifacts: " + ", ".join(missing))
    return {split: load_split(base / split) for split in ("train", "val", "test")}


# -- model (re)construction ----------------------------------------------------

def _new_encoder(config: ExperimentConfig, rng) -> DcEncoder:
    return DcEncoder(rng, config.synth.resolution, config.nz, config.nf)


def _load_encoder(config: ExperimentConfig, seed: int) -> DcEncoder:
    ckpt = _seed_dir(config, seed) / "simclr"
    if not (ckpt / "manifest.txt").exists():
        raise ArtifactError(f"missing checkpoint: {ckpt}")
    named, _ = load_checkpoint(ckpt)
    encoder = _new_encoder(config, np.random.default_rng(0))
    encoder.load_named({k[len("encoder."):]: v for k, v in named.items()
                        if k.startswith("encoder.")})
    return encoder


def _load_vae(config: ExperimentConfig, seed: int, stage: str) -> VaeModel:
    ckpt = _seed_dir(config, seed) / stage
    if not (ckpt / "manifest.txt").exists():
        raise ArtifactError(f"missing checkpoint: {ckpt}")
    named, _ = load_checkpoint(ckpt)
    model = VaeModel(np.random.default_rng(0), config.synth.resolution, config.nz,
                     config.nf, beta=config.vae.beta, cevae=(stage == "cevae"),
                     gamma=config.vae.gamma)
    model.load_named(named)
    return model


def _representations(config: ExperimentConfig, seed: int, source: str,
                     samples: list[LabeledSample]) -> np.ndarray:
    """Eval-mode latents of a sample list, no augmentation."""
    images = np.stack([s.image for s in samples])[:, None]
    if source == "cradl":
        return encode_batch(_load_encoder(config, seed), images)
    model = _load_vae(config, seed, _SOURCE_STAGE[source])
    out = [vae_representation(model, Tensor(images[start:start + 256]))
           for start in range(0, len(images), 256)]
    return np.concatenate(out, axis=0)


# -- subcommands -----------------------------------------------------------------

def cmd_generate(config: ExperimentConfig, force: bool = False) -> Path:
    base = _dataset_dir(config)
    _refuse_overwrite(base / "train" / "index.txt", force)
    dataset = build_dataset(config.synth)
    for split, samples in dataset.items():
        save_split(base / split, samples)
    _write_snapshot(base, config, force)
    _write_snapshot(output_root(config), config, force)
    return base


def cmd_train(config: ExperimentConfig, stage: str, seed: int,
              force: bool = False) -> Path:
    if stage not in _STAGE_IDS:
        raise ValueError(f"unknown training stage {stage!r}")
    dataset = _load_dataset(config)
    out = _seed_dir(config, seed) / stage
    _refuse_overwrite(out / "manifest.txt", force)
    rng = np.random.default_rng([seed, _STAGE_IDS[stage]])

    if stage == "simclr":
        encoder = _new_encoder(config, rng)
        head = ProjectionHead(rng, config.nz)
        encoder, head, history, snapshots = train_contrastive(
            dataset["train"], dataset["val"], encoder, head, config.contrastive,
            rng, config.policy)
        best, snap = select_checkpoint(history["val"], snapshots)
        encoder.load_named(snap["encoder"])
        head.load_named(snap["head"])
        named = {f"encoder.{k}": v for k, v in encoder.named_tensors().items()}
        named.update({f"head.{k}": v for k, v in head.named_tensors().items()})
        epochs = config.contrastive.epochs
    else:
        vae_cfg = config.vae
        model = VaeModel(rng, config.synth.resolution, config.nz, config.nf,
                         beta=vae_cfg.beta, cevae=(stage == "cevae"),
                         gamma=vae_cfg.gamma)
        model, history, snapshots = train_vae(
            dataset["train"], dataset["val"], model,
            replace(vae_cfg, cevae=(stage == "cevae")), rng)
        best = int(np.argmin(history["val"]))
        model.load_named(snapshots[best])
        named = model.named_tensors()
        epochs = vae_cfg.epochs

    manifest = {"stage": stage, "seed": str(seed), "nz": str(config.nz),
                "nf": str(config.nf), "resolution": str(config.synth.resolution),
                "selected_epoch": str(best)}
    save_checkpoint(out, named, manifest)
    rows = [f"{e},{history['train'][e]:.6f},{history['val'][e]:.6f}"
            for e in range(epochs)]
    (out / "history.csv").write_text("\n".join(rows) + "\n")
    _write_snapshot(out, config, force)
    return out


def cmd_fit(config: ExperimentConfig, density: str, source: str, seed: int,
            force: bool = False) -> list[Path]:
    if density not in ("gmm", "flow"):
        raise ValueError(f"unknown density model {density!r}")
    if source not in _SOURCE_IDS:
        raise ValueError(f"unknown representation source {source!r}")
    dataset = _load_dataset(config)
    z_train = _representations(config, seed, source, dataset["train"])
    val_norm = [s for s in dataset["val"] if not s.slice_label]
    z_val = _representations(config, seed, source, val_norm)
    written = []

    if density == "gmm":
        for k in config.gmm_ks:
            out = _seed_dir(config, seed) / f"gmm_k{k}_{source}"
            _refuse_overwrite(out / "manifest.txt", force)
            rng = np.random.default_rng([seed, 10 + _SOURCE_IDS[source], k])
            model, fit_log = gmm_fit_em(z_train, k, rng)
            save_gmm(out, model, {"source": source, "seed": str(seed), "k": str(k)})
            lines = [f"{i},{ll:.6f}" for i, ll in enumerate(fit_log["log_likelihood"])]
            lines += [f"event,{e}" for e in fit_log["events"]]
            (out / "fit_log.txt").write_text("\n".join(lines) + "\n")
            _write_snapshot(out, config, force)
            written.append(out)
    else:
        out = _seed_dir(config, seed) / f"flow_{source}"
        _refuse_overwrite(out / "manifest.txt", force)
        rng = np.random.default_rng([seed, 20 + _SOURCE_IDS[source]])
        fc = config.flow
        model = FlowModel(rng, config.nz, n_blocks=fc.n_blocks, hidden=fc.hidden)
        model, history = flow_fit(z_train, model, rng, z_val, epochs=fc.epochs,
                                  batch_size=fc.batch_size, lr=fc.lr,
                                  weight_decay=fc.weight_decay, grad_clip=fc.grad_clip,
                                  noise_sigma=fc.noise_sigma)
        save_flow(out, model, {"source": source, "seed": str(seed)})
        rows = [f"{e},{history['train'][e]:.6f},{history['val'][e]:.6f}"
                for e in range(fc.epochs)]
        (out / "fit_log.txt").write_text("\n".join(rows) + "\n")
        _write_snapshot(out, config, force)
        written.append(out)
    return written


def _density_candidates(config: ExperimentConfig, source: str) -> list[str]:
    names = [f"gmm_k{k}" for k in config.gmm_ks]
    if config.use_flow and source == "cradl":
        names.append("flow")
    return names


def _load_density(config: ExperimentConfig, seed: int, source: str, name: str):
    base = _seed_dir(config, seed)
    path = base / (f"flow_{source}" if name == "flow" else f"{name}_{source}")
    if not (path / "manifest.txt").exists():
        raise ArtifactError(f"missing density checkpoint: {path}")
    _check_snapshot(path, config)
    return load_flow(path) if name == "flow" else load_gmm(path)


def _split_scores(config: ExperimentConfig, seed: int, source: str, candidate: str,
                  samples: list[LabeledSample]) -> np.ndarray:
    images = np.stack([s.image for s in samples])[:, None]
    if candidate in ("elbo", "kl", "rec"):
        vae = _load_vae(config, seed, _SOURCE_STAGE[source])
        return detection_score(candidate, images, vae=vae)
    density = _load_density(config, seed, source, candidate)
    if source == "cradl":
        encoder = _load_encoder(config, seed)
        return detection_score("nll", images, encoder=encoder, density=density)
    vae = _load_vae(config, seed, _SOURCE_STAGE[source])
    z = np.concatenate([vae_representation(vae, Tensor(images[s:s + 256]))
                        for s in range(0, len(images), 256)])
    if isinstance(density, GmmModel):
        return gmm_nll_batch(density, z)
    return density.nll(z)


def cmd_score(config: ExperimentConfig, seed: int, source: str = "cradl",
              force: bool = False) -> Path:
    """Persist per-split detection scores for every candidate scorer."""
    dataset = _load_dataset(config)
    out = _seed_dir(config, seed) / f"scores_{source}"
    _refuse_overwrite(out / "config.txt", force)
    out.mkdir(parents=True, exist_ok=True)
    for candidate in _density_candidates(config, source):
        for split in ("val", "test"):
            scores = _split_scores(config, seed, source, candidate, dataset[split])
            crtf.save_tensor(out / f"{candidate}_{split}.crtf",
                             scores.astype(np.float32))
    _write_snapshot(out, config, force)
    return out


def _method_specs(config: ExperimentConfig) -> list[tuple]:
    """(method name, representation source, detection candidates, heatmap kind)."""
    specs = [("cradl", "cradl", _density_candidates(config, "cradl"), "nll_grad")]
    if config.use_vae:
        specs.append(("vae", "vae", ["elbo", "kl", "rec"], config.heatmap_kind
                      if config.heatmap_kind in ("rec", "kl_grad", "combi") else "rec"))
        specs.append(("radl_vae", "vae", _density_candidates(config, "vae"), None))
    if config.use_cevae:
        specs.append(("cevae", "cevae", ["elbo", "kl", "rec"], config.heatmap_kind
                      if config.heatmap_kind in ("rec", "kl_grad", "combi") else "rec"))
        specs.append(("radl_cevae", "cevae", _density_candidates(config, "cevae"), None))
    return specs


def _heatmaps(config: ExperimentConfig, seed: int, source: str, kind: str,
              candidate: str, samples: list[LabeledSample]) -> list[Heatmap]:
    images = np.stack([s.image for s in samples])[:, None]
    if kind == "nll_grad":
        encoder = _load_encoder(config, seed)
        density = _load_density(config, seed, source, candidate)
        raw = localization_heatmap(kind, images, encoder=encoder, density=density)
    else:
        vae = _load_vae(config, seed, _SOURCE_STAGE[source])
        raw = localization_heatmap(kind, images, vae=vae)
    return [postprocess(h, s.brain_mask) for h, s in zip(raw, samples)]


def cmd_evaluate(config: ExperimentConfig, force: bool = False) -> Path:
    dataset = _load_dataset(config)
    _check_snapshot(_dataset_dir(config), config)
    out = output_root(config) / "evaluate"
    _refuse_overwrite(out / "results.csv", force)
    out.mkdir(parents=True, exist_ok=True)

    log_lines = []

    def log(msg):
        log_lines.append(f"{time.strftime('%Y-%m-%dT%H:%M:%S')} {msg}")

    _, val_labels = slice_aggregate(dataset["val"], np.zeros(len(dataset["val"])))
    results = []
    selections = {}
    for method, source, candidates, heat_kind in _method_specs(config):
        cells = {"detection/auroc": [], "detection/auprc": [],
                 "localization/auroc": [], "localization/auprc": []}
        for seed in config.seeds:
            val_scores = {c: _split_scores(config, seed, source, c, dataset["val"])
                          for c in candidates}
            chosen = select_scorer(candidates, val_scores, val_labels)
            log(f"{method} seed {seed}: selected {chosen} on validation AUPRC="
                f"{auprc(val_scores[chosen], val_labels):.4f}")
            selections.setdefault(method, []).append(chosen)
            test_scores = _split_scores(config, seed, source, chosen, dataset["test"])
            scores, labels = slice_aggregate(dataset["test"], test_scores)
            cells["detection/auroc"].append(auroc(scores, labels))
            cells["detection/auprc"].append(auprc(scores, labels))
            log(f"{method} seed {seed}: test detection scored")
            kind = heat_kind
            if kind is None:  # density-on-VAE methods report detection only
                continue
            candidate = chosen if kind == "nll_grad" else None
            maps = _heatmaps(config, seed, source, kind, candidate, dataset["test"])
            values, vox_labels = voxel_aggregate(dataset["test"], maps)
            cells["localization/auroc"].append(auroc(values, vox_labels))
            cells["localization/auprc"].append(auprc(values, vox_labels))
            log(f"{method} seed {seed}: test localization scored")
            if seed == config.seeds[-1]:
                _export_examples(out, method, dataset["test"], maps,
                                 config.n_export_heatmaps)
        for cell, vals in cells.items():
            if vals:
                task, metric = cell.split("/")
                results.append(EvalResult(method, "synth", task, metric, vals))

    (out / "results.csv").write_text(results_csv(results))
    summaries = [r.summary() for r in results if len(r.values) >= 2]
    if summaries:
        (out / "results.txt").write_text(results_table(summaries))
    (out / "selection.log").write_text("\n".join(log_lines) + "\n")
    _write_snapshot(out, config, force)
    return out


def _export_examples(out: Path, method: str, samples: list[LabeledSample],
                     maps: list[Heatmap], count: int):
    exported = 0
    for i, (sample, hm) in enumerate(zip(samples, maps)):
        if not sample.slice_label:
            continue
        export_heatmap_image(hm.values, out / f"heatmap_{method}_{i:06d}.pgm")
        exported += 1
        if exported >= count:
            break


def export_heatmap_image(values: np.ndarray, path: str | Path):
    """Clamp at the 99th percentile, min-max normalize, write binary PGM.

    A constant map has no range; it degenerates to an all-zero image."""
    values = np.asarray(values, np.float64)
    if values.ndim != 2:
        raise ValueError(f"heatmap export expects a 2-d map, got shape {values.shape}")
    if not np.isfinite(values).all():
        raise ValueError("heatmap contains non-finite values")
    clamped = np.minimum(values, np.percentile(values, 99.0))
    lo, hi = clamped.min(), clamped.max()
    if hi > lo:
        pixels = np.round((clamped - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        pixels = np.zeros(values.shape, np.uint8)
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


# -- argument parsing ------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="radlab",
                                     description="contrastive latent-density anomaly "
                                                 "detection experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=False, stage=False):
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--force", action="store_true",
                       help="overwrite existing artifacts")
        if seed:
            p.add_argument("--seed", type=int, required=True)
        if stage:
            p.add_argument("--stage", required=True,
                           choices=sorted(_STAGE_IDS))

    common(sub.add_parser("generate", help="synthesize the dataset"))
    common(sub.add_parser("train", help="train an encoder or VAE"), seed=True,
           stage=True)
    fit = sub.add_parser("fit", help="fit a latent density model")
    common(fit, seed=True)
    fit.add_argument("--density", required=True, choices=("gmm", "flow"))
    fit.add_argument("--source", default="cradl", choices=sorted(_SOURCE_IDS))
    score = sub.add_parser("score", help="persist detection scores")
    common(score, seed=True)
    score.add_argument("--source", default="cradl", choices=sorted(_SOURCE_IDS))
    common(sub.add_parser("evaluate", help="select scorers and report metrics"))
    exp = sub.add_parser("export", help="export a CRTF heatmap as 8-bit PGM")
    exp.add_argument("input", help="CRTF heatmap file")
    exp.add_argument("output", help="PGM output path")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "export":
        export_heatmap_image(crtf.load_tensor(args.input), args.output)
        return 0
    config = config_mod.load(args.config)
    try:
        if args.command == "generate":
            cmd_generate(config, args.force)
        elif args.command == "train":
            cmd_train(config, args.stage, args.seed, args.force)
        elif args.command == "fit":
            cmd_fit(config, args.density, args.source, args.seed, args.force)
        elif args.command == "score":
            cmd_score(config, args.seed, args.source, args.force)
        elif args.command == "evaluate":
            cmd_evaluate(config, args.force)
    except (ArtifactError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
