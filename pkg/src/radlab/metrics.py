"""Ranking metrics (AUROC, AUPRC), slice/voxel aggregation, scorer
selection on validation data, and multi-seed summaries."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .scoring import Heatmap
from .synth import LabeledSample


class MetricsError(ValueError):
    pass


def _check_binary(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size == 0:
        raise MetricsError(f"labels must be a non-empty 1-d array, got shape {labels.shape}")
    if not np.isin(labels, (0, 1)).all():
        raise MetricsError("labels must be binary (0/1)")
    return labels.astype(np.int64)


def _check_scores(scores: np.ndarray, labels: np.ndarray) -> np.ndarray:
    scores = np.asarray(scores, np.float64)
    if scores.shape != labels.shape:
        raise MetricsError(f"scores shape {scores.shape} != labels shape {labels.shape}")
    if not np.isfinite(scores).all():
        raise MetricsError("scores contain non-finite values")
    return scores


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the mean of their rank span."""
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Rank-based AUROC; ties between classes earn half credit."""
    labels = _check_binary(labels)
    scores = _check_scores(scores, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricsError("AUROC needs both classes present")
    ranks = _average_ranks(scores)
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auprc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Average precision over distinct-threshold groups.

    Within a tie group the precision at the group boundary weights the
    whole group's recall gain, so a constant scorer yields exactly the
    positive prevalence."""
    labels = _check_binary(labels)
    scores = _check_scores(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise MetricsError("AUPRC needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    tp = np.cumsum(labels[order]).astype(np.float64)
    count = np.arange(1, len(labels) + 1, dtype=np.float64)
    # keep only the last index of each tie group (the group boundary)
    boundary = np.ones(len(labels), bool)
    boundary[:-1] = sorted_scores[:-1] != sorted_scores[1:]
    tp_b = tp[boundary]
    prec_b = tp_b / count[boundary]
    dtp = np.diff(tp_b, prepend=0.0)
    return float((dtp * prec_b).sum() / n_pos)


def slice_aggregate(samples: list[LabeledSample], scores: np.ndarray):
    """Pair per-slice scores with slice labels; (scores, labels)."""
    scores = np.asarray(scores, np.float64)
    if len(scores) != len(samples):
        raise MetricsError(f"{len(scores)} scores for {len(samples)} samples")
    labels = np.array([int(s.slice_label) for s in samples], np.int64)
    return scores, labels


def voxel_aggregate(samples: list[LabeledSample], heatmaps: list[Heatmap]):
    """Flatten heatmap values and voxel labels inside the brain masks.

    Only postprocessed heatmaps are accepted so raw and cleaned maps can
    never be mixed in one evaluation."""
    if len(heatmaps) != len(samples):
        raise MetricsError(f"{len(heatmaps)} heatmaps for {len(samples)} samples")
    values, labels = [], []
    for sample, hm in zip(samples, heatmaps):
        if not hm.postprocessed:
            raise MetricsError("voxel aggregation requires postprocessed heatmaps")
        if hm.values.shape != sample.brain_mask.shape:
            raise MetricsError(
                f"heatmap shape {hm.values.shape} != mask shape {sample.brain_mask.shape}")
        inside = sample.brain_mask > 0
        values.append(hm.values[inside].astype(np.float64))
        labels.append((sample.anomaly_mask[inside] > 0).astype(np.int64))
    return np.concatenate(values), np.concatenate(labels)


def select_scorer(candidates: list[tuple], scores_by_name: dict, labels: np.ndarray) -> str:
    """Pick the candidate with the best validation AUPRC; first wins ties."""
    if not candidates:
        raise MetricsError("no scorer candidates given")
    best_name, best_val = None, -np.inf
    for name in candidates:
        val = auprc(scores_by_name[name], labels)
        if val > best_val:
            best_name, best_val = name, val
    return best_name


@dataclass
class SeedSummary:
    name: str
    values: list[float] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def std(self) -> float:
        return float(np.std(self.values))  # population std

    def formatted(self) -> str:
        """Percent form "mean(std)", one decimal each, e.g. "77.8(0.7)"."""
        return f"{100.0 * self.mean:.1f}({100.0 * self.std:.1f})"


def summarize_seeds(name: str, values) -> SeedSummary:
    values = [float(v) for v in values]
    if len(values) < 2:
        raise MetricsError("seed summary needs at least two values")
    if not all(np.isfinite(values)):
        raise MetricsError("seed summary got non-finite values")
    return SeedSummary(name, values)


@dataclass
class EvalResult:
    """One evaluated cell: a (method, dataset, task, metric) with its
    per-seed values and their summary."""
    method: str
    dataset: str
    task: str                      # "detection" or "localization"
    metric: str                    # "auroc" or "auprc"
    values: list[float]
    prevalence: float = float("nan")

    def __post_init__(self):
        if self.task not in ("detection", "localization"):
            raise MetricsError(f"unknown task {self.task!r}")
        for v in self.values:
            if not 0.0 <= v <= 1.0:
                raise MetricsError(f"metric value {v} outside [0,1]")

    def summary(self) -> SeedSummary:
        return summarize_seeds(f"{self.method}/{self.dataset}/{self.task}/{self.metric}",
                               self.values)


def results_csv(results: list[EvalResult]) -> str:
    """Long-format CSV: method, dataset, task, metric, seed, value."""
    out = io.StringIO()
    out.write("method,dataset,task,metric,seed,value\n")
    for r in results:
        for seed, v in enumerate(r.values):
            out.write(f"{r.method},{r.dataset},{r.task},{r.metric},{seed},{v:.6f}\n")
    return out.getvalue()


def results_table(summaries: list[SeedSummary]) -> str:
    """Human-readable table in the "mean(std)" percent convention."""
    width = max(len(s.name) for s in summaries)
    lines = [f"{s.name:<{width}}  {s.formatted()}" for s in summaries]
    return "\n".join(lines) + "\n"
