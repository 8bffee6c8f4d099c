"""Ranking metrics against exhaustive oracles, aggregation, and summaries."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radlab.metrics import (EvalResult, MetricsError, SeedSummary, auprc,
                            auroc, results_csv, results_table, select_scorer,
                            slice_aggregate, summarize_seeds, voxel_aggregate)
from radlab.scoring import Heatmap
from radlab.synth import LabeledSample


def _auroc_oracle(scores, labels):
    """O(n^2) pair counting with half credit for ties."""
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else (0.5 if p == q else 0.0)
    return total / (len(pos) * len(neg))


def _auprc_oracle(scores, labels):
    """Average precision over every distinct threshold, computed naively."""
    n_pos = labels.sum()
    thresholds = np.unique(scores)[::-1]
    total, prev_tp = 0.0, 0.0
    for t in thresholds:
        kept = scores >= t
        tp = float((labels[kept] == 1).sum())
        prec = tp / kept.sum()
        total += (tp - prev_tp) * prec
        prev_tp = tp
    return total / n_pos


def _random_case(rng, max_n=200):
    n = int(rng.integers(4, max_n))
    labels = np.zeros(n, np.int64)
    labels[: int(rng.integers(1, n))] = 1
    rng.shuffle(labels)
    if labels.sum() == 0 or labels.sum() == n:
        labels[0], labels[-1] = 0, 1
    # coarse grid scores force plenty of ties
    scores = rng.integers(0, int(rng.integers(2, 12)), size=n).astype(np.float64)
    return scores, labels


class TestAurocOracle:
    def test_exact_against_pair_counting_1000_cases(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            scores, labels = _random_case(rng)
            assert auroc(scores, labels) == pytest.approx(
                _auroc_oracle(scores, labels), abs=1e-12)

    def test_perfect_and_inverted(self):
        labels = np.array([0, 0, 1, 1])
        assert auroc(np.array([1.0, 2.0, 3.0, 4.0]), labels) == 1.0
        assert auroc(np.array([4.0, 3.0, 2.0, 1.0]), labels) == 0.0

    def test_constant_scores_give_half(self):
        assert auroc(np.ones(10), np.array([0, 1] * 5)) == 0.5

    def test_complement_symmetry(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            scores, labels = _random_case(rng, max_n=60)
            assert auroc(scores, labels) + auroc(-scores, labels) == pytest.approx(1.0)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(2)
        scores, labels = _random_case(rng)
        assert auroc(np.exp(scores), labels) == auroc(scores, labels)

    def test_needs_both_classes(self):
        with pytest.raises(MetricsError):
            auroc(np.arange(3.0), np.ones(3, int))


class TestAuprcOracle:
    def test_exact_against_exhaustive_thresholds_1000_cases(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            scores, labels = _random_case(rng)
            assert auprc(scores, labels) == pytest.approx(
                _auprc_oracle(scores, labels), abs=1e-9)

    def test_constant_scorer_equals_prevalence_exactly(self):
        labels = np.array([1, 0, 0, 1, 0, 0, 0, 1, 0, 0])
        assert auprc(np.full(10, 3.3), labels) == labels.mean()

    def test_perfect_ranking(self):
        assert auprc(np.array([1.0, 2.0, 3.0, 4.0]), np.array([0, 0, 1, 1])) == 1.0

    def test_known_hand_value(self):
        # top score is a negative: precision 1/2 at the first positive,
        # 2/3 at the second -> AP = (1/2 + 2/3) / 2
        scores = np.array([3.0, 2.0, 1.0])
        labels = np.array([0, 1, 1])
        assert auprc(scores, labels) == pytest.approx((0.5 + 2 / 3) / 2, abs=1e-12)

    def test_needs_a_positive(self):
        with pytest.raises(MetricsError):
            auprc(np.arange(3.0), np.zeros(3, int))

    def test_rejects_non_finite(self):
        with pytest.raises(MetricsError):
            auprc(np.array([1.0, np.nan]), np.array([0, 1]))


@given(st.lists(st.integers(0, 5), min_size=4, max_size=40))
@settings(max_examples=60, deadline=None)
def test_auroc_property_matches_oracle(raw):
    scores = np.array(raw, np.float64)
    labels = (np.arange(len(raw)) % 2).astype(np.int64)
    assert auroc(scores, labels) == pytest.approx(_auroc_oracle(scores, labels))


def _sample(label, res=8):
    amask = np.zeros((res, res), bool)
    if label:
        amask[:3, :3] = True  # above the slice-label voxel threshold
    return LabeledSample(image=np.zeros((res, res), np.float32),
                         brain_mask=np.ones((res, res), bool), anomaly_mask=amask)


class TestAggregation:
    def test_slice_aggregate_pairs_scores_with_labels(self):
        samples = [_sample(0), _sample(1), _sample(0)]
        scores, labels = slice_aggregate(samples, np.array([0.1, 0.9, 0.2]))
        np.testing.assert_array_equal(labels, [0, 1, 0])
        np.testing.assert_array_equal(scores, [0.1, 0.9, 0.2])

    def test_slice_aggregate_length_mismatch(self):
        with pytest.raises(MetricsError):
            slice_aggregate([_sample(0)], np.array([0.1, 0.2]))

    def test_voxel_aggregate_restricts_to_brain(self):
        s = _sample(1)
        s.brain_mask[:, :4] = False
        hm = Heatmap(values=np.arange(64, dtype=np.float32).reshape(8, 8),
                     kind="rec", postprocessed=True)
        vals, labels = voxel_aggregate([s], [hm])
        assert len(vals) == int(s.brain_mask.sum())
        assert labels.sum() == int((s.anomaly_mask & s.brain_mask).sum())

    def test_voxel_aggregate_requires_postprocessed(self):
        hm = Heatmap(values=np.zeros((8, 8), np.float32), kind="rec", postprocessed=False)
        with pytest.raises(MetricsError):
            voxel_aggregate([_sample(0)], [hm])


class TestSelection:
    def test_picks_best_val_auprc(self):
        labels = np.array([0, 0, 1, 1])
        scores = {"good": np.array([0.0, 1.0, 2.0, 3.0]),
                  "bad": np.array([3.0, 2.0, 1.0, 0.0])}
        assert select_scorer(["bad", "good"], scores, labels) == "good"

    def test_first_wins_on_tie(self):
        labels = np.array([0, 1])
        scores = {"a": np.array([0.0, 1.0]), "b": np.array([0.0, 1.0])}
        assert select_scorer(["a", "b"], scores, labels) == "a"

    def test_empty_candidates(self):
        with pytest.raises(MetricsError):
            select_scorer([], {}, np.array([0, 1]))


class TestSummaries:
    def test_known_mean_std(self):
        s = summarize_seeds("m", [0.7, 0.8, 0.9])
        assert s.mean == pytest.approx(0.8)
        assert s.std == pytest.approx(np.sqrt(2 / 300), abs=1e-12)  # population
        assert s.formatted() == "80.0(8.2)"

    def test_formatting_convention(self):
        assert SeedSummary("x", [0.778, 0.778]).formatted() == "77.8(0.0)"
        assert SeedSummary("x", [0.771, 0.785]).formatted() == "77.8(0.7)"

    def test_requires_two_finite_values(self):
        with pytest.raises(MetricsError):
            summarize_seeds("m", [0.5])
        with pytest.raises(MetricsError):
            summarize_seeds("m", [0.5, float("nan")])

    def test_results_csv_layout(self):
        r = EvalResult("cradl", "desk", "detection", "auroc", [0.7, 0.75])
        text = results_csv([r])
        lines = text.strip().split("\n")
        assert lines[0] == "method,dataset,task,metric,seed,value"
        assert lines[1] == "cradl,desk,detection,auroc,0,0.700000"
        assert lines[2] == "cradl,desk,detection,auroc,1,0.750000"

    def test_results_table_uses_percent_convention(self):
        table = results_table([summarize_seeds("cradl", [0.771, 0.785])])
        assert "77.8(0.7)" in table

    def test_eval_result_validation(self):
        with pytest.raises(MetricsError):
            EvalResult("m", "d", "bogus", "auroc", [0.5])
        with pytest.raises(MetricsError):
            EvalResult("m", "d", "detection", "auroc", [1.5])
