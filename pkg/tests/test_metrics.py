"""Scoring metrics: AUC-PR against a brute-force oracle, selection, spread."""

import numpy as np
import pytest

from rewardlab.errors import MetricError, UsageError
from rewardlab.metrics import (
    CRITERIA,
    MetricsReport,
    ScoredTimesteps,
    auc_pr,
    confusion_metrics,
    evaluate_scores,
    select_model,
    spread_statistics,
)
from rewardlab.seeding import derive_rng


def oracle_auc_pr(scores, labels):
    """Brute-force average precision: enumerate every distinct threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_pos = labels.sum()
    thresholds = sorted(set(scores), reverse=True)
    total = 0.0
    prev_recall = 0.0
    for t in thresholds:
        picked = scores >= t
        tp = int((labels[picked] == 1).sum())
        precision = tp / picked.sum()
        recall = tp / n_pos
        total += (recall - prev_recall) * precision
        prev_recall = recall
    return total


def test_scored_timesteps_validation():
    with pytest.raises(UsageError):
        ScoredTimesteps(scores=np.zeros((2, 2)), labels=np.zeros(4))
    with pytest.raises(UsageError):
        ScoredTimesteps(scores=np.zeros(3), labels=np.zeros(2))
    with pytest.raises(UsageError):
        ScoredTimesteps(scores=np.zeros(0), labels=np.zeros(0))
    with pytest.raises(UsageError):
        ScoredTimesteps(scores=np.zeros(2), labels=np.array([0, 2]))


def test_auc_pr_hand_case():
    scored = ScoredTimesteps(scores=np.array([0.9, 0.8, 0.7]), labels=np.array([1, 0, 1]))
    assert auc_pr(scored) == pytest.approx(5.0 / 6.0, abs=1e-12)


def test_auc_pr_perfect_and_inverted_rankings():
    scored = ScoredTimesteps(scores=np.array([0.9, 0.7, 0.3, 0.1]), labels=np.array([1, 1, 0, 0]))
    assert auc_pr(scored) == pytest.approx(1.0, abs=1e-12)
    flipped = ScoredTimesteps(scores=np.array([0.9, 0.7, 0.3, 0.1]), labels=np.array([0, 0, 1, 1]))
    assert auc_pr(flipped) == pytest.approx(oracle_auc_pr(flipped.scores, flipped.labels), abs=1e-12)


def test_auc_pr_all_tied_scores_equals_prevalence():
    scored = ScoredTimesteps(scores=np.full(8, 0.5), labels=np.array([1, 0, 0, 1, 0, 0, 0, 0]))
    assert auc_pr(scored) == pytest.approx(0.25, abs=1e-12)


def test_auc_pr_requires_a_positive():
    with pytest.raises(MetricError):
        auc_pr(ScoredTimesteps(scores=np.array([0.4, 0.6]), labels=np.array([0, 0])))


def test_auc_pr_matches_oracle_on_random_instances():
    rng = derive_rng(55, "auc-oracle")
    for _ in range(200):
        n = int(rng.integers(1, 21))
        labels = rng.integers(0, 2, size=n)
        if labels.sum() == 0:
            labels[rng.integers(n)] = 1
        if rng.uniform() < 0.5:
            scores = rng.choice(np.linspace(0.0, 1.0, 5), size=n)  # force ties
        else:
            scores = rng.uniform(size=n)
        scored = ScoredTimesteps(scores=scores, labels=labels)
        assert auc_pr(scored) == pytest.approx(oracle_auc_pr(scores, labels), abs=1e-12)


def test_auc_pr_invariant_to_monotone_transforms():
    rng = derive_rng(56, "monotone")
    scores = rng.uniform(size=30)
    labels = rng.integers(0, 2, size=30)
    labels[0] = 1
    base = auc_pr(ScoredTimesteps(scores=scores, labels=labels))
    squashed = auc_pr(ScoredTimesteps(scores=scores**3, labels=labels))
    assert squashed == pytest.approx(base, abs=1e-12)


def test_confusion_metrics_hand_case():
    scored = ScoredTimesteps(
        scores=np.array([0.9, 0.8, 0.3, 0.6]), labels=np.array([1, 0, 1, 1])
    )
    precision, recall, f_score, counts = confusion_metrics(scored, threshold=0.5)
    assert counts == {"tp": 2, "fp": 1, "fn": 1, "tn": 0}
    assert precision == pytest.approx(2.0 / 3.0)
    assert recall == pytest.approx(2.0 / 3.0)
    assert f_score == pytest.approx(2.0 / 3.0)
    with pytest.raises(UsageError):
        confusion_metrics(scored, threshold=1.5)


def test_confusion_metrics_degenerate_rates_are_zero():
    scored = ScoredTimesteps(scores=np.array([0.1, 0.2]), labels=np.array([1, 1]))
    precision, recall, f_score, _ = confusion_metrics(scored)
    assert (precision, recall, f_score) == (0.0, 0.0, 0.0)


def test_evaluate_scores_report_fields():
    scored = ScoredTimesteps(scores=np.array([0.9, 0.2, 0.7]), labels=np.array([1, 0, 1]))
    report = evaluate_scores(scored)
    assert report.auc_pr == pytest.approx(1.0)
    assert report.accuracy == pytest.approx(1.0)
    assert report.positive_rate == pytest.approx(2.0 / 3.0)
    assert report.threshold == 0.5


def _report(**kw):
    base = dict(
        precision=0.0, recall=0.0, f_score=0.0, auc_pr=0.0, accuracy=0.0,
        positive_rate=0.5, threshold=0.5,
    )
    base.update(kw)
    return MetricsReport(**base)


def test_select_model_best_and_earliest_tie():
    reports = [_report(auc_pr=0.4), _report(auc_pr=0.7), _report(auc_pr=0.7)]
    assert select_model(reports, "auc_pr") == 1
    reports = [_report(f_score=0.5), _report(f_score=0.2)]
    assert select_model(reports, "f_score") == 0
    with pytest.raises(UsageError):
        select_model(reports, "accuracy")
    with pytest.raises(UsageError):
        select_model([], "auc_pr")
    assert set(CRITERIA) == {"precision", "f_score", "auc_pr"}


def test_spread_statistics():
    mean, std, lo, hi = spread_statistics([1.0, 2.0, 3.0])
    assert mean == pytest.approx(2.0)
    assert std == pytest.approx(np.sqrt(2.0 / 3.0))
    assert (lo, hi) == (1.0, 3.0)
    with pytest.raises(UsageError):
        spread_statistics([1.0])
