"""Classification metrics for learnt reward models.

Scores come from a reward model evaluated on held-out timesteps whose ground
truth labels were read under the validation purpose. AUC-PR is realized as
non-interpolated average precision with tied scores collapsed into a single
threshold group, which admits an exact brute-force oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MetricError, UsageError

CRITERIA = ("precision", "f_score", "auc_pr")


@dataclass(frozen=True)
class ScoredTimesteps:
    """Parallel arrays of model scores and ground-truth binary labels."""

    scores: np.ndarray
    labels: np.ndarray
    source: str = ""

    def __post_init__(self) -> None:
        scores = np.asarray(self.scores, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if scores.ndim != 1 or labels.ndim != 1:
            raise UsageError("scores and labels must be one-dimensional")
        if len(scores) != len(labels):
            raise UsageError("scores and labels must have equal length")
        if len(scores) == 0:
            raise UsageError("empty scored set")
        if not np.isin(labels, (0, 1)).all():
            raise UsageError("labels must be binary")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.scores)


@dataclass(frozen=True)
class MetricsReport:
    """Threshold metrics at a fixed cutoff plus threshold-free AUC-PR."""

    precision: float
    recall: float
    f_score: float
    auc_pr: float
    accuracy: float
    positive_rate: float
    threshold: float
    counts: dict[str, int] = field(default_factory=dict)


def confusion_metrics(
    scored: ScoredTimesteps, threshold: float = 0.5
) -> tuple[float, float, float, dict[str, int]]:
    """Precision, recall, f-score with prediction = (score > threshold)."""
    if not 0.0 <= threshold <= 1.0:
        raise UsageError(f"threshold must lie in [0, 1], got {threshold}")
    predicted = scored.scores > threshold
    actual = scored.labels == 1
    tp = int(np.sum(predicted & actual))
    fp = int(np.sum(predicted & ~actual))
    fn = int(np.sum(~predicted & actual))
    tn = int(np.sum(~predicted & ~actual))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f_score = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f_score, {"tp": tp, "fp": fp, "fn": fn, "tn": tn}


def auc_pr(scored: ScoredTimesteps) -> float:
    """Average precision over descending-score prefixes, ties grouped.

    AP = sum_k (R_k - R_{k-1}) * P_k where k runs over distinct score
    thresholds and P_k, R_k are precision and recall of the prefix that
    includes every timestep scoring at least that threshold.
    """
    n_pos = int(np.sum(scored.labels == 1))
    if n_pos == 0:
        raise MetricError("AUC-PR undefined without positive labels")
    order = np.argsort(-scored.scores, kind="stable")
    sorted_scores = scored.scores[order]
    sorted_labels = scored.labels[order]
    cum_tp = np.cumsum(sorted_labels)
    ranks = np.arange(1, len(scored) + 1)
    # A prefix ends where the next score differs; tied scores form one group.
    boundary = np.append(sorted_scores[1:] != sorted_scores[:-1], True)
    tp = cum_tp[boundary]
    pred = ranks[boundary]
    precision = tp / pred
    recall = tp / n_pos
    prev_recall = np.concatenate(([0.0], recall[:-1]))
    return float(np.sum((recall - prev_recall) * precision))


def evaluate_scores(scored: ScoredTimesteps, threshold: float = 0.5) -> MetricsReport:
    """Full report used by the harness for model selection and CSV rows."""
    precision, recall, f_score, counts = confusion_metrics(scored, threshold)
    accuracy = (counts["tp"] + counts["tn"]) / len(scored)
    return MetricsReport(
        precision=precision,
        recall=recall,
        f_score=f_score,
        auc_pr=auc_pr(scored),
        accuracy=accuracy,
        positive_rate=float(np.mean(scored.labels)),
        threshold=threshold,
        counts=counts,
    )


def select_model(reports: list[MetricsReport], criterion: str) -> int:
    """Index of the best report by the given criterion, earliest on ties."""
    if criterion not in CRITERIA:
        raise UsageError(f"unknown criterion {criterion!r}, expected one of {CRITERIA}")
    if not reports:
        raise UsageError("no candidates to select from")
    values = [getattr(r, criterion) for r in reports]
    best = 0
    for i, v in enumerate(values):
        if v > values[best]:
            best = i
    return best


def spread_statistics(final_returns: list[float]) -> tuple[float, float, float, float]:
    """Population mean/std/min/max of per-config final returns."""
    if len(final_returns) < 2:
        raise UsageError("spread statistics need at least 2 values")
    arr = np.asarray(final_returns, dtype=np.float64)
    return float(arr.mean()), float(arr.std()), float(arr.min()), float(arr.max())
