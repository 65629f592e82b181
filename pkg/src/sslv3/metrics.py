"""Subject-level binary classification metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .losses import SubjectLedger

METRIC_NAMES = ("accuracy", "f1", "auc", "sensitivity", "specificity")


@dataclass
class MetricsReport:
    accuracy: float
    f1: float
    auc: float
    sensitivity: float
    specificity: float
    tp: int
    fn: int
    tn: int
    fp: int

    @property
    def n_subjects(self) -> int:
        return self.tp + self.fn + self.tn + self.fp

    def as_dict(self) -> dict:
        return asdict(self)

    def values(self) -> list[float]:
        return [getattr(self, k) for k in METRIC_NAMES]


def _ratio(num: float, den: float) -> float:
    return num / den if den else float("nan")


def auc_rank(scores, labels) -> float:
    """ROC AUC by the Mann-Whitney statistic with midranks for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(scores, method="average")
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def binary_metrics(y_true, y_pred, scores) -> MetricsReport:
    y_true = np.asarray(y_true).astype(int)
    y_pred = np.asarray(y_pred).astype(int)
    tp = int(np.sum((y_true == 1) & (y_pred == 1)))
    fn = int(np.sum((y_true == 1) & (y_pred == 0)))
    tn = int(np.sum((y_true == 0) & (y_pred == 0)))
    fp = int(np.sum((y_true == 0) & (y_pred == 1)))
    f1 = 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0
    return MetricsReport(
        accuracy=_ratio(tp + tn, len(y_true)),
        f1=f1,
        auc=auc_rank(scores, y_true),
        sensitivity=_ratio(tp, tp + fn),
        specificity=_ratio(tn, tn + fp),
        tp=tp, fn=fn, tn=tn, fp=fp,
    )


def subject_metrics(ledger: SubjectLedger) -> MetricsReport:
    """Metrics over subjects, each decided by its rounded clip accuracy.

    A subject counts as predicted correctly when strictly more than half of
    its clips are; its score for AUC is the mean positive-class probability.
    """
    subjects = ledger.subjects()
    tot = ledger.acc_total()
    y = np.array([ledger.label[s] for s in subjects])
    pred = np.where([tot[s] == 1 for s in subjects], y, 1 - y)
    scores = [ledger.mean_prob(s)[1] for s in subjects]
    return binary_metrics(y, pred, scores)


def mean_report(reports: list[MetricsReport]) -> dict[str, float]:
    return {k: float(np.nanmean([getattr(r, k) for r in reports])) for k in METRIC_NAMES}
