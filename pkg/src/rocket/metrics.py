"""Error rate, AUC and group-weighted AUC.

Undefined metrics come back as ``None``; callers log them as absent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import rankdata


@dataclass
class EvalReport:
    error_rate: float
    sample_count: int
    auc: Optional[float] = None
    gauc: Optional[float] = None
    group_count: int = 0

    def as_dict(self) -> dict:
        out = {"error_rate": self.error_rate, "sample_count": self.sample_count}
        if self.auc is not None:
            out["auc"] = self.auc
        if self.gauc is not None:
            out["gauc"] = self.gauc
        if self.group_count:
            out["group_count"] = self.group_count
        return out


def error_rate(scores: np.ndarray, labels: np.ndarray) -> float:
    # np.argmax already returns the lowest index on ties
    pred = np.argmax(np.asarray(scores), axis=1)
    labels = np.asarray(labels)
    return float(np.count_nonzero(pred != labels)) / len(labels)


def auc(scores, labels) -> Optional[float]:
    """P(random positive outranks random negative), ties count one half.

    Mann-Whitney form with average ranks; ``None`` for single-class input.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores, method="average")
    # rank sums are half-integers, so this stays exact for realistic sizes
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def gauc(scores, labels, groups) -> Optional[float]:
    """Per-group AUC averaged with weights equal to group sample counts."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    groups = np.asarray(groups).ravel()
    num = 0.0
    den = 0
    for g in np.unique(groups):
        mask = groups == g
        a = auc(scores[mask], labels[mask])
        if a is None:
            continue
        n = int(mask.sum())
        num += n * a
        den += n
    return None if den == 0 else num / den


def evaluate_scores(logits: np.ndarray, labels, groups=None) -> EvalReport:
    """EvalReport from raw logits; AUC/GAUC only for binary problems."""
    logits = np.asarray(logits)
    report = EvalReport(error_rate(logits, labels), len(labels))
    if logits.shape[1] == 2:
        # the logit margin ranks samples exactly like the positive-class probability
        margin = logits[:, 1] - logits[:, 0]
        report.auc = auc(margin, labels)
        if groups is not None:
            report.gauc = gauc(margin, labels, groups)
            report.group_count = len(np.unique(groups))
    return report
