"""Binary classification metrics for the vetting classifier.

The area under the ROC curve is computed with the rank-statistic method:
average ranks over tied scores, then the normalized rank sum of the
positives. That is exactly the probability a random positive outscores a
random negative, with ties counting half. Zero-denominator cases follow
one convention throughout: precision, recall and F1 are 0 when undefined.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Tuple

import numpy as np


def _validate(scores, labels) -> Tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 1 or y.ndim != 1:
        raise ValueError("scores and labels must be one-dimensional")
    if s.shape != y.shape:
        raise ValueError(f"length mismatch: {len(s)} scores vs {len(y)} labels")
    u = set(np.unique(y).tolist())
    if not u <= {0, 1}:
        raise ValueError(f"labels must be 0/1, got values {sorted(u)}")
    return s, y.astype(np.int64)


def confusion_counts(
    scores: np.ndarray, labels: np.ndarray, threshold: float = 0.5
) -> Tuple[int, int, int, int]:
    """(tp, fp, tn, fn) with scores at or above the threshold called positive."""
    s, y = _validate(scores, labels)
    if len(s) == 0:
        raise ValueError("need at least one score")
    pred = s >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    tn = int(np.sum(~pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    return tp, fp, tn, fn


def precision_recall_f1(tp: int, fp: int, fn: int) -> Tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Tie-aware AUC via average ranks; needs both classes present."""
    s, y = _validate(scores, labels)
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    n = len(s)
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(n, dtype=np.float64)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and s[order[j + 1]] == s[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    rank_sum = float(np.sum(ranks[y == 1]))
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass(frozen=True)
class MetricsReport:
    n: int
    decision_threshold: float
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    f1: float
    fpr: float
    fnr: float
    auc: Optional[float] = None

    def to_dict(self) -> Dict[str, object]:
        out: Dict[str, object] = {
            "n": self.n,
            "decision_threshold": self.decision_threshold,
            "counts": {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn},
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "fpr": self.fpr,
            "fnr": self.fnr,
        }
        if self.auc is not None:
            out["auc"] = self.auc
        return out


def compute_report(
    scores: np.ndarray, labels: np.ndarray, threshold: float = 0.5
) -> MetricsReport:
    """Full report at one operating point; AUC omitted if one class only."""
    tp, fp, tn, fn = confusion_counts(scores, labels, threshold)
    precision, recall, f1 = precision_recall_f1(tp, fp, fn)
    try:
        auc: Optional[float] = roc_auc(scores, labels)
    except ValueError:
        auc = None
    return MetricsReport(
        n=tp + fp + tn + fn,
        decision_threshold=threshold,
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        precision=precision,
        recall=recall,
        f1=f1,
        fpr=fp / (fp + tn) if fp + tn else 0.0,
        fnr=fn / (fn + tp) if fn + tp else 0.0,
        auc=auc,
    )


def best_f1_threshold(scores: np.ndarray, labels: np.ndarray) -> Tuple[float, float]:
    """Threshold among observed scores that maximizes F1 (lowest on ties)."""
    s, y = _validate(scores, labels)
    best_t, best = 0.5, -1.0
    for t in np.unique(s):
        tp, fp, _, fn = confusion_counts(s, y, float(t))
        _, _, f1 = precision_recall_f1(tp, fp, fn)
        if f1 > best:
            best_t, best = float(t), f1
    return best_t, best


def format_metrics_table(reports: Mapping[str, MetricsReport]) -> str:
    """Fixed-width comparison table, one row per model variant."""
    headers = ["variant", "auc", "precision", "recall", "f1", "fpr", "fnr"]
    rows = []
    for name, r in reports.items():
        rows.append(
            [
                name,
                "-" if r.auc is None else f"{r.auc:.4f}",
                f"{r.precision:.4f}",
                f"{r.recall:.4f}",
                f"{r.f1:.4f}",
                f"{r.fpr:.4f}",
                f"{r.fnr:.4f}",
            ]
        )
    widths = [
        max(len(h), *(len(row[i]) for row in rows)) if rows else len(h)
        for i, h in enumerate(headers)
    ]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
        "  ".join("-" * widths[i] for i in range(len(headers))),
    ]
    for row in rows:
        lines.append("  ".join(row[i].ljust(widths[i]) for i in range(len(headers))))
    return "\n".join(lines)
